//! Heuristic debunker selection: random, most followers, most active fake
//! news spreader. All of them respect the same action mask as the learned
//! policies and break ties towards the lowest user id.

use std::fmt;
use std::str::FromStr;

use rand::seq::IteratorRandom;
use rand::Rng;

use crate::env::Observation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicPolicy {
    Random,
    MaxInfluence,
    MaxDefense,
}

impl FromStr for HeuristicPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnd" => Ok(Self::Random),
            "max_inf" => Ok(Self::MaxInfluence),
            "max_def" => Ok(Self::MaxDefense),
            other => Err(Error::InvalidParameter(format!("unknown heuristic {other:?}"))),
        }
    }
}

impl fmt::Display for HeuristicPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "rnd",
            Self::MaxInfluence => "max_inf",
            Self::MaxDefense => "max_def",
        })
    }
}

/// Index of the largest score among unmasked users; lowest index on ties.
fn masked_argmax(scores: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&s, &m)) in scores.iter().zip(mask).enumerate() {
        if m && best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

impl HeuristicPolicy {
    pub fn select<R: Rng>(&self, obs: &Observation, mask: &[bool], rng: &mut R) -> Result<usize> {
        let choice = match self {
            Self::Random => mask
                .iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(|(i, _)| i)
                .choose(rng),
            Self::MaxInfluence => masked_argmax(obs.followers(), mask),
            Self::MaxDefense => masked_argmax(obs.fake_posts(), mask),
        };
        choice.ok_or_else(|| Error::Contract("every action is masked".into()))
    }
}
