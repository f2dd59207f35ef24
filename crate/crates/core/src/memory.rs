//! Good and bad experience memories.
//!
//! The good memory holds the `K` highest-reward episodes seen so far; the
//! bad memory the lowest-reward `floor(fraction * seen)` episodes, capped.
//! Ties on reward are resolved in favour of the earlier episode.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::env::{EpisodeTrace, Step};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Entry {
    seq: u64,
    episode: Arc<EpisodeTrace>,
}

impl Entry {
    fn reward(&self) -> f64 {
        self.episode.reward
    }
}

/// Sorted so that `entries[0]` is the most preferred to keep.
fn insert_ranked(entries: &mut Vec<Entry>, entry: Entry, keep: usize, better: impl Fn(f64, f64) -> bool) {
    // Position after every entry that is at least as good (earlier arrival wins ties).
    let pos = entries
        .iter()
        .position(|e| better(entry.reward(), e.reward()))
        .unwrap_or(entries.len());
    if pos < keep {
        entries.insert(pos, entry);
        entries.truncate(keep);
    }
}

fn sample_from<'a, R: Rng>(entries: &'a [Entry], batch_size: usize, rng: &mut R) -> Result<Vec<&'a Step>> {
    let mut offsets = Vec::with_capacity(entries.len());
    let mut total = 0usize;
    for e in entries {
        offsets.push(total);
        total += e.episode.steps.len();
    }
    if total == 0 {
        return Err(Error::EmptyBatch("memory holds no transitions"));
    }
    Ok((0..batch_size)
        .map(|_| {
            let k = rng.gen_range(0..total);
            let ep = offsets.partition_point(|&o| o <= k) - 1;
            &entries[ep].episode.steps[k - offsets[ep]]
        })
        .collect())
}

#[derive(Serialize)]
struct DumpLine {
    seq: u64,
    reward: f64,
    actions: Vec<usize>,
}

fn dump<W: Write>(entries: &[Entry], out: &mut W) -> Result<()> {
    for e in entries {
        let line = DumpLine {
            seq: e.seq,
            reward: e.reward(),
            actions: e.episode.steps.iter().map(|s| s.action).collect(),
        };
        serde_json::to_writer(&mut *out, &line).map_err(std::io::Error::from)?;
        writeln!(out)?;
    }
    Ok(())
}

/// Top-`K` episodes by reward.
#[derive(Debug, Clone)]
pub struct GoodMemory {
    capacity: usize,
    entries: Vec<Entry>,
    seen: u64,
}

impl GoodMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity + 1),
            seen: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, episode: Arc<EpisodeTrace>) -> Result<()> {
        if !episode.reward.is_finite() {
            return Err(Error::Contract("episode reward must be finite".into()));
        }
        let entry = Entry { seq: self.seen, episode };
        self.seen += 1;
        insert_ranked(&mut self.entries, entry, self.capacity, |new, old| new > old);
        Ok(())
    }

    /// Stored rewards, best first.
    pub fn rewards(&self) -> Vec<f64> {
        self.entries.iter().map(Entry::reward).collect()
    }

    /// Arrival indices of stored episodes, best first.
    pub fn arrivals(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.seq).collect()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeTrace> {
        self.entries.iter().map(|e| e.episode.as_ref())
    }

    /// Uniform draw, with replacement, over all stored transitions.
    pub fn sample_transitions<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Step>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBatch("good memory is empty"));
        }
        sample_from(&self.entries, batch_size, rng)
    }

    /// JSON lines: `{"seq":..,"reward":..,"actions":[..]}`.
    pub fn dump_jsonl<W: Write>(&self, out: &mut W) -> Result<()> {
        dump(&self.entries, out)
    }
}

/// Lowest-reward `floor(fraction * seen)` episodes, at most `cap`.
#[derive(Debug, Clone)]
pub struct BadMemory {
    fraction: f64,
    cap: usize,
    // The `cap` lowest episodes seen; the exposed set is a prefix.
    pool: Vec<Entry>,
    seen: u64,
}

impl BadMemory {
    pub fn new(fraction: f64, cap: usize) -> Self {
        Self {
            fraction,
            cap,
            pool: Vec::new(),
            seen: 0,
        }
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn len(&self) -> usize {
        let target = (self.fraction * self.seen as f64).floor() as usize;
        target.min(self.cap).min(self.pool.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, episode: Arc<EpisodeTrace>) -> Result<()> {
        if !episode.reward.is_finite() {
            return Err(Error::Contract("episode reward must be finite".into()));
        }
        let entry = Entry { seq: self.seen, episode };
        self.seen += 1;
        insert_ranked(&mut self.pool, entry, self.cap, |new, old| new < old);
        Ok(())
    }

    fn active(&self) -> &[Entry] {
        &self.pool[..self.len()]
    }

    /// Stored rewards, worst first.
    pub fn rewards(&self) -> Vec<f64> {
        self.active().iter().map(Entry::reward).collect()
    }

    pub fn arrivals(&self) -> Vec<u64> {
        self.active().iter().map(|e| e.seq).collect()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeTrace> {
        self.active().iter().map(|e| e.episode.as_ref())
    }

    pub fn sample_transitions<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Step>> {
        if self.is_empty() {
            return Err(Error::EmptyBatch("bad memory is empty"));
        }
        sample_from(self.active(), batch_size, rng)
    }

    pub fn dump_jsonl<W: Write>(&self, out: &mut W) -> Result<()> {
        dump(self.active(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{AugmentedState, Observation};
    use crate::rng::stream_rng;

    fn episode(reward: f64, actions: &[usize]) -> Arc<EpisodeTrace> {
        let steps = actions
            .iter()
            .map(|&a| Step {
                obs: Observation::from_vec(vec![a as f64; 5]),
                aug: AugmentedState::zeros(1),
                action: a,
                mask: vec![true],
                cost: 1.0,
                remaining_budget: 0.0,
            })
            .collect();
        Arc::new(EpisodeTrace { steps, reward })
    }

    #[test]
    fn below_minimum_is_ignored_and_above_evicts() {
        let mut good = GoodMemory::new(20);
        for r in 5..25 {
            good.insert(episode(f64::from(r), &[0])).unwrap();
        }
        let before = good.rewards();
        good.insert(episode(3.0, &[0])).unwrap();
        assert_eq!(good.rewards(), before);
        good.insert(episode(30.0, &[0])).unwrap();
        let after = good.rewards();
        assert_eq!(after.len(), 20);
        assert_eq!(after[0], 30.0);
        assert_eq!(*after.last().unwrap(), 6.0);
    }

    #[test]
    fn ties_keep_the_earlier_episode() {
        let mut good = GoodMemory::new(2);
        good.insert(episode(1.0, &[0])).unwrap();
        good.insert(episode(1.0, &[0])).unwrap();
        good.insert(episode(1.0, &[0])).unwrap();
        assert_eq!(good.arrivals(), vec![0, 1]);

        let mut bad = BadMemory::new(0.5, 10);
        for _ in 0..4 {
            bad.insert(episode(2.0, &[0])).unwrap();
        }
        assert_eq!(bad.arrivals(), vec![0, 1]);
    }

    #[test]
    fn bad_memory_grows_with_episodes_seen() {
        let mut bad = BadMemory::new(0.1, 3);
        for i in 0..9 {
            bad.insert(episode(f64::from(i), &[0])).unwrap();
        }
        assert!(bad.is_empty());
        bad.insert(episode(100.0, &[0])).unwrap();
        assert_eq!(bad.rewards(), vec![0.0]);
        for i in 0..40 {
            bad.insert(episode(50.0 - f64::from(i), &[0])).unwrap();
        }
        // floor(0.1 * 50) = 5, capped at 3
        assert_eq!(bad.len(), 3);
        assert_eq!(bad.rewards(), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn non_finite_reward_rejected() {
        assert!(GoodMemory::new(2).insert(episode(f64::NAN, &[0])).is_err());
        assert!(BadMemory::new(0.1, 2).insert(episode(f64::INFINITY, &[0])).is_err());
    }

    #[test]
    fn sampling_a_single_transition() {
        let mut good = GoodMemory::new(3);
        assert!(good.sample_transitions(4, &mut stream_rng(1, 0)).is_err());
        good.insert(episode(1.0, &[7])).unwrap();
        let batch = good.sample_transitions(4, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|s| s.action == 7));
    }

    #[test]
    fn sampling_is_seeded() {
        let mut good = GoodMemory::new(5);
        for r in 0..5 {
            good.insert(episode(f64::from(r), &[r as usize, r as usize + 10])).unwrap();
        }
        let a: Vec<usize> = good.sample_transitions(32, &mut stream_rng(9, 0)).unwrap().iter().map(|s| s.action).collect();
        let b: Vec<usize> = good.sample_transitions(32, &mut stream_rng(9, 0)).unwrap().iter().map(|s| s.action).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn jsonl_dump() {
        let mut good = GoodMemory::new(2);
        good.insert(episode(1.5, &[3, 4])).unwrap();
        let mut buf = Vec::new();
        good.dump_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"seq\":0,\"reward\":1.5,\"actions\":[3,4]}\n");
    }
}
