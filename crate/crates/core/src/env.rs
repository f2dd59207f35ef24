//! Multi-stage debunker selection as an episodic decision problem.
//!
//! Fake news is seeded at time 0 and spreads freely until mitigation starts.
//! From then on, one debunker is deployed per stage while the budget allows,
//! propagation continues for a tail window after the last stage, and a single
//! reward is paid at the very end.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::netgen::SocialGraph;
use crate::propagation::{
    choose_spreaders, intensity_at, transition_probs, EState, IntensityDist, PropagationParams,
    SimState,
};
use crate::rng::{derive_seed, stream, stream_rng};

const BUDGET_EPS: f64 = 1e-9;

/// Masked observation `[r_I; d_I; r_R; d_R; e]`, length `5n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub const BLOCKS: usize = 5;

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn n(&self) -> usize {
        self.0.len() / Self::BLOCKS
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn block(&self, b: usize) -> &[f64] {
        let n = self.n();
        &self.0[b * n..(b + 1) * n]
    }

    pub fn infected(&self) -> &[f64] {
        self.block(0)
    }

    pub fn fake_posts(&self) -> &[f64] {
        self.block(1)
    }

    pub fn recovered(&self) -> &[f64] {
        self.block(2)
    }

    pub fn true_posts(&self) -> &[f64] {
        self.block(3)
    }

    pub fn followers(&self) -> &[f64] {
        self.block(4)
    }
}

/// Unmasked state `[P_I; r_I; d_I; P_R; r_R; d_R; iota; e]`, length `8n`.
/// Debug output only; never fed to a learner.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState(pub Vec<f64>);

/// History summary of earlier `(s, a)` pairs in the episode, length `6n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState(Vec<f64>);

impl AugmentedState {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; 6 * n])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn observe(state: &SimState) -> Observation {
    let n = state.n();
    let mut s = vec![0.0; 5 * n];
    for (i, u) in state.users().iter().enumerate() {
        s[i] = f64::from(u8::from(u.e_state == EState::Infected));
        s[n + i] = f64::from(state.posts_fake()[i]);
        s[2 * n + i] = f64::from(u8::from(u.e_state == EState::Recovered));
        s[3 * n + i] = f64::from(state.posts_true()[i]);
        s[4 * n + i] = state.graph().follower_counts()[i] as f64;
    }
    Observation(s)
}

pub fn full_state(state: &SimState, params: &PropagationParams) -> FullState {
    let n = state.n();
    let obs = observe(state);
    let mut v = vec![0.0; 8 * n];
    for (i, u) in state.users().iter().enumerate() {
        let (p_i, p_r) = transition_probs(u, state.graph().midpoints()[i], params.delta);
        v[i] = p_i;
        v[3 * n + i] = p_r;
        v[6 * n + i] = intensity_at(u, state.clock(), params.omega).unwrap_or(0.0);
    }
    v[n..3 * n].copy_from_slice(&obs.as_slice()[..2 * n]);
    v[4 * n..6 * n].copy_from_slice(&obs.as_slice()[2 * n..4 * n]);
    v[7 * n..].copy_from_slice(obs.followers());
    FullState(v)
}

/// `s'_{i+1} = (1/i) sum_{m=1..i} psi^(i-m) [s_m; a_m]` by direct summation.
pub fn augment(history: &[(Observation, usize)], n: usize, psi: f64) -> AugmentedState {
    let i = history.len();
    let mut out = vec![0.0; 6 * n];
    if i == 0 {
        return AugmentedState(out);
    }
    for (m, (s, a)) in history.iter().enumerate() {
        let w = psi.powi((i - 1 - m) as i32);
        for (o, x) in out.iter_mut().zip(s.as_slice()) {
            *o += w * x;
        }
        out[5 * n + a] += w;
    }
    let scale = 1.0 / i as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    AugmentedState(out)
}

/// Incremental form of [`augment`]: keeps the discounted running sum.
#[derive(Debug, Clone)]
pub struct AugmentTracker {
    sum: Vec<f64>,
    count: usize,
    psi: f64,
}

impl AugmentTracker {
    pub fn new(n: usize, psi: f64) -> Self {
        Self {
            sum: vec![0.0; 6 * n],
            count: 0,
            psi,
        }
    }

    pub fn push(&mut self, s: &Observation, action: usize) {
        let n = self.sum.len() / 6;
        for (acc, x) in self.sum.iter_mut().zip(s.as_slice()) {
            *acc = self.psi * *acc + x;
        }
        for acc in &mut self.sum[5 * n..] {
            *acc *= self.psi;
        }
        self.sum[5 * n + action] += 1.0;
        self.count += 1;
    }

    pub fn current(&self) -> AugmentedState {
        if self.count == 0 {
            return AugmentedState(vec![0.0; self.sum.len()]);
        }
        let scale = 1.0 / self.count as f64;
        AugmentedState(self.sum.iter().map(|v| v * scale).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// Expected infected count: undecided users contribute their infection
    /// probability.
    Expected,
    /// Undecided users are sampled as infected with their infection
    /// probability.
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MitigationConfig {
    pub budget: f64,
    pub stage_length: f64,
    pub t_start: f64,
    pub t_tail: f64,
    pub psi: f64,
    pub initial_spreaders: usize,
    pub reuse_debunkers: bool,
    pub reward_mode: RewardMode,
    /// When set, the initial spreaders are drawn from this seed instead of
    /// the episode seed, so every episode starts from the same scenario.
    pub scenario_seed: Option<u64>,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            budget: 20.0,
            stage_length: 1.0,
            t_start: 5.0,
            t_tail: 5.0,
            psi: 0.9,
            initial_spreaders: 20,
            reuse_debunkers: false,
            reward_mode: RewardMode::Expected,
            scenario_seed: None,
        }
    }
}

impl MitigationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0) {
            return Err(Error::InvalidParameter("budget must be > 0".into()));
        }
        if !(self.stage_length > 0.0) {
            return Err(Error::InvalidParameter("stage_length must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.psi) {
            return Err(Error::InvalidParameter("psi must lie in [0, 1]".into()));
        }
        if !(self.t_start >= 0.0 && self.t_tail >= 0.0) {
            return Err(Error::InvalidParameter("t_start and t_tail must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn action_mask(
    graph: &SocialGraph,
    remaining_budget: f64,
    used: &[bool],
    config: &MitigationConfig,
) -> Vec<bool> {
    graph
        .costs()
        .iter()
        .zip(used)
        .map(|(&c, &u)| c <= remaining_budget + BUDGET_EPS && (config.reuse_debunkers || !u))
        .collect()
}

/// `V = -ln((C + 1) / (n + 1))`.
pub fn reward_from_count(infected: f64, n: usize) -> f64 {
    // `+ 0.0` keeps V(n) at positive zero.
    -((infected + 1.0) / (n as f64 + 1.0)).ln() + 0.0
}

/// Expected number of infected users: Infected counts 1, Recovered 0, anyone
/// else their current infection probability.
pub fn expected_infected(state: &SimState, delta: f64) -> f64 {
    state
        .users()
        .iter()
        .enumerate()
        .map(|(i, u)| match u.e_state {
            EState::Infected => 1.0,
            EState::Recovered => 0.0,
            _ => transition_probs(u, state.graph().midpoints()[i], delta).0,
        })
        .sum()
}

pub fn episodic_reward<R: Rng>(
    state: &SimState,
    delta: f64,
    mode: RewardMode,
    rng: &mut R,
) -> f64 {
    let infected = match mode {
        RewardMode::Expected => expected_infected(state, delta),
        RewardMode::Sampled => state
            .users()
            .iter()
            .enumerate()
            .filter(|(i, u)| match u.e_state {
                EState::Infected => true,
                EState::Recovered => false,
                _ => {
                    let p = transition_probs(u, state.graph().midpoints()[*i], delta).0;
                    rng.gen::<f64>() < p
                }
            })
            .count() as f64,
    };
    reward_from_count(infected, state.n())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub observation: Observation,
    pub remaining_budget: f64,
    pub done: bool,
}

/// One selection within an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Observation,
    pub aug: AugmentedState,
    pub action: usize,
    pub mask: Vec<bool>,
    pub cost: f64,
    pub remaining_budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<Step>,
    pub reward: f64,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// CSV rows `episode,stage,action,cost,remaining_budget`.
    pub fn write_rows<W: Write>(&self, episode: usize, out: &mut W) -> Result<()> {
        for (stage, step) in self.steps.iter().enumerate() {
            writeln!(
                out,
                "{episode},{stage},{},{:.6},{:.6}",
                step.action, step.cost, step.remaining_budget
            )?;
        }
        Ok(())
    }
}

pub const TRACE_CSV_HEADER: &str = "episode,stage,action,cost,remaining_budget";

pub struct MitigationEnv {
    graph: Arc<SocialGraph>,
    config: MitigationConfig,
    params: PropagationParams,
    intensity: IntensityDist,
    state: SimState,
    episode_seed: u64,
    remaining: f64,
    used: Vec<bool>,
    done: bool,
    finished: bool,
}

impl MitigationEnv {
    pub fn new(
        graph: Arc<SocialGraph>,
        config: MitigationConfig,
        params: PropagationParams,
        intensity: IntensityDist,
    ) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        if config.initial_spreaders > graph.n() {
            return Err(Error::InvalidParameter(format!(
                "{} initial spreaders exceed {} users",
                config.initial_spreaders,
                graph.n()
            )));
        }
        let state = SimState::with_intensity(Arc::clone(&graph), 0, intensity.clone());
        let n = graph.n();
        Ok(Self {
            graph,
            remaining: config.budget,
            config,
            params,
            intensity,
            state,
            episode_seed: 0,
            used: vec![false; n],
            done: true,
            finished: true,
        })
    }

    pub fn graph(&self) -> &SocialGraph {
        &self.graph
    }

    pub fn config(&self) -> &MitigationConfig {
        &self.config
    }

    pub fn params(&self) -> &PropagationParams {
        &self.params
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn remaining_budget(&self) -> f64 {
        self.remaining
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Seeds fake news at time 0, propagates until mitigation starts and
    /// returns the first observation.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let mut state =
            SimState::with_intensity(Arc::clone(&self.graph), seed, self.intensity.clone());
        match self.config.scenario_seed {
            Some(s) => {
                let mut rng = stream_rng(s, stream::SPREADERS);
                for user in choose_spreaders(self.n(), self.config.initial_spreaders, &mut rng)? {
                    state.infect(user)?;
                }
            }
            None => state.seed_fake_spreaders(self.config.initial_spreaders)?,
        }
        state.run_until(self.config.t_start, &self.params);
        state.reset_post_counts();
        self.state = state;
        self.episode_seed = seed;
        self.remaining = self.config.budget;
        self.used.iter_mut().for_each(|u| *u = false);
        self.finished = false;
        self.done = !self.mask().iter().any(|&m| m);
        Ok(self.observe())
    }

    pub fn observe(&self) -> Observation {
        observe(&self.state)
    }

    pub fn full_state(&self) -> FullState {
        full_state(&self.state, &self.params)
    }

    pub fn mask(&self) -> Vec<bool> {
        action_mask(&self.graph, self.remaining, &self.used, &self.config)
    }

    /// Deploys `action` as a debunker and runs one stage of propagation.
    pub fn step_stage(&mut self, action: usize) -> Result<StageOutcome> {
        if self.done {
            return Err(Error::Contract("episode already done".into()));
        }
        if action >= self.n() {
            return Err(Error::UserOutOfRange { user: action, n: self.n() });
        }
        if !self.mask()[action] {
            return Err(Error::Contract(format!("action {action} is masked")));
        }
        self.state.deploy_debunker(action)?;
        self.remaining -= self.graph.costs()[action];
        self.used[action] = true;
        let t_next = self.state.clock() + self.config.stage_length;
        self.state.run_until(t_next, &self.params);
        self.done = !self.mask().iter().any(|&m| m);
        Ok(StageOutcome {
            observation: self.observe(),
            remaining_budget: self.remaining,
            done: self.done,
        })
    }

    /// Runs the post-campaign tail and returns the episodic reward.
    pub fn finish(&mut self) -> Result<f64> {
        if !self.done {
            return Err(Error::Contract("campaign still has affordable actions".into()));
        }
        if self.finished {
            return Err(Error::Contract("episode already finished".into()));
        }
        let t_end = self.state.clock() + self.config.t_tail;
        self.state.run_until(t_end, &self.params);
        self.finished = true;
        let mut rng = stream_rng(derive_seed(self.episode_seed, stream::REWARD, 0), stream::REWARD);
        Ok(episodic_reward(&self.state, self.params.delta, self.config.reward_mode, &mut rng))
    }

    /// Plays a whole episode, asking `choose` for each debunker.
    /// `choose(obs, aug, mask)` must return an unmasked user. When
    /// `use_augmented` is false every step sees a zero augmented state.
    pub fn run_episode<F>(&mut self, seed: u64, use_augmented: bool, mut choose: F) -> Result<EpisodeTrace>
    where
        F: FnMut(&Observation, &AugmentedState, &[bool]) -> Result<usize>,
    {
        let n = self.n();
        let mut obs = self.reset(seed)?;
        let mut tracker = AugmentTracker::new(n, self.config.psi);
        let mut steps = Vec::new();
        while !self.done {
            let aug = if use_augmented { tracker.current() } else { AugmentedState::zeros(n) };
            let mask = self.mask();
            let action = choose(&obs, &aug, &mask)?;
            let outcome = self.step_stage(action)?;
            if use_augmented {
                tracker.push(&obs, action);
            }
            steps.push(Step {
                obs,
                aug,
                action,
                mask,
                cost: self.graph.costs()[action],
                remaining_budget: outcome.remaining_budget,
            });
            obs = outcome.observation;
        }
        let reward = self.finish()?;
        Ok(EpisodeTrace { steps, reward })
    }
}
