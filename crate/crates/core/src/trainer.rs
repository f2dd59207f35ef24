//! Adversarial self-imitation with negative samples and augmented state.
//!
//! Each iteration plays one episode with the current policy, files it into
//! the good/bad memories, fits the negative model to the bad memory, takes a
//! discriminator ascent step (agent samples pushed towards 1, good memory
//! towards 0) and finally a policy step that maximises `-ln D` along the
//! episode plus an entropy bonus minus the negative-sample penalty.
//!
//! Switching off the augmented state feeds zeros in place of `s'`; switching
//! off negative samples skips the negative model entirely.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::approximator::{
    clamped_log, masked_softmax, sigmoid, softmax, state_action_input, state_input,
    write_checkpoint, Direction, Head, Mlp, Trainable,
};
use crate::env::{EpisodeTrace, MitigationConfig, MitigationEnv, Step};
use crate::error::{Error, Result};
use crate::memory::{BadMemory, GoodMemory};
use crate::netgen::SocialGraph;
use crate::propagation::{IntensityDist, PropagationParams};
use crate::rng::{derive_seed, stream, stream_rng};

/// The four members of the self-imitation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Gasil,
    Ngasil,
    Agasil,
    Nagasil,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Nagasil, Variant::Ngasil, Variant::Agasil, Variant::Gasil];

    pub fn use_augmented_state(self) -> bool {
        matches!(self, Variant::Agasil | Variant::Nagasil)
    }

    pub fn use_negative_samples(self) -> bool {
        matches!(self, Variant::Ngasil | Variant::Nagasil)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gasil" => Ok(Variant::Gasil),
            "ngasil" => Ok(Variant::Ngasil),
            "agasil" => Ok(Variant::Agasil),
            "nagasil" => Ok(Variant::Nagasil),
            other => Err(Error::InvalidParameter(format!("unknown learner {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Gasil => "gasil",
            Variant::Ngasil => "ngasil",
            Variant::Agasil => "agasil",
            Variant::Nagasil => "nagasil",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub expert_batch: usize,
    pub bad_batch: usize,
    pub discriminator_updates: usize,
    pub policy_updates: usize,
    pub negative_updates: usize,
    /// Discount for per-step policy returns.
    pub gamma_r: f64,
    /// Entropy bonus weight.
    pub lambda: f64,
    /// Negative-sample penalty weight.
    pub lambda1: f64,
    pub use_augmented_state: bool,
    pub use_negative_samples: bool,
    pub good_capacity: usize,
    pub bad_fraction: f64,
    pub bad_cap: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Step size of the per-stage moving-average return baseline.
    pub baseline_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            expert_batch: 32,
            bad_batch: 32,
            discriminator_updates: 1,
            policy_updates: 1,
            negative_updates: 1,
            gamma_r: 0.99,
            lambda: 0.01,
            lambda1: 0.1,
            use_augmented_state: true,
            use_negative_samples: true,
            good_capacity: 20,
            bad_fraction: 0.1,
            bad_cap: 100,
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            baseline_rate: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self::default().with_variant(variant)
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.use_augmented_state = variant.use_augmented_state();
        self.use_negative_samples = variant.use_negative_samples();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        if self.lambda < 0.0 || self.lambda1 < 0.0 {
            return Err(Error::InvalidParameter("lambda and lambda1 must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma_r) {
            return Err(Error::InvalidParameter("gamma_r must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.bad_fraction) {
            return Err(Error::InvalidParameter("bad_fraction must lie in [0, 1]".into()));
        }
        if self.good_capacity == 0 || self.expert_batch == 0 || self.bad_batch == 0 {
            return Err(Error::InvalidParameter("capacities and batch sizes must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.baseline_rate) {
            return Err(Error::InvalidParameter("baseline_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Penalty weight actually applied.
    pub fn effective_lambda1(&self) -> f64 {
        if self.use_negative_samples {
            self.lambda1
        } else {
            0.0
        }
    }
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(hidden.len() + 2);
    d.push(input);
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

/// Freshly initialised `(policy, discriminator, negative model)` for `n`
/// users. Each network draws from its own seed stream.
pub fn init_networks(n: usize, hidden: &[usize], seed: u64) -> (Mlp, Mlp, Mlp) {
    let rng = |k| stream_rng(derive_seed(seed, stream::INIT, k), stream::INIT);
    (
        Mlp::new(&dims(11 * n, hidden, n), Head::MaskedSoftmax, &mut rng(0)),
        Mlp::new(&dims(12 * n, hidden, 1), Head::Sigmoid, &mut rng(1)),
        Mlp::new(&dims(11 * n, hidden, n), Head::Softmax, &mut rng(2)),
    )
}

/// `sum_k pi_k^2` over the coordinates where `pi_k - m_k < 0`, i.e.
/// `|| pi - F(pi - m) ||^2` with `F` zeroing negative entries and passing
/// the policy value through elsewhere.
pub fn negative_regularizer(pi: &[f64], m: &[f64]) -> f64 {
    pi.iter()
        .zip(m)
        .filter(|(p, q)| *p - *q < 0.0)
        .fold(0.0, |acc, (p, _)| acc + p * p)
}

// ---------------------------------------------------------------------------
// Losses. Each returns the objective value and its parameter gradient.

/// One discriminator input `(s, s', a)` already encoded.
pub type DiscriminatorInput = Vec<f64>;

pub fn discriminator_input(step: &Step) -> DiscriminatorInput {
    state_action_input(&step.obs, &step.aug, step.action)
}

/// `mean_agent ln D + mean_expert ln(1 - D)`, logs clamped.
pub fn discriminator_objective(
    phi: &Mlp,
    agent: &[DiscriminatorInput],
    expert: &[DiscriminatorInput],
) -> Result<(f64, Vec<f64>)> {
    if agent.is_empty() {
        return Err(Error::EmptyBatch("agent batch"));
    }
    if expert.is_empty() {
        return Err(Error::EmptyBatch("expert batch"));
    }
    let mut grads = phi.zero_grads();
    let mut value = 0.0;
    for (batch, is_agent) in [(agent, true), (expert, false)] {
        let w = 1.0 / batch.len() as f64;
        for x in batch {
            let acts = phi.forward(x)?;
            let z = acts.output()[0];
            let (d, one_minus_d) = (sigmoid(z), sigmoid(-z));
            let dz = if is_agent {
                let (l, dl) = clamped_log(d);
                value += w * l;
                w * dl * d * one_minus_d
            } else {
                let (l, dl) = clamped_log(one_minus_d);
                value += w * l;
                -w * dl * d * one_minus_d
            };
            phi.backward(&acts, &[dz], &mut grads);
        }
    }
    Ok((value, grads))
}

/// One policy-gradient sample.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub input: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub advantage: f64,
    /// Negative-model probabilities at this state, when the penalty is used.
    pub negative_probs: Option<Vec<f64>>,
}

fn entropy(pi: &[f64]) -> f64 {
    -pi.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Policy objective (to ascend), averaged over samples:
/// `A_t ln pi(a_t) + lambda H(pi(.|s_t)) - lambda1 N(pi(.|s_t), M(.|s_t))`.
pub fn policy_objective(
    theta: &Mlp,
    samples: &[PolicySample],
    lambda: f64,
    lambda1: f64,
) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch("policy samples"));
    }
    let w = 1.0 / samples.len() as f64;
    let mut grads = theta.zero_grads();
    let mut value = 0.0;
    for sample in samples {
        let acts = theta.forward(&sample.input)?;
        let pi = masked_softmax(acts.output(), &sample.mask)?;
        let n = pi.len();
        let mut dz = vec![0.0; n];

        let (log_pa, dlog) = clamped_log(pi[sample.action]);
        value += w * sample.advantage * log_pa;
        // d ln pi_a / d z_k = pi_a^{-1} * pi_a (1[k=a] - pi_k), zero when clamped
        let coeff = w * sample.advantage * dlog * pi[sample.action];
        if coeff != 0.0 {
            for k in 0..n {
                if sample.mask[k] {
                    dz[k] += coeff * (f64::from(u8::from(k == sample.action)) - pi[k]);
                }
            }
        }

        if lambda != 0.0 {
            let h = entropy(&pi);
            value += w * lambda * h;
            for k in 0..n {
                if pi[k] > 0.0 {
                    dz[k] -= w * lambda * pi[k] * (pi[k].ln() + h);
                }
            }
        }

        if lambda1 != 0.0 {
            let m = sample
                .negative_probs
                .as_deref()
                .ok_or_else(|| Error::Contract("negative penalty without model output".into()))?;
            value -= w * lambda1 * negative_regularizer(&pi, m);
            // dN/dpi_k = 2 pi_k on penalised coordinates, then through softmax.
            let g: Vec<f64> = pi
                .iter()
                .zip(m)
                .map(|(p, q)| if p - q < 0.0 { 2.0 * p } else { 0.0 })
                .collect();
            let dot: f64 = pi.iter().zip(&g).map(|(p, gk)| p * gk).sum();
            for k in 0..n {
                dz[k] -= w * lambda1 * pi[k] * (g[k] - dot);
            }
        }

        theta.backward(&acts, &dz, &mut grads);
    }
    Ok((value, grads))
}

/// Mean cross-entropy of the negative model on `(input, action)` pairs.
pub fn negative_model_loss(model: &Mlp, batch: &[(Vec<f64>, usize)]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("bad-experience batch"));
    }
    let w = 1.0 / batch.len() as f64;
    let mut grads = model.zero_grads();
    let mut value = 0.0;
    for (x, a) in batch {
        let acts = model.forward(x)?;
        let p = softmax(acts.output());
        let (l, dl) = clamped_log(p[*a]);
        value -= w * l;
        let coeff = w * dl * p[*a];
        if coeff != 0.0 {
            let dz: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(k, pk)| coeff * (pk - f64::from(u8::from(k == *a))))
                .collect();
            model.backward(&acts, &dz, &mut grads);
        }
    }
    Ok((value, grads))
}

// ---------------------------------------------------------------------------
// Update steps.

pub fn train_negative_model(model: &mut Trainable, bad_batch: &[&Step]) -> Result<f64> {
    let batch: Vec<(Vec<f64>, usize)> = bad_batch
        .iter()
        .map(|s| (state_input(&s.obs, &s.aug), s.action))
        .collect();
    let (loss, grads) = negative_model_loss(&model.net, &batch)?;
    model.apply(&grads, Direction::Descend)?;
    Ok(loss)
}

pub fn discriminator_update(phi: &mut Trainable, agent: &[&Step], expert: &[&Step]) -> Result<f64> {
    let agent: Vec<_> = agent.iter().map(|s| discriminator_input(s)).collect();
    let expert: Vec<_> = expert.iter().map(|s| discriminator_input(s)).collect();
    let (value, grads) = discriminator_objective(&phi.net, &agent, &expert)?;
    phi.apply(&grads, Direction::Ascend)?;
    Ok(value)
}

/// Per-step imitation reward `-ln D(s, s', a)`.
pub fn imitation_rewards(phi: &Mlp, steps: &[Step]) -> Result<Vec<f64>> {
    steps
        .iter()
        .map(|s| {
            let z = phi.forward(&discriminator_input(s))?.output()[0];
            Ok(-clamped_log(sigmoid(z)).0)
        })
        .collect()
}

pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Moving average of the return observed at each stage index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageBaseline {
    values: Vec<f64>,
    rate: f64,
}

impl StageBaseline {
    pub fn new(rate: f64) -> Self {
        Self { values: Vec::new(), rate }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Advantages `G_t - b_t` against the baseline before this episode, then
    /// folds the episode's returns into the baseline. A stage seen for the
    /// first time gets advantage zero.
    pub fn advantages(&mut self, returns: &[f64]) -> Vec<f64> {
        returns
            .iter()
            .enumerate()
            .map(|(t, &g)| {
                if t == self.values.len() {
                    self.values.push(g);
                    0.0
                } else {
                    let adv = g - self.values[t];
                    self.values[t] += self.rate * adv;
                    adv
                }
            })
            .collect()
    }
}

/// Builds the policy samples for one episode. `negative` is consulted only
/// when `Some`.
pub fn policy_samples(
    steps: &[Step],
    advantages: &[f64],
    negative: Option<&Mlp>,
    negative_evals: &mut u64,
) -> Result<Vec<PolicySample>> {
    steps
        .iter()
        .zip(advantages)
        .map(|(s, &adv)| {
            let input = state_input(&s.obs, &s.aug);
            let negative_probs = match negative {
                Some(m) => {
                    *negative_evals += 1;
                    Some(softmax(m.forward(&input)?.output()))
                }
                None => None,
            };
            Ok(PolicySample {
                input,
                mask: s.mask.clone(),
                action: s.action,
                advantage: adv,
                negative_probs,
            })
        })
        .collect()
}

pub fn policy_update(theta: &mut Trainable, samples: &[PolicySample], lambda: f64, lambda1: f64) -> Result<f64> {
    let (value, grads) = policy_objective(&theta.net, samples, lambda, lambda1)?;
    theta.apply(&grads, Direction::Ascend)?;
    Ok(value)
}

/// Samples an action from the policy's masked distribution.
pub fn sample_action<R: Rng>(
    theta: &Mlp,
    obs: &crate::env::Observation,
    aug: &crate::env::AugmentedState,
    mask: &[bool],
    rng: &mut R,
) -> Result<usize> {
    let probs = crate::approximator::policy_forward(theta, obs, aug, mask)?;
    let dist = WeightedIndex::new(&probs)
        .map_err(|e| Error::Contract(format!("degenerate policy distribution: {e}")))?;
    Ok(dist.sample(rng))
}

/// Plays one episode with `theta`.
pub fn rollout<R: Rng>(
    env: &mut MitigationEnv,
    theta: &Mlp,
    use_augmented_state: bool,
    seed: u64,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    env.run_episode(seed, use_augmented_state, |obs, aug, mask| {
        sample_action(theta, obs, aug, mask, rng)
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainerState {
    pub policy: Trainable,
    pub discriminator: Trainable,
    pub negative: Trainable,
    pub lambda: f64,
    pub lambda1: f64,
    pub psi: f64,
    pub good: GoodMemory,
    pub bad: BadMemory,
    pub baseline: StageBaseline,
    pub iteration: usize,
    /// Forward evaluations of the negative model so far.
    pub negative_evals: u64,
}

impl TrainerState {
    pub fn write_checkpoints(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_checkpoint(&self.policy.net, &dir.join("policy.txt"))?;
        write_checkpoint(&self.discriminator.net, &dir.join("discriminator.txt"))?;
        write_checkpoint(&self.negative.net, &dir.join("negative.txt"))?;
        Ok(())
    }
}

/// What one training iteration produced.
#[derive(Debug, Clone)]
pub struct IterationReport {
    pub iteration: usize,
    pub episode: Arc<EpisodeTrace>,
}

pub struct Trainer {
    env: MitigationEnv,
    config: TrainConfig,
    state: TrainerState,
    seed: u64,
}

impl Trainer {
    pub fn new(
        graph: Arc<SocialGraph>,
        env_config: MitigationConfig,
        params: PropagationParams,
        intensity: IntensityDist,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let psi = env_config.psi;
        let n = graph.n();
        let env = MitigationEnv::new(graph, env_config, params, intensity)?;
        let (policy, discriminator, negative) = init_networks(n, &config.hidden, seed);
        let lr = config.learning_rate;
        let state = TrainerState {
            policy: Trainable::new(policy, lr),
            discriminator: Trainable::new(discriminator, lr),
            negative: Trainable::new(negative, lr),
            lambda: config.lambda,
            lambda1: config.effective_lambda1(),
            psi,
            good: GoodMemory::new(config.good_capacity),
            bad: BadMemory::new(config.bad_fraction, config.bad_cap),
            baseline: StageBaseline::new(config.baseline_rate),
            iteration: 0,
            negative_evals: 0,
        };
        Ok(Self { env, config, state, seed })
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn env_mut(&mut self) -> &mut MitigationEnv {
        &mut self.env
    }

    /// One pass of the training loop.
    pub fn step(&mut self) -> Result<IterationReport> {
        let i = self.state.iteration as u64;
        let seed = self.seed;
        let cfg = &self.config;
        let st = &mut self.state;

        let episode_seed = derive_seed(seed, stream::EPISODE, i);
        let mut policy_rng = stream_rng(derive_seed(seed, stream::POLICY, i), stream::POLICY);
        let trace = Arc::new(rollout(
            &mut self.env,
            &st.policy.net,
            cfg.use_augmented_state,
            episode_seed,
            &mut policy_rng,
        )?);
        st.good.insert(Arc::clone(&trace))?;
        st.bad.insert(Arc::clone(&trace))?;

        if !trace.is_empty() {
            let mut expert_rng = stream_rng(derive_seed(seed, stream::EXPERT_BATCH, i), stream::EXPERT_BATCH);
            let expert = st.good.sample_transitions(cfg.expert_batch, &mut expert_rng)?;

            if cfg.use_negative_samples && !st.bad.is_empty() {
                let mut bad_rng = stream_rng(derive_seed(seed, stream::BAD_BATCH, i), stream::BAD_BATCH);
                let bad = st.bad.sample_transitions(cfg.bad_batch, &mut bad_rng)?;
                for _ in 0..cfg.negative_updates {
                    st.negative_evals += bad.len() as u64;
                    train_negative_model(&mut st.negative, &bad)?;
                }
            }

            let agent: Vec<&Step> = trace.steps.iter().collect();
            for _ in 0..cfg.discriminator_updates {
                discriminator_update(&mut st.discriminator, &agent, &expert)?;
            }

            let rewards = imitation_rewards(&st.discriminator.net, &trace.steps)?;
            let returns = discounted_returns(&rewards, cfg.gamma_r);
            let advantages = st.baseline.advantages(&returns);
            let negative = cfg.use_negative_samples.then_some(&st.negative.net);
            let samples = policy_samples(&trace.steps, &advantages, negative, &mut st.negative_evals)?;
            for _ in 0..cfg.policy_updates {
                policy_update(&mut st.policy, &samples, st.lambda, st.lambda1)?;
            }
        }

        st.iteration += 1;
        Ok(IterationReport {
            iteration: i as usize,
            episode: trace,
        })
    }
}

/// Runs the full loop; returns the final state and the episodic reward of
/// every iteration.
pub fn train(
    graph: Arc<SocialGraph>,
    env_config: MitigationConfig,
    params: PropagationParams,
    intensity: IntensityDist,
    config: TrainConfig,
    seed: u64,
) -> Result<(TrainerState, Vec<f64>)> {
    let iterations = config.iterations;
    let mut trainer = Trainer::new(graph, env_config, params, intensity, config, seed)?;
    let mut rewards = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        rewards.push(trainer.step()?.episode.reward);
    }
    Ok((trainer.into_state(), rewards))
}

/// Episodic rewards of a frozen policy over `episodes` fresh episodes.
pub fn evaluate(
    env: &mut MitigationEnv,
    theta: &Mlp,
    use_augmented_state: bool,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..episodes as u64)
        .map(|i| {
            let mut rng = stream_rng(derive_seed(seed, stream::POLICY, i), stream::POLICY);
            let ep_seed = derive_seed(seed, stream::EPISODE, i);
            Ok(rollout(env, theta, use_augmented_state, ep_seed, &mut rng)?.reward)
        })
        .collect()
}
