//! Experiment driver: flat `key = value` configs, seed fan-out, parameter
//! sweeps and CSV / plot-data output.
//!
//! Every key has a default, so an empty config reproduces the standard
//! setting. Floats in CSV outputs are always written with six decimals so
//! repeated runs can be compared byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::approximator::{read_checkpoint, Head};
use crate::baselines::HeuristicPolicy;
use crate::env::{MitigationConfig, MitigationEnv, RewardMode, TRACE_CSV_HEADER};
use crate::error::{Error, Result};
use crate::netgen::{generate_scale_free, load_edge_list, write_graph_dump, GraphMeta, ScaleFreeParams, SocialGraph};
use crate::propagation::{write_event_log, EState, IntensityDist, PropagationParams, SimState};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::trainer::{self, TrainConfig, Trainer, Variant};

pub const REWARDS_CSV_HEADER: &str = "episode,reward";
pub const SWEEP_CSV_HEADER: &str = "policy,parameter,value,seed,metric";
pub const SUMMARY_CSV_HEADER: &str = "config_hash,policy,seed,metric,wall_seconds";
/// Written in the metric column of a sweep cell whose run failed.
pub const ERROR_MARKER: &str = "ERROR";
pub const THREADS_ENV: &str = "DEBUNKD_THREADS";

/// Any policy the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Heuristic(HeuristicPolicy),
    Learner(Variant),
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(h) = s.parse() {
            return Ok(PolicyKind::Heuristic(h));
        }
        s.parse()
            .map(PolicyKind::Learner)
            .map_err(|_| Error::Config(format!("policy: unknown value {s:?}")))
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyKind::Heuristic(h) => h.fmt(f),
            PolicyKind::Learner(v) => v.fmt(f),
        }
    }
}

/// Flat experiment configuration. Field names match the config keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // network
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta_in: f64,
    pub delta_out: f64,
    /// Seed of the synthetic network, shared by every run seed.
    pub network_seed: u64,
    /// Edge-list file; empty means generate a synthetic network.
    pub graph: String,
    pub graph_undirected: bool,
    // propagation
    pub delta: f64,
    pub omega: f64,
    pub dt: f64,
    pub intensity_low: f64,
    pub intensity_high: f64,
    /// One value per line; overrides the uniform intensity range when set.
    pub intensity_file: String,
    pub sim_time: f64,
    // campaign
    pub budget: f64,
    pub stage_length: f64,
    pub t_start: f64,
    pub t_tail: f64,
    pub psi: f64,
    pub initial_spreaders: usize,
    pub reuse_debunkers: bool,
    pub reward_mode: RewardMode,
    // learning
    pub policy: PolicyKind,
    pub iterations: usize,
    pub expert_batch: usize,
    pub bad_batch: usize,
    pub discriminator_updates: usize,
    pub policy_updates: usize,
    pub negative_updates: usize,
    pub gamma_r: f64,
    pub lambda: f64,
    pub lambda1: f64,
    pub good_capacity: usize,
    pub bad_fraction: f64,
    pub bad_cap: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub baseline_rate: f64,
    // reporting
    pub test_window: usize,
    pub eval_episodes: usize,
    pub write_traces: bool,
    // not part of the hash
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let env = MitigationConfig::default();
        let prop = PropagationParams::default();
        let train = TrainConfig::default();
        Self {
            n: 1250,
            alpha: 0.05,
            beta: 0.8,
            gamma: 0.15,
            delta_in: 0.2,
            delta_out: 0.0,
            network_seed: 1,
            graph: String::new(),
            graph_undirected: true,
            delta: prop.delta,
            omega: prop.omega,
            dt: prop.dt,
            intensity_low: 0.5,
            intensity_high: 1.5,
            intensity_file: String::new(),
            sim_time: 10.0,
            budget: env.budget,
            stage_length: env.stage_length,
            t_start: env.t_start,
            t_tail: env.t_tail,
            psi: env.psi,
            initial_spreaders: env.initial_spreaders,
            reuse_debunkers: env.reuse_debunkers,
            reward_mode: env.reward_mode,
            policy: PolicyKind::Learner(Variant::Nagasil),
            iterations: train.iterations,
            expert_batch: train.expert_batch,
            bad_batch: train.bad_batch,
            discriminator_updates: train.discriminator_updates,
            policy_updates: train.policy_updates,
            negative_updates: train.negative_updates,
            gamma_r: train.gamma_r,
            lambda: train.lambda,
            lambda1: train.lambda1,
            good_capacity: train.good_capacity,
            bad_fraction: train.bad_fraction,
            bad_cap: train.bad_cap,
            hidden: train.hidden,
            learning_rate: train.learning_rate,
            baseline_rate: train.baseline_rate,
            test_window: 100,
            eval_episodes: 100,
            write_traces: false,
            seeds: vec![1, 2, 3, 4, 5],
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {value:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", idx + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n" => self.n = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "delta_in" => self.delta_in = parse(key, value)?,
            "delta_out" => self.delta_out = parse(key, value)?,
            "network_seed" => self.network_seed = parse(key, value)?,
            "graph" => self.graph = value.to_string(),
            "graph_undirected" => self.graph_undirected = parse_bool(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "omega" => self.omega = parse(key, value)?,
            "dt" => self.dt = parse(key, value)?,
            "intensity_low" => self.intensity_low = parse(key, value)?,
            "intensity_high" => self.intensity_high = parse(key, value)?,
            "intensity_file" => self.intensity_file = value.to_string(),
            "sim_time" => self.sim_time = parse(key, value)?,
            "budget" => self.budget = parse(key, value)?,
            "stage_length" => self.stage_length = parse(key, value)?,
            "t_start" => self.t_start = parse(key, value)?,
            "t_tail" => self.t_tail = parse(key, value)?,
            "psi" => self.psi = parse(key, value)?,
            "initial_spreaders" => self.initial_spreaders = parse(key, value)?,
            "reuse_debunkers" => self.reuse_debunkers = parse_bool(key, value)?,
            "reward_mode" => {
                self.reward_mode = match value {
                    "expected" => RewardMode::Expected,
                    "sampled" => RewardMode::Sampled,
                    _ => return Err(Error::Config(format!("reward_mode: unknown value {value:?}"))),
                }
            }
            "policy" => self.policy = value.parse()?,
            "iterations" => self.iterations = parse(key, value)?,
            "expert_batch" => self.expert_batch = parse(key, value)?,
            "bad_batch" => self.bad_batch = parse(key, value)?,
            "discriminator_updates" => self.discriminator_updates = parse(key, value)?,
            "policy_updates" => self.policy_updates = parse(key, value)?,
            "negative_updates" => self.negative_updates = parse(key, value)?,
            "gamma_r" => self.gamma_r = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "good_capacity" => self.good_capacity = parse(key, value)?,
            "bad_fraction" => self.bad_fraction = parse(key, value)?,
            "bad_cap" => self.bad_cap = parse(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "baseline_rate" => self.baseline_rate = parse(key, value)?,
            "test_window" => self.test_window = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "write_traces" => self.write_traces = parse_bool(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Every hashed key with its canonical value, sorted by key.
    pub fn canonical(&self) -> BTreeMap<&'static str, String> {
        let reward_mode = match self.reward_mode {
            RewardMode::Expected => "expected",
            RewardMode::Sampled => "sampled",
        };
        BTreeMap::from([
            ("n", self.n.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("delta_in", self.delta_in.to_string()),
            ("delta_out", self.delta_out.to_string()),
            ("network_seed", self.network_seed.to_string()),
            ("graph", self.graph.clone()),
            ("graph_undirected", self.graph_undirected.to_string()),
            ("delta", self.delta.to_string()),
            ("omega", self.omega.to_string()),
            ("dt", self.dt.to_string()),
            ("intensity_low", self.intensity_low.to_string()),
            ("intensity_high", self.intensity_high.to_string()),
            ("intensity_file", self.intensity_file.clone()),
            ("sim_time", self.sim_time.to_string()),
            ("budget", self.budget.to_string()),
            ("stage_length", self.stage_length.to_string()),
            ("t_start", self.t_start.to_string()),
            ("t_tail", self.t_tail.to_string()),
            ("psi", self.psi.to_string()),
            ("initial_spreaders", self.initial_spreaders.to_string()),
            ("reuse_debunkers", self.reuse_debunkers.to_string()),
            ("reward_mode", reward_mode.to_string()),
            ("policy", self.policy.to_string()),
            ("iterations", self.iterations.to_string()),
            ("expert_batch", self.expert_batch.to_string()),
            ("bad_batch", self.bad_batch.to_string()),
            ("discriminator_updates", self.discriminator_updates.to_string()),
            ("policy_updates", self.policy_updates.to_string()),
            ("negative_updates", self.negative_updates.to_string()),
            ("gamma_r", self.gamma_r.to_string()),
            ("lambda", self.lambda.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("good_capacity", self.good_capacity.to_string()),
            ("bad_fraction", self.bad_fraction.to_string()),
            ("bad_cap", self.bad_cap.to_string()),
            ("hidden", join(&self.hidden)),
            ("learning_rate", self.learning_rate.to_string()),
            ("baseline_rate", self.baseline_rate.to_string()),
            ("test_window", self.test_window.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("write_traces", self.write_traces.to_string()),
        ])
    }

    /// Config file text that parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.canonical() {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "seeds = {}", join(&self.seeds));
        let _ = writeln!(s, "out = {}", self.out.display());
        s
    }

    /// SHA-256 of the canonical `key=value` lines; seeds and output
    /// directory are excluded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        if self.graph.is_empty() {
            self.scale_free_params().validate()?;
        }
        self.propagation_params().validate()?;
        self.mitigation_config(None).validate()?;
        self.train_config().validate()?;
        if self.intensity_file.is_empty() && (self.intensity_low < 0.0 || self.intensity_high < self.intensity_low) {
            return Err(Error::Config("intensity range must satisfy 0 <= low <= high".into()));
        }
        if self.test_window == 0 {
            return Err(Error::Config("test_window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn scale_free_params(&self) -> ScaleFreeParams {
        ScaleFreeParams {
            n: self.n,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            delta_in: self.delta_in,
            delta_out: self.delta_out,
        }
    }

    pub fn propagation_params(&self) -> PropagationParams {
        PropagationParams {
            delta: self.delta,
            omega: self.omega,
            dt: self.dt,
        }
    }

    pub fn intensity(&self) -> Result<IntensityDist> {
        if self.intensity_file.is_empty() {
            Ok(IntensityDist::Uniform {
                low: self.intensity_low,
                high: self.intensity_high,
            })
        } else {
            IntensityDist::load(Path::new(&self.intensity_file))
        }
    }

    pub fn mitigation_config(&self, scenario_seed: Option<u64>) -> MitigationConfig {
        MitigationConfig {
            budget: self.budget,
            stage_length: self.stage_length,
            t_start: self.t_start,
            t_tail: self.t_tail,
            psi: self.psi,
            initial_spreaders: self.initial_spreaders,
            reuse_debunkers: self.reuse_debunkers,
            reward_mode: self.reward_mode,
            scenario_seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig {
            iterations: self.iterations,
            expert_batch: self.expert_batch,
            bad_batch: self.bad_batch,
            discriminator_updates: self.discriminator_updates,
            policy_updates: self.policy_updates,
            negative_updates: self.negative_updates,
            gamma_r: self.gamma_r,
            lambda: self.lambda,
            lambda1: self.lambda1,
            good_capacity: self.good_capacity,
            bad_fraction: self.bad_fraction,
            bad_cap: self.bad_cap,
            hidden: self.hidden.clone(),
            learning_rate: self.learning_rate,
            baseline_rate: self.baseline_rate,
            ..TrainConfig::default()
        };
        match self.policy {
            PolicyKind::Learner(v) => base.with_variant(v),
            PolicyKind::Heuristic(_) => base,
        }
    }

    /// The configured edge-list file, or the synthetic network.
    pub fn build_graph(&self) -> Result<SocialGraph> {
        if self.graph.is_empty() {
            generate_scale_free(&self.scale_free_params(), self.network_seed)
        } else {
            load_edge_list(Path::new(&self.graph), self.graph_undirected)
        }
    }
}

/// Outcome of one (config, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_hash: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub rewards: Vec<f64>,
    pub metric: f64,
    pub wall_seconds: f64,
}

/// Mean of the final `window` entries (all of them when shorter).
pub fn tail_mean(series: &[f64], window: usize) -> f64 {
    let tail = &series[series.len().saturating_sub(window)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Mean and unbiased standard deviation; std is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Worker pool honouring `DEBUNKD_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}: expected a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn scenario_seed(seed: u64) -> u64 {
    derive_seed(seed, stream::SPREADERS, 0)
}

fn make_env(cfg: &ExperimentConfig, graph: Arc<SocialGraph>, seed: u64) -> Result<MitigationEnv> {
    MitigationEnv::new(
        graph,
        cfg.mitigation_config(Some(scenario_seed(seed))),
        cfg.propagation_params(),
        cfg.intensity()?,
    )
}

fn run_stem(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("{}_seed{seed}", cfg.policy)
}

pub fn write_rewards_csv(path: &Path, rewards: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{REWARDS_CSV_HEADER}")?;
    for (i, r) in rewards.iter().enumerate() {
        writeln!(w, "{i},{r:.6}")?;
    }
    w.flush()?;
    Ok(())
}

/// Trains (or plays, for heuristics) one seed and writes its rewards CSV,
/// optional trace CSV and, for learners, network checkpoints into `out`.
pub fn run_single(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<RunRecord> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let started = Instant::now();
    let graph = Arc::new(cfg.build_graph()?);
    let stem = run_stem(cfg, seed);
    let mut traces = cfg
        .write_traces
        .then(|| -> Result<_> {
            let mut w = BufWriter::new(fs::File::create(out.join(format!("{stem}_trace.csv")))?);
            writeln!(w, "{TRACE_CSV_HEADER}")?;
            Ok(w)
        })
        .transpose()?;

    let mut rewards = Vec::with_capacity(cfg.iterations);
    match cfg.policy {
        PolicyKind::Heuristic(h) => {
            let mut env = make_env(cfg, graph, seed)?;
            let mut rng = stream_rng(derive_seed(seed, stream::HEURISTIC, 0), stream::HEURISTIC);
            for i in 0..cfg.iterations {
                let ep = env.run_episode(derive_seed(seed, stream::EPISODE, i as u64), false, |obs, _, mask| {
                    h.select(obs, mask, &mut rng)
                })?;
                if let Some(w) = traces.as_mut() {
                    ep.write_rows(i, w)?;
                }
                rewards.push(ep.reward);
            }
        }
        PolicyKind::Learner(_) => {
            let mut trainer = Trainer::new(
                Arc::clone(&graph),
                cfg.mitigation_config(Some(scenario_seed(seed))),
                cfg.propagation_params(),
                cfg.intensity()?,
                cfg.train_config(),
                seed,
            )?;
            for i in 0..cfg.iterations {
                let report = trainer.step()?;
                if let Some(w) = traces.as_mut() {
                    report.episode.write_rows(i, w)?;
                }
                rewards.push(report.episode.reward);
            }
            trainer.state().write_checkpoints(&out.join(format!("{stem}_ckpt")))?;
        }
    }
    if let Some(mut w) = traces {
        w.flush()?;
    }
    write_rewards_csv(&out.join(format!("{stem}_rewards.csv")), &rewards)?;
    Ok(RunRecord {
        config_hash: cfg.hash(),
        policy: cfg.policy,
        seed,
        metric: tail_mean(&rewards, cfg.test_window),
        rewards,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn write_summary_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{SUMMARY_CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{:.6},{:.3}", r.config_hash, r.policy, r.seed, r.metric, r.wall_seconds)?;
    }
    if let Some(first) = records.first() {
        let metrics: Vec<f64> = records.iter().map(|r| r.metric).collect();
        let (mean, std) = mean_std(&metrics);
        writeln!(w, "{},{},mean,{mean:.6},", first.config_hash, first.policy)?;
        writeln!(w, "{},{},std,{std:.6},", first.config_hash, first.policy)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every configured seed (in parallel) and writes `summary.csv` plus
/// the resolved `config.txt` into the output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    if cfg.seeds.is_empty() {
        return Err(Error::Config("seeds: at least one seed is required".into()));
    }
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    let pool = thread_pool()?;
    let records: Vec<RunRecord> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_single(cfg, seed, &cfg.out))
            .collect::<Result<_>>()
    })?;
    write_summary_csv(&cfg.out.join("summary.csv"), &records)?;
    Ok(records)
}

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Budget,
    StageLength,
    Beta,
    N,
    Policy,
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "budget" => Ok(Self::Budget),
            "stage_length" => Ok(Self::StageLength),
            "beta" => Ok(Self::Beta),
            "n" => Ok(Self::N),
            "policy" => Ok(Self::Policy),
            _ => Err(Error::Config(format!(
                "unknown sweep parameter {s:?} (expected budget, stage_length, beta, n or policy)"
            ))),
        }
    }
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            Self::Budget => "budget",
            Self::StageLength => "stage_length",
            Self::Beta => "beta",
            Self::N => "n",
            Self::Policy => "policy",
        }
    }

    /// Applies one sweep value. Varying `beta` keeps `gamma = 3 alpha`.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: &str) -> Result<()> {
        match self {
            Self::Beta => {
                let beta: f64 = parse("beta", value)?;
                let p = ScaleFreeParams::with_density(cfg.n, beta);
                cfg.alpha = p.alpha;
                cfg.beta = p.beta;
                cfg.gamma = p.gamma;
                Ok(())
            }
            other => cfg.set(other.name(), value),
        }
    }
}

/// One row of a sweep CSV; `metric` is `None` when the run failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub policy: String,
    pub parameter: String,
    pub value: String,
    pub seed: u64,
    pub metric: Option<f64>,
}

/// Runs values x policies x seeds and writes `sweep.csv` into `cfg.out`.
/// Failed cells are recorded with an error marker; per-run files go to
/// `cfg.out/<parameter>=<value>/`.
pub fn sweep(
    cfg: &ExperimentConfig,
    parameter: SweepParameter,
    values: &[String],
    policies: &[PolicyKind],
) -> Result<Vec<SweepRow>> {
    let policies: Vec<PolicyKind> = if policies.is_empty() || parameter == SweepParameter::Policy {
        vec![cfg.policy]
    } else {
        policies.to_vec()
    };
    let mut cells = Vec::new();
    for value in values {
        for &policy in &policies {
            for &seed in &cfg.seeds {
                cells.push((value.clone(), policy, seed));
            }
        }
    }
    fs::create_dir_all(&cfg.out)?;
    let pool = thread_pool()?;
    let rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|(value, policy, seed)| {
                let mut c = cfg.clone();
                c.policy = *policy;
                let outcome = parameter.apply(&mut c, value).and_then(|()| {
                    let dir = cfg.out.join(format!("{}={value}", parameter.name()));
                    run_single(&c, *seed, &dir)
                });
                SweepRow {
                    policy: c.policy.to_string(),
                    parameter: parameter.name().to_string(),
                    value: value.clone(),
                    seed: *seed,
                    metric: outcome.ok().map(|r| r.metric),
                }
            })
            .collect()
    });
    write_sweep_csv(&cfg.out.join("sweep.csv"), &rows)?;
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        let metric = r.metric.map_or_else(|| ERROR_MARKER.to_string(), |m| format!("{m:.6}"));
        writeln!(w, "{},{},{},{},{metric}", r.policy, r.parameter, r.value, r.seed)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (idx == 0 && line.starts_with("policy,")) {
            continue;
        }
        let malformed = || Error::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            text: line.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        let [policy, parameter, value, seed, metric] = fields[..] else {
            return Err(malformed());
        };
        rows.push(SweepRow {
            policy: policy.to_string(),
            parameter: parameter.to_string(),
            value: value.to_string(),
            seed: seed.parse().map_err(|_| malformed())?,
            metric: if metric == ERROR_MARKER {
                None
            } else {
                Some(metric.parse().map_err(|_| malformed())?)
            },
        });
    }
    Ok(rows)
}

/// Writes one `<parameter>_<policy>.dat` per group with whitespace-separated
/// `x mean std` lines, x ascending. Failed cells are skipped.
pub fn emit_plot_data(sweep_csv: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    if !sweep_csv.exists() {
        return Err(Error::Config(format!("missing input {}", sweep_csv.display())));
    }
    let rows = read_sweep_csv(sweep_csv)?;
    let mut groups: BTreeMap<(String, String), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in &rows {
        if let Some(m) = r.metric {
            groups
                .entry((r.parameter.clone(), r.policy.clone()))
                .or_default()
                .entry(r.value.clone())
                .or_default()
                .push(m);
        }
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for ((parameter, policy), points) in groups {
        let mut points: Vec<(String, Vec<f64>)> = points.into_iter().collect();
        points.sort_by(|a, b| match (a.0.parse::<f64>(), b.0.parse::<f64>()) {
            (Ok(x), Ok(y)) => x.total_cmp(&y),
            _ => a.0.cmp(&b.0),
        });
        let path = out.join(format!("{parameter}_{policy}.dat"));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "# {parameter} mean std")?;
        for (x, metrics) in points {
            let (mean, std) = mean_std(&metrics);
            writeln!(w, "{x} {mean:.6} {std:.6}")?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Writes the network as `graph.txt` plus `graph.txt.meta`.
pub fn generate_network(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out)?;
    let graph = cfg.build_graph()?;
    let path = cfg.out.join("graph.txt");
    let meta = GraphMeta {
        n: graph.n(),
        seed: cfg.network_seed,
        alpha: cfg.alpha,
        beta: cfg.beta,
        gamma: cfg.gamma,
    };
    write_graph_dump(&graph, &meta, &path)?;
    Ok(path)
}

/// Free propagation (no debunkers) for `sim_time`; writes the event log
/// and the final state counts per seed.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let params = cfg.propagation_params();
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        let graph = Arc::new(cfg.build_graph()?);
        let mut sim = SimState::with_intensity(graph, seed, cfg.intensity()?);
        sim.seed_fake_spreaders(cfg.initial_spreaders)?;
        let events = sim.run_until_logged(cfg.sim_time, &params);
        let log = cfg.out.join(format!("events_seed{seed}.csv"));
        write_event_log(&events, BufWriter::new(fs::File::create(&log)?))?;
        let counts = cfg.out.join(format!("states_seed{seed}.csv"));
        let mut w = BufWriter::new(fs::File::create(&counts)?);
        writeln!(w, "state,count")?;
        for s in [EState::Susceptible, EState::Exposed, EState::Infected, EState::Recovered] {
            writeln!(w, "{},{}", s.code(), sim.count(s))?;
        }
        w.flush()?;
        written.push(log);
        written.push(counts);
    }
    Ok(written)
}

/// Rollouts of a frozen policy checkpoint, `eval_episodes` per seed.
/// Writes `eval_seed<k>_rewards.csv`; returns the mean reward per seed.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<(u64, f64)>> {
    cfg.validate()?;
    let PolicyKind::Learner(variant) = cfg.policy else {
        return Err(Error::Config("evaluate needs a learned policy".into()));
    };
    let theta = read_checkpoint(checkpoint)?;
    if theta.head() != Head::MaskedSoftmax {
        return Err(Error::Checkpoint(format!("{} is not a policy network", checkpoint.display())));
    }
    fs::create_dir_all(&cfg.out)?;
    cfg.seeds
        .iter()
        .map(|&seed| {
            let graph = Arc::new(cfg.build_graph()?);
            if theta.output_dim() != graph.n() {
                return Err(Error::ShapeMismatch {
                    expected: graph.n(),
                    got: theta.output_dim(),
                });
            }
            let mut env = make_env(cfg, graph, seed)?;
            let rewards = trainer::evaluate(&mut env, &theta, variant.use_augmented_state(), cfg.eval_episodes, seed)?;
            write_rewards_csv(&cfg.out.join(format!("eval_seed{seed}_rewards.csv")), &rewards)?;
            Ok((seed, tail_mean(&rewards, rewards.len())))
        })
        .collect()
}
