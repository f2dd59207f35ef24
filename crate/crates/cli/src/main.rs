use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use debunkd::harness::{self, ExperimentConfig, PolicyKind, SweepParameter};

#[derive(Parser)]
#[command(name = "debunkd", version, about = "Fake-news mitigation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(s) = &self.seeds {
            cfg.set("seeds", s)?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured network as an edge list.
    GenerateNet(Common),
    /// Propagation only, no debunkers.
    Simulate(Common),
    /// Train (or play a heuristic) for each seed.
    Train(Common),
    /// Roll out a saved policy checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Grid over one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// budget, stage_length, beta, n or policy.
        #[arg(long)]
        parameter: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        /// Comma-separated policies; defaults to the configured one.
        #[arg(long)]
        policies: Option<String>,
    },
    /// Turn a sweep CSV into per-policy `x mean std` files.
    PlotData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn split(list: &str) -> Vec<String> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateNet(c) => {
            println!("{}", harness::generate_network(&c.resolve()?)?.display());
        }
        Command::Simulate(c) => {
            for p in harness::simulate(&c.resolve()?)? {
                println!("{}", p.display());
            }
        }
        Command::Train(c) => {
            let cfg = c.resolve()?;
            let records = harness::run(&cfg)?;
            for r in &records {
                println!("{} seed {}: metric {:.6} ({:.1}s)", r.policy, r.seed, r.metric, r.wall_seconds);
            }
            let metrics: Vec<f64> = records.iter().map(|r| r.metric).collect();
            let (mean, std) = harness::mean_std(&metrics);
            println!("{}: mean {mean:.6} std {std:.6}", cfg.policy);
        }
        Command::Evaluate { common, checkpoint } => {
            for (seed, mean) in harness::evaluate(&common.resolve()?, &checkpoint)? {
                println!("seed {seed}: mean reward {mean:.6}");
            }
        }
        Command::Sweep {
            common,
            parameter,
            values,
            policies,
        } => {
            let cfg = common.resolve()?;
            let parameter: SweepParameter = parameter.parse()?;
            let policies = policies
                .as_deref()
                .map(split)
                .unwrap_or_default()
                .iter()
                .map(|p| p.parse::<PolicyKind>())
                .collect::<Result<Vec<_>, _>>()?;
            let rows = harness::sweep(&cfg, parameter, &split(&values), &policies)?;
            let failed = rows.iter().filter(|r| r.metric.is_none()).count();
            println!("{} rows written to {} ({failed} failed)", rows.len(), cfg.out.join("sweep.csv").display());
        }
        Command::PlotData { input, out } => {
            for p in harness::emit_plot_data(&input, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
