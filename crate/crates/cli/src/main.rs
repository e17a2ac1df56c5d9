use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cirs_core::harness::{
    run_experiment, sweep, EnvKind, ExperimentConfig, HarnessError, PolicyKind,
};

/// Train and evaluate interactive recommenders under a bored-then-quit exit rule.
#[derive(Debug, Parser)]
#[command(name = "cirs", version)]
struct Args {
    /// TOML experiment config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// synthetic-categorical, synthetic-continuous or files.
    #[arg(long)]
    env: Option<EnvKind>,
    /// cirs, cirs-no-ci, random, eps-greedy, ucb or softmax-static.
    #[arg(long)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_round: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory (default: runs/<policy>-seed<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated tau values; enables a sweep.
    #[arg(long, value_delimiter = ',')]
    sweep_tau: Option<Vec<f64>>,
    /// Comma-separated tau* values; enables a sweep.
    #[arg(long, value_delimiter = ',')]
    sweep_tau_star: Option<Vec<f64>>,
}

fn resolve(args: &Args) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(k) = args.env {
        cfg.env.kind = k;
    }
    if let Some(p) = args.policy {
        cfg.policy = p;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(h) = args.max_round {
        cfg.env.max_round = h;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = Some(o.clone());
    }
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(PathBuf::from(format!(
            "runs/{}-seed{}",
            cfg.policy, cfg.seed
        )));
    }
    Ok(cfg)
}

fn run(args: Args) -> Result<(), HarnessError> {
    let cfg = resolve(&args)?;
    let out = cfg.out_dir.clone().unwrap_or_default();
    if args.sweep_tau.is_some() || args.sweep_tau_star.is_some() {
        let taus = args.sweep_tau.unwrap_or_else(|| vec![cfg.exposure.tau]);
        let stars = args
            .sweep_tau_star
            .unwrap_or_else(|| vec![cfg.exposure.tau_star]);
        let cells = sweep(&cfg, &taus, &stars)?;
        println!("tau\ttau_star\tfinal_cum_sat");
        for c in &cells {
            match &c.outcome {
                Ok(v) => println!("{}\t{}\t{v:.4}", c.tau, c.tau_star),
                Err(e) => println!("{}\t{}\tfailed: {e}", c.tau, c.tau_star),
            }
        }
        println!("wrote {}", out.join("sweep.csv").display());
        return Ok(());
    }
    let summary = run_experiment(&cfg)?;
    let last = summary.final_row();
    println!(
        "{} seed {}: epoch {} cumulative {:.4}, length {:.3}, single-round {:.4}",
        cfg.policy, cfg.seed, last.epoch, last.mean_cum_sat, last.mean_len, last.mean_single_round
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
