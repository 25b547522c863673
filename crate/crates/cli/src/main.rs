use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qe_mipt::harness::{self, ExperimentConfig, ExperimentKind, Threads};

#[derive(Parser)]
#[command(name = "qe-mipt", version, about = "Monitored Clifford circuits with noise and quantum-enhanced operations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep measurement rates and sizes, writing mean observables to CSV.
    Scan(Common),
    /// Fit critical point and exponent by finite-size collapse.
    Collapse(CollapseArgs),
    /// Purification of a maximally mixed initial state.
    Purify(Common),
    /// Estimate the noise fraction from intersecting half-system curves.
    EstimateNoise(Common),
    /// Scan with unequal noise and QE rates.
    Unequal(Common),
    /// Check the replica bond-weight symmetries.
    ReplicaVerify(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CollapseArgs {
    #[command(flatten)]
    common: Common,
    /// Fit an existing results CSV instead of simulating.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn load(common: &Common, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = harness::parse_config(&text).with_context(|| format!("in {}", path.display()))?;
            if cfg.experiment != kind && !(kind == ExperimentKind::Collapse || cfg.experiment == ExperimentKind::Scan) {
                bail!("{} declares experiment {:?}, expected {:?}", path.display(), cfg.experiment.name(), kind.name());
            }
            cfg
        }
        None if kind == ExperimentKind::ReplicaVerify || kind == ExperimentKind::Collapse => ExperimentConfig::new(kind),
        None => bail!("--config is required"),
    };
    cfg.experiment = kind;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        cfg.threads = Threads::Fixed(t);
    }
    Ok(cfg)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let (common, kind, input) = match &cli.command {
        Command::Scan(c) => (c, ExperimentKind::Scan, None),
        Command::Collapse(c) => (&c.common, ExperimentKind::Collapse, c.input.clone()),
        Command::Purify(c) => (c, ExperimentKind::Purification, None),
        Command::EstimateNoise(c) => (c, ExperimentKind::NoiseEstimate, None),
        Command::Unequal(c) => (c, ExperimentKind::UnequalRates, None),
        Command::ReplicaVerify(c) => (c, ExperimentKind::ReplicaVerify, None),
    };
    let mut cfg = load(common, kind)?;
    if let Some(i) = input {
        cfg.collapse.input = Some(i.display().to_string());
    }
    if kind == ExperimentKind::Collapse && cfg.collapse.input.is_none() && cfg.sweep.l.is_empty() {
        bail!("collapse needs --input or a config with a sweep");
    }
    let out = harness::run_experiment(&cfg, common.out.as_deref())?;

    if let Some(fit) = &out.collapse {
        println!("p_c = {:.5}  [{:.5}, {:.5}]", fit.p_c, fit.p_c_lo, fit.p_c_hi);
        println!("nu  = {:.4}  [{:.4}, {:.4}]", fit.nu, fit.nu_lo, fit.nu_hi);
        println!("eps_min = {:.6e}", fit.eps_min);
    }
    for (l, est) in &out.noise_estimates {
        match est {
            Ok(e) => println!("L = {l}: q_n/q = {:.4}  [{:.4}, {:.4}]", e.ratio, e.lo, e.hi),
            Err(msg) => println!("L = {l}: {msg}"),
        }
    }
    for id in &out.replica_identities {
        println!("Q = {} {}: {} checked, {} violations", id.q, id.name, id.checked, id.violations);
    }
    for rep in &out.replica {
        println!("{rep}");
    }
    if kind != ExperimentKind::Collapse && kind != ExperimentKind::ReplicaVerify && kind != ExperimentKind::NoiseEstimate {
        println!("{} rows", out.rows.len());
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
