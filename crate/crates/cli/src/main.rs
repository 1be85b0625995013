use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use uapdfl_core::harness::{
    gen_data, parse_config, run_bound_checks, run_matrix, run_probe, ExperimentSpec,
};
use uapdfl_core::protocol::Algorithm;

#[derive(Parser)]
#[command(name = "uapdfl", version, about = "Unit-representation decentralized federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (arm, seed) pair of the experiment and write metrics and a summary
    Run(Common),
    /// Train the probe clients and record pairwise divergences per round
    ProbeDivergence(Common),
    /// Check the linear-rate bound on synthetic quadratic clients
    BoundCheck(Common),
    /// Write the dataset and partition each seed would use
    GenData(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Restrict to one or more arms, e.g. `--arm ua_pdfl --arm local`
    #[arg(long)]
    arm: Vec<Algorithm>,
}

impl Common {
    fn load(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_config(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => ExperimentSpec::default(),
        };
        if let Some(seed) = self.seed {
            spec.seeds = vec![seed];
        }
        if let Some(dir) = &self.out_dir {
            spec.out_dir = dir.clone();
        }
        if !self.arm.is_empty() {
            spec.arms = self.arm.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let spec = c.load()?;
            let summary = run_matrix(&spec)?;
            for a in &summary.arms {
                println!(
                    "{:<14} {:.2}% ± {:.2} over {} seed(s), dropout rate {:.3}",
                    a.arm.name(),
                    100.0 * a.mean,
                    100.0 * a.std,
                    a.seeds.len(),
                    a.mean_dropout_rate
                );
            }
            for f in &summary.failures {
                eprintln!("run {} seed {} failed: {}", f.arm, f.seed, f.error);
            }
            if !summary.is_complete() {
                bail!("{} run(s) failed", summary.failures.len());
            }
        }
        Command::ProbeDivergence(c) => {
            let mut spec = c.load()?;
            match c.arm.as_slice() {
                [] => {}
                [arm] => spec.probe.arm = *arm,
                _ => bail!("probe-divergence takes a single --arm"),
            }
            spec.validate()?;
            for out in run_probe(&spec)? {
                let last = out.matrices.last().expect("initial matrix is always recorded");
                println!("seed {}: final divergences", out.seed);
                for row in last {
                    let cells: Vec<String> = row.iter().map(|d| format!("{d:.4}")).collect();
                    println!("  {}", cells.join(" "));
                }
            }
        }
        Command::BoundCheck(c) => {
            let spec = c.load()?;
            let mut ok = true;
            for out in run_bound_checks(&spec)? {
                let holds = out.holds(1.05);
                ok &= holds;
                println!(
                    "seed {}: final mean gap {:.3e}, bound {:.3e}, floor {:.3e}, {}",
                    out.seed,
                    out.mean_gaps.last().copied().unwrap_or(f64::NAN),
                    out.bounds.last().copied().unwrap_or(f64::NAN),
                    out.noise_floor,
                    if holds { "holds" } else { "VIOLATED" }
                );
            }
            if !ok {
                bail!("bound violated");
            }
        }
        Command::GenData(c) => {
            let spec = c.load()?;
            for dir in gen_data(&spec)? {
                println!("{}", dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
