use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{render, ExperimentSpec};
use crate::convergence::{gen_quadratic_clients, monte_carlo_bound_check, run_bound_check};
use crate::datagen::{class_set_partition, write_dataset, write_partition};
use crate::error::{Error, Result};
use crate::protocol::{run_experiment, Algorithm, RoundConfig, RunOutput, Simulation};

pub const METRICS_HEADER: &str = "# uapdfl-metrics v1";
pub const METRICS_COLUMNS: &str =
    "round,client,arm,seed,test_accuracy,train_loss,dropout,h_peers,cum_scalars";
pub const DIVERGENCE_HEADER: &str = "# uapdfl-divergence v1";
pub const BOUND_HEADER: &str = "# uapdfl-bound-check v1";
pub const SUMMARY_FORMAT: &str = "uapdfl-summary v1";

pub fn run_dir(out_dir: &Path, arm: Algorithm, seed: u64) -> PathBuf {
    out_dir.join(format!("{}_seed{seed}", arm.name()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Writes one row per (round, client). Round 0 describes the initial models.
pub fn write_metrics<W: Write>(out: &RunOutput, w: W) -> std::io::Result<()> {
    let mut w = w;
    writeln!(w, "{METRICS_HEADER}")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(METRICS_COLUMNS.split(','))?;
    let arm = out.algorithm.name();
    for rec in &out.records {
        for c in &rec.clients {
            csv.write_record([
                rec.round.to_string(),
                c.client.to_string(),
                arm.to_string(),
                out.seed.to_string(),
                c.test_accuracy.to_string(),
                c.train_loss.to_string(),
                u8::from(c.dropout).to_string(),
                c.h_peers.to_string(),
                out.ledger.cumulative(c.client, rec.round).to_string(),
            ])?;
        }
    }
    csv.flush()
}

/// Writes each round's pairwise divergence matrix, one row per client.
pub fn write_divergences<W: Write>(matrices: &[Vec<Vec<f64>>], w: W) -> std::io::Result<()> {
    let mut w = w;
    writeln!(w, "{DIVERGENCE_HEADER}")?;
    let n = matrices.first().map_or(0, Vec::len);
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["round".to_string(), "client".to_string()];
    header.extend((0..n).map(|j| format!("div_{j}")));
    csv.write_record(&header)?;
    for (r, m) in matrices.iter().enumerate() {
        for (i, row) in m.iter().enumerate() {
            let mut rec = vec![r.to_string(), i.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            csv.write_record(&rec)?;
        }
    }
    csv.flush()
}

/// Final-round outcome of one (arm, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub arm: Algorithm,
    pub seed: u64,
    pub final_accuracy: f64,
    pub dropout_rate: f64,
    pub total_scalars: u64,
}

impl RunSummary {
    pub fn from_output(out: &RunOutput) -> Self {
        let client_rounds: usize = out.records[1..].iter().map(|r| r.clients.len()).sum();
        let drops: usize = out.records.iter().map(|r| r.dropout_count()).sum();
        Self {
            arm: out.algorithm,
            seed: out.seed,
            final_accuracy: out.final_mean_accuracy(),
            dropout_rate: if client_rounds == 0 {
                0.0
            } else {
                drops as f64 / client_rounds as f64
            },
            total_scalars: out.ledger.total().total(),
        }
    }
}

/// Mean and sample standard deviation of the final accuracy across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Algorithm,
    pub seeds: Vec<u64>,
    pub final_accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub mean_dropout_rate: f64,
    pub mean_total_scalars: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub arm: Algorithm,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub format: String,
    pub arms: Vec<ArmSummary>,
    pub failures: Vec<RunFailure>,
}

impl MatrixSummary {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn arm(&self, arm: Algorithm) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == arm)
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(spec: &ExperimentSpec, runs: &[RunSummary], failures: Vec<RunFailure>) -> MatrixSummary {
    let arms = spec
        .arms
        .iter()
        .filter_map(|&arm| {
            let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.arm == arm).collect();
            if mine.is_empty() {
                return None;
            }
            let acc: Vec<f64> = mine.iter().map(|r| r.final_accuracy).collect();
            let (mean, std) = mean_std(&acc);
            let k = mine.len() as f64;
            Some(ArmSummary {
                arm,
                seeds: mine.iter().map(|r| r.seed).collect(),
                final_accuracy: acc,
                mean,
                std,
                mean_dropout_rate: mine.iter().map(|r| r.dropout_rate).sum::<f64>() / k,
                mean_total_scalars: mine.iter().map(|r| r.total_scalars as f64).sum::<f64>() / k,
            })
        })
        .collect();
    MatrixSummary {
        format: SUMMARY_FORMAT.to_string(),
        arms,
        failures,
    }
}

fn persist_run(spec: &ExperimentSpec, out: &RunOutput) -> Result<()> {
    let dir = run_dir(&spec.out_dir, out.algorithm, out.seed);
    let snapshot = render(&spec.single(out.algorithm, out.seed))?;
    write_file(&dir.join("spec.toml"), |w| w.write_all(snapshot.as_bytes()))?;
    write_file(&dir.join("metrics.csv"), |w| write_metrics(out, w))?;
    if let Some(d) = &out.divergences {
        write_file(&dir.join("divergence.csv"), |w| write_divergences(d, w))?;
    }
    Ok(())
}

/// Runs every (arm, seed) pair, writing `<out_dir>/<arm>_seed<seed>/` per run
/// and `<out_dir>/summary.json`. A failing run is recorded and the rest of the
/// matrix still executes.
pub fn run_matrix(spec: &ExperimentSpec) -> Result<MatrixSummary> {
    spec.validate()?;
    let jobs: Vec<(Algorithm, u64)> = spec
        .arms
        .iter()
        .flat_map(|&a| spec.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<std::result::Result<RunSummary, RunFailure>> = jobs
        .par_iter()
        .map(|&(arm, seed)| {
            run_experiment(&spec.setup(arm), seed)
                .and_then(|out| {
                    persist_run(spec, &out)?;
                    Ok(RunSummary::from_output(&out))
                })
                .map_err(|e| RunFailure {
                    arm,
                    seed,
                    error: e.to_string(),
                })
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => runs.push(s),
            Err(f) => failures.push(f),
        }
    }
    let summary = summarize(spec, &runs, failures);
    let path = spec.out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::config(e.to_string()))?;
    write_file(&path, |w| writeln!(w, "{text}"))?;
    Ok(summary)
}

/// Per-round divergence matrices of the probe clients, for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutput {
    pub seed: u64,
    /// `matrices[r]` holds the pairwise divergences after round `r`; index 0 is the initial state.
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub final_accuracy: Vec<f64>,
}

pub fn probe_round_config(spec: &ExperimentSpec) -> RoundConfig {
    RoundConfig {
        algorithm: spec.probe.arm,
        n_com: spec.probe.n_com,
        rounds: spec.probe.rounds,
        ..spec.protocol
    }
}

/// Trains the probe clients and records their pairwise divergences each round.
pub fn probe_divergence(spec: &ExperimentSpec, seed: u64) -> Result<ProbeOutput> {
    spec.validate()?;
    let ds = spec.dataset.generate(seed)?;
    let partition = class_set_partition(&ds, &spec.probe.class_sets, seed)?;
    let cfg = probe_round_config(spec);
    let mut sim = Simulation::from_partition(ds, &partition, &spec.model, cfg, seed)?;
    let mut matrices = vec![sim.divergence_matrix()?];
    let mut last = sim.evaluate()?;
    for _ in 0..cfg.rounds {
        last = sim.step()?;
        matrices.push(sim.divergence_matrix()?);
    }
    Ok(ProbeOutput {
        seed,
        matrices,
        final_accuracy: last.clients.iter().map(|c| c.test_accuracy).collect(),
    })
}

/// Runs the probe for every seed, writing `<out_dir>/probe_seed<seed>/divergence.csv`.
pub fn run_probe(spec: &ExperimentSpec) -> Result<Vec<ProbeOutput>> {
    spec.seeds
        .iter()
        .map(|&seed| {
            let out = probe_divergence(spec, seed)?;
            let dir = spec.out_dir.join(format!("probe_seed{seed}"));
            let snapshot = render(&ExperimentSpec {
                seeds: vec![seed],
                ..spec.clone()
            })?;
            write_file(&dir.join("spec.toml"), |w| w.write_all(snapshot.as_bytes()))?;
            write_file(&dir.join("divergence.csv"), |w| write_divergences(&out.matrices, w))?;
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckOutput {
    pub seed: u64,
    pub noise_free_gaps: Vec<f64>,
    pub noise_free_bounds: Vec<f64>,
    pub mean_gaps: Vec<f64>,
    pub bounds: Vec<f64>,
    pub noise_floor: f64,
}

impl BoundCheckOutput {
    /// True when the noise-free gap respects the contraction and the noisy
    /// mean stays under `slack ×` the bound at every round.
    pub fn holds(&self, slack: f64) -> bool {
        let nf = self
            .noise_free_gaps
            .iter()
            .zip(&self.noise_free_bounds)
            .all(|(g, b)| *g <= b * (1.0 + 1e-9));
        nf && self
            .mean_gaps
            .iter()
            .zip(&self.bounds)
            .all(|(g, b)| *g <= b * slack)
    }
}

/// Quadratic bound check: one noise-free trajectory plus a Monte Carlo mean of
/// noisy ones over `trials` seeds starting at `seed`.
pub fn bound_check(spec: &ExperimentSpec, seed: u64) -> Result<BoundCheckOutput> {
    spec.validate()?;
    let b = &spec.bound_check;
    let problem = gen_quadratic_clients(b.clients, b.dim, b.mu, b.smoothness, b.heterogeneity, seed)?;
    let clean = run_bound_check(&problem, b.rounds, seed)?;
    let noisy = problem.with_noise(b.sigma);
    let mc = monte_carlo_bound_check(
        &noisy,
        b.rounds,
        (0..b.trials as u64).map(|t| seed.wrapping_add(t)),
    )?;
    Ok(BoundCheckOutput {
        seed,
        noise_free_gaps: clean.gaps,
        noise_free_bounds: clean.bounds,
        mean_gaps: mc.mean_gaps,
        bounds: mc.bounds,
        noise_floor: mc.noise_floor,
    })
}

pub fn write_bound_check<W: Write>(out: &BoundCheckOutput, w: W) -> std::io::Result<()> {
    let mut w = w;
    writeln!(w, "{BOUND_HEADER}")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "round",
        "noise_free_gap",
        "noise_free_bound",
        "mean_gap",
        "bound",
        "noise_floor",
    ])?;
    for r in 0..out.mean_gaps.len() {
        csv.write_record([
            r.to_string(),
            out.noise_free_gaps[r].to_string(),
            out.noise_free_bounds[r].to_string(),
            out.mean_gaps[r].to_string(),
            out.bounds[r].to_string(),
            out.noise_floor.to_string(),
        ])?;
    }
    csv.flush()
}

/// Runs [`bound_check`] for every seed, writing `<out_dir>/bound_check_seed<seed>.csv`.
pub fn run_bound_checks(spec: &ExperimentSpec) -> Result<Vec<BoundCheckOutput>> {
    spec.seeds
        .iter()
        .map(|&seed| {
            let out = bound_check(spec, seed)?;
            let path = spec.out_dir.join(format!("bound_check_seed{seed}.csv"));
            write_file(&path, |w| write_bound_check(&out, w))?;
            Ok(out)
        })
        .collect()
}

/// Writes the dataset and partition each seed would use, under
/// `<out_dir>/data_seed<seed>/`.
pub fn gen_data(spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    spec.seeds
        .iter()
        .map(|&seed| {
            let ds = spec.dataset.generate(seed)?;
            let partition = spec.partition.apply(&ds, spec.clients, spec.min_samples, seed)?;
            let dir = spec.out_dir.join(format!("data_seed{seed}"));
            write_file(&dir.join("dataset.txt"), |w| write_dataset(&ds, w))?;
            write_file(&dir.join("partition.txt"), |w| write_partition(&partition, w))?;
            let snapshot = render(&ExperimentSpec {
                seeds: vec![seed],
                ..spec.clone()
            })?;
            write_file(&dir.join("spec.toml"), |w| w.write_all(snapshot.as_bytes()))?;
            Ok(dir)
        })
        .collect()
}
