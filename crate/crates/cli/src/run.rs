//! The `run` pipeline: train online per seed, log episodes, aggregate.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use safebac::learner::{Learner, TraceRow};
use safebac::simulate::{
    metrics_from_stats, robust_bound_check, rollout, tube_check, EpisodeLog, EpisodeStats, Online,
    Outcome,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{CliError, CliResult};

/// Tolerance of the inner-loop monotonicity check.
pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `batch.seeds`.
    pub seeds: Option<usize>,
    /// Overrides `output_dir`.
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    /// Path of the episode CSV relative to the run directory.
    pub file: String,
    pub outcome: String,
    pub violation_k: Option<usize>,
    pub violated_constraint: Option<String>,
    pub control_violations: usize,
    pub j_total: f64,
    pub j_e: f64,
    pub convergence_step: Option<usize>,
    pub tube_contained: Option<bool>,
}

impl EpisodeSummary {
    pub fn stats(&self) -> EpisodeStats {
        EpisodeStats {
            violated: self.violation_k.is_some(),
            control_violations: self.control_violations,
            j_total: self.j_total,
            j_e: self.j_e,
            convergence_step: self.convergence_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub episodes: usize,
    pub safety_rate: f64,
    pub control_safety_rate: f64,
    pub converged_rate: f64,
    pub j_total_mean: f64,
    pub j_total_std: f64,
    pub j_e_mean: f64,
}

impl From<safebac::simulate::Metrics> for MetricsSummary {
    fn from(m: safebac::simulate::Metrics) -> Self {
        Self {
            episodes: m.episodes,
            safety_rate: m.safety_rate,
            control_safety_rate: m.control_safety_rate,
            converged_rate: m.converged_rate,
            j_total_mean: m.j_total_mean,
            j_total_std: m.j_total_std,
            j_e_mean: m.j_e_mean,
        }
    }
}

/// Inner-loop statistics over the traced seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub rows: usize,
    /// Successive iterations whose incumbent was feasible.
    pub checked: usize,
    /// Of those, iterations where `J_bar` rose by more than the tolerance.
    pub increases: usize,
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustBoundSummary {
    pub lipschitz: f64,
    pub terminal_radius: f64,
    pub within: usize,
    pub violated: usize,
    pub tube_contained: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub eps_w: f64,
    pub metrics: MetricsSummary,
    pub trace: TraceSummary,
    pub robust_bound: Option<RobustBoundSummary>,
    pub episodes: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub config_sha256: String,
    pub model: String,
    pub gamma: f64,
    pub horizon: usize,
    pub converge_tol: f64,
    pub converge_window: usize,
    pub seeds: Vec<u64>,
    pub batches: Vec<BatchSummary>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub summary: Summary,
}

struct SeedResult {
    log: EpisodeLog,
    trace: Vec<TraceRow>,
    tube_contained: Option<bool>,
}

fn outcome_label(o: &Outcome) -> String {
    match o {
        Outcome::Converged { .. } => "converged".into(),
        Outcome::Violated { .. } => "violated".into(),
        Outcome::Truncated => "truncated".into(),
    }
}

pub fn episode_file(eps_index: Option<usize>, seed: u64) -> String {
    match eps_index {
        None => format!("episodes/seed_{seed:06}.csv"),
        Some(i) => format!("episodes/eps{i}_seed_{seed:06}.csv"),
    }
}

fn run_seed(exp: &Experiment, eps_w: f64, seed: u64, keep_trace: bool) -> CliResult<SeedResult> {
    let tight = exp.training_schedule(eps_w)?;
    let disturbance = exp.disturbance(eps_w)?;
    let mut cfg = exp.learner.clone();
    cfg.seed = seed;
    let mut learner = Learner::initialise(
        exp.model.clone(),
        Some(tight),
        exp.cost.clone(),
        cfg,
        exp.critic_basis.clone(),
        exp.actor_basis.clone(),
        &exp.scenario.x0,
    )
    .map_err(|source| CliError::Seed { seed, source })?;
    let mut policy = Online::new(&mut learner, keep_trace);
    let log = rollout(
        &exp.model,
        &mut policy,
        &exp.schedule,
        &exp.cost,
        &exp.scenario,
        disturbance.as_ref(),
        seed,
    )
    .map_err(|source| CliError::Seed { seed, source })?;
    let trace = policy.trace.take().unwrap_or_default();
    let tube_contained = match (&exp.robust, &disturbance) {
        (Some(r), Some(d)) => Some(
            tube_check(
                &learner,
                &exp.scenario.x0,
                0,
                exp.learner.lookahead,
                r.lipschitz,
                d,
                seed ^ 0x7b0e,
            )
            .contained,
        ),
        _ => None,
    };
    Ok(SeedResult {
        log,
        trace,
        tube_contained,
    })
}

/// Monotonicity of `J_bar` along each inner loop, counted only where the
/// incumbent entering the iteration was feasible.
pub fn trace_summary(rows: &[(u64, TraceRow)]) -> TraceSummary {
    let mut checked = 0;
    let mut increases = 0;
    for w in rows.windows(2) {
        let (sa, a) = &w[0];
        let (sb, b) = &w[1];
        if sa != sb || a.k != b.k || !b.feasible {
            continue;
        }
        checked += 1;
        if b.j_bar > a.j_bar + MONOTONE_TOL {
            increases += 1;
        }
    }
    TraceSummary {
        rows: rows.len(),
        checked,
        increases,
        accepted: rows.iter().filter(|(_, r)| r.gate_accepted).count(),
    }
}

pub const TRACE_HEADER: &str =
    "eps_w,seed,k,iter,J_bar,residual_c,residual_a,gate_accepted,cond_1,cond_2,q_min,feasible";

fn trace_csv(out: &mut String, eps_w: f64, rows: &[(u64, TraceRow)]) {
    for (seed, r) in rows {
        let _ = writeln!(
            out,
            "{eps_w},{seed},{},{},{},{},{},{},{},{},{},{}",
            r.k,
            r.iter,
            r.j_bar,
            r.residual_c,
            r.residual_a,
            u8::from(r.gate_accepted),
            u8::from(r.cond_1),
            u8::from(r.cond_2),
            r.q_min,
            u8::from(r.feasible)
        );
    }
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs every batch of the experiment without writing anything. Returns
/// the summary plus the per-batch episode CSVs and the trace CSV body.
/// Episode CSV bodies keyed by their path inside the run directory.
pub type EpisodeFiles = Vec<(String, String)>;

pub fn execute(exp: &Experiment, config_text: &str) -> CliResult<(Summary, EpisodeFiles, String)> {
    let eps_list = exp.eps_list();
    let robust = exp.robust.is_some();
    let mut batches = Vec::with_capacity(eps_list.len());
    let mut files = Vec::new();
    let mut trace_body = String::new();
    for (bi, &eps_w) in eps_list.iter().enumerate() {
        let started = Instant::now();
        let results: Vec<CliResult<SeedResult>> = exp
            .seeds
            .par_iter()
            .enumerate()
            .map(|(i, &seed)| run_seed(exp, eps_w, seed, i < exp.trace_seeds))
            .collect();
        let mut episodes = Vec::with_capacity(results.len());
        let mut stats = Vec::with_capacity(results.len());
        let mut logs = Vec::with_capacity(results.len());
        let mut trace_rows = Vec::new();
        for r in results {
            let r = r?;
            let seed = r.log.seed;
            let st = r.log.stats(
                exp.cost.gamma(),
                exp.scenario.converge_tol,
                exp.scenario.converge_window,
            );
            let (violation_k, violated_constraint) = match &r.log.outcome {
                Outcome::Violated { k, constraint } => (Some(*k), Some(constraint.clone())),
                _ => (None, None),
            };
            let file = episode_file(robust.then_some(bi), seed);
            files.push((file.clone(), r.log.to_csv()));
            episodes.push(EpisodeSummary {
                seed,
                file,
                outcome: outcome_label(&r.log.outcome),
                violation_k,
                violated_constraint,
                control_violations: st.control_violations,
                j_total: st.j_total,
                j_e: st.j_e,
                convergence_step: st.convergence_step,
                tube_contained: r.tube_contained,
            });
            stats.push(st);
            trace_rows.extend(r.trace.into_iter().map(|t| (seed, t)));
            logs.push(r.log);
        }
        let metrics = metrics_from_stats(&stats)?;
        let robust_bound = match &exp.robust {
            Some(rb) if eps_w > 0.0 => {
                let tight = exp.training_schedule(eps_w)?;
                let rep =
                    robust_bound_check(&logs, &tight, rb.lipschitz, exp.scenario.converge_tol);
                Some(RobustBoundSummary {
                    lipschitz: rb.lipschitz,
                    terminal_radius: rep.terminal_radius,
                    within: rep.within,
                    violated: rep.violated,
                    tube_contained: episodes
                        .iter()
                        .filter(|e| e.tube_contained == Some(true))
                        .count(),
                    holds: rep.holds(),
                })
            }
            _ => None,
        };
        trace_csv(&mut trace_body, eps_w, &trace_rows);
        info!(
            "{}: eps_w = {eps_w}, {} seeds, safety rate {}, {:.2?}",
            exp.name,
            exp.seeds.len(),
            metrics.safety_rate,
            started.elapsed()
        );
        batches.push(BatchSummary {
            eps_w,
            metrics: metrics.into(),
            trace: trace_summary(&trace_rows),
            robust_bound,
            episodes,
        });
    }
    let summary = Summary {
        name: exp.name.clone(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        model: exp.model.name().to_string(),
        gamma: exp.cost.gamma(),
        horizon: exp.scenario.horizon,
        converge_tol: exp.scenario.converge_tol,
        converge_window: exp.scenario.converge_window,
        seeds: exp.seeds.clone(),
        batches,
    };
    Ok((summary, files, trace_body))
}

pub fn summary_json(summary: &Summary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serialises");
    s.push('\n');
    s
}

/// Loads, validates and runs a config file, writing all artifacts.
pub fn run(config_path: &Path, opts: &RunOptions) -> CliResult<RunOutput> {
    let (cfg, text) = ExperimentConfig::load(config_path)?;
    run_config(&cfg, &text, opts)
}

pub fn run_config(cfg: &ExperimentConfig, text: &str, opts: &RunOptions) -> CliResult<RunOutput> {
    let mut cfg = cfg.clone();
    if let Some(n) = opts.seeds {
        cfg.batch.seeds = n;
    }
    let mut exp = cfg.build()?;
    exp.output_dir = opts
        .out
        .clone()
        .or_else(|| std::env::var_os("SAFEBAC_OUT").map(PathBuf::from))
        .unwrap_or_else(|| exp.output_dir.clone());
    let dir = exp.output_dir.clone();
    let (summary, files, trace_body) = execute(&exp, text)?;

    let episodes = dir.join("episodes");
    fs::create_dir_all(&episodes).map_err(|e| CliError::io(&episodes, e))?;
    for (file, body) in &files {
        write(&dir.join(file), body)?;
    }
    let mut trace = String::from(TRACE_HEADER);
    trace.push('\n');
    trace.push_str(&trace_body);
    write(&dir.join("trace.csv"), &trace)?;
    write(&dir.join("summary.json"), &summary_json(&summary))?;
    let mut manifest = format!(
        "name {}\nconfig_sha256 {}\nseeds {}\n",
        summary.name,
        summary.config_sha256,
        exp.seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    );
    for b in &summary.batches {
        let _ = writeln!(manifest, "eps_w {}", b.eps_w);
    }
    write(&dir.join("MANIFEST"), &manifest)?;
    write(&dir.join("config.toml"), text)?;
    if !opts.quiet {
        for b in &summary.batches {
            let m = &b.metrics;
            println!(
                "{} eps_w={} episodes={} safety_rate={} control_safety_rate={} converged_rate={} J_mean={:.6} J_std={:.6} monotone_increases={}",
                summary.name,
                b.eps_w,
                m.episodes,
                m.safety_rate,
                m.control_safety_rate,
                m.converged_rate,
                m.j_total_mean,
                m.j_total_std,
                b.trace.increases
            );
        }
        println!("artifacts in {}", dir.display());
    }
    Ok(RunOutput { dir, summary })
}
