//! Closed-loop rollouts, episode logs and batch metrics.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{tube_radius, ConstraintSchedule, TightenedSchedule};
use crate::dynamics::{DisturbanceSpec, DynamicsModel};
use crate::learner::{stage_cost, CostSpec, Learner, TraceRow};
use crate::{Error, Result, Vector};

/// Mid-episode state reset.
#[derive(Debug, Clone, PartialEq)]
pub struct ResetEvent {
    pub k: usize,
    pub state: Vector,
}

/// Episode script.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub x0: Vector,
    pub horizon: usize,
    pub events: Vec<ResetEvent>,
    /// Steps a reset may leave the state outside its new set before this
    /// counts as a violation.
    pub recovery_limit: usize,
    pub converge_tol: f64,
    pub converge_window: usize,
}

impl Scenario {
    pub fn new(x0: Vector, horizon: usize) -> Self {
        Self {
            x0,
            horizon,
            events: Vec::new(),
            recovery_limit: 20,
            converge_tol: 0.02,
            converge_window: 20,
        }
    }
}

/// Anything that maps `(k, x)` to a control. Online learners update
/// themselves inside `control`.
pub trait Policy {
    fn control(&mut self, k: usize, x: &Vector) -> Result<Vector>;
}

/// Fixed actor: no learning.
#[derive(Debug, Clone)]
pub struct Frozen<'a>(pub &'a Learner);

impl Policy for Frozen<'_> {
    fn control(&mut self, k: usize, x: &Vector) -> Result<Vector> {
        Ok(self.0.act(k, x))
    }
}

/// Runs the inner loop at every step before acting.
#[derive(Debug)]
pub struct Online<'a> {
    pub learner: &'a mut Learner,
    pub trace: Option<Vec<TraceRow>>,
}

impl<'a> Online<'a> {
    pub fn new(learner: &'a mut Learner, keep_trace: bool) -> Self {
        Self {
            learner,
            trace: keep_trace.then(Vec::new),
        }
    }
}

impl Policy for Online<'_> {
    fn control(&mut self, k: usize, x: &Vector) -> Result<Vector> {
        let mut scratch = Vec::new();
        let trace = self.trace.as_mut().unwrap_or(&mut scratch);
        self.learner.improve(k, x, trace)?;
        Ok(self.learner.act(k, x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vector,
    pub u: Vector,
    pub stage_cost: f64,
    /// Margins of the original state constraints at `k`.
    pub margins: Vec<f64>,
    /// Margins of the control constraints at `k`.
    pub control_margins: Vec<f64>,
    pub segment: usize,
    /// The state is still returning into a set it was reset outside of;
    /// state margins are excused.
    pub recovering: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Converged { step: usize },
    Violated { k: usize, constraint: String },
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    /// Width of the state-margin columns.
    pub p_x: usize,
    /// Width of the control-margin columns.
    pub p_u: usize,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
}

/// Per-episode numbers derived purely from the step records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub violated: bool,
    pub control_violations: usize,
    pub j_total: f64,
    pub j_e: f64,
    pub convergence_step: Option<usize>,
}

/// First step with a negative margin on an original state constraint
/// outside a recovery window.
pub fn first_violation(steps: &[StepRecord]) -> Option<(usize, String)> {
    steps.iter().filter(|s| !s.recovering).find_map(|s| {
        s.margins
            .iter()
            .position(|m| *m < 0.0)
            .map(|i| (s.k, format!("state_{i}")))
    })
}

/// Number of steps whose control left the control set.
pub fn control_violations(steps: &[StepRecord]) -> usize {
    steps
        .iter()
        .filter(|s| s.control_margins.iter().any(|m| *m < 0.0))
        .count()
}

/// Start of the trailing run of steps with `||x|| < tol`, if that run is at
/// least `window` steps long.
pub fn convergence_step(steps: &[StepRecord], tol: f64, window: usize) -> Option<usize> {
    let run = steps.iter().rev().take_while(|s| s.x.norm() < tol).count();
    (run > 0 && run >= window).then(|| steps[steps.len() - run].k)
}

pub fn episode_stats(steps: &[StepRecord], gamma: f64, tol: f64, window: usize) -> EpisodeStats {
    let mut j_total = 0.0;
    let mut disc = 1.0;
    let mut j_e = 0.0;
    for s in steps {
        j_total += disc * s.stage_cost;
        disc *= gamma;
        j_e += s.x.norm_squared();
    }
    if !steps.is_empty() {
        j_e /= steps.len() as f64;
    }
    EpisodeStats {
        violated: first_violation(steps).is_some(),
        control_violations: control_violations(steps),
        j_total,
        j_e,
        convergence_step: convergence_step(steps, tol, window),
    }
}

impl EpisodeLog {
    pub fn violated(&self) -> bool {
        matches!(self.outcome, Outcome::Violated { .. })
    }

    pub fn stats(&self, gamma: f64, tol: f64, window: usize) -> EpisodeStats {
        episode_stats(&self.steps, gamma, tol, window)
    }

    pub fn csv_header(n: usize, m: usize, p_x: usize, p_u: usize) -> Vec<String> {
        let mut h = vec!["k".to_string()];
        h.extend((0..n).map(|i| format!("x{i}")));
        h.extend((0..m).map(|i| format!("u{i}")));
        h.push("stage_cost".into());
        h.extend((0..p_x).map(|i| format!("margin_{i}")));
        h.extend((0..p_u).map(|i| format!("umargin_{i}")));
        h.push("segment".into());
        h.push("recovering".into());
        h
    }

    /// CSV with shortest round-trip float formatting; margin columns of
    /// segments with fewer constraints are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header(self.n, self.m, self.p_x, self.p_u).join(",");
        out.push('\n');
        for s in &self.steps {
            let mut cells: Vec<String> =
                Vec::with_capacity(4 + self.n + self.m + self.p_x + self.p_u);
            cells.push(s.k.to_string());
            cells.extend(s.x.iter().map(|v| v.to_string()));
            cells.extend(s.u.iter().map(|v| v.to_string()));
            cells.push(s.stage_cost.to_string());
            for i in 0..self.p_x {
                cells.push(s.margins.get(i).map_or(String::new(), |v| v.to_string()));
            }
            for i in 0..self.p_u {
                cells.push(
                    s.control_margins
                        .get(i)
                        .map_or(String::new(), |v| v.to_string()),
                );
            }
            cells.push(s.segment.to_string());
            cells.push(u8::from(s.recovering).to_string());
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Closed-loop episode. `sched` holds the original (untightened) sets that
/// decide violations; `cost` prices each step with those sets.
#[allow(clippy::too_many_arguments)]
pub fn rollout<P: Policy>(
    model: &DynamicsModel,
    policy: &mut P,
    sched: &ConstraintSchedule,
    cost: &CostSpec,
    scenario: &Scenario,
    disturbance: Option<&DisturbanceSpec>,
    seed: u64,
) -> Result<EpisodeLog> {
    if scenario.horizon == 0 {
        return Err(Error::ParameterInvalid("horizon must be at least 1".into()));
    }
    if scenario.x0.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            found: scenario.x0.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd157_0000);
    let p_x = sched.max_state_constraints();
    let p_u = sched
        .segments()
        .iter()
        .map(|s| s.control.set().len())
        .max()
        .unwrap_or(0);
    let mut x = scenario.x0.clone();
    let mut steps = Vec::with_capacity(scenario.horizon);
    let mut recovering_since: Option<usize> = None;
    for k in 0..scenario.horizon {
        if let Some(ev) = scenario.events.iter().find(|e| e.k == k) {
            x = ev.state.clone();
            if !sched.state_barrier(k).set().contains(&x) {
                recovering_since = Some(k);
            }
        }
        let seg = sched.segment(k);
        let margins = seg.state.set().margins(&x);
        if let Some(start) = recovering_since {
            let inside = margins.iter().all(|m| *m >= 0.0);
            if inside || k - start > scenario.recovery_limit {
                recovering_since = None;
            }
        }
        let u = policy.control(k, &x)?;
        let r = stage_cost(cost, Some(&seg.state), Some(&seg.control), &x, &u);
        steps.push(StepRecord {
            k,
            x: x.clone(),
            u: u.clone(),
            stage_cost: r,
            margins,
            control_margins: seg.control.set().margins(&u),
            segment: sched.segment_index(k),
            recovering: recovering_since.is_some(),
        });
        let mut next = model.step(&x, &u);
        if let Some(d) = disturbance {
            next += d.sample(model.n(), &mut rng);
        }
        x = next;
    }
    let outcome = match first_violation(&steps) {
        Some((k, constraint)) => Outcome::Violated { k, constraint },
        None => match convergence_step(&steps, scenario.converge_tol, scenario.converge_window) {
            Some(step) => Outcome::Converged { step },
            None => Outcome::Truncated,
        },
    };
    Ok(EpisodeLog {
        seed,
        n: model.n(),
        m: model.m(),
        p_x,
        p_u,
        steps,
        outcome,
    })
}

/// Aggregates over a batch of episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub episodes: usize,
    pub safety_rate: f64,
    /// Fraction of episodes whose controls stayed in the control sets.
    pub control_safety_rate: f64,
    pub converged_rate: f64,
    pub j_total_mean: f64,
    pub j_total_std: f64,
    pub j_e_mean: f64,
}

pub fn metrics_from_stats(stats: &[EpisodeStats]) -> Result<Metrics> {
    if stats.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = stats.len() as f64;
    let safe = stats.iter().filter(|s| !s.violated).count() as f64;
    let control_safe = stats.iter().filter(|s| s.control_violations == 0).count() as f64;
    let conv = stats
        .iter()
        .filter(|s| s.convergence_step.is_some())
        .count() as f64;
    let mean = stats.iter().map(|s| s.j_total).sum::<f64>() / n;
    let var = stats
        .iter()
        .map(|s| (s.j_total - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(Metrics {
        episodes: stats.len(),
        safety_rate: safe / n,
        control_safety_rate: control_safe / n,
        converged_rate: conv / n,
        j_total_mean: mean,
        j_total_std: var.sqrt(),
        j_e_mean: stats.iter().map(|s| s.j_e).sum::<f64>() / n,
    })
}

pub fn batch_metrics(logs: &[EpisodeLog], gamma: f64, tol: f64, window: usize) -> Result<Metrics> {
    let stats: Vec<EpisodeStats> = logs.iter().map(|l| l.stats(gamma, tol, window)).collect();
    metrics_from_stats(&stats)
}

/// Sampled Lipschitz constant of the closed loop `x -> f(x, pi(k, x))` over
/// the state set active at `k`, mixing far pairs with close pairs.
pub fn closed_loop_lipschitz(
    learner: &Learner,
    sched: &ConstraintSchedule,
    k: usize,
    samples: usize,
    seed: u64,
) -> f64 {
    let set = sched.state_barrier(k).set();
    let (lo, hi) = set.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = learner.model();
    let f = |x: &Vector| model.step(x, &learner.act(k, x));
    let draw = |rng: &mut ChaCha8Rng| loop {
        let x = Vector::from_fn(lo.len(), |i, _| {
            lo[i] + (hi[i] - lo[i]) * rng.random::<f64>()
        });
        if set.contains(&x) {
            return x;
        }
    };
    let mut best: f64 = 0.0;
    for i in 0..samples {
        let x1 = draw(&mut rng);
        let x2 = if i % 2 == 0 {
            draw(&mut rng)
        } else {
            let dir = Vector::from_fn(lo.len(), |_, _| rng.random::<f64>() - 0.5);
            &x1 + dir * 1e-3
        };
        let d = (&x1 - &x2).norm();
        if d > 1e-12 {
            best = best.max((f(&x1) - f(&x2)).norm() / d);
        }
    }
    best
}

/// Result of comparing one disturbed trajectory with the nominal
/// prediction from the same start.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeReport {
    /// `||z_j - x_{j|0}||` for `j = 0..=L`.
    pub deviations: Vec<f64>,
    pub radii: Vec<f64>,
    pub contained: bool,
}

/// Tube check for a fixed policy: nominal prediction `x_{j|0}` under the
/// policy versus the disturbed trajectory `z_j` under the same policy.
#[allow(clippy::too_many_arguments)]
pub fn tube_check(
    learner: &Learner,
    x0: &Vector,
    k0: usize,
    lookahead: usize,
    l_f: f64,
    d: &DisturbanceSpec,
    seed: u64,
) -> TubeReport {
    let model = learner.model();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.clone();
    let mut z = x0.clone();
    let mut deviations = vec![0.0];
    let mut radii = vec![0.0];
    for j in 0..lookahead {
        let k = k0 + j;
        x = model.step(&x, &learner.act(k, &x));
        z = model.step(&z, &learner.act(k, &z)) + d.sample(model.n(), &mut rng);
        deviations.push((&z - &x).norm());
        radii.push(tube_radius(l_f, d.eps_w(), j + 1));
    }
    let contained = deviations
        .iter()
        .zip(radii.iter())
        .all(|(dev, r)| *dev <= r * (1.0 + 1e-12) + 1e-15);
    TubeReport {
        deviations,
        radii,
        contained,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustBoundReport {
    /// Radius of the terminal ball (tube limit plus the convergence
    /// tolerance).
    pub terminal_radius: f64,
    /// Episodes whose final state lies in the terminal ball.
    pub within: usize,
    /// Episodes that violated an original constraint.
    pub violated: usize,
    pub episodes: usize,
}

impl RobustBoundReport {
    pub fn holds(&self) -> bool {
        self.within == self.episodes && self.violated == 0
    }
}

/// Terminal-set and original-constraint check of disturbed episodes. The
/// terminal radius is `eps_w / (1 - L_f)` for `L_f < 1` and the tube radius
/// at the horizon otherwise, enlarged by the nominal convergence tolerance.
pub fn robust_bound_check(
    logs: &[EpisodeLog],
    tighten: &TightenedSchedule,
    l_f: f64,
    tol: f64,
) -> RobustBoundReport {
    let eps = tighten.eps_w();
    let horizon = logs.iter().map(|l| l.steps.len()).max().unwrap_or(0);
    let tube = if l_f < 1.0 {
        eps / (1.0 - l_f)
    } else {
        tube_radius(l_f, eps, horizon)
    };
    let terminal_radius = tube + tol;
    let within = logs
        .iter()
        .filter(|l| {
            l.steps
                .last()
                .is_some_and(|s| s.x.norm() <= terminal_radius)
        })
        .count();
    let violated = logs.iter().filter(|l| l.violated()).count();
    RobustBoundReport {
        terminal_radius,
        within,
        violated,
        episodes: logs.len(),
    }
}
