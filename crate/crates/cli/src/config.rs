//! Experiment configuration: a TOML file parsed into [`ExperimentConfig`]
//! and checked into a ready-to-run [`Experiment`].

use std::path::{Path, PathBuf};

use safebac::barrier::{Constraint, InequalitySet};
use safebac::constraints::{ConstraintSchedule, SegmentSpec, TightenedSchedule};
use safebac::dynamics::{DisturbanceSpec, DynamicsModel};
use safebac::learner::{Basis, CostSpec, LearnerConfig};
use safebac::simulate::{ResetEvent, Scenario};
use safebac::{Matrix, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelConfig,
    pub cost: CostConfig,
    pub schedule: ScheduleConfig,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub learner: LearnerSection,
    #[serde(default)]
    pub batch: BatchConfig,
    #[serde(default)]
    pub robust: Option<RobustConfig>,
    /// Relative to the working directory; `--out` and `SAFEBAC_OUT`
    /// override it.
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    MassPoint,
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
    },
    VanDerPol {
        dt: f64,
    },
    DiffDrive {
        dt: f64,
        v_ref: f64,
        omega_ref: f64,
    },
    Bicycle {
        dt: f64,
        v_x: f64,
        #[serde(default)]
        phi_ref_rate: f64,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Weight {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub q: Weight,
    pub r: Weight,
    pub mu: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kappa: f64,
    pub segments: Vec<SegmentConfig>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpaceConfig {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// Keep-out disc on the coordinates listed in `axes`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KeepoutConfig {
    pub axes: Vec<usize>,
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SetConfig {
    /// Bounds of the set. Also the sampling domain when other constraints
    /// are added.
    #[serde(rename = "box")]
    pub bounds: BoxConfig,
    /// Drop the box inequalities and keep it only as the domain.
    #[serde(default)]
    pub domain_only: bool,
    #[serde(default)]
    pub halfspaces: Vec<HalfSpaceConfig>,
    #[serde(default)]
    pub keepouts: Vec<KeepoutConfig>,
    pub center: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub from: usize,
    pub until: Option<usize>,
    pub state: SetConfig,
    pub control: SetConfig,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ResetConfig {
    pub k: usize,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub x0: Vec<f64>,
    pub horizon: usize,
    #[serde(default)]
    pub resets: Vec<ResetConfig>,
    #[serde(default = "default_tol")]
    pub converge_tol: f64,
    #[serde(default = "default_window")]
    pub converge_window: usize,
    #[serde(default = "default_window")]
    pub recovery_limit: usize,
}

fn default_tol() -> f64 {
    0.02
}

fn default_window() -> usize {
    20
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisConfig {
    Polynomial {
        degrees: Vec<u32>,
    },
    Tanh {
        count: usize,
        scale: f64,
        #[serde(default)]
        seed: u64,
    },
    TanhSquared {
        count: usize,
        scale: f64,
        #[serde(default)]
        seed: u64,
    },
}

/// Learner settings. Unset fields take the library defaults.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub lookahead: Option<usize>,
    pub gamma_c: Option<f64>,
    pub gamma_a: Option<f64>,
    pub eps_bar: Option<f64>,
    pub max_inner_iters: Option<usize>,
    pub actor_substeps: Option<usize>,
    pub actor_on_rollout: Option<bool>,
    pub clip: Option<f64>,
    pub normalize: Option<bool>,
    pub min_step_scale: Option<f64>,
    pub max_critic_scale: Option<f64>,
    pub nonneg_barrier_weight: Option<bool>,
    pub init_range: Option<f64>,
    pub k_init_range: Option<f64>,
    pub gate: Option<bool>,
    pub critic_basis: Option<BasisConfig>,
    pub actor_basis: Option<BasisConfig>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub first_seed: u64,
    /// Seeds whose inner-loop trace goes into `trace.csv`.
    #[serde(default = "default_trace_seeds")]
    pub trace_seeds: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            first_seed: 0,
            trace_seeds: default_trace_seeds(),
        }
    }
}

fn default_seeds() -> usize {
    1
}

fn default_trace_seeds() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RobustConfig {
    /// One batch per disturbance bound.
    pub eps_w: Vec<f64>,
    /// Lipschitz constant for the tube; defaults to the model estimate.
    pub lipschitz: Option<f64>,
    /// Train on the tightened schedule (otherwise the nominal one).
    #[serde(default = "yes")]
    pub tighten: bool,
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::parse(&text)?;
        Ok((cfg, text))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| CliError::config("<syntax>", e.message().to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." {
                "<root>".to_string()
            } else {
                path
            };
            CliError::config(path, e.inner().message().to_string())
        })
    }
}

/// Validated configuration with every library object built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub model: DynamicsModel,
    pub cost: CostSpec,
    pub schedule: ConstraintSchedule,
    pub scenario: Scenario,
    pub learner: LearnerConfig,
    pub critic_basis: Basis,
    pub actor_basis: Basis,
    pub seeds: Vec<u64>,
    pub trace_seeds: usize,
    pub robust: Option<Robust>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Robust {
    pub eps_w: Vec<f64>,
    pub lipschitz: f64,
    pub tighten: bool,
}

impl Experiment {
    /// Training schedule and disturbance for one disturbance bound.
    pub fn training_schedule(&self, eps_w: f64) -> safebac::Result<TightenedSchedule> {
        let lookahead = self.learner.lookahead;
        match &self.robust {
            Some(r) if r.tighten && eps_w > 0.0 => {
                TightenedSchedule::new(self.schedule.clone(), eps_w, r.lipschitz, lookahead)
            }
            _ => Ok(TightenedSchedule::nominal(self.schedule.clone(), lookahead)),
        }
    }

    pub fn disturbance(&self, eps_w: f64) -> safebac::Result<Option<DisturbanceSpec>> {
        if eps_w > 0.0 {
            DisturbanceSpec::new(eps_w).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Disturbance bounds to run, `[0]` for nominal experiments.
    pub fn eps_list(&self) -> Vec<f64> {
        self.robust
            .as_ref()
            .map_or_else(|| vec![0.0], |r| r.eps_w.clone())
    }
}

fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

fn finite(path: &str, v: &[f64]) -> CliResult<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(CliError::config(format!("{path}[{i}]"), "must be finite")),
        None => Ok(()),
    }
}

fn dims(path: &str, v: &[f64], n: usize) -> CliResult<()> {
    if v.len() != n {
        return Err(CliError::config(
            path,
            format!("expected {n} entries, found {}", v.len()),
        ));
    }
    finite(path, v)
}

fn matrix(path: &str, rows: &[Vec<f64>]) -> CliResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(CliError::config(path, "matrix must be nonempty"));
    }
    for (i, row) in rows.iter().enumerate() {
        dims(&format!("{path}[{i}]"), row, c)?;
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn weight(path: &str, w: &Weight, n: usize) -> CliResult<Matrix> {
    let diag = match w {
        Weight::Scalar(s) => vec![*s; n],
        Weight::Diagonal(d) => d.clone(),
    };
    dims(path, &diag, n)?;
    Ok(Matrix::from_diagonal(&vector(&diag)))
}

fn core_at<T>(path: &str, r: safebac::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::config(path, e.to_string()))
}

fn build_model(m: &ModelConfig) -> CliResult<DynamicsModel> {
    let p = "model";
    match m {
        ModelConfig::MassPoint => Ok(DynamicsModel::mass_point()),
        ModelConfig::Linear { a, b } => {
            let a = matrix("model.a", a)?;
            let b = matrix("model.b", b)?;
            core_at(p, DynamicsModel::linear(a, b))
        }
        ModelConfig::VanDerPol { dt } => core_at("model.dt", DynamicsModel::van_der_pol(*dt)),
        ModelConfig::DiffDrive {
            dt,
            v_ref,
            omega_ref,
        } => core_at(p, DynamicsModel::diff_drive_error(*dt, *v_ref, *omega_ref)),
        ModelConfig::Bicycle {
            dt,
            v_x,
            phi_ref_rate,
        } => core_at(p, DynamicsModel::bicycle_lateral(*dt, *v_x, *phi_ref_rate)),
    }
}

fn build_set(
    path: &str,
    label: &str,
    s: &SetConfig,
    dim: usize,
) -> CliResult<(InequalitySet, Vector)> {
    dims(&format!("{path}.box.lo"), &s.bounds.lo, dim)?;
    dims(&format!("{path}.box.hi"), &s.bounds.hi, dim)?;
    if let Some(i) = (0..dim).find(|&i| !(s.bounds.lo[i] < s.bounds.hi[i])) {
        return Err(CliError::config(
            format!("{path}.box"),
            format!("lo[{i}] must be below hi[{i}]"),
        ));
    }
    let boxed = core_at(
        path,
        InequalitySet::boxed(label, &s.bounds.lo, &s.bounds.hi),
    )?;
    let mut constraints = if s.domain_only {
        Vec::new()
    } else {
        boxed.constraints().to_vec()
    };
    for (i, h) in s.halfspaces.iter().enumerate() {
        dims(&format!("{path}.halfspaces[{i}].normal"), &h.normal, dim)?;
        constraints.push(Constraint::HalfSpace {
            normal: vector(&h.normal),
            offset: h.offset,
        });
    }
    for (i, k) in s.keepouts.iter().enumerate() {
        let kp = format!("{path}.keepouts[{i}]");
        if k.axes.is_empty() || k.axes.iter().any(|&a| a >= dim) {
            return Err(CliError::config(
                format!("{kp}.axes"),
                format!("axes must be nonempty and below {dim}"),
            ));
        }
        dims(&format!("{kp}.center"), &k.center, k.axes.len())?;
        if !(k.radius >= 0.0) {
            return Err(CliError::config(
                format!("{kp}.radius"),
                "must be nonnegative",
            ));
        }
        let mut selector = Matrix::zeros(k.axes.len(), dim);
        for (r, &a) in k.axes.iter().enumerate() {
            selector[(r, a)] = 1.0;
        }
        constraints.push(Constraint::Keepout {
            selector,
            center: vector(&k.center),
            radius: k.radius,
        });
    }
    if constraints.is_empty() {
        return Err(CliError::config(path, "set has no constraints"));
    }
    let (lo, hi) = boxed.domain();
    let set = core_at(
        path,
        InequalitySet::new(label, constraints, lo.clone(), hi.clone()),
    )?;
    let center = match &s.center {
        Some(c) => {
            dims(&format!("{path}.center"), c, dim)?;
            vector(c)
        }
        None => Vector::zeros(dim),
    };
    if !set.contains_interior(&center) {
        return Err(CliError::config(
            format!("{path}.center"),
            "center must lie strictly inside the set",
        ));
    }
    Ok((set, center))
}

fn build_schedule(s: &ScheduleConfig, n: usize, m: usize) -> CliResult<ConstraintSchedule> {
    if s.segments.is_empty() {
        return Err(CliError::config(
            "schedule.segments",
            "at least one segment is required",
        ));
    }
    if s.segments[0].from != 0 {
        return Err(CliError::config(
            "schedule.segments[0].from",
            format!(
                "schedule must start at k = 0, starts at {}",
                s.segments[0].from
            ),
        ));
    }
    let mut specs = Vec::with_capacity(s.segments.len());
    for (i, seg) in s.segments.iter().enumerate() {
        let p = format!("schedule.segments[{i}]");
        if let Some(next) = s.segments.get(i + 1) {
            if next.from <= seg.from {
                return Err(CliError::config(
                    format!("schedule.segments[{}].from", i + 1),
                    "segments must be ordered by start step",
                ));
            }
            let end = seg.until.unwrap_or(next.from);
            if end < next.from {
                return Err(CliError::config(
                    format!("{p}.until"),
                    format!(
                        "gap in k coverage: steps {end}..{} have no segment",
                        next.from
                    ),
                ));
            }
            if end > next.from {
                return Err(CliError::config(
                    format!("{p}.until"),
                    format!("overlaps segment {} starting at k = {}", i + 1, next.from),
                ));
            }
        } else if let Some(end) = seg.until {
            return Err(CliError::config(
                format!("{p}.until"),
                format!("gap in k coverage: no segment after k = {end}"),
            ));
        }
        let (state_set, state_center) = build_set(&format!("{p}.state"), "x", &seg.state, n)?;
        let (control_set, control_center) =
            build_set(&format!("{p}.control"), "u", &seg.control, m)?;
        specs.push(SegmentSpec {
            from_k: seg.from,
            until_k: seg.until,
            state_set,
            control_set,
            state_center,
            control_center,
        });
    }
    if !(s.kappa > 0.0) {
        return Err(CliError::config("schedule.kappa", "must be positive"));
    }
    core_at("schedule", ConstraintSchedule::new(specs, s.kappa))
}

fn build_basis(path: &str, b: &BasisConfig, n: usize) -> CliResult<Basis> {
    let r = match b {
        BasisConfig::Polynomial { degrees } => Basis::polynomial(n, degrees),
        BasisConfig::Tanh { count, scale, seed } => Basis::tanh(n, *count, *scale, *seed),
        BasisConfig::TanhSquared { count, scale, seed } => {
            Basis::tanh_squared(n, *count, *scale, *seed)
        }
    };
    core_at(path, r)
}

fn build_learner(s: &LearnerSection) -> LearnerConfig {
    let d = LearnerConfig::default();
    LearnerConfig {
        lookahead: s.lookahead.unwrap_or(d.lookahead),
        gamma_c: s.gamma_c.unwrap_or(d.gamma_c),
        gamma_a: s.gamma_a.unwrap_or(d.gamma_a),
        eps_bar: s.eps_bar.unwrap_or(d.eps_bar),
        max_inner_iters: s.max_inner_iters.unwrap_or(d.max_inner_iters),
        actor_substeps: s.actor_substeps.unwrap_or(d.actor_substeps),
        actor_on_rollout: s.actor_on_rollout.unwrap_or(d.actor_on_rollout),
        clip: s.clip.unwrap_or(d.clip),
        normalize: s.normalize.unwrap_or(d.normalize),
        min_step_scale: s.min_step_scale.unwrap_or(d.min_step_scale),
        max_critic_scale: s.max_critic_scale.unwrap_or(d.max_critic_scale),
        nonneg_barrier_weight: s.nonneg_barrier_weight.unwrap_or(d.nonneg_barrier_weight),
        init_range: s.init_range.unwrap_or(d.init_range),
        k_init_range: s.k_init_range.unwrap_or(d.k_init_range),
        gate: s.gate.unwrap_or(d.gate),
        seed: d.seed,
    }
}

impl ExperimentConfig {
    /// Cross-field validation and construction of every library object.
    pub fn build(&self) -> CliResult<Experiment> {
        if self.name.trim().is_empty() {
            return Err(CliError::config("name", "must be nonempty"));
        }
        let model = build_model(&self.model)?;
        let (n, m) = (model.n(), model.m());
        let q = weight("cost.q", &self.cost.q, n)?;
        let r = weight("cost.r", &self.cost.r, m)?;
        if !(self.cost.mu >= 0.0) {
            return Err(CliError::config("cost.mu", "must be nonnegative"));
        }
        if !(self.cost.gamma > 0.0 && self.cost.gamma <= 1.0) {
            return Err(CliError::config("cost.gamma", "must lie in (0, 1]"));
        }
        let cost = core_at("cost", CostSpec::new(q, r, self.cost.mu, self.cost.gamma))?;
        let schedule = build_schedule(&self.schedule, n, m)?;

        let sc = &self.scenario;
        dims("scenario.x0", &sc.x0, n)?;
        if sc.horizon == 0 {
            return Err(CliError::config("scenario.horizon", "must be at least 1"));
        }
        if !(sc.converge_tol > 0.0) {
            return Err(CliError::config(
                "scenario.converge_tol",
                "must be positive",
            ));
        }
        let mut scenario = Scenario::new(vector(&sc.x0), sc.horizon);
        scenario.converge_tol = sc.converge_tol;
        scenario.converge_window = sc.converge_window;
        scenario.recovery_limit = sc.recovery_limit;
        for (i, ev) in sc.resets.iter().enumerate() {
            dims(&format!("scenario.resets[{i}].state"), &ev.state, n)?;
            if ev.k == 0 || ev.k >= sc.horizon {
                return Err(CliError::config(
                    format!("scenario.resets[{i}].k"),
                    format!("must lie in 1..{}", sc.horizon),
                ));
            }
            scenario.events.push(ResetEvent {
                k: ev.k,
                state: vector(&ev.state),
            });
        }
        if !schedule.state_barrier(0).set().contains(&scenario.x0) {
            return Err(CliError::config(
                "scenario.x0",
                "initial state must satisfy the first state constraints",
            ));
        }

        let learner = build_learner(&self.learner);
        core_at("learner", learner.validate())?;
        let critic_basis = match &self.learner.critic_basis {
            Some(b) => build_basis("learner.critic_basis", b, n)?,
            None => core_at("learner.critic_basis", Basis::polynomial(n, &[2]))?,
        };
        let actor_basis = match &self.learner.actor_basis {
            Some(b) => build_basis("learner.actor_basis", b, n)?,
            None => core_at("learner.actor_basis", Basis::polynomial(n, &[1]))?,
        };
        if critic_basis.quadratic_axes().len() < n {
            return Err(CliError::config(
                "learner.critic_basis",
                "critic basis needs a squared feature on every state axis",
            ));
        }

        let b = &self.batch;
        if b.seeds == 0 {
            return Err(CliError::config("batch.seeds", "must be at least 1"));
        }
        if b.first_seed.checked_add(b.seeds as u64).is_none() {
            return Err(CliError::config("batch.first_seed", "seed range overflows"));
        }
        let seeds = (0..b.seeds as u64).map(|i| b.first_seed + i).collect();

        let robust = match &self.robust {
            None => None,
            Some(r) => {
                if r.eps_w.is_empty() {
                    return Err(CliError::config("robust.eps_w", "needs at least one bound"));
                }
                if let Some(i) = r.eps_w.iter().position(|e| !(*e >= 0.0) || !e.is_finite()) {
                    return Err(CliError::config(
                        format!("robust.eps_w[{i}]"),
                        "must be finite and nonnegative",
                    ));
                }
                let lipschitz = r.lipschitz.unwrap_or_else(|| model.lipschitz());
                if !(lipschitz > 0.0) || !lipschitz.is_finite() {
                    return Err(CliError::config("robust.lipschitz", "must be positive"));
                }
                Some(Robust {
                    eps_w: r.eps_w.clone(),
                    lipschitz,
                    tighten: r.tighten,
                })
            }
        };

        let exp = Experiment {
            name: self.name.clone(),
            model,
            cost,
            schedule,
            scenario,
            learner,
            critic_basis,
            actor_basis,
            seeds,
            trace_seeds: b.trace_seeds,
            robust,
            output_dir: self.output_dir.clone(),
        };
        for (i, eps) in exp.eps_list().into_iter().enumerate() {
            core_at(&format!("robust.eps_w[{i}]"), exp.training_schedule(eps))?;
        }
        Ok(exp)
    }
}
