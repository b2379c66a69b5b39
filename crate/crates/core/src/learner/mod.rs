//! Barrier-based actor-critic learning with multi-step policy evaluation.
//!
//! At every time step `k` the learner runs an inner loop at the measured
//! state: roll the incumbent actor `L` steps through the nominal model,
//! move the critic towards the multi-step target, take a gradient step on
//! the actor, and keep the candidate only if its own `L`-step prediction is
//! no less safe and no more expensive than the incumbent's under a critic
//! frozen for the duration of the step.

pub mod basis;
pub mod cost;
pub mod monitor;
pub mod nets;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::barrier::RelaxedBarrier;
use crate::constraints::TightenedSchedule;
use crate::dynamics::DynamicsModel;
use crate::{Error, Result, Vector};

pub use basis::Basis;
pub use cost::{stage_cost, CostSpec};
pub use monitor::{ConvergenceMonitor, MonitorFlags};
pub use nets::{
    actor_sample, actor_update, critic_update, ActorNet, ActorSample, CriticNet, TdSample,
};

/// Hyper-parameters of the inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    /// Lookahead `L` of the multi-step evaluation.
    pub lookahead: usize,
    pub gamma_c: f64,
    pub gamma_a: f64,
    /// Inner-loop tolerance on successive values.
    pub eps_bar: f64,
    pub max_inner_iters: usize,
    /// Actor gradient steps per inner iteration.
    pub actor_substeps: usize,
    /// Train the actor on every predicted state of the rollout instead of
    /// the current state only.
    pub actor_on_rollout: bool,
    /// Elementwise cap on weight increments.
    pub clip: f64,
    /// Divide each step by `1 + ||dh||^2` (critic) or
    /// `1 + ||h_a||^2 ||R_bar||^2` (actor) so a fixed rate stays inside the
    /// stable range when features grow.
    pub normalize: bool,
    /// The inner loop stops once repeated rejections have halved the actor
    /// step below this fraction.
    pub min_step_scale: f64,
    /// Initial draws whose critic needs a larger scale factor are
    /// discarded.
    pub max_critic_scale: f64,
    /// Clamp the critic barrier weight at zero after each step.
    pub nonneg_barrier_weight: bool,
    /// Half-width of the uniform weight initialisation.
    pub init_range: f64,
    /// Half-width for the barrier-force gain `K`; it multiplies a state
    /// barrier gradient that grows like `1 / kappa^2` outside the set.
    pub k_init_range: f64,
    /// Run the predictive gate on every candidate; when false candidates
    /// are always accepted.
    pub gate: bool,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lookahead: 10,
            gamma_c: 0.01,
            gamma_a: 0.01,
            eps_bar: 1e-4,
            max_inner_iters: 10,
            actor_substeps: 1,
            actor_on_rollout: true,
            clip: 1e3,
            normalize: true,
            min_step_scale: 1.0 / 64.0,
            nonneg_barrier_weight: true,
            max_critic_scale: 1e3,
            init_range: 0.1,
            k_init_range: 0.0,
            gate: true,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::ParameterInvalid(what.to_string()));
        if self.lookahead == 0 {
            return bad("lookahead must be at least 1");
        }
        if !(self.gamma_c > 0.0) || !(self.gamma_a > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.eps_bar > 0.0) {
            return bad("eps_bar must be positive");
        }
        if self.max_inner_iters == 0 || self.actor_substeps == 0 {
            return bad("iteration counts must be positive");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.min_step_scale > 0.0 && self.min_step_scale <= 1.0) {
            return bad("min_step_scale must lie in (0, 1]");
        }
        if !(self.max_critic_scale >= 1.0) {
            return bad("max_critic_scale must be at least 1");
        }
        if !(self.init_range >= 0.0) || !(self.k_init_range >= 0.0) {
            return bad("init_range must be nonnegative");
        }
        Ok(())
    }
}

/// `L`-step prediction of a policy through the nominal model.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `x_{k}, ..., x_{k+L}`.
    pub xs: Vec<Vector>,
    /// `u_{k}, ..., u_{k+L-1}`.
    pub us: Vec<Vector>,
    /// Reshaped stage costs along the prediction.
    pub costs: Vec<f64>,
    /// `sum_l gamma^l rbar_{k+l}`.
    pub stage_sum: f64,
    /// Sum of constraint excursions of the predicted states (against the
    /// tightened sets) and controls.
    pub violation: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.us.is_empty()
    }
}

/// Multi-step target `sum_l gamma^l rbar + gamma^L J(x_{k+L})`.
pub fn policy_eval_target(
    critic: &CriticNet,
    roll: &Rollout,
    gamma: f64,
    lookahead: usize,
    b_end: Option<&RelaxedBarrier>,
) -> Result<f64> {
    if roll.us.len() != lookahead || roll.xs.len() != lookahead + 1 {
        return Err(Error::RolloutLengthMismatch {
            expected: lookahead,
            found: roll.us.len(),
        });
    }
    let tail = critic.value(&roll.xs[lookahead], b_end);
    Ok(roll.stage_sum + gamma.powi(lookahead as i32) * tail)
}

/// One row of the inner-loop trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub iter: usize,
    /// Value of the incumbent after this iteration, under the frozen critic.
    pub j_bar: f64,
    pub residual_c: f64,
    pub residual_a: f64,
    pub gate_accepted: bool,
    pub cond_1: bool,
    pub cond_2: bool,
    pub q_min: f64,
    /// The incumbent's prediction satisfied every constraint when the
    /// iteration started.
    pub feasible: bool,
}

/// Summary of one inner loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOutcome {
    pub iterations: usize,
    pub accepted: usize,
    pub feasible: bool,
}

/// Critic/actor pair with the problem data it is trained on.
#[derive(Debug, Clone)]
pub struct Learner {
    model: DynamicsModel,
    schedule: Option<TightenedSchedule>,
    cost: CostSpec,
    cfg: LearnerConfig,
    actor: ActorNet,
    critic: CriticNet,
    monitor: ConvergenceMonitor,
    monitor_segment: usize,
}

const GATE_TOL: f64 = 1e-12;
const INIT_ATTEMPTS: usize = 100;

impl Learner {
    pub fn new(
        model: DynamicsModel,
        schedule: Option<TightenedSchedule>,
        cost: CostSpec,
        cfg: LearnerConfig,
        actor: ActorNet,
        critic: CriticNet,
    ) -> Result<Self> {
        cfg.validate()?;
        let (n, m) = (model.n(), model.m());
        if cost.n() != n || actor.n() != n || critic.basis().input_dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: cost.n(),
            });
        }
        if cost.m() != m || actor.m() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: cost.m(),
            });
        }
        if let Some(s) = &schedule {
            if s.base().state_dim() != n || s.base().control_dim() != m {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: s.base().state_dim(),
                });
            }
            if s.lookahead() < cfg.lookahead {
                return Err(Error::ParameterInvalid(format!(
                    "schedule was tightened for {} steps but the lookahead is {}",
                    s.lookahead(),
                    cfg.lookahead
                )));
            }
        }
        let monitor = ConvergenceMonitor::new(
            &cost,
            cfg.gamma_a,
            actor.basis(),
            schedule.as_ref().map(|s| s.state_barrier(0, 0)),
            schedule.as_ref().map(|s| s.base().control_barrier(0)),
        );
        Ok(Self {
            model,
            schedule,
            cost,
            cfg,
            actor,
            critic,
            monitor,
            monitor_segment: 0,
        })
    }

    /// Random actor in `U[-r, r]`; critic with unit weight on the squared
    /// axis features and weight `mu` on the barrier, perturbed by the same
    /// distribution, then scaled so that
    /// `J(x) >= rbar(x, u) + gamma J(x+)` holds on the initial prediction
    /// from `x0`. Draws that fail this, or whose prediction leaves the
    /// constraint sets, are discarded and redrawn from the same stream up
    /// to `INIT_ATTEMPTS` times.
    pub fn initialise(
        model: DynamicsModel,
        schedule: Option<TightenedSchedule>,
        cost: CostSpec,
        cfg: LearnerConfig,
        critic_basis: Basis,
        actor_basis: Basis,
        x0: &Vector,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut last_err = None;
        for _ in 0..INIT_ATTEMPTS {
            let actor = ActorNet::random_split(
                actor_basis.clone(),
                model.m(),
                cfg.init_range,
                cfg.k_init_range,
                &mut rng,
            );
            let critic = Self::initial_critic(
                &critic_basis,
                &cost,
                schedule.is_some(),
                cfg.init_range,
                &mut rng,
            )?;
            let mut learner = Self::new(
                model.clone(),
                schedule.clone(),
                cost.clone(),
                cfg.clone(),
                actor,
                critic,
            )?;
            let roll = learner.rollout(&learner.actor, x0, 0);
            if roll.violation > 0.0 {
                last_err = Some(Error::PreconditionFailed(format!(
                    "initial policy leaves the constraint sets within {} steps (excursion {:.3e})",
                    cfg.lookahead, roll.violation
                )));
                continue;
            }
            match learner.scale_critic(x0) {
                Ok(()) => return Ok(learner),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or_else(|| Error::PreconditionFailed("no attempts".into())))
    }

    fn initial_critic(
        basis: &Basis,
        cost: &CostSpec,
        with_barrier: bool,
        r: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CriticNet> {
        let mut draw = || {
            if r > 0.0 {
                rand::Rng::random_range(&mut *rng, -r..=r)
            } else {
                0.0
            }
        };
        let mut w1 = Vector::zeros(basis.len());
        for i in basis.quadratic_axes() {
            w1[i] = 1.0;
        }
        for w in w1.iter_mut() {
            *w += draw();
        }
        let w2 = if with_barrier {
            cost.mu() * (1.0 + draw())
        } else {
            0.0
        };
        CriticNet::new(basis.clone(), w1, w2)
    }

    /// Smallest factor `c >= 1` with `c (J(x) - gamma J(x+)) >= rbar(x, u)`
    /// on the states of the initial prediction.
    fn scale_critic(&mut self, x0: &Vector) -> Result<()> {
        let roll = self.rollout(&self.actor, x0, 0);
        let gamma = self.cost.gamma();
        let mut factor: f64 = 1.0;
        for l in 0..roll.len() {
            let x = &roll.xs[l];
            let xn = &roll.xs[l + 1];
            let d = self.critic.value(x, self.feature_barrier(l))
                - gamma * self.critic.value(xn, self.feature_barrier(l + 1));
            let r = roll.costs[l];
            if r <= 0.0 {
                continue;
            }
            if !(d > 0.0) {
                return Err(Error::PreconditionFailed(format!(
                    "critic decrease is {d:.3e} at predicted step {l}"
                )));
            }
            factor = factor.max(r / d);
        }
        if factor > self.cfg.max_critic_scale {
            return Err(Error::PreconditionFailed(format!(
                "critic needs scale {factor:.3e} above {:.3e}",
                self.cfg.max_critic_scale
            )));
        }
        self.critic.scale(factor);
        Ok(())
    }

    pub fn model(&self) -> &DynamicsModel {
        &self.model
    }

    pub fn schedule(&self) -> Option<&TightenedSchedule> {
        self.schedule.as_ref()
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn actor(&self) -> &ActorNet {
        &self.actor
    }

    pub fn critic(&self) -> &CriticNet {
        &self.critic
    }

    pub fn monitor(&self) -> &ConvergenceMonitor {
        &self.monitor
    }

    pub fn set_actor(&mut self, actor: ActorNet) {
        self.actor = actor;
    }

    pub fn set_critic(&mut self, critic: CriticNet) {
        self.critic = critic;
    }

    /// Untightened state barrier active at step `k`, used as a feature.
    pub fn feature_barrier(&self, k: usize) -> Option<&RelaxedBarrier> {
        self.schedule.as_ref().map(|s| s.state_barrier(k, 0))
    }

    pub fn control_barrier(&self, k: usize) -> Option<&RelaxedBarrier> {
        self.schedule.as_ref().map(|s| s.base().control_barrier(k))
    }

    /// Barrier of the state set for a prediction `j` steps ahead of `k`.
    fn cost_barrier(&self, k: usize, j: usize) -> Option<&RelaxedBarrier> {
        self.schedule.as_ref().map(|s| s.state_barrier(k + j, j))
    }

    /// Control applied at step `k` in state `x`.
    pub fn act(&self, k: usize, x: &Vector) -> Vector {
        self.actor
            .forward(x, self.feature_barrier(k), self.control_barrier(k))
            .0
    }

    /// Stage cost at step `k`, lookahead `j`.
    pub fn stage_cost(&self, k: usize, j: usize, x: &Vector, u: &Vector) -> f64 {
        stage_cost(
            &self.cost,
            self.cost_barrier(k, j),
            self.control_barrier(k + j),
            x,
            u,
        )
    }

    /// Predict `L` steps of `actor` from `x` at time `k`.
    pub fn rollout(&self, actor: &ActorNet, x: &Vector, k: usize) -> Rollout {
        let l_steps = self.cfg.lookahead;
        let gamma = self.cost.gamma();
        let mut xs = Vec::with_capacity(l_steps + 1);
        let mut us = Vec::with_capacity(l_steps);
        let mut costs = Vec::with_capacity(l_steps);
        let mut stage_sum = 0.0;
        let mut violation = 0.0;
        let mut disc = 1.0;
        let mut cur = x.clone();
        for l in 0..l_steps {
            let bu = self.control_barrier(k + l);
            let (u, _) = actor.forward(&cur, self.feature_barrier(k + l), bu);
            let r = self.stage_cost(k, l, &cur, &u);
            if let Some(b) = bu {
                violation += (-b.set().min_margin(&u)).max(0.0);
            }
            stage_sum += disc * r;
            disc *= gamma;
            let next = self.model.step(&cur, &u);
            if let Some(b) = self.cost_barrier(k, l + 1) {
                violation += (-b.set().min_margin(&next)).max(0.0);
            }
            xs.push(cur);
            us.push(u);
            costs.push(r);
            cur = next;
        }
        xs.push(cur);
        if !violation.is_finite() {
            violation = f64::INFINITY;
        }
        Rollout {
            xs,
            us,
            costs,
            stage_sum,
            violation,
        }
    }

    /// Multi-step value of a prediction under `critic`.
    pub fn mpe_value(&self, critic: &CriticNet, roll: &Rollout, k: usize) -> Result<f64> {
        policy_eval_target(
            critic,
            roll,
            self.cost.gamma(),
            self.cfg.lookahead,
            self.feature_barrier(k + self.cfg.lookahead),
        )
    }

    fn td_sample(&self, roll: &Rollout, k: usize) -> TdSample {
        let l = self.cfg.lookahead;
        TdSample {
            h_now: self.critic.features(&roll.xs[0], self.feature_barrier(k)),
            h_next: self
                .critic
                .features(&roll.xs[l], self.feature_barrier(k + l)),
            stage_sum: roll.stage_sum,
            discount: self.cost.gamma().powi(l as i32),
        }
    }

    /// One critic step on the prediction of the incumbent. Returns `|eps_c|`
    /// before the step.
    pub fn critic_step(&mut self, roll: &Rollout, k: usize) -> Result<f64> {
        let sample = self.td_sample(roll, k);
        let residual = sample.residual(&self.critic.weights()).abs();
        let dh = sample.delta_h();
        self.monitor.record(&dh);
        let rate = if self.cfg.normalize {
            self.cfg.gamma_c / (1.0 + dh.norm_squared())
        } else {
            self.cfg.gamma_c
        };
        self.critic = critic_update(&self.critic, &sample, rate, self.cfg.clip)?;
        if self.cfg.nonneg_barrier_weight && self.critic.w2() < 0.0 {
            let mut w = self.critic.weights();
            let last = w.len() - 1;
            w[last] = 0.0;
            self.critic.set_weights(&w);
        }
        Ok(residual)
    }

    /// Candidate actor from gradient steps at the predicted states (or at
    /// `roll.xs[0]` only). Returns the candidate and the mean `||eps_a||`.
    pub fn actor_candidate(
        &self,
        roll: &Rollout,
        k: usize,
        rate_scale: f64,
    ) -> Result<(ActorNet, f64)> {
        let mut cand = self.actor.clone();
        let states = if self.cfg.actor_on_rollout {
            roll.len()
        } else {
            1
        };
        let mut eps_sum = 0.0;
        let mut count = 0usize;
        for _ in 0..self.cfg.actor_substeps {
            for l in 0..states {
                let x = &roll.xs[l];
                let bu = self.control_barrier(k + l);
                let sample = actor_sample(
                    &cand,
                    &self.critic,
                    &self.model,
                    &self.cost,
                    self.feature_barrier(k + l),
                    bu,
                    self.feature_barrier(k + l + 1),
                    x,
                )?;
                let mut rate = self.cfg.gamma_a * rate_scale;
                if self.cfg.normalize {
                    let rb = sample.r_bar(&self.cost, bu, &sample.u).norm();
                    let h2 = sample.h_a1.norm_squared() + sample.grad_bv.norm_squared();
                    rate /= 1.0 + h2 * rb * rb;
                }
                let (next, eps) =
                    actor_update(&cand, &sample, &self.cost, bu, rate, self.cfg.clip)?;
                cand = next;
                eps_sum += eps;
                count += 1;
            }
        }
        Ok((cand, eps_sum / count.max(1) as f64))
    }

    fn sync_monitor(&mut self, k: usize) {
        let Some(s) = &self.schedule else { return };
        let seg = s.base().segment_index(k);
        if seg != self.monitor_segment {
            self.monitor_segment = seg;
            self.monitor.rebind(
                &self.cost,
                self.cfg.gamma_a,
                self.actor.basis(),
                Some(s.state_barrier(k, 0)),
                Some(s.base().control_barrier(k)),
            );
        }
    }

    /// Inner loop at `(k, x)`. Trace rows are appended to `trace`.
    pub fn improve(
        &mut self,
        k: usize,
        x: &Vector,
        trace: &mut Vec<TraceRow>,
    ) -> Result<InnerOutcome> {
        self.sync_monitor(k);
        let frozen = self.critic.clone();
        let mut inc_roll = self.rollout(&self.actor, x, k);
        let mut inc_value = self.mpe_value(&frozen, &inc_roll, k)?;
        let feasible = inc_roll.violation == 0.0;
        let mut step = 1.0;
        let mut accepted = 0usize;
        let mut iterations = 0usize;
        for iter in 1..=self.cfg.max_inner_iters {
            iterations = iter;
            let was_feasible = inc_roll.violation == 0.0;
            let residual_c = self.critic_step(&inc_roll, k)?;
            let (cand, residual_a) = self.actor_candidate(&inc_roll, k, step)?;
            let cand_roll = self.rollout(&cand, x, k);
            let cand_value = self.mpe_value(&frozen, &cand_roll, k)?;
            let accept = !self.cfg.gate
                || cand_roll.violation + GATE_TOL < inc_roll.violation
                || (cand_roll.violation <= inc_roll.violation && cand_value <= inc_value);
            let prev_value = inc_value;
            if accept {
                self.actor = cand;
                inc_roll = cand_roll;
                inc_value = cand_value;
                accepted += 1;
                step = (step * 2.0).min(1.0);
            } else {
                step *= 0.5;
            }
            let flags = self.monitor.flags();
            trace.push(TraceRow {
                k,
                iter,
                j_bar: inc_value,
                residual_c,
                residual_a,
                gate_accepted: accept,
                cond_1: flags.cond_1,
                cond_2: flags.cond_2,
                q_min: flags.q_min,
                feasible: was_feasible,
            });
            if accept && (prev_value - inc_value).abs() < self.cfg.eps_bar {
                break;
            }
            if step < self.cfg.min_step_scale {
                break;
            }
        }
        Ok(InnerOutcome {
            iterations,
            accepted,
            feasible,
        })
    }

    /// Offline sweeps of critic and actor updates over a batch of states at
    /// `k = 0`, without the gate. Returns the mean critic residual of the
    /// last sweep.
    pub fn train_offline(&mut self, states: &[Vector], sweeps: usize) -> Result<f64> {
        if states.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut last = 0.0;
        for _ in 0..sweeps {
            last = 0.0;
            for x in states {
                let roll = self.rollout(&self.actor, x, 0);
                last += self.critic_step(&roll, 0)?;
                let (cand, _) = self.actor_candidate(&roll, 0, 1.0)?;
                self.actor = cand;
            }
            last /= states.len() as f64;
        }
        Ok(last)
    }
}

/// Standalone inner loop with the checked preconditions: the incumbent
/// prediction from `x` must respect every constraint, and an incumbent that
/// is infeasible with every candidate rejected is an error.
pub fn safe_policy_iteration(learner: &mut Learner, k: usize, x: &Vector) -> Result<Vec<TraceRow>> {
    let roll = learner.rollout(learner.actor(), x, k);
    if roll.violation > 0.0 {
        return Err(Error::PreconditionFailed(format!(
            "initial policy leaves the constraint sets within {} steps (excursion {:.3e})",
            learner.config().lookahead,
            roll.violation
        )));
    }
    let mut trace = Vec::new();
    let out = learner.improve(k, x, &mut trace)?;
    if !out.feasible && out.accepted == 0 {
        return Err(Error::NoSafePolicyFound {
            k,
            attempts: out.iterations,
        });
    }
    Ok(trace)
}
