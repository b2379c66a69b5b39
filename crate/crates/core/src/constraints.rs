//! Piecewise-constant constraint schedules and disturbance-tube tightening.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barrier::{Constraint, InequalitySet, RelaxedBarrier};
use crate::dynamics::DynamicsModel;
use crate::{Error, Matrix, Result, Vector};

/// Radius of the disturbance tube after `j` steps:
/// `(L_f^j - 1) / (L_f - 1) * eps_w`, or `j * eps_w` when `L_f = 1`.
pub fn tube_radius(l_f: f64, eps_w: f64, j: usize) -> f64 {
    if j == 0 {
        return 0.0;
    }
    if (l_f - 1.0).abs() < 1e-12 {
        return j as f64 * eps_w;
    }
    (l_f.powi(j as i32) - 1.0) / (l_f - 1.0) * eps_w
}

/// Pontryagin difference of `set` with the Euclidean ball of `radius`,
/// computed per constraint.
pub fn shrink(set: &InequalitySet, radius: f64) -> Result<InequalitySet> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::ParameterInvalid(format!(
            "shrink radius must be nonnegative, got {radius}"
        )));
    }
    if radius == 0.0 {
        return Ok(set.clone());
    }
    let constraints = set
        .constraints()
        .iter()
        .map(|c| match c {
            Constraint::HalfSpace { normal, offset } => Constraint::HalfSpace {
                normal: normal.clone(),
                offset: offset - normal.norm() * radius,
            },
            Constraint::Keepout {
                selector,
                center,
                radius: d,
            } => Constraint::Keepout {
                selector: selector.clone(),
                center: center.clone(),
                radius: d + radius,
            },
        })
        .collect();
    Ok(set.with_constraints(constraints, set.label().to_string()))
}

/// [`shrink`], failing with `EmptyShrunkSet` if `center` is not strictly
/// inside the result.
pub fn shrink_around(set: &InequalitySet, radius: f64, center: &Vector) -> Result<InequalitySet> {
    let out = shrink(set, radius)?;
    if !out.contains_interior(center) {
        return Err(Error::EmptyShrunkSet {
            label: set.label().to_string(),
            radius,
        });
    }
    Ok(out)
}

/// Input for one schedule segment covering `[from_k, until_k)`.
#[derive(Debug, Clone)]
pub struct SegmentSpec {
    pub from_k: usize,
    /// Exclusive end; `None` means "until the next segment starts" (or
    /// forever for the last one).
    pub until_k: Option<usize>,
    pub state_set: InequalitySet,
    pub control_set: InequalitySet,
    pub state_center: Vector,
    pub control_center: Vector,
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub from_k: usize,
    pub state: RelaxedBarrier,
    pub control: RelaxedBarrier,
}

/// Time-indexed state and control sets `X_k`, `U_k`.
#[derive(Debug, Clone)]
pub struct ConstraintSchedule {
    segments: Vec<Segment>,
    k_bar: usize,
    kappa: f64,
}

impl ConstraintSchedule {
    pub fn new(mut specs: Vec<SegmentSpec>, kappa: f64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidSchedule("no segments".into()));
        }
        specs.sort_by_key(|s| s.from_k);
        if specs[0].from_k != 0 {
            return Err(Error::InvalidSchedule(format!(
                "gap: steps 0..{} are not covered",
                specs[0].from_k
            )));
        }
        for w in specs.windows(2) {
            if w[0].from_k == w[1].from_k {
                return Err(Error::InvalidSchedule(format!(
                    "two segments start at k = {}",
                    w[0].from_k
                )));
            }
            if let Some(end) = w[0].until_k {
                if end < w[1].from_k {
                    return Err(Error::InvalidSchedule(format!(
                        "gap: steps {}..{} are not covered",
                        end, w[1].from_k
                    )));
                }
                if end > w[1].from_k {
                    return Err(Error::InvalidSchedule(format!(
                        "overlap: segment from k = {} runs to {} past the next start {}",
                        w[0].from_k, end, w[1].from_k
                    )));
                }
            }
        }
        if let Some(end) = specs.last().and_then(|s| s.until_k) {
            return Err(Error::InvalidSchedule(format!(
                "gap: no segment covers k >= {end}"
            )));
        }

        let n = specs[0].state_set.dim();
        let m = specs[0].control_set.dim();
        let mut segments = Vec::with_capacity(specs.len());
        for s in specs {
            if s.state_set.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: s.state_set.dim(),
                });
            }
            if s.control_set.dim() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: s.control_set.dim(),
                });
            }
            if !s.control_set.contains(&Vector::zeros(m)) {
                return Err(Error::InvalidSchedule(format!(
                    "control set `{}` of segment k = {} does not contain 0",
                    s.control_set.label(),
                    s.from_k
                )));
            }
            segments.push(Segment {
                from_k: s.from_k,
                state: RelaxedBarrier::new(s.state_set, s.state_center, kappa)?,
                control: RelaxedBarrier::new(s.control_set, s.control_center, kappa)?,
            });
        }

        let zero = Vector::zeros(n);
        let mut k_bar = None;
        for seg in segments.iter().rev() {
            if seg.state.set().contains_interior(&zero) {
                k_bar = Some(seg.from_k);
            } else {
                break;
            }
        }
        let k_bar = k_bar.ok_or_else(|| {
            Error::InvalidSchedule("the final state set must contain the origin".into())
        })?;
        Ok(Self {
            segments,
            k_bar,
            kappa,
        })
    }

    /// Single time-invariant segment.
    pub fn constant(
        state_set: InequalitySet,
        control_set: InequalitySet,
        state_center: Vector,
        control_center: Vector,
        kappa: f64,
    ) -> Result<Self> {
        Self::new(
            vec![SegmentSpec {
                from_k: 0,
                until_k: None,
                state_set,
                control_set,
                state_center,
                control_center,
            }],
            kappa,
        )
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// First step after which every state set contains the origin.
    pub fn k_bar(&self) -> usize {
        self.k_bar
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn state_dim(&self) -> usize {
        self.segments[0].state.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.segments[0].control.dim()
    }

    pub fn segment_index(&self, k: usize) -> usize {
        self.segments.partition_point(|s| s.from_k <= k) - 1
    }

    pub fn segment(&self, k: usize) -> &Segment {
        &self.segments[self.segment_index(k)]
    }

    pub fn state_barrier(&self, k: usize) -> &RelaxedBarrier {
        &self.segment(k).state
    }

    pub fn control_barrier(&self, k: usize) -> &RelaxedBarrier {
        &self.segment(k).control
    }

    /// Largest number of constraints in any state set; used to size logs.
    pub fn max_state_constraints(&self) -> usize {
        self.segments
            .iter()
            .map(|s| s.state.set().len())
            .max()
            .unwrap_or(0)
    }
}

/// Schedule whose state sets are shrunk by the tube radius of the lookahead
/// index: the prediction `j` steps ahead must lie in `X_{k+j} - D^j`.
#[derive(Debug, Clone)]
pub struct TightenedSchedule {
    base: ConstraintSchedule,
    eps_w: f64,
    l_f: f64,
    radii: Vec<f64>,
    /// `shrunk[segment][j]`
    shrunk: Vec<Vec<RelaxedBarrier>>,
}

impl TightenedSchedule {
    pub fn new(base: ConstraintSchedule, eps_w: f64, l_f: f64, lookahead: usize) -> Result<Self> {
        if !(eps_w >= 0.0) || !eps_w.is_finite() {
            return Err(Error::ParameterInvalid(format!(
                "disturbance bound must be nonnegative, got {eps_w}"
            )));
        }
        if !(l_f > 0.0) || !l_f.is_finite() {
            return Err(Error::ParameterInvalid(format!(
                "Lipschitz constant must be positive, got {l_f}"
            )));
        }
        let radii: Vec<f64> = (0..=lookahead)
            .map(|j| tube_radius(l_f, eps_w, j))
            .collect();
        let mut shrunk = Vec::with_capacity(base.segments.len());
        for seg in &base.segments {
            let mut per_j = Vec::with_capacity(radii.len());
            for &r in &radii {
                if r == 0.0 {
                    per_j.push(seg.state.clone());
                    continue;
                }
                let set = shrink_around(seg.state.set(), r, seg.state.center())?;
                per_j.push(RelaxedBarrier::new(
                    set,
                    seg.state.center().clone(),
                    base.kappa,
                )?);
            }
            shrunk.push(per_j);
        }
        Ok(Self {
            base,
            eps_w,
            l_f,
            radii,
            shrunk,
        })
    }

    /// No tightening: every lookahead uses the base sets.
    pub fn nominal(base: ConstraintSchedule, lookahead: usize) -> Self {
        Self::new(base, 0.0, 1.0, lookahead).expect("zero radius never empties a set")
    }

    pub fn base(&self) -> &ConstraintSchedule {
        &self.base
    }

    pub fn eps_w(&self) -> f64 {
        self.eps_w
    }

    pub fn lipschitz(&self) -> f64 {
        self.l_f
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn lookahead(&self) -> usize {
        self.radii.len() - 1
    }

    /// Barrier of `X_{k} - D^j`.
    pub fn state_barrier(&self, k: usize, j: usize) -> &RelaxedBarrier {
        let seg = self.base.segment_index(k);
        &self.shrunk[seg][j.min(self.radii.len() - 1)]
    }
}

/// Result of [`feasibility_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// Fraction of sampled boundary points of `X_{k+1}` reached within tolerance.
    pub coverage: f64,
    /// Largest distance from a sampled boundary point to the one-step image.
    pub worst_gap: f64,
    /// Whether `X_k` contains the origin in its interior.
    pub origin_interior: bool,
}

/// Tolerance for counting a boundary point as reachable.
pub const PROBE_TOL: f64 = 1e-3;

/// Sampling check of `X_{k+1} ⊆ f(X_k, U_k)` on boundary points of
/// `X_{k+1}`. Each boundary point is matched by a projected Gauss-Newton
/// search over `(x, u)`, seeded from the best of a random cloud. This is a
/// heuristic, not a certificate.
pub fn feasibility_probe(
    sched: &ConstraintSchedule,
    model: &DynamicsModel,
    k: usize,
    samples: usize,
    seed: u64,
) -> FeasibilityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = sched.state_barrier(k).set();
    let us = sched.control_barrier(k).set();
    let next = sched.state_barrier(k + 1);
    let n = model.n();
    let m = model.m();

    let cloud: Vec<(Vector, Vector, Vector)> = (0..2000)
        .filter_map(|_| {
            let x = sample_in(xs, &mut rng)?;
            let u = sample_in(us, &mut rng)?;
            let fx = model.step(&x, &u);
            Some((x, u, fx))
        })
        .collect();

    let samples = samples.max(1);
    let mut covered = 0usize;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let b = boundary_point(next, &mut rng);
        let Some((x0, u0, _)) = cloud
            .iter()
            .min_by(|a, c| (&a.2 - &b).norm().total_cmp(&(&c.2 - &b).norm()))
        else {
            worst = f64::INFINITY;
            continue;
        };
        let mut z = Vector::zeros(n + m);
        z.rows_mut(0, n).copy_from(x0);
        z.rows_mut(n, m).copy_from(u0);
        let gap = refine(model, xs, us, &b, z);
        if gap <= PROBE_TOL {
            covered += 1;
        }
        worst = worst.max(gap);
    }
    let coverage = covered as f64 / samples as f64;
    if coverage < 1.0 {
        log::warn!(
            "state set at k = {} is not fully reachable from k = {k}: coverage {coverage:.3}, worst gap {worst:.3e}",
            k + 1
        );
    }
    FeasibilityReport {
        coverage,
        worst_gap: worst,
        origin_interior: xs.contains_interior(&Vector::zeros(n)),
    }
}

fn sample_in<R: Rng>(set: &InequalitySet, rng: &mut R) -> Option<Vector> {
    let (lo, hi) = set.domain();
    for _ in 0..1000 {
        let z = Vector::from_fn(lo.len(), |i, _| {
            lo[i] + (hi[i] - lo[i]) * rng.random::<f64>()
        });
        if set.contains(&z) {
            return Some(z);
        }
    }
    None
}

/// Random ray from the barrier center, bisected to the boundary.
fn boundary_point<R: Rng>(b: &RelaxedBarrier, rng: &mut R) -> Vector {
    let set = b.set();
    let c = b.center();
    let n = c.len();
    let mut d = Vector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    if d.norm() < 1e-9 {
        d[0] = 1.0;
    }
    d /= d.norm();
    let (lo, hi) = set.domain();
    let mut t_hi = (hi - lo).norm() * 2.0 + 1.0;
    while set.contains(&(c + &d * t_hi)) {
        t_hi *= 2.0;
    }
    let mut t_lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (t_lo + t_hi);
        if set.contains(&(c + &d * mid)) {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    c + d * t_lo
}

fn clamp_to(z: &mut Vector, offset: usize, (lo, hi): (&Vector, &Vector)) {
    for i in 0..lo.len() {
        z[offset + i] = z[offset + i].clamp(lo[i], hi[i]);
    }
}

fn refine(
    model: &DynamicsModel,
    xs: &InequalitySet,
    us: &InequalitySet,
    target: &Vector,
    mut z: Vector,
) -> f64 {
    let n = model.n();
    let m = model.m();
    let split = |z: &Vector| (z.rows(0, n).into_owned(), z.rows(n, m).into_owned());
    let residual = |z: &Vector| {
        let (x, u) = split(z);
        model.step(&x, &u) - target
    };
    let feasible = |z: &Vector| {
        let (x, u) = split(z);
        xs.contains(&x) && us.contains(&u)
    };
    let mut r = residual(&z);
    for _ in 0..100 {
        if r.norm() <= PROBE_TOL * 1e-3 {
            break;
        }
        let mut jac = Matrix::zeros(n, n + m);
        for c in 0..n + m {
            let mut zp = z.clone();
            let h = 1e-7;
            zp[c] += h;
            jac.set_column(c, &((residual(&zp) - &r) / h));
        }
        // minimum-norm Gauss-Newton step
        let jjt = &jac * jac.transpose() + Matrix::identity(n, n) * 1e-12;
        let Some(sol) = jjt.cholesky() else { break };
        let step = -(jac.transpose() * sol.solve(&r));
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-6 {
            let mut cand = &z + &step * t;
            clamp_to(&mut cand, 0, xs.domain());
            clamp_to(&mut cand, n, us.domain());
            if feasible(&cand) {
                let rc = residual(&cand);
                if rc.norm() < r.norm() {
                    z = cand;
                    r = rc;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    r.norm()
}
