//! Brute-force references: central finite differences, discounted Riccati
//! iteration and grid value iteration for small problems.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::barrier::RelaxedBarrier;
use crate::dynamics::DynamicsModel;
use crate::learner::cost::{stage_cost, CostSpec};
use crate::{Error, Matrix, Result, Vector};

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_diff<F: Fn(&Vector) -> f64>(f: F, x: &Vector, h: f64) -> Vector {
    let mut g = Vector::zeros(x.len());
    let mut p = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        p[i] = xi + h;
        let fp = f(&p);
        p[i] = xi - h;
        let fm = f(&p);
        p[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Fixed point of the discounted Riccati recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: Matrix,
    /// Optimal feedback is `u = -gain x`.
    pub gain: Matrix,
    pub iterations: usize,
    pub residual: f64,
}

const RICCATI_DIVERGENCE: f64 = 1e9;

fn riccati_gain(a: &Matrix, b: &Matrix, r: &Matrix, gamma: f64, p: &Matrix) -> Result<Matrix> {
    let s = r + b.transpose() * p * b * gamma;
    let chol = s
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("R + gamma B'PB"))?;
    Ok(chol.solve(&(b.transpose() * p * a * gamma)))
}

/// Residual `||Q + gamma A'PA - gamma A'PB K - P||_max` of the discounted
/// algebraic Riccati equation.
pub fn dare_residual(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
    gamma: f64,
    p: &Matrix,
) -> f64 {
    match riccati_gain(a, b, r, gamma, p) {
        Ok(k) => {
            let rhs = q + a.transpose() * p * a * gamma - a.transpose() * p * b * &k * gamma;
            (rhs - p).amax()
        }
        Err(_) => f64::INFINITY,
    }
}

/// Iterate `P <- Q + gamma A'PA - gamma^2 A'PB (R + gamma B'PB)^-1 B'PA`
/// from `P = 0` until the update is below `1e-14 max(1, |P|)` or `iters`
/// is reached.
pub fn riccati_lq(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
    gamma: f64,
    iters: usize,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.nrows(),
        });
    }
    let mut p = Matrix::zeros(n, n);
    let mut done = 0;
    for it in 1..=iters {
        let k = riccati_gain(a, b, r, gamma, &p)?;
        let next = q + a.transpose() * &p * a * gamma - a.transpose() * &p * b * &k * gamma;
        let next = (&next + next.transpose()) * 0.5;
        let norm = next.amax();
        if !norm.is_finite() || norm > RICCATI_DIVERGENCE {
            return Err(Error::Divergence { norm, iters: it });
        }
        let change = (&next - &p).amax();
        p = next;
        done = it;
        if change <= 1e-14 * norm.max(1.0) {
            break;
        }
    }
    let gain = riccati_gain(a, b, r, gamma, &p)?;
    let residual = dare_residual(a, b, q, r, gamma, &p);
    Ok(RiccatiSolution {
        p,
        gain,
        iterations: done,
        residual,
    })
}

/// Uniform state grid (one or two dimensions) and control interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    pub points: Vec<usize>,
    pub control_lo: f64,
    pub control_hi: f64,
    /// Coarse control search points before the golden-section refinement.
    pub control_points: usize,
    /// Golden-section iterations inside the best coarse bracket.
    pub golden_iters: usize,
}

impl GridSpec {
    pub fn new(
        state_lo: &[f64],
        state_hi: &[f64],
        points: &[usize],
        control: (f64, f64),
    ) -> Result<Self> {
        let g = Self {
            state_lo: state_lo.to_vec(),
            state_hi: state_hi.to_vec(),
            points: points.to_vec(),
            control_lo: control.0,
            control_hi: control.1,
            control_points: 41,
            golden_iters: 40,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let n = self.state_lo.len();
        if n == 0 || n > 2 {
            return Err(Error::ParameterInvalid(format!(
                "grid value iteration supports 1 or 2 state dimensions, got {n}"
            )));
        }
        if self.state_hi.len() != n || self.points.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.points.len(),
            });
        }
        if self.points.iter().any(|&p| p < 2) || self.control_points < 2 {
            return Err(Error::ParameterInvalid(
                "grids need at least 2 points".into(),
            ));
        }
        if (0..n).any(|i| !(self.state_lo[i] < self.state_hi[i]))
            || !(self.control_lo < self.control_hi)
        {
            return Err(Error::ParameterInvalid(
                "grid ranges must satisfy lo < hi".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn cells(&self) -> usize {
        self.points.iter().product()
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.state_hi[d] - self.state_lo[d]) / (self.points[d] - 1) as f64
    }

    fn index(&self, idx: &[usize]) -> usize {
        match idx.len() {
            1 => idx[0],
            _ => idx[0] * self.points[1] + idx[1],
        }
    }

    fn multi(&self, flat: usize) -> Vec<usize> {
        match self.dim() {
            1 => vec![flat],
            _ => vec![flat / self.points[1], flat % self.points[1]],
        }
    }

    pub fn point(&self, flat: usize) -> Vector {
        let idx = self.multi(flat);
        Vector::from_fn(self.dim(), |d, _| {
            self.state_lo[d] + idx[d] as f64 * self.spacing(d)
        })
    }

    /// Nearest grid node, clamped.
    fn nearest(&self, x: &Vector) -> Vec<usize> {
        (0..self.dim())
            .map(|d| {
                let t = ((x[d] - self.state_lo[d]) / self.spacing(d)).round();
                t.clamp(0.0, (self.points[d] - 1) as f64) as usize
            })
            .collect()
    }
}

/// Converged value table with its greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub policy: Vec<f64>,
    /// Sup-norm change of every sweep.
    pub sup_changes: Vec<f64>,
    /// Number of interpolation queries that fell outside the grid and were
    /// clamped.
    pub clamped: usize,
}

impl ValueTable {
    /// Multilinear interpolation, clamping outside the grid.
    pub fn value(&self, x: &Vector) -> f64 {
        interpolate(&self.grid, &self.values, x).0
    }

    /// `cell coordinates..., value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let n = self.grid.dim();
        let header: Vec<String> = (0..n).map(|d| format!("x{d}")).collect();
        let _ = writeln!(out, "{},value,policy", header.join(","));
        for (i, v) in self.values.iter().enumerate() {
            let p = self.grid.point(i);
            let coords: Vec<String> = p.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{},{},{}", coords.join(","), v, self.policy[i]);
        }
        out
    }
}

/// Returns the interpolated value and whether the query was clamped.
fn interpolate(grid: &GridSpec, values: &[f64], x: &Vector) -> (f64, bool) {
    let n = grid.dim();
    let mut base = [0usize; 2];
    let mut frac = [0.0f64; 2];
    let mut clamped = false;
    for d in 0..n {
        let h = grid.spacing(d);
        let mut t = (x[d] - grid.state_lo[d]) / h;
        let top = (grid.points[d] - 1) as f64;
        if !(0.0..=top).contains(&t) {
            clamped = true;
            t = t.clamp(0.0, top);
        }
        let i = (t.floor() as usize).min(grid.points[d] - 2);
        base[d] = i;
        frac[d] = t - i as f64;
    }
    let v = if n == 1 {
        values[base[0]] * (1.0 - frac[0]) + values[base[0] + 1] * frac[0]
    } else {
        let at = |i: usize, j: usize| values[grid.index(&[base[0] + i, base[1] + j])];
        let (fx, fy) = (frac[0], frac[1]);
        at(0, 0) * (1.0 - fx) * (1.0 - fy)
            + at(1, 0) * fx * (1.0 - fy)
            + at(0, 1) * (1.0 - fx) * fy
            + at(1, 1) * fx * fy
    };
    (v, clamped)
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Minimise a 1-D function on a coarse grid, then refine with golden
/// section inside the bracket around the best coarse point.
fn minimise_1d<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    coarse: usize,
    iters: usize,
) -> (f64, f64) {
    let step = (hi - lo) / (coarse - 1) as f64;
    let mut best = (lo, f(lo));
    let mut best_i = 0;
    for i in 1..coarse {
        let u = lo + i as f64 * step;
        let v = f(u);
        if v < best.1 {
            best = (u, v);
            best_i = i;
        }
    }
    let mut a = lo + best_i.saturating_sub(1) as f64 * step;
    let mut b = (lo + (best_i + 1) as f64 * step).min(hi);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    let (u, v) = if fc < fd { (c, fc) } else { (d, fd) };
    if v < best.1 {
        (u, v)
    } else {
        best
    }
}

/// Cells closer than this many grid spacings to the origin are ignored by
/// the oscillation check.
const ORIGIN_EXCLUSION: f64 = 3.0;

/// Value iteration `J <- min_u [rbar(x, u) + gamma J(f(x, u))]` on a grid
/// with multilinear interpolation, until the sup-norm change is below
/// `tol` or `max_sweeps` is reached.
pub fn grid_value_iteration(
    model: &DynamicsModel,
    c: &CostSpec,
    barriers: Option<(&RelaxedBarrier, &RelaxedBarrier)>,
    grid: &GridSpec,
    tol: f64,
    max_sweeps: usize,
) -> Result<ValueTable> {
    grid.validate()?;
    if model.m() != 1 || model.n() != grid.dim() {
        return Err(Error::ParameterInvalid(format!(
            "grid value iteration needs n = {} and m = 1, model has n = {}, m = {}",
            grid.dim(),
            model.n(),
            model.m()
        )));
    }
    let cells = grid.cells();
    let points: Vec<Vector> = (0..cells).map(|i| grid.point(i)).collect();
    let (bx, bu) = match barriers {
        Some((x, u)) => (Some(x), Some(u)),
        None => (None, None),
    };
    let gamma = c.gamma();
    let clamped = AtomicUsize::new(0);
    let mut values = vec![0.0; cells];
    let mut policy = vec![0.0; cells];
    let mut sup_changes = Vec::new();

    for _ in 0..max_sweeps {
        let prev = &values;
        let q = |x: &Vector, u: f64| {
            let uv = Vector::from_element(1, u);
            let next = model.step(x, &uv);
            let (v, cl) = interpolate(grid, prev, &next);
            if cl {
                clamped.fetch_add(1, Ordering::Relaxed);
            }
            stage_cost(c, bx, bu, x, &uv) + gamma * v
        };
        let updated: Vec<(f64, f64)> = points
            .par_iter()
            .map(|x| {
                let (u, v) = minimise_1d(
                    |u| q(x, u),
                    grid.control_lo,
                    grid.control_hi,
                    grid.control_points,
                    grid.golden_iters,
                );
                (v, u)
            })
            .collect();
        let change = updated
            .iter()
            .zip(values.iter())
            .map(|((v, _), old)| (v - old).abs())
            .fold(0.0, f64::max);
        for (i, (v, u)) in updated.into_iter().enumerate() {
            values[i] = v;
            policy[i] = u;
        }
        sup_changes.push(change);
        if change < tol {
            break;
        }
    }
    let clamped = clamped.into_inner();
    if clamped > 0 {
        log::warn!("grid value iteration clamped {clamped} out-of-grid queries to the boundary");
    }

    // greedy successor cell of every cell; a two-cycle away from the origin
    // means the grid cannot resolve the dynamics
    let succ: Vec<usize> = points
        .iter()
        .zip(policy.iter())
        .map(|(x, &u)| grid.index(&grid.nearest(&model.step(x, &Vector::from_element(1, u)))))
        .collect();
    let h_max = (0..grid.dim()).map(|d| grid.spacing(d)).fold(0.0, f64::max);
    for (i, &j) in succ.iter().enumerate() {
        if j != i && succ[j] == i && points[i].norm() > ORIGIN_EXCLUSION * h_max {
            let to_pair = |f: usize| {
                let m = grid.multi(f);
                (m[0], m.get(1).copied().unwrap_or(0))
            };
            return Err(Error::GridTooCoarse {
                a: to_pair(i),
                b: to_pair(j),
            });
        }
    }

    Ok(ValueTable {
        grid: grid.clone(),
        values,
        policy,
        sup_changes,
        clamped,
    })
}
