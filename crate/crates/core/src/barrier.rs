//! Logarithmic barrier calculus over smooth inequality sets.
//!
//! A set is `{z : G_i(z) <= 0 for all i}`. Three barrier flavours are
//! provided:
//!
//! - [`raw_barrier`]: `-sum_i log(-G_i(z))`, `+inf` outside the interior.
//! - [`RelaxedBarrier::recentred`]: the raw barrier shifted and tilted so
//!   that value and gradient vanish at a chosen interior center.
//! - [`RelaxedBarrier::value`]: the recentred barrier where each
//!   `-log(s)` term is replaced by its second-order Taylor expansion once
//!   the margin `s = -G_i(z)` drops below the relax factor `kappa`. The
//!   result is finite everywhere and twice continuously differentiable.

use crate::{Error, Matrix, Result, Vector};

/// A single twice-differentiable inequality `G(z) <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `G(z) = normal . z - offset`.
    HalfSpace { normal: Vector, offset: f64 },
    /// Circular keep-out region in a 2-D projection:
    /// `G(z) = radius - ||selector z - center||`.
    Keepout {
        selector: Matrix,
        center: Vector,
        radius: f64,
    },
}

/// Below this distance the keep-out gradient direction is undefined and the
/// first canonical axis is used instead.
pub const KEEPOUT_SINGULAR_TOL: f64 = 1e-9;

impl Constraint {
    pub fn dim(&self) -> usize {
        match self {
            Constraint::HalfSpace { normal, .. } => normal.len(),
            Constraint::Keepout { selector, .. } => selector.ncols(),
        }
    }

    pub fn value(&self, z: &Vector) -> f64 {
        match self {
            Constraint::HalfSpace { normal, offset } => normal.dot(z) - offset,
            Constraint::Keepout {
                selector,
                center,
                radius,
            } => radius - (selector * z - center).norm(),
        }
    }

    pub fn gradient(&self, z: &Vector) -> Vector {
        match self {
            Constraint::HalfSpace { normal, .. } => normal.clone(),
            Constraint::Keepout {
                selector, center, ..
            } => {
                let d = selector * z - center;
                let dist = d.norm();
                let dir = if dist < KEEPOUT_SINGULAR_TOL {
                    let mut e = Vector::zeros(d.len());
                    e[0] = 1.0;
                    e
                } else {
                    d / dist
                };
                -(selector.transpose() * dir)
            }
        }
    }

    pub fn hessian(&self, z: &Vector) -> Matrix {
        match self {
            Constraint::HalfSpace { normal, .. } => Matrix::zeros(normal.len(), normal.len()),
            Constraint::Keepout {
                selector, center, ..
            } => {
                let d = selector * z - center;
                let dist = d.norm();
                let n = selector.ncols();
                if dist < KEEPOUT_SINGULAR_TOL {
                    return Matrix::zeros(n, n);
                }
                let dir = &d / dist;
                let k = d.len();
                let proj = Matrix::identity(k, k) - &dir * dir.transpose();
                -(selector.transpose() * proj * selector) / dist
            }
        }
    }

    /// Curvature bound of the relaxed barrier term for this constraint.
    fn curvature_bound(&self, kappa: f64) -> Matrix {
        let k2 = kappa * kappa;
        match self {
            Constraint::HalfSpace { normal, .. } => normal * normal.transpose() / k2,
            Constraint::Keepout { selector, .. } => selector.transpose() * selector / k2,
        }
    }
}

/// Ordered list of inequalities plus a bounding domain used for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalitySet {
    label: String,
    dim: usize,
    constraints: Vec<Constraint>,
    domain_lo: Vector,
    domain_hi: Vector,
}

impl InequalitySet {
    pub fn new(
        label: impl Into<String>,
        constraints: Vec<Constraint>,
        domain_lo: Vector,
        domain_hi: Vector,
    ) -> Result<Self> {
        let label = label.into();
        if constraints.is_empty() {
            return Err(Error::ParameterInvalid(format!(
                "set `{label}` needs at least one constraint"
            )));
        }
        let dim = domain_lo.len();
        if dim == 0 {
            return Err(Error::ParameterInvalid(format!(
                "set `{label}` has dimension 0"
            )));
        }
        if domain_hi.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: domain_hi.len(),
            });
        }
        for c in &constraints {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.dim(),
                });
            }
            if let Constraint::Keepout {
                selector,
                center,
                radius,
            } = c
            {
                if selector.nrows() != center.len() {
                    return Err(Error::DimensionMismatch {
                        expected: selector.nrows(),
                        found: center.len(),
                    });
                }
                if !(*radius >= 0.0) {
                    return Err(Error::ParameterInvalid(format!(
                        "set `{label}`: keep-out radius must be nonnegative"
                    )));
                }
            }
        }
        if domain_lo
            .iter()
            .zip(domain_hi.iter())
            .any(|(l, h)| !(l < h))
        {
            return Err(Error::ParameterInvalid(format!(
                "set `{label}`: domain bounds must satisfy lo < hi"
            )));
        }
        Ok(Self {
            label,
            dim,
            constraints,
            domain_lo,
            domain_hi,
        })
    }

    /// Axis-aligned box `lo <= z <= hi`. Constraints are ordered
    /// lower/upper per coordinate.
    pub fn boxed(label: impl Into<String>, lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        let n = lo.len();
        let mut constraints = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut e = Vector::zeros(n);
            e[i] = -1.0;
            constraints.push(Constraint::HalfSpace {
                normal: e.clone(),
                offset: -lo[i],
            });
            constraints.push(Constraint::HalfSpace {
                normal: -e,
                offset: hi[i],
            });
        }
        Self::new(
            label,
            constraints,
            Vector::from_column_slice(lo),
            Vector::from_column_slice(hi),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn domain(&self) -> (&Vector, &Vector) {
        (&self.domain_lo, &self.domain_hi)
    }

    pub(crate) fn with_constraints(&self, constraints: Vec<Constraint>, label: String) -> Self {
        Self {
            label,
            dim: self.dim,
            constraints,
            domain_lo: self.domain_lo.clone(),
            domain_hi: self.domain_hi.clone(),
        }
    }

    fn check_dim(&self, z: &Vector) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: z.len(),
            });
        }
        Ok(())
    }

    /// Per-constraint margins `-G_i(z)`; positive inside.
    pub fn margins(&self, z: &Vector) -> Vec<f64> {
        self.constraints.iter().map(|c| -c.value(z)).collect()
    }

    /// Smallest margin `min_i -G_i(z)`.
    pub fn min_margin(&self, z: &Vector) -> f64 {
        self.constraints
            .iter()
            .map(|c| -c.value(z))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, z: &Vector) -> bool {
        self.min_margin(z) >= 0.0
    }

    pub fn contains_interior(&self, z: &Vector) -> bool {
        self.min_margin(z) > 0.0
    }
}

/// Extended-real barrier value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInfinity,
}

impl ExtendedReal {
    pub fn is_infinite(self) -> bool {
        matches!(self, ExtendedReal::PosInfinity)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::PosInfinity => None,
        }
    }
}

/// `-sum_i log(-G_i(z))` on the interior, `+inf` elsewhere.
pub fn raw_barrier(set: &InequalitySet, z: &Vector) -> Result<ExtendedReal> {
    set.check_dim(z)?;
    let mut acc = 0.0;
    for c in set.constraints() {
        let s = -c.value(z);
        if !(s > 0.0) {
            return Ok(ExtendedReal::PosInfinity);
        }
        acc -= s.ln();
    }
    Ok(ExtendedReal::Finite(acc))
}

fn raw_gradient(set: &InequalitySet, z: &Vector) -> Vector {
    let mut g = Vector::zeros(set.dim());
    for c in set.constraints() {
        let s = -c.value(z);
        g += c.gradient(z) / s;
    }
    g
}

/// Relaxed `-log(s)`: exact for `s >= kappa`, quadratic Taylor expansion
/// about `s = kappa` below.
#[inline]
pub fn relaxed_log(s: f64, kappa: f64) -> f64 {
    if s >= kappa {
        -s.ln()
    } else {
        let t = (s - 2.0 * kappa) / kappa;
        0.5 * (t * t - 1.0) - kappa.ln()
    }
}

#[inline]
pub fn relaxed_log_d1(s: f64, kappa: f64) -> f64 {
    if s >= kappa {
        -1.0 / s
    } else {
        (s - 2.0 * kappa) / (kappa * kappa)
    }
}

#[inline]
pub fn relaxed_log_d2(s: f64, kappa: f64) -> f64 {
    if s >= kappa {
        1.0 / (s * s)
    } else {
        1.0 / (kappa * kappa)
    }
}

/// Recentred, relaxed log barrier attached to one set.
///
/// Immutable after construction and safe to share between threads.
#[derive(Debug, Clone)]
pub struct RelaxedBarrier {
    set: InequalitySet,
    center: Vector,
    kappa: f64,
    center_value: f64,
    center_grad: Vector,
    raw_center_value: f64,
    raw_center_grad: Vector,
    hessian_bound: Matrix,
    grad_bound: f64,
}

impl RelaxedBarrier {
    pub fn new(set: InequalitySet, center: Vector, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::ParameterInvalid(format!(
                "relax factor must be positive, got {kappa}"
            )));
        }
        set.check_dim(&center)?;
        if !set.contains_interior(&center) {
            return Err(Error::CenterNotInterior {
                label: set.label().to_string(),
            });
        }
        let raw_center_value = match raw_barrier(&set, &center)? {
            ExtendedReal::Finite(v) => v,
            ExtendedReal::PosInfinity => unreachable!("center is interior"),
        };
        let raw_center_grad = raw_gradient(&set, &center);
        let (center_value, center_grad) = Self::unshifted(&set, kappa, &center);

        let n = set.dim();
        let mut hessian_bound = Matrix::zeros(n, n);
        for c in set.constraints() {
            hessian_bound += c.curvature_bound(kappa);
        }

        let mut out = Self {
            set,
            center,
            kappa,
            center_value,
            center_grad,
            raw_center_value,
            raw_center_grad,
            hessian_bound,
            grad_bound: 0.0,
        };
        out.grad_bound = out.compute_grad_bound();
        Ok(out)
    }

    /// `max ||2 H (z - z_c)||` over the vertices of the domain box widened by
    /// `10 kappa`; the map is convex so the maximum sits at a vertex.
    fn compute_grad_bound(&self) -> f64 {
        let n = self.set.dim();
        let (lo, hi) = self.set.domain();
        let pad = 10.0 * self.kappa;
        let vertices = 1usize << n.min(16);
        let mut best: f64 = 0.0;
        for mask in 0..vertices {
            let z = Vector::from_fn(n, |i, _| {
                if mask >> i & 1 == 1 {
                    hi[i] + pad
                } else {
                    lo[i] - pad
                }
            });
            let g = 2.0 * &self.hessian_bound * (z - &self.center);
            best = best.max(g.norm());
        }
        best
    }

    fn unshifted(set: &InequalitySet, kappa: f64, z: &Vector) -> (f64, Vector) {
        let mut value = 0.0;
        let mut grad = Vector::zeros(set.dim());
        for c in set.constraints() {
            let s = -c.value(z);
            value += relaxed_log(s, kappa);
            // d/dz phi(-G(z)) = -phi'(s) grad G
            grad -= c.gradient(z) * relaxed_log_d1(s, kappa);
        }
        (value, grad)
    }

    pub fn set(&self) -> &InequalitySet {
        &self.set
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Curvature bound `H_z` of the relaxed branch.
    pub fn hessian_bound(&self) -> &Matrix {
        &self.hessian_bound
    }

    /// Gradient-norm bound `B_{z,m}`.
    pub fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    /// Smallest constraint margin; the barrier is in its strict branch when
    /// this is at least `kappa`.
    pub fn switch_margin(&self, z: &Vector) -> f64 {
        self.set.min_margin(z)
    }

    /// Recentred barrier on the strict branch.
    pub fn recentred(&self, z: &Vector) -> Result<f64> {
        self.set.check_dim(z)?;
        let margin = self.set.min_margin(z);
        if margin < self.kappa {
            return Err(Error::OutsideStrictRegion {
                margin,
                kappa: self.kappa,
            });
        }
        let raw = raw_barrier(&self.set, z)?
            .finite()
            .expect("strict branch is interior");
        Ok(raw - self.raw_center_value - self.raw_center_grad.dot(&(z - &self.center)))
    }

    pub fn recentred_gradient(&self, z: &Vector) -> Result<Vector> {
        self.set.check_dim(z)?;
        let margin = self.set.min_margin(z);
        if margin < self.kappa {
            return Err(Error::OutsideStrictRegion {
                margin,
                kappa: self.kappa,
            });
        }
        Ok(raw_gradient(&self.set, z) - &self.raw_center_grad)
    }

    /// Relaxed barrier value; total.
    pub fn value(&self, z: &Vector) -> f64 {
        let (v, _) = Self::unshifted(&self.set, self.kappa, z);
        v - self.center_value - self.center_grad.dot(&(z - &self.center))
    }

    pub fn gradient(&self, z: &Vector) -> Vector {
        let (_, g) = Self::unshifted(&self.set, self.kappa, z);
        g - &self.center_grad
    }

    pub fn value_and_gradient(&self, z: &Vector) -> (f64, Vector) {
        let (v, g) = Self::unshifted(&self.set, self.kappa, z);
        (
            v - self.center_value - self.center_grad.dot(&(z - &self.center)),
            g - &self.center_grad,
        )
    }

    pub fn hessian(&self, z: &Vector) -> Matrix {
        let n = self.set.dim();
        let mut h = Matrix::zeros(n, n);
        for c in self.set.constraints() {
            let s = -c.value(z);
            let g = c.gradient(z);
            h += &g * g.transpose() * relaxed_log_d2(s, self.kappa);
            h -= c.hessian(z) * relaxed_log_d1(s, self.kappa);
        }
        h
    }
}

/// Max mixed relative error between the analytic gradient of the relaxed
/// barrier and a central finite difference with step `h`. Each coordinate
/// error is scaled by `max(1, |analytic|)`.
pub fn gradient_check(b: &RelaxedBarrier, z: &Vector, h: f64) -> f64 {
    let fd = crate::oracle::finite_diff(|p| b.value(p), z, h);
    let an = b.gradient(z);
    fd.iter()
        .zip(an.iter())
        .map(|(f, a)| (f - a).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_box() -> InequalitySet {
        InequalitySet::boxed("z", &[-1.0], &[0.5]).unwrap()
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn raw_barrier_matches_hand_evaluation() {
        let set = unit_box();
        let val = raw_barrier(&set, &v(&[0.0])).unwrap().finite().unwrap();
        assert_abs_diff_eq!(val, 2f64.ln(), epsilon = 1e-12);
        assert!(raw_barrier(&set, &v(&[0.5])).unwrap().is_infinite());
        assert!(raw_barrier(&set, &v(&[0.7])).unwrap().is_infinite());
    }

    #[test]
    fn raw_barrier_rejects_wrong_dimension() {
        let set = unit_box();
        assert_eq!(
            raw_barrier(&set, &v(&[0.0, 0.0])),
            Err(Error::DimensionMismatch {
                expected: 1,
                found: 2
            })
        );
    }

    #[test]
    fn recentred_vanishes_at_center() {
        let b = RelaxedBarrier::new(unit_box(), v(&[0.0]), 0.05).unwrap();
        assert_abs_diff_eq!(b.recentred(&v(&[0.0])).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            b.recentred_gradient(&v(&[0.0])).unwrap()[0],
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn recentred_quarter_point() {
        // B^o(z) = -ln(0.5 - z) - ln(z + 1); grad B^o(0) = 1/0.5 - 1/1 = 1.
        let b = RelaxedBarrier::new(unit_box(), v(&[0.0]), 0.05).unwrap();
        let raw = |z: f64| -(0.5 - z).ln() - (z + 1.0).ln();
        let expected = raw(0.25) - raw(0.0) - 1.0 * 0.25;
        assert_abs_diff_eq!(b.recentred(&v(&[0.25])).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.2200036292, epsilon = 1e-9);
    }

    #[test]
    fn recentred_refuses_relaxed_branch() {
        let b = RelaxedBarrier::new(unit_box(), v(&[0.0]), 0.05).unwrap();
        assert!(matches!(
            b.recentred(&v(&[0.49])),
            Err(Error::OutsideStrictRegion { .. })
        ));
    }

    #[test]
    fn symmetric_box_gives_even_barrier() {
        let set = InequalitySet::boxed("sym", &[-0.8], &[0.8]).unwrap();
        let b = RelaxedBarrier::new(set, v(&[0.0]), 0.05).unwrap();
        for i in 0..40 {
            let z = -1.2 + 2.4 * i as f64 / 39.0;
            assert_abs_diff_eq!(b.value(&v(&[z])), b.value(&v(&[-z])), epsilon = 1e-12);
        }
    }

    #[test]
    fn center_outside_interior_is_rejected() {
        let err = RelaxedBarrier::new(unit_box(), v(&[0.5]), 0.05).unwrap_err();
        assert!(matches!(err, Error::CenterNotInterior { .. }));
    }

    #[test]
    fn relaxed_value_on_boundary_uses_quadratic_extension() {
        let kappa = 0.05;
        let b = RelaxedBarrier::new(unit_box(), v(&[0.0]), kappa).unwrap();
        // Independent closed form of the extension at the upper margin 0:
        // 0.5 * ((0 - 2k)/k)^2 - 0.5 - ln k = 1.5 - ln k.
        let upper = 1.5 - kappa.ln();
        let lower = -(1.5f64).ln();
        let expected = upper + lower - (-(0.5f64).ln() - 0.0) - 1.0 * 0.5;
        let at_boundary = b.value(&v(&[0.5]));
        assert_abs_diff_eq!(at_boundary, expected, epsilon = 1e-12);
        assert!(at_boundary.is_finite());
        assert!(at_boundary > b.value(&v(&[0.45])));
    }

    #[test]
    fn relaxed_value_is_monotone_along_ray() {
        let b = RelaxedBarrier::new(unit_box(), v(&[0.0]), 0.05).unwrap();
        let mut prev = b.value(&v(&[0.0]));
        for i in 1..=100 {
            let z = 1.5 * i as f64 / 100.0;
            let cur = b.value(&v(&[z]));
            assert!(cur >= prev, "not monotone at z = {z}");
            prev = cur;
        }
    }

    #[test]
    fn gradient_check_examples() {
        let b = RelaxedBarrier::new(unit_box(), v(&[0.0]), 0.05).unwrap();
        assert!(gradient_check(&b, &v(&[0.2]), 1e-6) < 1e-6);
        // exactly at the switch, sigma = kappa
        assert!(gradient_check(&b, &v(&[0.45]), 1e-6) < 1e-4);
        assert_eq!(b.gradient(&v(&[0.0]))[0], 0.0);
        let fd = crate::oracle::finite_diff(|p| b.value(p), &v(&[0.0]), 1e-6);
        assert!(fd[0].abs() < 1e-8);
    }

    #[test]
    fn hessian_bound_for_box_is_sum_of_outer_products() {
        let set = InequalitySet::boxed("b", &[-1.0, -1.0], &[0.5, 0.5]).unwrap();
        let b = RelaxedBarrier::new(set, v(&[0.0, 0.0]), 0.05).unwrap();
        let h = b.hessian_bound();
        assert_abs_diff_eq!(h[(0, 0)], 2.0 / 0.0025, epsilon = 1e-9);
        assert_abs_diff_eq!(h[(0, 1)], 0.0, epsilon = 1e-12);
        // relaxed-branch curvature never exceeds the bound
        let hz = b.hessian(&v(&[0.6, 0.0]));
        assert!(hz[(0, 0)] <= h[(0, 0)] + 1e-9);
    }

    #[test]
    fn keepout_gradient_is_finite_at_the_center() {
        let sel = Matrix::identity(2, 2);
        let set = InequalitySet::new(
            "obstacle",
            vec![Constraint::Keepout {
                selector: sel,
                center: v(&[1.0, 0.0]),
                radius: 0.3,
            }],
            v(&[-2.0, -2.0]),
            v(&[2.0, 2.0]),
        )
        .unwrap();
        let b = RelaxedBarrier::new(set, v(&[0.0, 0.0]), 0.05).unwrap();
        let g = b.gradient(&v(&[1.0, 0.0]));
        assert!(g.iter().all(|x| x.is_finite()));
        // away from the singularity the analytic gradient is exact
        assert!(gradient_check(&b, &v(&[0.4, 0.3]), 1e-6) < 1e-6);
        assert!(gradient_check(&b, &v(&[0.9, 0.1]), 1e-6) < 1e-6);
    }

    #[test]
    fn keepout_hessian_matches_finite_difference_of_gradient() {
        let set = InequalitySet::new(
            "obstacle",
            vec![Constraint::Keepout {
                selector: Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
                center: v(&[0.5, 0.2]),
                radius: 0.2,
            }],
            v(&[-1.0, -1.0, -1.0]),
            v(&[1.0, 1.0, 1.0]),
        )
        .unwrap();
        let b = RelaxedBarrier::new(set, v(&[0.0, 0.0, 0.0]), 0.05).unwrap();
        for z in [
            v(&[0.1, -0.3, 0.2]),
            v(&[0.6, 0.3, 0.0]),
            v(&[0.5, 0.05, 0.0]),
        ] {
            let h = b.hessian(&z);
            for j in 0..3 {
                let col = crate::oracle::finite_diff(|p| b.gradient(p)[j], &z, 1e-6);
                for i in 0..3 {
                    assert_abs_diff_eq!(
                        col[i],
                        h[(j, i)],
                        epsilon = 1e-4 * h[(j, i)].abs().max(1.0)
                    );
                }
            }
        }
    }
}
