//! Discrete-time dynamics `x+ = f(x, u)` and the bundled benchmark models.
//!
//! Every model is shifted so that the origin with zero control is an
//! equilibrium. Continuous models are discretised with explicit Euler.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Matrix, Result, Vector};

/// Number of sampled pairs behind the `L_f` and `g_m` estimates.
pub const ESTIMATE_SAMPLES: usize = 10_000;
/// Inflation applied to sampled Lipschitz and Jacobian-norm estimates.
pub const ESTIMATE_SAFETY: f64 = 1.2;

/// Physical parameters of the linear single-track model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicycleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub c_front: f64,
    pub c_rear: f64,
    pub l_front: f64,
    pub l_rear: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            mass: 1723.0,
            yaw_inertia: 4175.0,
            c_front: 66900.0,
            c_rear: 62700.0,
            l_front: 1.322,
            l_rear: 1.468,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// Already discrete: `x+ = A x + B u`.
    Linear {
        a: Matrix,
        b: Matrix,
    },
    VanDerPol,
    DiffDrive {
        v_ref: f64,
        omega_ref: f64,
    },
    /// Continuous `x' = A x + B u`, Euler-discretised.
    Bicycle {
        a: Matrix,
        b: Matrix,
        feedforward: f64,
    },
}

/// A discrete-time control-affine or general nonlinear model together with
/// its Lipschitz constant `L_f` and input-Jacobian bound `g_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    name: &'static str,
    kind: Kind,
    n: usize,
    m: usize,
    dt: Option<f64>,
    lipschitz: f64,
    input_grad_bound: f64,
    state_box: (Vector, Vector),
    control_box: (Vector, Vector),
}

fn boxed(lo: &[f64], hi: &[f64]) -> (Vector, Vector) {
    (Vector::from_column_slice(lo), Vector::from_column_slice(hi))
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::ParameterInvalid(format!(
            "dt must be positive, got {dt}"
        )));
    }
    Ok(())
}

impl DynamicsModel {
    fn build(
        name: &'static str,
        kind: Kind,
        n: usize,
        m: usize,
        dt: Option<f64>,
        state_box: (Vector, Vector),
        control_box: (Vector, Vector),
    ) -> Self {
        let mut model = Self {
            name,
            kind,
            n,
            m,
            dt,
            lipschitz: 0.0,
            input_grad_bound: 0.0,
            state_box,
            control_box,
        };
        model.estimate_bounds();
        model
    }

    /// Generic discrete linear model `x+ = A x + B u`.
    pub fn linear(a: Matrix, b: Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: a.ncols(),
            });
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.nrows(),
            });
        }
        let m = b.ncols();
        let sb = (Vector::from_element(n, -1.0), Vector::from_element(n, 1.0));
        let cb = (Vector::from_element(m, -1.0), Vector::from_element(m, 1.0));
        Ok(Self::build(
            "linear",
            Kind::Linear { a, b },
            n,
            m,
            None,
            sb,
            cb,
        ))
    }

    /// Planar mass-point robot.
    pub fn mass_point() -> Self {
        let a = Matrix::from_row_slice(2, 2, &[0.995, 0.0998, -0.0998, 0.995]);
        let b = Matrix::from_column_slice(2, 1, &[-0.2, -0.1]);
        Self::build(
            "mass_point",
            Kind::Linear { a, b },
            2,
            1,
            None,
            boxed(&[-1.0, -1.0], &[0.5, 0.3]),
            boxed(&[-1.0], &[1.0]),
        )
    }

    /// Van der Pol oscillator with a control input on the velocity.
    pub fn van_der_pol(dt: f64) -> Result<Self> {
        check_dt(dt)?;
        Ok(Self::build(
            "van_der_pol",
            Kind::VanDerPol,
            2,
            1,
            Some(dt),
            boxed(&[-1.5, -1.5], &[1.5, 1.5]),
            boxed(&[-2.0], &[2.0]),
        ))
    }

    /// Path-following error model of a differential-drive vehicle. Control
    /// is the offset `(v_o - v_ref, omega - omega_ref)`.
    pub fn diff_drive_error(dt: f64, v_ref: f64, omega_ref: f64) -> Result<Self> {
        check_dt(dt)?;
        if !v_ref.is_finite() || !omega_ref.is_finite() {
            return Err(Error::ParameterInvalid(
                "reference inputs must be finite".into(),
            ));
        }
        let pi = std::f64::consts::PI;
        Ok(Self::build(
            "diff_drive",
            Kind::DiffDrive { v_ref, omega_ref },
            3,
            2,
            Some(dt),
            boxed(&[-2.0, -2.0, -pi], &[2.0, 2.0, pi]),
            boxed(&[-1.0, -1.0], &[1.0, 1.0]),
        ))
    }

    /// Lateral error dynamics of a single-track vehicle at longitudinal
    /// speed `v_x`, state `(e_y, e_y', e_phi, e_phi')`. The control is the
    /// virtual steering `delta + delta_f`; see [`DynamicsModel::feedforward`].
    pub fn bicycle_lateral(dt: f64, v_x: f64, phi_ref_rate: f64) -> Result<Self> {
        Self::bicycle_with(dt, v_x, phi_ref_rate, BicycleParams::default())
    }

    pub fn bicycle_with(dt: f64, v_x: f64, phi_ref_rate: f64, p: BicycleParams) -> Result<Self> {
        check_dt(dt)?;
        if !(v_x > 0.0) || !v_x.is_finite() {
            return Err(Error::ParameterInvalid(format!(
                "longitudinal speed must be positive, got {v_x}"
            )));
        }
        let (a, b, f3) = bicycle_matrices(v_x, &p);
        // least-squares delta_f with F2 delta_f = F3 phi_ref_rate
        let feedforward = b.column(0).dot(&f3) / b.column(0).norm_squared() * phi_ref_rate;
        Ok(Self::build(
            "bicycle",
            Kind::Bicycle { a, b, feedforward },
            4,
            1,
            Some(dt),
            boxed(&[-2.0, -2.0, -1.0, -2.0], &[2.0, 2.0, 1.0, 2.0]),
            boxed(&[-0.5], &[0.5]),
        ))
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dt(&self) -> Option<f64> {
        self.dt
    }

    /// Lipschitz constant `L_f` in the state.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Bound `g_m` on the spectral norm of the input Jacobian.
    pub fn input_grad_bound(&self) -> f64 {
        self.input_grad_bound
    }

    pub fn state_box(&self) -> (&Vector, &Vector) {
        (&self.state_box.0, &self.state_box.1)
    }

    pub fn control_box(&self) -> (&Vector, &Vector) {
        (&self.control_box.0, &self.control_box.1)
    }

    /// Steering feedforward `delta_f` of the bicycle model; zero otherwise.
    pub fn feedforward(&self) -> f64 {
        match &self.kind {
            Kind::Bicycle { feedforward, .. } => *feedforward,
            _ => 0.0,
        }
    }

    /// Re-estimate `L_f` and `g_m` over new sampling boxes.
    pub fn with_bounds(
        mut self,
        state_box: (Vector, Vector),
        control_box: (Vector, Vector),
    ) -> Result<Self> {
        for (bx, dim) in [(&state_box, self.n), (&control_box, self.m)] {
            if bx.0.len() != dim || bx.1.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: bx.0.len().max(bx.1.len()),
                });
            }
            if bx.0.iter().zip(bx.1.iter()).any(|(l, h)| !(l <= h)) {
                return Err(Error::ParameterInvalid("sampling box has lo > hi".into()));
            }
        }
        self.state_box = state_box;
        self.control_box = control_box;
        self.estimate_bounds();
        Ok(self)
    }

    pub fn with_lipschitz(mut self, l_f: f64) -> Result<Self> {
        if !(l_f > 0.0) || !l_f.is_finite() {
            return Err(Error::ParameterInvalid(format!(
                "Lipschitz constant must be positive, got {l_f}"
            )));
        }
        self.lipschitz = l_f;
        Ok(self)
    }

    pub fn step(&self, x: &Vector, u: &Vector) -> Vector {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(u.len(), self.m);
        match &self.kind {
            Kind::Linear { a, b } => a * x + b * u,
            Kind::VanDerPol => {
                let dt = self.dt.unwrap_or(1.0);
                let (x1, x2) = (x[0], x[1]);
                Vector::from_column_slice(&[
                    x1 + dt * x2,
                    x2 + dt * (x2 - x1 * x1 * x2 - x1 + u[0]),
                ])
            }
            Kind::DiffDrive { v_ref, omega_ref } => {
                let dt = self.dt.unwrap_or(1.0);
                let (ex, ey, eth) = (x[0], x[1], x[2]);
                let v_o = v_ref + u[0];
                let omega = omega_ref + u[1];
                Vector::from_column_slice(&[
                    ex + dt * (omega * ey - v_o + v_ref * eth.cos()),
                    ey + dt * (-omega * ex + v_ref * eth.sin()),
                    eth + dt * (omega_ref - omega),
                ])
            }
            Kind::Bicycle { a, b, .. } => {
                let dt = self.dt.unwrap_or(1.0);
                x + (a * x + b * u) * dt
            }
        }
    }

    /// `n x m` Jacobian of `f` with respect to `u`.
    pub fn input_jacobian(&self, x: &Vector, _u: &Vector) -> Matrix {
        match &self.kind {
            Kind::Linear { b, .. } => b.clone(),
            Kind::VanDerPol => {
                let dt = self.dt.unwrap_or(1.0);
                Matrix::from_column_slice(2, 1, &[0.0, dt])
            }
            Kind::DiffDrive { .. } => {
                let dt = self.dt.unwrap_or(1.0);
                Matrix::from_row_slice(3, 2, &[-dt, dt * x[1], 0.0, -dt * x[0], 0.0, -dt])
            }
            Kind::Bicycle { b, .. } => b * self.dt.unwrap_or(1.0),
        }
    }

    /// Linear parts `(A, B)` when the model is linear in both arguments.
    pub fn linear_parts(&self) -> Option<(Matrix, Matrix)> {
        match &self.kind {
            Kind::Linear { a, b } => Some((a.clone(), b.clone())),
            Kind::Bicycle { a, b, .. } => {
                let dt = self.dt.unwrap_or(1.0);
                Some((Matrix::identity(self.n, self.n) + a * dt, b * dt))
            }
            _ => None,
        }
    }

    fn estimate_bounds(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5afe_bac0);
        let (l, g) = self.sample_bounds(&mut rng, ESTIMATE_SAMPLES);
        self.lipschitz = ESTIMATE_SAFETY * l;
        self.input_grad_bound = ESTIMATE_SAFETY * g;
        if !(self.lipschitz > 0.0) {
            self.lipschitz = f64::EPSILON;
        }
        if !(self.input_grad_bound > 0.0) {
            self.input_grad_bound = f64::EPSILON;
        }
    }

    /// Uncorrected sampled `(max Lipschitz ratio, max input-Jacobian norm)`
    /// over the sampling boxes.
    pub fn sample_bounds<R: Rng>(&self, rng: &mut R, samples: usize) -> (f64, f64) {
        let draw = |rng: &mut R, bx: &(Vector, Vector)| {
            Vector::from_fn(bx.0.len(), |i, _| {
                let (lo, hi) = (bx.0[i], bx.1[i]);
                lo + (hi - lo) * rng.random::<f64>()
            })
        };
        let mut lip: f64 = 0.0;
        let mut grad: f64 = 0.0;
        for _ in 0..samples {
            let x1 = draw(rng, &self.state_box);
            let x2 = draw(rng, &self.state_box);
            let u = draw(rng, &self.control_box);
            let dx = (&x1 - &x2).norm();
            if dx > 1e-12 {
                lip = lip.max((self.step(&x1, &u) - self.step(&x2, &u)).norm() / dx);
            }
            grad = grad.max(spectral_norm(&self.input_jacobian(&x1, &u)));
        }
        (lip, grad)
    }
}

fn bicycle_matrices(v_x: f64, p: &BicycleParams) -> (Matrix, Matrix, Vector) {
    let BicycleParams {
        mass: m,
        yaw_inertia: iz,
        c_front: cf,
        c_rear: cr,
        l_front: lf,
        l_rear: lr,
    } = *p;
    let a22 = -(2.0 * cf + 2.0 * cr) / (m * v_x);
    let a23 = (2.0 * cf + 2.0 * cr) / m;
    let a24 = (-2.0 * cf * lf + 2.0 * cr * lr) / (m * v_x);
    let a42 = -(2.0 * cf * lf - 2.0 * cr * lr) / (iz * v_x);
    let a43 = (2.0 * cf * lf - 2.0 * cr * lr) / iz;
    let a44 = -(2.0 * cf * lf * lf + 2.0 * cr * lr * lr) / (iz * v_x);
    #[rustfmt::skip]
    let a = Matrix::from_row_slice(4, 4, &[
        0.0, 1.0, 0.0, 0.0,
        0.0, a22, a23, a24,
        0.0, 0.0, 0.0, 1.0,
        0.0, a42, a43, a44,
    ]);
    let b = Matrix::from_column_slice(4, 1, &[0.0, 2.0 * cf / m, 0.0, 2.0 * cf * lf / iz]);
    let f3 = Vector::from_column_slice(&[
        0.0,
        -(2.0 * cf * lf - 2.0 * cr * lr) / (m * v_x) - v_x,
        0.0,
        -(2.0 * cf * lf * lf + 2.0 * cr * lr * lr) / (iz * v_x),
    ]);
    (a, b, f3)
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
        .max(0.0)
        .sqrt()
}

/// Additive disturbance bounded by `||w|| <= eps_w`, drawn uniformly from
/// the Euclidean ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceSpec {
    eps_w: f64,
}

impl DisturbanceSpec {
    pub fn new(eps_w: f64) -> Result<Self> {
        if !(eps_w >= 0.0) || !eps_w.is_finite() {
            return Err(Error::ParameterInvalid(format!(
                "disturbance bound must be nonnegative, got {eps_w}"
            )));
        }
        Ok(Self { eps_w })
    }

    pub fn eps_w(&self) -> f64 {
        self.eps_w
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vector {
        if self.eps_w == 0.0 {
            return Vector::zeros(n);
        }
        let dir = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm == 0.0 {
            return Vector::zeros(n);
        }
        let radius = self.eps_w * rng.random::<f64>().powf(1.0 / n as f64);
        // guard against the last ulp pushing the norm over the bound
        (dir / norm * radius).map(|v| v * (1.0 - 1e-15))
    }
}

/// One disturbed step `f(x, u) + w` with `w` drawn from a generator seeded
/// by `seed`.
pub fn perturbed_step(
    model: &DynamicsModel,
    d: &DisturbanceSpec,
    x: &Vector,
    u: &Vector,
    seed: u64,
) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.step(x, u) + d.sample(model.n(), &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_diff;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn models() -> Vec<DynamicsModel> {
        vec![
            DynamicsModel::mass_point(),
            DynamicsModel::van_der_pol(0.01).unwrap(),
            DynamicsModel::diff_drive_error(0.05, 0.7, 0.2).unwrap(),
            DynamicsModel::bicycle_lateral(0.02, 5.0, 0.1).unwrap(),
        ]
    }

    #[test]
    fn mass_point_examples() {
        let mp = DynamicsModel::mass_point();
        let x = mp.step(&v(&[-0.5, -0.5]), &v(&[0.0]));
        assert_abs_diff_eq!(x[0], -0.5474, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], -0.4476, epsilon = 1e-12);
        assert_eq!(mp.step(&v(&[0.0, 0.0]), &v(&[0.0])), v(&[0.0, 0.0]));
        let x = mp.step(&v(&[0.0, 0.0]), &v(&[1.0]));
        assert_abs_diff_eq!(x[0], -0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], -0.1, epsilon = 1e-15);
    }

    #[test]
    fn van_der_pol_examples() {
        let vdp = DynamicsModel::van_der_pol(0.01).unwrap();
        let x = vdp.step(&v(&[-0.5, -0.5]), &v(&[0.0]));
        assert_abs_diff_eq!(x[0], -0.505, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], -0.49875, epsilon = 1e-12);
        assert_eq!(vdp.step(&v(&[0.0, 0.0]), &v(&[0.0])), v(&[0.0, 0.0]));
        let j = vdp.input_jacobian(&v(&[0.3, -1.2]), &v(&[0.5]));
        assert_eq!(j, Matrix::from_column_slice(2, 1, &[0.0, 0.01]));
        assert!(DynamicsModel::van_der_pol(0.0).is_err());
    }

    #[test]
    fn diff_drive_examples() {
        let (dt, vr, wr) = (0.05, 0.7, 0.3);
        let dd = DynamicsModel::diff_drive_error(dt, vr, wr).unwrap();
        assert_eq!(dd.step(&v(&[0.0; 3]), &v(&[0.0, 0.0])), v(&[0.0; 3]));

        // raw inputs (v_o, omega) = (0, omega_r)
        let e = v(&[0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let next = dd.step(&e, &v(&[-vr, 0.0]));
        let edot = [vr * std::f64::consts::FRAC_PI_2.cos(), 0.7, 0.0];
        for i in 0..3 {
            assert_abs_diff_eq!(next[i], e[i] + dt * edot[i], epsilon = 1e-15);
        }

        // e = (1, 0, 0), raw omega = omega_r + 1
        let next = dd.step(&v(&[1.0, 0.0, 0.0]), &v(&[0.0, 1.0]));
        let omega = wr + 1.0;
        assert_abs_diff_eq!(next[0], 1.0 + dt * (omega * 0.0 - vr + vr), epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], dt * (-omega * 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(next[2], dt * (wr - omega), epsilon = 1e-15);

        assert!(DynamicsModel::diff_drive_error(-0.1, vr, wr).is_err());
    }

    /// Continuous single-track equations in body coordinates on a straight
    /// road, mapped to the error state, then Euler-stepped.
    fn bicycle_oracle(x: &Vector, delta: f64, v_x: f64, dt: f64) -> Vector {
        let p = BicycleParams::default();
        let (m, iz, cf, cr, lf, lr) = (
            p.mass,
            p.yaw_inertia,
            p.c_front,
            p.c_rear,
            p.l_front,
            p.l_rear,
        );
        let (ey, eyd, ephi, ephid) = (x[0], x[1], x[2], x[3]);
        let vy = eyd - v_x * ephi;
        let r = ephid;
        let alpha_f = delta - (vy + lf * r) / v_x;
        let alpha_r = -(vy - lr * r) / v_x;
        let fyf = 2.0 * cf * alpha_f;
        let fyr = 2.0 * cr * alpha_r;
        let vy_dot = (fyf + fyr) / m - v_x * r;
        let r_dot = (lf * fyf - lr * fyr) / iz;
        let xdot = [eyd, vy_dot + v_x * r, ephid, r_dot];
        Vector::from_fn(4, |i, _| [ey, eyd, ephi, ephid][i] + dt * xdot[i])
    }

    #[test]
    fn bicycle_matches_single_track_oracle() {
        let (dt, vx) = (0.02, 5.0);
        let bk = DynamicsModel::bicycle_lateral(dt, vx, 0.0).unwrap();
        assert_eq!(bk.step(&Vector::zeros(4), &v(&[0.0])), Vector::zeros(4));
        for (x, u) in [
            (v(&[0.1, 0.0, 0.0, 0.0]), 0.0),
            (v(&[0.3, -0.2, 0.05, 0.4]), 0.02),
            (v(&[-1.0, 0.5, -0.3, 0.1]), -0.1),
        ] {
            let got = bk.step(&x, &v(&[u]));
            let want = bicycle_oracle(&x, u, vx, dt);
            for i in 0..4 {
                assert_abs_diff_eq!(got[i], want[i], epsilon = 1e-10);
            }
        }
        let j = bk.input_jacobian(&v(&[1.0, 2.0, 0.3, 0.0]), &v(&[0.0]));
        assert_eq!(j, bk.input_jacobian(&Vector::zeros(4), &v(&[0.1])));
        assert!(DynamicsModel::bicycle_lateral(0.02, 0.0, 0.0).is_err());
    }

    #[test]
    fn bicycle_feedforward_is_least_squares() {
        let bk = DynamicsModel::bicycle_lateral(0.02, 8.0, 0.05).unwrap();
        let p = BicycleParams::default();
        let (_, b, f3) = bicycle_matrices(8.0, &p);
        let df = bk.feedforward();
        // residual is orthogonal to the input direction
        let resid = b.column(0) * df - f3 * 0.05;
        assert_abs_diff_eq!(resid.dot(&b.column(0)), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn input_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for model in models() {
            for _ in 0..100 {
                let (slo, shi) = model.state_box();
                let (clo, chi) = model.control_box();
                let x = Vector::from_fn(model.n(), |i, _| {
                    slo[i] + (shi[i] - slo[i]) * rng.random::<f64>()
                });
                let u = Vector::from_fn(model.m(), |i, _| {
                    clo[i] + (chi[i] - clo[i]) * rng.random::<f64>()
                });
                let an = model.input_jacobian(&x, &u);
                for r in 0..model.n() {
                    let fd = finite_diff(|p| model.step(&x, p)[r], &u, 1e-6);
                    for c in 0..model.m() {
                        let err = (fd[c] - an[(r, c)]).abs() / an[(r, c)].abs().max(1.0);
                        assert!(err < 1e-6, "{} ({r},{c}): {err}", model.name());
                    }
                }
            }
        }
    }

    #[test]
    fn declared_bounds_dominate_fresh_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for model in models() {
            let (l, g) = model.sample_bounds(&mut rng, ESTIMATE_SAMPLES);
            assert!(l <= model.lipschitz(), "{}", model.name());
            assert!(g <= model.input_grad_bound(), "{}", model.name());
        }
    }

    #[test]
    fn regulation_models_have_origin_equilibrium() {
        for model in models() {
            let x = model.step(&Vector::zeros(model.n()), &Vector::zeros(model.m()));
            assert!(x.norm() < 1e-12, "{}", model.name());
        }
    }

    #[test]
    fn euler_models_are_exact_euler_steps() {
        let vdp = DynamicsModel::van_der_pol(0.01).unwrap();
        let x = v(&[0.4, -0.9]);
        let u = 0.3;
        let rhs = [x[1], x[1] - x[0] * x[0] * x[1] - x[0] + u];
        let next = vdp.step(&x, &v(&[u]));
        assert_eq!(next[0], x[0] + 0.01 * rhs[0]);
        assert_eq!(next[1], x[1] + 0.01 * rhs[1]);
    }

    #[test]
    fn disturbance_respects_bound_and_seed() {
        let mp = DynamicsModel::mass_point();
        let x = v(&[-0.3, 0.2]);
        let u = v(&[0.1]);
        let zero = DisturbanceSpec::new(0.0).unwrap();
        assert_eq!(perturbed_step(&mp, &zero, &x, &u, 3), mp.step(&x, &u));
        let d = DisturbanceSpec::new(0.005).unwrap();
        let nominal = mp.step(&x, &u);
        for seed in 0..1000 {
            let p = perturbed_step(&mp, &d, &x, &u, seed);
            assert!((p - &nominal).norm() <= 0.005);
        }
        assert_eq!(
            perturbed_step(&mp, &d, &x, &u, 42),
            perturbed_step(&mp, &d, &x, &u, 42)
        );
        assert!(DisturbanceSpec::new(-1.0).is_err());
    }

    #[test]
    fn spectral_norm_of_known_matrix() {
        let m = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 4.0, 5.0]);
        // singular values of [[3,0],[4,5]] are 3*sqrt(5) and sqrt(5)
        assert_abs_diff_eq!(spectral_norm(&m), 45f64.sqrt(), epsilon = 1e-12);
    }
}
