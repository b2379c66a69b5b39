//! Critic and barrier-force actor approximators with their gradient updates.

use rand::Rng;

use super::basis::Basis;
use super::cost::CostSpec;
use crate::barrier::RelaxedBarrier;
use crate::dynamics::DynamicsModel;
use crate::{Error, Matrix, Result, Vector};

/// `J(x) = W_c1 . sigma_c(x) + W_c2 B(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    basis: Basis,
    w1: Vector,
    w2: f64,
}

impl CriticNet {
    pub fn new(basis: Basis, w1: Vector, w2: f64) -> Result<Self> {
        if w1.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                found: w1.len(),
            });
        }
        Ok(Self { basis, w1, w2 })
    }

    pub fn zeros(basis: Basis) -> Self {
        let n = basis.len();
        Self {
            basis,
            w1: Vector::zeros(n),
            w2: 0.0,
        }
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn w1(&self) -> &Vector {
        &self.w1
    }

    pub fn w2(&self) -> f64 {
        self.w2
    }

    /// Stacked weights `W_c = (W_c1, W_c2)`.
    pub fn weights(&self) -> Vector {
        let n = self.w1.len();
        let mut w = Vector::zeros(n + 1);
        w.rows_mut(0, n).copy_from(&self.w1);
        w[n] = self.w2;
        w
    }

    pub fn set_weights(&mut self, w: &Vector) {
        let n = self.w1.len();
        self.w1.copy_from(&w.rows(0, n));
        self.w2 = w[n];
    }

    pub fn scale(&mut self, c: f64) {
        self.w1 *= c;
        self.w2 *= c;
    }

    /// Stacked features `h_c = (sigma_c(x), B(x))`.
    pub fn features(&self, x: &Vector, b: Option<&RelaxedBarrier>) -> Vector {
        let s = self.basis.eval(x);
        let n = s.len();
        let mut h = Vector::zeros(n + 1);
        h.rows_mut(0, n).copy_from(&s);
        h[n] = b.map_or(0.0, |b| b.value(x));
        h
    }

    pub fn value(&self, x: &Vector, b: Option<&RelaxedBarrier>) -> f64 {
        self.w1.dot(&self.basis.eval(x)) + self.w2 * b.map_or(0.0, |b| b.value(x))
    }

    /// `(grad sigma_c)^T W_c1 + W_c2 grad B(x)`.
    pub fn gradient(&self, x: &Vector, b: Option<&RelaxedBarrier>) -> Vector {
        let mut g = self.basis.jacobian(x).transpose() * &self.w1;
        if let Some(b) = b {
            g += b.gradient(x) * self.w2;
        }
        g
    }
}

/// Barrier-force policy `u = v + rho grad B_u(v) + K grad B_x(x)` with
/// `v = W_sigma^T sigma_a(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorNet {
    basis: Basis,
    w_sigma: Matrix,
    k_hat: Matrix,
    rho: f64,
}

impl ActorNet {
    pub fn new(basis: Basis, w_sigma: Matrix, k_hat: Matrix, rho: f64) -> Result<Self> {
        if w_sigma.nrows() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                found: w_sigma.nrows(),
            });
        }
        if k_hat.nrows() != w_sigma.ncols() {
            return Err(Error::DimensionMismatch {
                expected: w_sigma.ncols(),
                found: k_hat.nrows(),
            });
        }
        if k_hat.ncols() != basis.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.input_dim(),
                found: k_hat.ncols(),
            });
        }
        Ok(Self {
            basis,
            w_sigma,
            k_hat,
            rho,
        })
    }

    pub fn zeros(basis: Basis, m: usize) -> Self {
        let (nu, n) = (basis.len(), basis.input_dim());
        Self {
            basis,
            w_sigma: Matrix::zeros(nu, m),
            k_hat: Matrix::zeros(m, n),
            rho: 0.0,
        }
    }

    /// Entries of `W_sigma`, `K` and `rho` drawn from `U[-range, range]`.
    pub fn random<R: Rng>(basis: Basis, m: usize, range: f64, rng: &mut R) -> Self {
        Self::random_split(basis, m, range, range, rng)
    }

    /// Like [`ActorNet::random`] with a separate half-width for `K`.
    pub fn random_split<R: Rng>(
        basis: Basis,
        m: usize,
        range: f64,
        k_range: f64,
        rng: &mut R,
    ) -> Self {
        let mut a = Self::zeros(basis, m);
        let mut draw = |r: f64| {
            if r > 0.0 {
                rng.random_range(-r..=r)
            } else {
                0.0
            }
        };
        a.w_sigma = a.w_sigma.map(|_| draw(range));
        a.k_hat = a.k_hat.map(|_| draw(k_range));
        a.rho = draw(range);
        a
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn w_sigma(&self) -> &Matrix {
        &self.w_sigma
    }

    pub fn k_hat(&self) -> &Matrix {
        &self.k_hat
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn m(&self) -> usize {
        self.w_sigma.ncols()
    }

    pub fn n(&self) -> usize {
        self.k_hat.ncols()
    }

    /// `W_a1 = [W_sigma; K^T]`, shape `(N_u + n) x m`.
    pub fn w_a1(&self) -> Matrix {
        let (nu, m, n) = (self.w_sigma.nrows(), self.m(), self.n());
        let mut w = Matrix::zeros(nu + n, m);
        w.view_mut((0, 0), (nu, m)).copy_from(&self.w_sigma);
        w.view_mut((nu, 0), (n, m))
            .copy_from(&self.k_hat.transpose());
        w
    }

    pub fn set_w_a1(&mut self, w: &Matrix) {
        let (nu, m, n) = (self.w_sigma.nrows(), self.m(), self.n());
        self.w_sigma.copy_from(&w.view((0, 0), (nu, m)));
        self.k_hat.copy_from(&w.view((nu, 0), (n, m)).transpose());
    }

    pub fn set_rho(&mut self, rho: f64) {
        self.rho = rho;
    }

    /// Stacked weights `W_a = (W_a1, rho)`.
    pub fn weights(&self) -> Matrix {
        let w1 = self.w_a1();
        let mut w = Matrix::zeros(w1.nrows() + 1, w1.ncols());
        w.view_mut((0, 0), (w1.nrows(), w1.ncols())).copy_from(&w1);
        w.row_mut(w1.nrows()).fill(self.rho);
        w
    }

    pub fn v(&self, x: &Vector) -> Vector {
        self.w_sigma.transpose() * self.basis.eval(x)
    }

    /// `h_a1 = (sigma_a(x), grad B_x(x))`.
    pub fn h_a1(&self, x: &Vector, bx: Option<&RelaxedBarrier>) -> Vector {
        let s = self.basis.eval(x);
        let (nu, n) = (s.len(), self.n());
        let mut h = Vector::zeros(nu + n);
        h.rows_mut(0, nu).copy_from(&s);
        if let Some(b) = bx {
            h.rows_mut(nu, n).copy_from(&b.gradient(x));
        }
        h
    }

    /// Returns `(u, v)`.
    pub fn forward(
        &self,
        x: &Vector,
        bx: Option<&RelaxedBarrier>,
        bu: Option<&RelaxedBarrier>,
    ) -> (Vector, Vector) {
        let v = self.v(x);
        let mut u = v.clone();
        if let Some(b) = bu {
            u += b.gradient(&v) * self.rho;
        }
        if let Some(b) = bx {
            u += &self.k_hat * b.gradient(x);
        }
        (u, v)
    }
}

/// One temporal-difference sample for the critic:
/// `eps_c = stage_sum + W_c . (discount h_next - h_now)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdSample {
    pub h_now: Vector,
    pub h_next: Vector,
    /// `sum_l gamma^l rbar_{k+l}` over the rollout.
    pub stage_sum: f64,
    /// `gamma^L`.
    pub discount: f64,
}

impl TdSample {
    pub fn delta_h(&self) -> Vector {
        &self.h_next * self.discount - &self.h_now
    }

    /// `eps_c = J^d(x_k) - J(x_k)` for stacked weights `w`.
    pub fn residual(&self, w: &Vector) -> f64 {
        self.stage_sum + w.dot(&self.delta_h())
    }

    /// `delta_c = eps_c^2`.
    pub fn loss(&self, w: &Vector) -> f64 {
        self.residual(w).powi(2)
    }

    /// `d delta_c / d W_c = 2 dh eps_c`.
    pub fn loss_gradient(&self, w: &Vector) -> Vector {
        self.delta_h() * (2.0 * self.residual(w))
    }
}

fn clip(v: f64, limit: f64) -> f64 {
    v.clamp(-limit, limit)
}

/// Gradient step `W_c <- W_c - gamma_c d(eps_c^2)/dW_c`, increments clipped
/// elementwise at `clip_at`.
pub fn critic_update(
    critic: &CriticNet,
    sample: &TdSample,
    gamma_c: f64,
    clip_at: f64,
) -> Result<CriticNet> {
    let w = critic.weights();
    let grad = sample.loss_gradient(&w);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient("critic"));
    }
    let next = &w - grad.map(|g| clip(gamma_c * g, clip_at));
    let mut out = critic.clone();
    out.set_weights(&next);
    Ok(out)
}

/// Quantities of one actor update at state `x`, with `h_a` and `nu^d`
/// frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorSample {
    pub h_a1: Vector,
    /// `grad B_u(v)` (zeros without a control barrier).
    pub grad_bv: Vector,
    pub u: Vector,
    pub nu_d: Vector,
}

impl ActorSample {
    /// `nu = 2 R u + mu grad B(u)`.
    pub fn nu(&self, c: &CostSpec, bu: Option<&RelaxedBarrier>, u: &Vector) -> Vector {
        let mut nu = c.r() * u * 2.0;
        if let Some(b) = bu {
            nu += b.gradient(u) * c.mu();
        }
        nu
    }

    /// `R_bar = 2 R + mu hess B(u)`.
    pub fn r_bar(&self, c: &CostSpec, bu: Option<&RelaxedBarrier>, u: &Vector) -> Matrix {
        let mut rb = c.r() * 2.0;
        if let Some(b) = bu {
            rb += b.hessian(u) * c.mu();
        }
        rb
    }

    /// Control as a function of `(W_a1, rho)` with features frozen.
    pub fn control(&self, w_a1: &Matrix, rho: f64) -> Vector {
        w_a1.transpose() * &self.h_a1 + &self.grad_bv * rho
    }

    /// `delta_a = eps_a^T eps_a` with `eps_a = nu^d - nu(u(W_a1, rho))`.
    pub fn loss(&self, c: &CostSpec, bu: Option<&RelaxedBarrier>, w_a1: &Matrix, rho: f64) -> f64 {
        let u = self.control(w_a1, rho);
        (&self.nu_d - self.nu(c, bu, &u)).norm_squared()
    }

    /// `(d delta_a / d W_a1, d delta_a / d rho)` at the sampled control.
    pub fn loss_gradient(
        &self,
        c: &CostSpec,
        bu: Option<&RelaxedBarrier>,
    ) -> (Matrix, f64, Vector) {
        let eps = &self.nu_d - self.nu(c, bu, &self.u);
        let reps = self.r_bar(c, bu, &self.u) * &eps;
        let g_w = -(&self.h_a1 * reps.transpose()) * 2.0;
        let g_rho = -2.0 * self.grad_bv.dot(&reps);
        (g_w, g_rho, eps)
    }
}

/// Builds the actor sample at `x`: forward pass, successor state, and the
/// target `nu^d = -gamma (d f / d u)^T grad J(x+)`.
#[allow(clippy::too_many_arguments)]
pub fn actor_sample(
    actor: &ActorNet,
    critic: &CriticNet,
    model: &DynamicsModel,
    c: &CostSpec,
    bx: Option<&RelaxedBarrier>,
    bu: Option<&RelaxedBarrier>,
    bx_next: Option<&RelaxedBarrier>,
    x: &Vector,
) -> Result<ActorSample> {
    let (u, v) = actor.forward(x, bx, bu);
    let x_next = model.step(x, &u);
    let grad_j = critic.gradient(&x_next, bx_next);
    if grad_j.iter().any(|g| !g.is_finite()) {
        return Err(Error::CriticGradientUnavailable);
    }
    let nu_d = -(model.input_jacobian(x, &u).transpose() * grad_j) * c.gamma();
    let grad_bv = match bu {
        Some(b) => b.gradient(&v),
        None => Vector::zeros(actor.m()),
    };
    Ok(ActorSample {
        h_a1: actor.h_a1(x, bx),
        grad_bv,
        u,
        nu_d,
    })
}

/// `W_a1 <- W_a1 + 2 gamma_a h_a1 (R_bar eps_a)^T`,
/// `rho <- rho + 2 gamma_a grad B(v)^T R_bar eps_a`. Returns the updated
/// actor and `||eps_a||`.
pub fn actor_update(
    actor: &ActorNet,
    sample: &ActorSample,
    c: &CostSpec,
    bu: Option<&RelaxedBarrier>,
    gamma_a: f64,
    clip_at: f64,
) -> Result<(ActorNet, f64)> {
    let (g_w, g_rho, eps) = sample.loss_gradient(c, bu);
    if g_w.iter().any(|g| !g.is_finite()) || !g_rho.is_finite() {
        return Err(Error::NonFiniteGradient("actor"));
    }
    let mut out = actor.clone();
    let w = actor.w_a1() - g_w.map(|g| clip(gamma_a * g, clip_at));
    out.set_w_a1(&w);
    out.set_rho(actor.rho - clip(gamma_a * g_rho, clip_at));
    Ok((out, eps.norm()))
}
