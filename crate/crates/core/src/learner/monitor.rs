//! Checkable convergence conditions of the actor-critic iteration.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::basis::Basis;
use super::cost::CostSpec;
use crate::barrier::RelaxedBarrier;
use crate::{Matrix, Vector};

/// Flags reported per inner iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorFlags {
    /// `R - mu H_u` positive definite.
    pub cond_1: bool,
    /// `I - 3 d_m (R + mu H_u)^2` positive definite.
    pub cond_2: bool,
    /// Running minimum of `dh^T dh` in the current window.
    pub q_min: f64,
    pub q_max: f64,
}

impl MonitorFlags {
    /// Persistence of excitation holds in the window so far.
    pub fn excited(&self) -> bool {
        self.q_min > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceMonitor {
    h_u: Matrix,
    d_m: f64,
    sigma_am: f64,
    b_vm: f64,
    b_xm: f64,
    cond_1: bool,
    cond_2: bool,
    q_min: f64,
    q_max: f64,
}

fn min_eigenvalue(m: &Matrix) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Largest feature norm over `samples` points drawn from the domain of
/// `bx` (or the unit box without a barrier).
pub fn sampled_feature_bound(basis: &Basis, bx: Option<&RelaxedBarrier>, samples: usize) -> f64 {
    let n = basis.input_dim();
    let (lo, hi) = match bx {
        Some(b) => {
            let (lo, hi) = b.set().domain();
            (lo.clone(), hi.clone())
        }
        None => (Vector::from_element(n, -1.0), Vector::from_element(n, 1.0)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d6f6e);
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let x = Vector::from_fn(n, |i, _| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>());
        best = best.max(basis.eval(&x).norm());
    }
    best
}

impl ConvergenceMonitor {
    pub fn new(
        c: &CostSpec,
        gamma_a: f64,
        actor_basis: &Basis,
        bx: Option<&RelaxedBarrier>,
        bu: Option<&RelaxedBarrier>,
    ) -> Self {
        let m = c.m();
        let mut mon = Self {
            h_u: Matrix::zeros(m, m),
            d_m: 0.0,
            sigma_am: 0.0,
            b_vm: 0.0,
            b_xm: 0.0,
            cond_1: false,
            cond_2: false,
            q_min: f64::INFINITY,
            q_max: 0.0,
        };
        mon.rebind(c, gamma_a, actor_basis, bx, bu);
        mon
    }

    /// Recompute bounds and the static conditions for new sets or rates;
    /// also resets the excitation window.
    pub fn rebind(
        &mut self,
        c: &CostSpec,
        gamma_a: f64,
        actor_basis: &Basis,
        bx: Option<&RelaxedBarrier>,
        bu: Option<&RelaxedBarrier>,
    ) {
        let m = c.m();
        self.h_u = bu.map_or_else(|| Matrix::zeros(m, m), |b| b.hessian_bound().clone());
        self.b_vm = bu.map_or(0.0, |b| b.grad_bound());
        self.b_xm = bx.map_or(0.0, |b| b.grad_bound());
        self.sigma_am = sampled_feature_bound(actor_basis, bx, 2000);
        self.d_m = 4.0 * gamma_a * (self.sigma_am.powi(2) + self.b_vm.powi(2) + self.b_xm.powi(2));
        let r = c.r();
        let mu_h = &self.h_u * c.mu();
        self.cond_1 = min_eigenvalue(&(r - &mu_h)) > 0.0;
        let s = r + &mu_h;
        self.cond_2 = min_eigenvalue(&(Matrix::identity(m, m) - &s * &s * (3.0 * self.d_m))) > 0.0;
        self.reset_window();
    }

    pub fn reset_window(&mut self) {
        self.q_min = f64::INFINITY;
        self.q_max = 0.0;
    }

    /// Record `dh = gamma^L h_c(x_{k+L}) - h_c(x_k)` of one critic update.
    pub fn record(&mut self, delta_h: &Vector) {
        let q = delta_h.norm_squared();
        self.q_min = self.q_min.min(q);
        self.q_max = self.q_max.max(q);
    }

    pub fn d_m(&self) -> f64 {
        self.d_m
    }

    pub fn h_u(&self) -> &Matrix {
        &self.h_u
    }

    pub fn flags(&self) -> MonitorFlags {
        MonitorFlags {
            cond_1: self.cond_1,
            cond_2: self.cond_2,
            q_min: if self.q_min.is_finite() {
                self.q_min
            } else {
                0.0
            },
            q_max: self.q_max,
        }
    }
}
