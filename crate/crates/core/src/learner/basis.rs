//! Fixed feature maps for the actor and critic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Matrix, Result, Vector};

/// Differentiable feature map `R^n -> R^N`.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    /// `s tanh(d_i . x / s)`; roughly linear near the origin.
    Tanh { dirs: Vec<Vector>, scale: f64 },
    /// `s^2 tanh^2(d_i . x / s)`; roughly quadratic near the origin.
    TanhSquared { dirs: Vec<Vector>, scale: f64 },
    /// Monomials `prod_j x_j^{e_j}` with the listed exponent vectors.
    Polynomial { exponents: Vec<Vec<u32>> },
}

/// Directions made of the canonical axes followed by seeded random unit
/// vectors, `count` in total.
pub fn feature_directions(n: usize, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            if i < n {
                let mut e = Vector::zeros(n);
                e[i] = 1.0;
                e
            } else {
                loop {
                    let d = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let norm = d.norm();
                    if norm > 1e-6 {
                        break d / norm;
                    }
                }
            }
        })
        .collect()
}

/// All exponent vectors of total degree exactly `degree` in `n` variables,
/// in lexicographic order.
pub fn monomials(n: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for e in (0..=left).rev() {
            cur.push(e);
            rec(n, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(n, degree, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

impl Basis {
    pub fn tanh(n: usize, count: usize, scale: f64, seed: u64) -> Result<Self> {
        check_scale(scale)?;
        Ok(Basis::Tanh {
            dirs: feature_directions(n, count, seed),
            scale,
        })
    }

    pub fn tanh_squared(n: usize, count: usize, scale: f64, seed: u64) -> Result<Self> {
        check_scale(scale)?;
        Ok(Basis::TanhSquared {
            dirs: feature_directions(n, count, seed),
            scale,
        })
    }

    /// Monomials of every listed total degree.
    pub fn polynomial(n: usize, degrees: &[u32]) -> Result<Self> {
        if degrees.is_empty() || n == 0 {
            return Err(Error::ParameterInvalid(
                "polynomial basis needs at least one degree".into(),
            ));
        }
        let exponents = degrees.iter().flat_map(|&d| monomials(n, d)).collect();
        Ok(Basis::Polynomial { exponents })
    }

    pub fn len(&self) -> usize {
        match self {
            Basis::Tanh { dirs, .. } | Basis::TanhSquared { dirs, .. } => dirs.len(),
            Basis::Polynomial { exponents } => exponents.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Basis::Tanh { dirs, .. } | Basis::TanhSquared { dirs, .. } => {
                dirs.first().map_or(0, |d| d.len())
            }
            Basis::Polynomial { exponents } => exponents.first().map_or(0, |e| e.len()),
        }
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        match self {
            Basis::Tanh { dirs, scale } => Vector::from_iterator(
                dirs.len(),
                dirs.iter().map(|d| scale * (d.dot(x) / scale).tanh()),
            ),
            Basis::TanhSquared { dirs, scale } => Vector::from_iterator(
                dirs.len(),
                dirs.iter().map(|d| {
                    let t = scale * (d.dot(x) / scale).tanh();
                    t * t
                }),
            ),
            Basis::Polynomial { exponents } => {
                Vector::from_iterator(exponents.len(), exponents.iter().map(|e| monomial(x, e)))
            }
        }
    }

    /// `N x n` Jacobian.
    pub fn jacobian(&self, x: &Vector) -> Matrix {
        let n = x.len();
        let mut jac = Matrix::zeros(self.len(), n);
        match self {
            Basis::Tanh { dirs, scale } => {
                for (i, d) in dirs.iter().enumerate() {
                    let t = (d.dot(x) / scale).tanh();
                    jac.row_mut(i).copy_from(&(d.transpose() * (1.0 - t * t)));
                }
            }
            Basis::TanhSquared { dirs, scale } => {
                for (i, d) in dirs.iter().enumerate() {
                    let t = (d.dot(x) / scale).tanh();
                    jac.row_mut(i)
                        .copy_from(&(d.transpose() * (2.0 * scale * t * (1.0 - t * t))));
                }
            }
            Basis::Polynomial { exponents } => {
                for (i, e) in exponents.iter().enumerate() {
                    for j in 0..n {
                        if e[j] == 0 {
                            continue;
                        }
                        let mut reduced = e.clone();
                        reduced[j] -= 1;
                        jac[(i, j)] = e[j] as f64 * monomial(x, &reduced);
                    }
                }
            }
        }
        jac
    }

    /// Indices of features that act as squared axis coordinates near the
    /// origin; used to seed a positive-definite critic.
    pub fn quadratic_axes(&self) -> Vec<usize> {
        match self {
            Basis::Tanh { .. } => Vec::new(),
            Basis::TanhSquared { dirs, .. } => {
                let n = self.input_dim();
                dirs.iter()
                    .enumerate()
                    .filter(|(_, d)| {
                        d.iter().filter(|v| **v != 0.0).count() == 1 && d.amax() == 1.0
                    })
                    .map(|(i, _)| i)
                    .take(n)
                    .collect()
            }
            Basis::Polynomial { exponents } => exponents
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    e.iter().filter(|&&p| p > 0).count() == 1 && e.iter().sum::<u32>() == 2
                })
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// Indices of features that are linear in one coordinate near the
    /// origin, paired with that coordinate.
    pub fn linear_axes(&self) -> Vec<(usize, usize)> {
        match self {
            Basis::Tanh { dirs, .. } => {
                let n = self.input_dim();
                dirs.iter()
                    .take(n)
                    .enumerate()
                    .map(|(i, _)| (i, i))
                    .collect()
            }
            Basis::TanhSquared { .. } => Vec::new(),
            Basis::Polynomial { exponents } => exponents
                .iter()
                .enumerate()
                .filter_map(|(i, e)| {
                    if e.iter().sum::<u32>() == 1 {
                        e.iter().position(|&p| p == 1).map(|j| (i, j))
                    } else {
                        None
                    }
                })
                .collect(),
        }
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::ParameterInvalid(format!(
            "feature scale must be positive, got {scale}"
        )));
    }
    Ok(())
}

fn monomial(x: &Vector, e: &[u32]) -> f64 {
    x.iter().zip(e).map(|(v, &p)| v.powi(p as i32)).product()
}
