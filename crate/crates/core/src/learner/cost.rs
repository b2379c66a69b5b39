use crate::barrier::RelaxedBarrier;
use crate::{Error, Matrix, Result, Vector};

/// Quadratic regulation cost `||x||_Q^2 + ||u||_R^2` reshaped with barrier
/// penalties of weight `mu`, discounted by `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: Matrix,
    r: Matrix,
    mu: f64,
    gamma: f64,
}

fn check_pd(m: &Matrix, name: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::NotPositiveDefinite(name));
    }
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::NotPositiveDefinite(name));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(name));
    }
    Ok(())
}

impl CostSpec {
    /// `mu = 0` is accepted so the pure quadratic problem can be posed.
    pub fn new(q: Matrix, r: Matrix, mu: f64, gamma: f64) -> Result<Self> {
        check_pd(&q, "Q")?;
        check_pd(&r, "R")?;
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::ParameterInvalid(format!(
                "barrier weight must be nonnegative, got {mu}"
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::ParameterInvalid(format!(
                "discount must lie in (0, 1], got {gamma}"
            )));
        }
        Ok(Self { q, r, mu, gamma })
    }

    /// `Q = q I`, `R = r I`.
    pub fn diagonal(n: usize, m: usize, q: f64, r: f64, mu: f64, gamma: f64) -> Result<Self> {
        Self::new(
            Matrix::identity(n, n) * q,
            Matrix::identity(m, m) * r,
            mu,
            gamma,
        )
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    /// Plain regulation cost `r(x, u)`.
    pub fn quadratic(&self, x: &Vector, u: &Vector) -> f64 {
        (x.transpose() * &self.q * x)[0] + (u.transpose() * &self.r * u)[0]
    }

    /// Weight matrix `diag(Q, mu)` of the barrier-extended state.
    pub fn extended_q(&self) -> Matrix {
        let n = self.n();
        let mut qy = Matrix::zeros(n + 1, n + 1);
        qy.view_mut((0, 0), (n, n)).copy_from(&self.q);
        qy[(n, n)] = self.mu;
        qy
    }
}

/// Reshaped stage cost `r(x, u) + mu B(u) + mu B(x)`. A missing barrier
/// contributes nothing.
pub fn stage_cost(
    c: &CostSpec,
    bx: Option<&RelaxedBarrier>,
    bu: Option<&RelaxedBarrier>,
    x: &Vector,
    u: &Vector,
) -> f64 {
    let mut r = c.quadratic(x, u);
    if let Some(b) = bu {
        r += c.mu * b.value(u);
    }
    if let Some(b) = bx {
        r += c.mu * b.value(x);
    }
    r
}
