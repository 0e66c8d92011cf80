//! Running-cost parameters of the dual control problem.

use nalgebra::{DMatrix, DVector};

use crate::hmm::Hmm;

/// Per-state cost data: `c(x) = E[e(Z)|x]` and `R(x) = Cov(e(Z)|x)`.
#[derive(Debug, Clone)]
pub struct CostParams {
    /// `c(x)(i) = C(x,i) - C(x,0)` for `i = 1..m`.
    pub c: Vec<DVector<f64>>,
    /// `R(x) = diag(c(x)) + C(x,0)(I + 11') - c(x) c(x)'`.
    pub r: Vec<DMatrix<f64>>,
}

impl CostParams {
    /// Stack the `c(x)` rows into the `d x m` matrix used by the path
    /// backward recursion `Y_t = A Y_{t+1} + Ctilde U_t`.
    pub fn c_stack(&self) -> DMatrix<f64> {
        let d = self.c.len();
        let m = self.c[0].len();
        DMatrix::from_fn(d, m, |x, i| self.c[x][i])
    }
}

/// Compute the cost parameters of a model.
pub fn cost_params(hmm: &Hmm) -> CostParams {
    let d = hmm.d();
    let m = hmm.m();
    let mut cs = Vec::with_capacity(d);
    let mut rs = Vec::with_capacity(d);
    for x in 0..d {
        let c0 = hmm.c_mat()[(x, 0)];
        let cx = DVector::from_fn(m, |i, _| hmm.c_mat()[(x, i + 1)] - c0);
        let mut rx = DMatrix::from_fn(m, m, |i, j| {
            let diag = if i == j { cx[i] } else { 0.0 };
            let ones = if i == j { 2.0 * c0 } else { c0 };
            diag + ones - cx[i] * cx[j]
        });
        // Symmetrize round-off.
        for i in 0..m {
            for j in (i + 1)..m {
                let avg = 0.5 * (rx[(i, j)] + rx[(j, i)]);
                rx[(i, j)] = avg;
                rx[(j, i)] = avg;
            }
        }
        cs.push(cx);
        rs.push(rx);
    }
    CostParams { c: cs, r: rs }
}

/// Carre-du-champ operator: `(Gamma f)(x) = sum_y A(x,y) f(y)^2 - (Af)(x)^2`,
/// the conditional variance of `f(X_{t+1})` given `X_t = x`.
pub fn gamma(hmm: &Hmm, f: &DVector<f64>) -> DVector<f64> {
    let d = hmm.d();
    let mut out = DVector::zeros(d);
    for x in 0..d {
        let mut mean = 0.0;
        let mut second = 0.0;
        for y in 0..d {
            let a = hmm.a_mat()[(x, y)];
            mean += a * f[y];
            second += a * f[y] * f[y];
        }
        out[x] = (second - mean * mean).max(0.0);
    }
    out
}
