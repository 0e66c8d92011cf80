//! Exact nonlinear filter with the offset convention: the incoming symbol
//! `Z_{t+1}` corrects the posterior of `X_t`, then the transition predicts
//! `X_{t+1}`.

use nalgebra::DVector;

use crate::error::{Error, Result};

use super::model::Hmm;

/// Normalization floor below which a path is declared impossible.
pub const IMPOSSIBLE_FLOOR: f64 = 0.0;

/// Filter distributions `pi_1..pi_T` and the exact log-likelihood of the
/// observed path.
#[derive(Debug, Clone)]
pub struct FilterPath {
    /// `pi[t]` is the posterior of `X_{t+1}` given `Z_{1:t+1}`.
    pub pi: Vec<DVector<f64>>,
    pub loglik: f64,
}

/// One filter step: correct `pi_t` with symbol `z`, then predict.
/// Returns the updated distribution and the predictive probability of `z`.
pub fn filter_step(hmm: &Hmm, pi: &DVector<f64>, z: usize) -> Result<(DVector<f64>, f64)> {
    if z > hmm.m() {
        return Err(Error::Dimension(format!(
            "symbol {z} outside alphabet 0..={}",
            hmm.m()
        )));
    }
    let d = hmm.d();
    let mut beta = DVector::zeros(d);
    let mut norm = 0.0;
    for x in 0..d {
        let w = pi[x] * hmm.c_mat()[(x, z)];
        beta[x] = w;
        norm += w;
    }
    if norm <= IMPOSSIBLE_FLOOR {
        return Err(Error::ImpossiblePath { step: 0, symbol: z });
    }
    beta /= norm;
    let mut next = DVector::zeros(d);
    for x in 0..d {
        if beta[x] == 0.0 {
            continue;
        }
        for x2 in 0..d {
            next[x2] += beta[x] * hmm.a_mat()[(x, x2)];
        }
    }
    Ok((next, norm))
}

/// Run the filter over a full observation path.
pub fn forward_filter(hmm: &Hmm, z: &[usize]) -> Result<FilterPath> {
    let mut pi = hmm.mu().clone();
    let mut out = Vec::with_capacity(z.len());
    let mut loglik = 0.0;
    for (t, &sym) in z.iter().enumerate() {
        let (next, norm) = filter_step(hmm, &pi, sym).map_err(|e| match e {
            Error::ImpossiblePath { symbol, .. } => Error::ImpossiblePath { step: t, symbol },
            other => other,
        })?;
        loglik += norm.ln();
        pi = next;
        out.push(pi.clone());
    }
    Ok(FilterPath { pi: out, loglik })
}

/// Next-token distribution `P(Z_{t+1} = z | Z_{1:t}) = sum_x pi(x) C(x,z)`.
pub fn next_token(hmm: &Hmm, pi: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(hmm.m() + 1);
    for z in 0..=hmm.m() {
        let mut p = 0.0;
        for x in 0..hmm.d() {
            p += pi[x] * hmm.c_mat()[(x, z)];
        }
        out[z] = p;
    }
    out
}
