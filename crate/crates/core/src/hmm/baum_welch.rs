//! Baum-Welch parameter estimation under the offset emission convention.
//!
//! With `Z_{t+1} ~ C(X_t, .)` the chain `S_t := X_{t-1}` satisfies the
//! textbook convention `Z_t ~ C(S_t, .)`, so the standard scaled
//! forward-backward recursions apply verbatim; the fitted model is then
//! directly compatible with [`super::filter::forward_filter`].

use nalgebra::{DMatrix, DVector};
use rand::RngExt;

use crate::error::{Error, Result};
use crate::rng;

use super::model::Hmm;

#[derive(Debug, Clone)]
pub struct BaumWelchOptions {
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Stop a restart early once the relative log-likelihood gain drops
    /// below this threshold (0 disables early stopping).
    pub stop_tol: f64,
}

impl Default for BaumWelchOptions {
    fn default() -> Self {
        Self {
            iterations: 200,
            restarts: 5,
            seed: 0,
            stop_tol: 0.0,
        }
    }
}

/// Fitted model plus the per-iteration log-likelihood trace of the winning
/// restart (evaluated at the parameters *before* each update, so the trace
/// is non-decreasing).
#[derive(Debug, Clone)]
pub struct BaumWelchFit {
    pub hmm: Hmm,
    pub loglik_trace: Vec<f64>,
    pub restart: usize,
}

fn dirichlet_row(n: usize, rng: &mut rand_chacha::ChaCha12Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| -(rng.random::<f64>().max(1e-12)).ln())
        .collect();
    let sum: f64 = v.iter().sum();
    for x in &mut v {
        *x /= sum;
    }
    v
}

struct Accumulators {
    a_num: DMatrix<f64>,
    a_den: DVector<f64>,
    c_num: DMatrix<f64>,
    c_den: DVector<f64>,
    mu_acc: DVector<f64>,
    loglik: f64,
}

/// One E-step over a single path; returns the path log-likelihood.
fn accumulate_path(hmm: &Hmm, z: &[usize], acc: &mut Accumulators) -> Result<()> {
    let d = hmm.d();
    let n = z.len();
    if n == 0 {
        return Ok(());
    }
    let a = hmm.a_mat();
    let c = hmm.c_mat();

    // Scaled forward pass: alpha[t](x) = P(X_{t-1}=x | Z_{1:t}) * scale.
    let mut alpha = vec![DVector::<f64>::zeros(d); n];
    let mut scale = vec![0.0f64; n];
    for x in 0..d {
        alpha[0][x] = hmm.mu()[x] * c[(x, z[0])];
    }
    scale[0] = alpha[0].sum();
    if scale[0] <= 0.0 {
        return Err(Error::ImpossiblePath {
            step: 0,
            symbol: z[0],
        });
    }
    alpha[0] /= scale[0];
    for t in 1..n {
        for x2 in 0..d {
            let mut s = 0.0;
            for x in 0..d {
                s += alpha[t - 1][x] * a[(x, x2)];
            }
            alpha[t][x2] = s * c[(x2, z[t])];
        }
        scale[t] = alpha[t].sum();
        if scale[t] <= 0.0 {
            return Err(Error::ImpossiblePath {
                step: t,
                symbol: z[t],
            });
        }
        alpha[t] /= scale[t];
    }

    // Scaled backward pass.
    let mut beta = vec![DVector::<f64>::zeros(d); n];
    beta[n - 1].fill(1.0);
    for t in (0..n - 1).rev() {
        for x in 0..d {
            let mut s = 0.0;
            for x2 in 0..d {
                s += a[(x, x2)] * c[(x2, z[t + 1])] * beta[t + 1][x2];
            }
            beta[t][x] = s / scale[t + 1];
        }
    }

    // Posterior accumulation.
    for t in 0..n {
        let mut gamma = DVector::<f64>::zeros(d);
        for x in 0..d {
            gamma[x] = alpha[t][x] * beta[t][x];
        }
        let gsum = gamma.sum();
        if gsum > 0.0 {
            gamma /= gsum;
        }
        if t == 0 {
            acc.mu_acc += &gamma;
        }
        for x in 0..d {
            acc.c_num[(x, z[t])] += gamma[x];
            acc.c_den[x] += gamma[x];
            if t + 1 < n {
                acc.a_den[x] += gamma[x];
            }
        }
        if t + 1 < n {
            for x in 0..d {
                if alpha[t][x] == 0.0 {
                    continue;
                }
                for x2 in 0..d {
                    let xi = alpha[t][x] * a[(x, x2)] * c[(x2, z[t + 1])] * beta[t + 1][x2]
                        / scale[t + 1];
                    acc.a_num[(x, x2)] += xi;
                }
            }
        }
    }
    acc.loglik += scale.iter().map(|s| s.ln()).sum::<f64>();
    Ok(())
}

fn em_step(hmm: &Hmm, paths: &[Vec<usize>]) -> Result<(Hmm, f64)> {
    let d = hmm.d();
    let m = hmm.m();
    let mut acc = Accumulators {
        a_num: DMatrix::zeros(d, d),
        a_den: DVector::zeros(d),
        c_num: DMatrix::zeros(d, m + 1),
        c_den: DVector::zeros(d),
        mu_acc: DVector::zeros(d),
        loglik: 0.0,
    };
    for z in paths {
        accumulate_path(hmm, z, &mut acc)?;
    }
    let mut a_new = hmm.a_mat().clone();
    let mut c_new = hmm.c_mat().clone();
    for x in 0..d {
        if acc.a_den[x] > 0.0 {
            for x2 in 0..d {
                a_new[(x, x2)] = acc.a_num[(x, x2)] / acc.a_den[x];
            }
        }
        if acc.c_den[x] > 0.0 {
            for s in 0..=m {
                c_new[(x, s)] = acc.c_num[(x, s)] / acc.c_den[x];
            }
        }
    }
    // Renormalize rows to absorb floating-point drift.
    for x in 0..d {
        let ra: f64 = (0..d).map(|j| a_new[(x, j)]).sum();
        if ra > 0.0 {
            for j in 0..d {
                a_new[(x, j)] /= ra;
            }
        }
        let rc: f64 = (0..=m).map(|s| c_new[(x, s)]).sum();
        if rc > 0.0 {
            for s in 0..=m {
                c_new[(x, s)] /= rc;
            }
        }
    }
    let mut mu_new = acc.mu_acc;
    let msum = mu_new.sum();
    if msum > 0.0 {
        mu_new /= msum;
    } else {
        mu_new = hmm.mu().clone();
    }
    Ok((Hmm::new(a_new, c_new, mu_new)?, acc.loglik))
}

/// Fit an HMM with `d_hat` states to observation paths over `{0..m}`.
///
/// Runs `restarts` independent Dirichlet(1) initializations and returns the
/// best final likelihood. The per-iteration log-likelihood of each restart
/// is non-decreasing up to round-off.
pub fn baum_welch(
    paths: &[Vec<usize>],
    d_hat: usize,
    m: usize,
    opts: &BaumWelchOptions,
) -> Result<BaumWelchFit> {
    if paths.is_empty() || paths.iter().all(|p| p.is_empty()) {
        return Err(Error::InvalidModel("no training data".into()));
    }
    if d_hat == 0 {
        return Err(Error::InvalidModel("d_hat must be at least 1".into()));
    }
    if paths.iter().flatten().any(|&z| z > m) {
        return Err(Error::Dimension(format!(
            "training symbol outside alphabet 0..={m}"
        )));
    }
    let mut best: Option<BaumWelchFit> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = rng::stream_rng(opts.seed, 0xb0 + restart as u64);
        let a_rows: Vec<f64> = (0..d_hat)
            .flat_map(|_| dirichlet_row(d_hat, &mut rng))
            .collect();
        let c_rows: Vec<f64> = (0..d_hat)
            .flat_map(|_| dirichlet_row(m + 1, &mut rng))
            .collect();
        let mu = dirichlet_row(d_hat, &mut rng);
        let mut model = Hmm::new(
            DMatrix::from_row_slice(d_hat, d_hat, &a_rows),
            DMatrix::from_row_slice(d_hat, m + 1, &c_rows),
            DVector::from_row_slice(&mu),
        )?;
        let mut trace: Vec<f64> = Vec::with_capacity(opts.iterations);
        for _ in 0..opts.iterations {
            let (next, loglik) = em_step(&model, paths)?;
            if let Some(prev) = trace.last().copied() {
                if opts.stop_tol > 0.0 && (loglik - prev).abs() < opts.stop_tol * (1.0 + prev.abs())
                {
                    trace.push(loglik);
                    model = next;
                    break;
                }
            }
            trace.push(loglik);
            model = next;
        }
        let final_ll = *trace.last().unwrap_or(&f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some(b) => final_ll > *b.loglik_trace.last().unwrap_or(&f64::NEG_INFINITY),
        };
        if better {
            best = Some(BaumWelchFit {
                hmm: model,
                loglik_trace: trace,
                restart,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}
