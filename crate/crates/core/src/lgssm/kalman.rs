//! Recursive Kalman filter on the stacked (augmented) state.
//!
//! For model order `tau` the filter carries the window
//! `(X_{t-tau+1}, ..., X_t)`; with `tau = T` this becomes the entire
//! history, the covariance grows quadratically in `t`, and the total cost
//! is cubic in `T` -- exactly the profile the dual filter avoids.
//!
//! Offset convention: `Z_{t+1}` measures `X_t`, so each step corrects the
//! newest block with the incoming observation and then predicts the next
//! state.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::dual::GaussianPrediction;
use super::model::LinearGaussianModel;

/// Mean/variance of `f'X_T` given `Z_{1:T}`, plus a resident-float count
/// for the memory profile.
pub(crate) struct FilterEstimate {
    pub mean: f64,
    pub variance: f64,
    pub resident_f64: usize,
}

/// One filtering pass over `z` (length `T`).
///
/// Window blocks are stored oldest-first so the `tau = T` case appends
/// without shifting.
pub(crate) fn filter_estimate(
    model: &LinearGaussianModel,
    z: &[DVector<f64>],
    f: &DVector<f64>,
) -> Result<FilterEstimate> {
    let d = model.d();
    let m = model.m();
    let t_max = model.horizon();
    if z.len() != t_max {
        return Err(Error::Dimension(format!(
            "expected {} observations, got {}",
            t_max,
            z.len()
        )));
    }
    if z.iter().any(|zt| zt.len() != m) {
        return Err(Error::Dimension("observation dimension mismatch".into()));
    }
    if f.len() != d {
        return Err(Error::Dimension("f must be a d-vector".into()));
    }
    let tau = model.tau();
    // One spare block: with tau = T the window grows to T+1 blocks
    // (X_0..X_T) without ever dropping.
    let cap = (tau + 1) * d;
    let sliding = tau < t_max;

    let mut mean = DVector::<f64>::zeros(cap);
    let mut cov = DMatrix::<f64>::zeros(cap, cap);
    let mut a_row = DMatrix::<f64>::zeros(d, cap);
    let mut row_buf = DMatrix::<f64>::zeros(d, cap);
    // Shift scratch is only needed for sliding windows (tau < T).
    let mut scratch = if sliding {
        DMatrix::<f64>::zeros(cap, cap)
    } else {
        DMatrix::<f64>::zeros(0, 0)
    };

    mean.rows_mut(0, d).copy_from(model.mu0());
    cov.view_mut((0, 0), (d, d)).copy_from(model.sigma0());
    let mut width = 1usize; // window width in blocks; newest block index = width-1

    let c = model.c_mat();
    let r = model.r_mat();

    for t in 0..t_max {
        let n = width * d;
        let top = (width - 1) * d;
        // --- correct X_t with Z_{t+1} ---
        let p_tt = cov.view((top, top), (d, d));
        let s = c * p_tt * c.transpose() + r;
        let s_chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
        let pc = cov.view((0, top), (n, d)) * c.transpose(); // n x m
        let gain = s_chol.solve(&pc.transpose()).transpose(); // n x m
        let innovation = &z[t] - c * mean.rows(top, d);
        {
            let mut mv = mean.rows_mut(0, n);
            mv.gemv(1.0, &gain, &innovation, 1.0);
        }
        let ks = &gain * &s;
        {
            let mut cv = cov.view_mut((0, 0), (n, n));
            cv.gemm(-1.0, &ks, &gain.transpose(), 1.0);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = avg;
                cov[(j, i)] = avg;
            }
        }

        // --- predict X_{t+1} = sum_s A_{t+1,s} X_{t+1-s} + B ---
        // Window position p holds X_{base+p}; lag of position p is width-p.
        let lags = tau.min(t + 1);
        debug_assert_eq!(lags, width);
        a_row.view_mut((0, 0), (d, n)).fill(0.0);
        for p in 0..width {
            let s_lag = width - p;
            if s_lag <= lags {
                a_row
                    .view_mut((0, p * d), (d, d))
                    .copy_from(model.a(t + 1, s_lag));
            }
        }
        let mut new_top_mean = DVector::<f64>::zeros(d);
        new_top_mean.gemv(1.0, &a_row.view((0, 0), (d, n)), &mean.rows(0, n), 0.0);
        {
            let mut rb = row_buf.view_mut((0, 0), (d, n));
            rb.gemm(1.0, &a_row.view((0, 0), (d, n)), &cov.view((0, 0), (n, n)), 0.0);
        }
        let mut new_top_var = model.q_mat().clone();
        new_top_var.gemm(
            1.0,
            &row_buf.view((0, 0), (d, n)),
            &a_row.view((0, 0), (d, n)).transpose(),
            1.0,
        );

        let drop_oldest = width == tau && sliding;
        let keep = if drop_oldest { width - 1 } else { width };
        let nk = keep * d;
        if drop_oldest {
            // Shift mean/cov/cross-row up by one block via scratch.
            let shifted = mean.rows(d, nk).into_owned();
            mean.rows_mut(0, nk).copy_from(&shifted);
            scratch
                .view_mut((0, 0), (nk, nk))
                .copy_from(&cov.view((d, d), (nk, nk)));
            cov.view_mut((0, 0), (nk, nk))
                .copy_from(&scratch.view((0, 0), (nk, nk)));
            let rshift = row_buf.view((0, d), (d, nk)).into_owned();
            row_buf.view_mut((0, 0), (d, nk)).copy_from(&rshift);
        }
        mean.rows_mut(nk, d).copy_from(&new_top_mean);
        cov.view_mut((nk, 0), (d, nk))
            .copy_from(&row_buf.view((0, 0), (d, nk)));
        cov.view_mut((0, nk), (nk, d))
            .copy_from(&row_buf.view((0, 0), (d, nk)).transpose());
        cov.view_mut((nk, nk), (d, d)).copy_from(&new_top_var);
        width = keep + 1;
    }

    let top = (width - 1) * d;
    let mean_f = f.dot(&mean.rows(top, d));
    let var_f = (f.transpose() * cov.view((top, top), (d, d)) * f)[(0, 0)];
    let resident = cap * cap + 2 * cap * d + cap + if sliding { cap * cap } else { 0 };
    Ok(FilterEstimate {
        mean: mean_f,
        variance: var_f.max(0.0),
        resident_f64: resident,
    })
}

/// Exact conditional mean/variance of `f'X_T` given `Z_{1:T}`, with the
/// affine observation weights extracted by probing (the filter mean is an
/// affine function of the stacked observations).
pub fn kalman_augmented(
    model: &LinearGaussianModel,
    z: &[DVector<f64>],
    f: &DVector<f64>,
) -> Result<GaussianPrediction> {
    let base = filter_estimate(model, z, f)?;
    let t_max = model.horizon();
    let m = model.m();
    let zero_path: Vec<DVector<f64>> = (0..t_max).map(|_| DVector::zeros(m)).collect();
    let origin = filter_estimate(model, &zero_path, f)?;
    let mut weights = Vec::with_capacity(t_max);
    let mut probe = zero_path;
    for t in 0..t_max {
        let mut w = DVector::zeros(m);
        for i in 0..m {
            probe[t][i] = 1.0;
            let est = filter_estimate(model, &probe, f)?;
            probe[t][i] = 0.0;
            w[i] = est.mean - origin.mean;
        }
        weights.push(w);
    }
    Ok(GaussianPrediction {
        mean: base.mean,
        variance: base.variance,
        weights,
    })
}
