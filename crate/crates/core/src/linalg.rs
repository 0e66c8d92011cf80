//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalue clip applied when factoring PSD covariances for sampling.
pub const PSD_EIGEN_CLIP: f64 = 1e-12;

/// Relative singular-value cutoff for pseudo-inverses.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Check symmetry up to an absolute tolerance scaled by the matrix norm.
pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    let scale = 1.0 + a.amax();
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[(i, j)] - a[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Symmetric PSD square root with eigenvalue clipping.
///
/// Eigenvalues below `PSD_EIGEN_CLIP * max(1, lambda_max)` are treated as
/// zero so that degenerate covariances (`Q = 0`, rank-deficient `Sigma0`)
/// can be sampled from. Fails if the matrix has a clearly negative
/// eigenvalue.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_symmetric(a, 1e-9) {
        return Err(Error::InvalidModel("covariance is not symmetric".into()));
    }
    let sym = a.clone().symmetric_eigen();
    let lambda_max = sym.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let clip = PSD_EIGEN_CLIP * lambda_max.max(1.0);
    let mut roots = DVector::zeros(a.nrows());
    for (i, &lam) in sym.eigenvalues.iter().enumerate() {
        if lam < -1e-8 * lambda_max.max(1.0) {
            return Err(Error::InvalidModel(format!(
                "covariance has negative eigenvalue {lam:.3e}"
            )));
        }
        roots[i] = if lam > clip { lam.sqrt() } else { 0.0 };
    }
    let mut sqrt = sym.eigenvectors.clone();
    for (j, mut col) in sqrt.column_iter_mut().enumerate() {
        col *= roots[j];
    }
    Ok(&sqrt * sym.eigenvectors.transpose())
}

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pinv(a: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    pinv_floored(a, rel_cutoff, 0.0)
}

/// Pseudo-inverse with both a relative cutoff and an absolute floor on
/// the retained singular values.
pub fn pinv_floored(a: &DMatrix<f64>, rel_cutoff: f64, abs_floor: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = (rel_cutoff * smax).max(abs_floor);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let mut sinv = DMatrix::zeros(vt.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            sinv[(i, i)] = 1.0 / s;
        }
    }
    vt.transpose() * sinv * u.transpose()
}

/// Minimum-norm least-squares solution of `A x = b` via SVD.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rel_cutoff: f64) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_cutoff * smax;
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let proj = u.transpose() * b;
    let mut scaled = DVector::zeros(vt.nrows());
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if s > cutoff && s > 0.0 {
            scaled[i] = proj[i] / s;
        }
    }
    vt.transpose() * scaled
}

/// Project a vector onto the probability simplex by clipping negatives and
/// renormalizing. Falls back to uniform if everything clips to zero.
pub fn simplex_project(v: &mut DVector<f64>) {
    let mut sum = 0.0;
    for x in v.iter_mut() {
        if !x.is_finite() || *x < 0.0 {
            *x = 0.0;
        }
        sum += *x;
    }
    let n = v.len();
    if sum <= 0.0 {
        v.fill(1.0 / n as f64);
    } else {
        *v /= sum;
    }
}
