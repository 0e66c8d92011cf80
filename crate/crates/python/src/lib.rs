//! Python bindings for the dual-filter inference engines.
//!
//! Exposes the linear Gaussian model with its dual/Kalman solvers and the
//! HMM with filtering, the tree oracles, and the layer iterations. Arrays
//! cross the boundary as plain nested lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use nalgebra::{DMatrix, DVector};

use dualfilter_core::dual_hmm as dh;
use dualfilter_core::hmm;
use dualfilter_core::lgssm;

fn err<T>(e: dualfilter_core::Error) -> PyResult<T> {
    Err(PyValueError::new_err(e.to_string()))
}

fn vec_to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

fn rows_to_dmatrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(PyValueError::new_err(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn dvector_to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn dmatrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Linear Gaussian state-space model with `tau`-th order dynamics.
#[pyclass(name = "LinearGaussianModel")]
struct PyLinearGaussianModel {
    inner: lgssm::LinearGaussianModel,
}

#[pymethods]
impl PyLinearGaussianModel {
    /// Build a time-invariant model; `a_lags` holds one `d x d` matrix per
    /// lag.
    #[new]
    fn new(
        horizon: usize,
        a_lags: Vec<Vec<Vec<f64>>>,
        c: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        mu0: Vec<f64>,
        sigma0: Vec<Vec<f64>>,
    ) -> PyResult<Self> {
        let lags = a_lags
            .iter()
            .map(|m| rows_to_dmatrix(m, "A"))
            .collect::<PyResult<Vec<_>>>()?;
        let d = mu0.len();
        let c = rows_to_dmatrix(&c, "C")?;
        let m = c.nrows();
        match lgssm::LinearGaussianModel::new(
            d,
            m,
            horizon,
            lags.len(),
            lgssm::Transition::TimeInvariant(lags),
            c,
            rows_to_dmatrix(&q, "Q")?,
            rows_to_dmatrix(&r, "R")?,
            vec_to_dvector(&mu0),
            rows_to_dmatrix(&sigma0, "Sigma0")?,
        ) {
            Ok(inner) => Ok(Self { inner }),
            Err(e) => err(e),
        }
    }

    /// Parse from the plain-text config format.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        match lgssm::LinearGaussianModel::from_toml_str(text) {
            Ok(inner) => Ok(Self { inner }),
            Err(e) => err(e),
        }
    }

    /// Well-conditioned random instance for experimentation.
    #[staticmethod]
    fn random_stable(d: usize, m: usize, tau: usize, horizon: usize, seed: u64) -> Self {
        Self {
            inner: lgssm::LinearGaussianModel::random_stable(d, m, tau, horizon, seed),
        }
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn tau(&self) -> usize {
        self.inner.tau()
    }

    /// Simulate; returns `(x, z)` with `x[t]` the state and `z[t]` the
    /// observation emitted by it.
    fn simulate(&self, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        match lgssm::simulate(&self.inner, seed) {
            Ok(traj) => Ok((
                traj.x.iter().map(dvector_to_vec).collect(),
                traj.z.iter().map(dvector_to_vec).collect(),
            )),
            Err(e) => err(e),
        }
    }

    /// Exact posterior mean/variance of `f'X_T` plus the affine
    /// observation weights, via the augmented Kalman filter.
    fn kalman_augmented(
        &self,
        z: Vec<Vec<f64>>,
        f: Vec<f64>,
    ) -> PyResult<(f64, f64, Vec<Vec<f64>>)> {
        let z: Vec<DVector<f64>> = z.iter().map(|v| vec_to_dvector(v)).collect();
        match lgssm::kalman_augmented(&self.inner, &z, &vec_to_dvector(&f)) {
            Ok(pred) => Ok((
                pred.mean,
                pred.variance,
                pred.weights.iter().map(dvector_to_vec).collect(),
            )),
            Err(e) => err(e),
        }
    }

    /// Solve the dual problem; `method` is `"direct"` or `"fixed_point"`.
    /// Returns `(u, y, eta, residual, iterations)`.
    #[pyo3(signature = (f, method="direct", tol=1e-10, max_iter=1000, damping=0.5))]
    fn dual_solve(
        &self,
        f: Vec<f64>,
        method: &str,
        tol: f64,
        max_iter: usize,
        damping: f64,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, f64, usize)> {
        let method = match method {
            "direct" => lgssm::SolveMethod::Direct,
            "fixed_point" => lgssm::SolveMethod::FixedPoint {
                tol,
                max_iter,
                damping,
            },
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown method '{other}' (expected direct|fixed_point)"
                )))
            }
        };
        match lgssm::dual_filter_solve(&self.inner, &vec_to_dvector(&f), method) {
            Ok(sol) => Ok((
                sol.u.iter().map(dvector_to_vec).collect(),
                sol.y.iter().map(dvector_to_vec).collect(),
                sol.eta.iter().map(dvector_to_vec).collect(),
                sol.residual,
                sol.iterations,
            )),
            Err(e) => err(e),
        }
    }

    /// Dual-filter prediction of `f'X_T`: `(mean, variance, weights)`.
    fn predict(&self, f: Vec<f64>, z: Vec<Vec<f64>>) -> PyResult<(f64, f64, Vec<Vec<f64>>)> {
        let sol = match lgssm::dual_filter_solve(
            &self.inner,
            &vec_to_dvector(&f),
            lgssm::SolveMethod::Direct,
        ) {
            Ok(sol) => sol,
            Err(e) => return err(e),
        };
        let z: Vec<DVector<f64>> = z.iter().map(|v| vec_to_dvector(v)).collect();
        match lgssm::predict_linear(&self.inner, &sol, &z) {
            Ok(pred) => Ok((
                pred.mean,
                pred.variance,
                pred.weights.iter().map(dvector_to_vec).collect(),
            )),
            Err(e) => err(e),
        }
    }

    /// Optimal control objective for an explicit control sequence.
    fn dual_cost(&self, u: Vec<Vec<f64>>, f: Vec<f64>) -> PyResult<f64> {
        let u: Vec<DVector<f64>> = u.iter().map(|v| vec_to_dvector(v)).collect();
        match lgssm::dual_cost(&self.inner, &u, &vec_to_dvector(&f)) {
            Ok(v) => Ok(v),
            Err(e) => err(e),
        }
    }

    /// Exact estimator MSE via moment propagation (independent of the
    /// pairing identity).
    fn mse_exact(&self, u: Vec<Vec<f64>>, f: Vec<f64>) -> PyResult<f64> {
        let u: Vec<DVector<f64>> = u.iter().map(|v| vec_to_dvector(v)).collect();
        match lgssm::mse_exact(&self.inner, &u, &vec_to_dvector(&f)) {
            Ok(v) => Ok(v),
            Err(e) => err(e),
        }
    }
}

/// Hidden Markov model with the offset emission convention.
#[pyclass(name = "Hmm", skip_from_py_object)]
#[derive(Clone)]
struct PyHmm {
    inner: hmm::Hmm,
}

#[pymethods]
impl PyHmm {
    #[new]
    fn new(a: Vec<Vec<f64>>, c: Vec<Vec<f64>>, mu: Vec<f64>) -> PyResult<Self> {
        match hmm::Hmm::new(
            rows_to_dmatrix(&a, "A")?,
            rows_to_dmatrix(&c, "C")?,
            vec_to_dvector(&mu),
        ) {
            Ok(inner) => Ok(Self { inner }),
            Err(e) => err(e),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        match hmm::Hmm::from_toml_str(text) {
            Ok(inner) => Ok(Self { inner }),
            Err(e) => err(e),
        }
    }

    /// Two-cycle benchmark chain.
    #[staticmethod]
    fn two_cycle(d: usize, q: usize) -> PyResult<Self> {
        match hmm::two_cycle(&hmm::TwoCycleSpec { d, q }) {
            Ok(inner) => Ok(Self { inner }),
            Err(e) => err(e),
        }
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        dmatrix_to_rows(self.inner.a_mat())
    }

    #[getter]
    fn c(&self) -> Vec<Vec<f64>> {
        dmatrix_to_rows(self.inner.c_mat())
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        dvector_to_vec(self.inner.mu())
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    /// Mix parameters toward uniform; `target` is `"transition"` or
    /// `"emission"`.
    fn perturb(&self, eps: f64, target: &str) -> PyResult<Self> {
        let target = match target {
            "transition" => hmm::PerturbTarget::Transition,
            "emission" => hmm::PerturbTarget::Emission,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown target '{other}' (expected transition|emission)"
                )))
            }
        };
        match hmm::perturb(&self.inner, eps, target) {
            Ok(inner) => Ok(Self { inner }),
            Err(e) => err(e),
        }
    }

    /// Simulate `(x, z)`; `z[t]` is emitted by `x[t]`.
    fn simulate(&self, horizon: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>)> {
        match hmm::simulate_hmm(&self.inner, horizon, seed) {
            Ok(v) => Ok(v),
            Err(e) => err(e),
        }
    }

    /// Exact filter distributions and path log-likelihood.
    fn forward_filter(&self, z: Vec<usize>) -> PyResult<(Vec<Vec<f64>>, f64)> {
        match hmm::forward_filter(&self.inner, &z) {
            Ok(path) => Ok((path.pi.iter().map(dvector_to_vec).collect(), path.loglik)),
            Err(e) => err(e),
        }
    }

    /// Next-token distribution from a state posterior.
    fn next_token(&self, pi: Vec<f64>) -> Vec<f64> {
        dvector_to_vec(&hmm::next_token(&self.inner, &vec_to_dvector(&pi)))
    }

    /// Cross-entropy of this model's filter predictor on data from
    /// `truth`, in nats per token.
    #[pyo3(signature = (truth, paths=200, length=64, burn_in=0, seed=0))]
    fn filter_loss(
        &self,
        truth: &PyHmm,
        paths: usize,
        length: usize,
        burn_in: usize,
        seed: u64,
    ) -> PyResult<f64> {
        let mode = hmm::EvalMode::MonteCarlo {
            paths,
            len: length,
            burn_in,
            seed,
            rao_blackwell: true,
        };
        let mut predictor = hmm::FilterPredictor::new(self.inner.clone());
        match hmm::cross_entropy(&truth.inner, &mut predictor, &mode) {
            Ok(rep) => Ok(rep.loss),
            Err(e) => err(e),
        }
    }

    /// Converge the path-local layer iteration; returns
    /// `(rho, weight_magnitudes, layers)`.
    #[pyo3(signature = (z, max_layers=100, tol=1e-8, damping=0.5))]
    fn dual_filter_path(
        &self,
        z: Vec<usize>,
        max_layers: usize,
        tol: f64,
        damping: f64,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, usize)> {
        let opts = dh::LayerOptions {
            max_layers,
            tol,
            damping,
            ..Default::default()
        };
        match dh::iterate_layer_path(&self.inner, &z, None, &opts) {
            Ok(converged) => {
                let heatmap = dh::heatmap_from_converged(&converged);
                Ok((
                    converged.rho.iter().map(dvector_to_vec).collect(),
                    heatmap.magnitudes,
                    converged.layers,
                ))
            }
            Err(e) => err(e),
        }
    }

    /// Exact tree oracle: representation `(constant, u_along_path)` of
    /// `pi_T(f)` for enumerable horizons.
    fn oracle_weights(&self, z: Vec<usize>, f: Vec<f64>) -> PyResult<(f64, Vec<Vec<f64>>)> {
        let tree = match dh::ObservationTree::build(&self.inner, z.len()) {
            Ok(t) => t,
            Err(e) => return err(e),
        };
        match dh::oracle_weights(&tree, &vec_to_dvector(&f)) {
            Ok((constant, u)) => {
                let mut along = Vec::with_capacity(z.len());
                let mut node = 0usize;
                for (t, &sym) in z.iter().enumerate() {
                    along.push(dvector_to_vec(u.get(t, node)));
                    node = tree.child(node, sym);
                }
                Ok((constant, along))
            }
            Err(e) => err(e),
        }
    }
}

/// Fit an HMM with Baum-Welch; returns `(model, loglik_trace)`.
#[pyfunction]
#[pyo3(signature = (paths, d_hat, m, iterations=200, restarts=5, seed=0))]
fn baum_welch(
    paths: Vec<Vec<usize>>,
    d_hat: usize,
    m: usize,
    iterations: usize,
    restarts: usize,
    seed: u64,
) -> PyResult<(PyHmm, Vec<f64>)> {
    match hmm::baum_welch(
        &paths,
        d_hat,
        m,
        &hmm::BaumWelchOptions {
            iterations,
            restarts,
            seed,
            stop_tol: 1e-9,
        },
    ) {
        Ok(fit) => Ok((PyHmm { inner: fit.hmm }, fit.loglik_trace)),
        Err(e) => err(e),
    }
}

/// Signed one-hot observation encoding.
#[pyfunction]
fn e_encode(z: usize, m: usize) -> PyResult<Vec<f64>> {
    match dh::e_encode(z, m) {
        Ok(v) => Ok(dvector_to_vec(&v)),
        Err(e) => err(e),
    }
}

/// Unique decomposition `s(z) = s_bar + s_tilde' e(z)`.
#[pyfunction]
fn decompose(s: Vec<f64>) -> (f64, Vec<f64>) {
    let (s_bar, s_tilde) = dh::decompose(&s);
    (s_bar, dvector_to_vec(&s_tilde))
}

#[pymodule]
fn dualfilter(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLinearGaussianModel>()?;
    m.add_class::<PyHmm>()?;
    m.add_function(wrap_pyfunction!(baum_welch, m)?)?;
    m.add_function(wrap_pyfunction!(e_encode, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    Ok(())
}
