//! Linear Gaussian state-space model of order `tau`.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Transition matrices indexed by (time, lag).
///
/// `X_{t+1} = sum_s A_{t+1,s} X_{t+1-s} + B_{t+1}` with `1 <= s <= min(tau, t+1)`.
/// Most models are time-invariant: one matrix per lag.
#[derive(Debug, Clone)]
pub enum Transition {
    /// One `d x d` matrix per lag `s = 1..=tau`, shared across time.
    TimeInvariant(Vec<DMatrix<f64>>),
    /// `table[t-1][s-1]` is the matrix applied at time `t` and lag `s`,
    /// for `t = 1..=T` and `s = 1..=min(tau, t)`.
    TimeVarying(Vec<Vec<DMatrix<f64>>>),
}

/// Linear Gaussian model with `tau`-th order state dynamics.
///
/// The observation convention is offset by one step: `Z_{t+1} = C X_t + W_{t+1}`,
/// so `Z_{t+1}` measures the state *before* the transition to `X_{t+1}`.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    d: usize,
    m: usize,
    horizon: usize,
    tau: usize,
    transition: Transition,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    mu0: DVector<f64>,
    sigma0: DMatrix<f64>,
}

/// Plain-text config for a linear Gaussian model.
///
/// `a` holds one row-major `d x d` matrix per lag (time-invariant form).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModelConfig {
    pub d: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub tau: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub mu0: Vec<f64>,
    #[serde(rename = "Sigma0")]
    pub sigma0: Vec<Vec<f64>>,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Parse(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{what}: ragged or empty rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl LinearGaussianModel {
    /// Build and validate a model.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        m: usize,
        horizon: usize,
        tau: usize,
        transition: Transition,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        mu0: DVector<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::InvalidModel("d and m must be positive".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon T must be positive".into()));
        }
        if tau == 0 || tau > horizon {
            return Err(Error::InvalidModel(format!(
                "model order tau={tau} must satisfy 1 <= tau <= T={horizon}"
            )));
        }
        let check_dd = |a: &DMatrix<f64>, what: &str| -> Result<()> {
            if a.nrows() != d || a.ncols() != d {
                return Err(Error::InvalidModel(format!("{what} must be {d}x{d}")));
            }
            Ok(())
        };
        match &transition {
            Transition::TimeInvariant(mats) => {
                if mats.len() != tau {
                    return Err(Error::InvalidModel(format!(
                        "expected {tau} lag matrices, got {}",
                        mats.len()
                    )));
                }
                for a in mats {
                    check_dd(a, "transition matrix")?;
                }
            }
            Transition::TimeVarying(table) => {
                if table.len() != horizon {
                    return Err(Error::InvalidModel(format!(
                        "time-varying table must have T={horizon} rows, got {}",
                        table.len()
                    )));
                }
                for (t0, row) in table.iter().enumerate() {
                    let t = t0 + 1;
                    if row.len() != tau.min(t) {
                        return Err(Error::InvalidModel(format!(
                            "time {t}: expected {} lag matrices, got {}",
                            tau.min(t),
                            row.len()
                        )));
                    }
                    for a in row {
                        check_dd(a, "transition matrix")?;
                    }
                }
            }
        }
        if c.nrows() != m || c.ncols() != d {
            return Err(Error::InvalidModel(format!("C must be {m}x{d}")));
        }
        check_dd(&q, "Q")?;
        if r.nrows() != m || r.ncols() != m {
            return Err(Error::InvalidModel(format!("R must be {m}x{m}")));
        }
        if mu0.len() != d {
            return Err(Error::InvalidModel(format!("mu0 must have length {d}")));
        }
        check_dd(&sigma0, "Sigma0")?;
        if !linalg::is_symmetric(&q, 1e-9) || !linalg::is_symmetric(&sigma0, 1e-9) {
            return Err(Error::InvalidModel("Q and Sigma0 must be symmetric".into()));
        }
        if !linalg::is_symmetric(&r, 1e-9) {
            return Err(Error::InvalidModel("R must be symmetric".into()));
        }
        // R must be strictly positive definite; Q, Sigma0 only PSD.
        if r.clone().cholesky().is_none() {
            return Err(Error::InvalidModel(
                "R must be strictly positive definite".into(),
            ));
        }
        linalg::psd_sqrt(&q).map_err(|_| Error::InvalidModel("Q must be PSD".into()))?;
        linalg::psd_sqrt(&sigma0).map_err(|_| Error::InvalidModel("Sigma0 must be PSD".into()))?;
        Ok(Self {
            d,
            m,
            horizon,
            tau,
            transition,
            c,
            q,
            r,
            mu0,
            sigma0,
        })
    }

    /// Convenience constructor for time-invariant per-lag transitions.
    #[allow(clippy::too_many_arguments)]
    pub fn time_invariant(
        d: usize,
        m: usize,
        horizon: usize,
        lags: Vec<DMatrix<f64>>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        mu0: DVector<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        let tau = lags.len();
        Self::new(
            d,
            m,
            horizon,
            tau,
            Transition::TimeInvariant(lags),
            c,
            q,
            r,
            mu0,
            sigma0,
        )
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of observations used for the estimate.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Transition matrix `A_{t,s}` applied at time `t` (into `X_t`) for lag `s`.
    ///
    /// Valid for `1 <= t <= T` and `1 <= s <= min(tau, t)`.
    pub fn a(&self, t: usize, s: usize) -> &DMatrix<f64> {
        debug_assert!(t >= 1 && t <= self.horizon);
        debug_assert!(s >= 1 && s <= self.tau.min(t));
        match &self.transition {
            Transition::TimeInvariant(mats) => &mats[s - 1],
            Transition::TimeVarying(table) => &table[t - 1][s - 1],
        }
    }

    pub fn c_mat(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn q_mat(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r_mat(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn mu0(&self) -> &DVector<f64> {
        &self.mu0
    }

    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    /// Parse from the plain-text config format.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: LinearModelConfig =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_config(&cfg)
    }

    pub fn from_config(cfg: &LinearModelConfig) -> Result<Self> {
        let lags = cfg
            .a
            .iter()
            .map(|rows| matrix_from_rows(rows, "A"))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            cfg.d,
            cfg.m,
            cfg.horizon,
            lags.len(),
            Transition::TimeInvariant(lags),
            matrix_from_rows(&cfg.c, "C")?,
            matrix_from_rows(&cfg.q, "Q")?,
            matrix_from_rows(&cfg.r, "R")?,
            DVector::from_row_slice(&cfg.mu0),
            matrix_from_rows(&cfg.sigma0, "Sigma0")?,
        )
    }

    /// Serialize a time-invariant model back to the config format.
    pub fn to_config(&self) -> Result<LinearModelConfig> {
        let lags = match &self.transition {
            Transition::TimeInvariant(mats) => mats.iter().map(matrix_to_rows).collect(),
            Transition::TimeVarying(_) => {
                return Err(Error::InvalidModel(
                    "time-varying models have no flat config form".into(),
                ))
            }
        };
        Ok(LinearModelConfig {
            d: self.d,
            m: self.m,
            horizon: self.horizon,
            tau: self.tau,
            a: lags,
            c: matrix_to_rows(&self.c),
            q: matrix_to_rows(&self.q),
            r: matrix_to_rows(&self.r),
            mu0: self.mu0.iter().copied().collect(),
            sigma0: matrix_to_rows(&self.sigma0),
        })
    }

    /// Well-conditioned random instance used by self-checks and benchmarks.
    ///
    /// Lag matrices decay with the lag so the state stays bounded over the
    /// horizon; `R` is kept away from singularity.
    pub fn random_stable(d: usize, m: usize, tau: usize, horizon: usize, seed: u64) -> Self {
        let mut rng = rng::stream_rng(seed, 0x5a5a);
        let mut lag_mats = Vec::with_capacity(tau);
        for s in 1..=tau {
            let scale = 0.7 / ((s as f64).powi(2) * (d as f64).sqrt() * 1.5);
            let a = DMatrix::from_fn(d, d, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale);
            lag_mats.push(a);
        }
        let c = DMatrix::from_fn(m, d, |_, _| (rng.random::<f64>() * 2.0 - 1.0) / (d as f64).sqrt());
        let q_root = DMatrix::from_fn(d, d, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * 0.3);
        let q = &q_root * q_root.transpose();
        let r_root = DMatrix::from_fn(m, m, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * 0.3);
        let r = &r_root * r_root.transpose() + DMatrix::identity(m, m) * 0.5;
        let mu0 = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let s_root = DMatrix::from_fn(d, d, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * 0.4);
        let sigma0 = &s_root * s_root.transpose();
        Self::time_invariant(d, m, horizon, lag_mats, c, q, r, mu0, sigma0)
            .expect("random model is valid by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_dims() {
        let bad = LinearGaussianModel::time_invariant(
            2,
            1,
            4,
            vec![DMatrix::identity(2, 2)],
            DMatrix::zeros(1, 3), // wrong
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn rejects_singular_r() {
        let bad = LinearGaussianModel::time_invariant(
            1,
            1,
            2,
            vec![DMatrix::identity(1, 1)],
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1), // R must be PD
            DVector::zeros(1),
            DMatrix::identity(1, 1),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let model = LinearGaussianModel::random_stable(2, 1, 2, 5, 11);
        let cfg = model.to_config().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = LinearGaussianModel::from_toml_str(&text).unwrap();
        assert_eq!(back.d(), 2);
        assert_eq!(back.tau(), 2);
        assert!((back.a(1, 1) - model.a(1, 1)).amax() < 1e-15);
        assert!((back.sigma0() - model.sigma0()).amax() < 1e-15);
    }
}
