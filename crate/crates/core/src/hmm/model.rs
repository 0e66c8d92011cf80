//! Hidden Markov model with the offset emission convention
//! `Z_{t+1} ~ C(X_t, .)`.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const ROW_SUM_TOL: f64 = 1e-12;

/// HMM over states `{0..d-1}` and observations `{0..m}`.
#[derive(Debug, Clone)]
pub struct Hmm {
    d: usize,
    m: usize,
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    mu: DVector<f64>,
}

/// Two-cycle benchmark chain: state `d` branches with equal probability
/// into a long cycle (through state 1) or a short cycle (through state
/// `d-q`); states 1 and `d` emit symbol 1, all others emit 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TwoCycleSpec {
    /// Long-cycle length (also the number of states), `d >= 4`.
    pub d: usize,
    /// Zeros in the short cycle, `1 <= q < d-2`.
    pub q: usize,
}

/// Perturbation target for [`perturb`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbTarget {
    Transition,
    Emission,
}

/// Plain-text storage format (fields `d`, `m`, `A`, `C`, `mu`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmmConfig {
    pub d: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
}

fn check_stochastic_rows(mat: &DMatrix<f64>, what: &str) -> Result<()> {
    for i in 0..mat.nrows() {
        let mut sum = 0.0;
        for j in 0..mat.ncols() {
            let v = mat[(i, j)];
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "{what} row {i} has invalid entry {v}"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidModel(format!(
                "{what} row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

impl Hmm {
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, mu: DVector<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(Error::InvalidModel("A must be square and non-empty".into()));
        }
        if c.nrows() != d || c.ncols() < 2 {
            return Err(Error::InvalidModel(
                "C must have d rows and at least two columns".into(),
            ));
        }
        if mu.len() != d {
            return Err(Error::InvalidModel("mu must have length d".into()));
        }
        check_stochastic_rows(&a, "A")?;
        check_stochastic_rows(&c, "C")?;
        let mu_mat = DMatrix::from_row_slice(1, d, mu.as_slice());
        check_stochastic_rows(&mu_mat, "mu")?;
        let m = c.ncols() - 1;
        Ok(Self { d, m, a, c, mu })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Observation alphabet parameter: symbols are `{0..m}`.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn a_mat(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c_mat(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: HmmConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_config(&cfg)
    }

    pub fn from_config(cfg: &HmmConfig) -> Result<Self> {
        if cfg.a.len() != cfg.d || cfg.c.len() != cfg.d {
            return Err(Error::Parse("A and C must each have d rows".into()));
        }
        if cfg.a.iter().any(|r| r.len() != cfg.d) {
            return Err(Error::Parse("A rows must have length d".into()));
        }
        if cfg.c.iter().any(|r| r.len() != cfg.m + 1) {
            return Err(Error::Parse("C rows must have length m+1".into()));
        }
        let a_flat: Vec<f64> = cfg.a.iter().flatten().copied().collect();
        let c_flat: Vec<f64> = cfg.c.iter().flatten().copied().collect();
        Self::new(
            DMatrix::from_row_slice(cfg.d, cfg.d, &a_flat),
            DMatrix::from_row_slice(cfg.d, cfg.m + 1, &c_flat),
            DVector::from_row_slice(&cfg.mu),
        )
    }

    pub fn to_config(&self) -> HmmConfig {
        HmmConfig {
            d: self.d,
            m: self.m,
            a: (0..self.d)
                .map(|i| (0..self.d).map(|j| self.a[(i, j)]).collect())
                .collect(),
            c: (0..self.d)
                .map(|i| (0..=self.m).map(|j| self.c[(i, j)]).collect())
                .collect(),
            mu: self.mu.iter().copied().collect(),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_config()).expect("hmm config serializes")
    }

    /// Random full-support model; rows are Dirichlet(1) draws floored away
    /// from zero so every observation path has positive probability.
    pub fn random_full_support(d: usize, m: usize, seed: u64) -> Self {
        let mut rng = rng::stream_rng(seed, 0x44);
        let floor = 0.05;
        let row = |n: usize, rng: &mut rand_chacha::ChaCha12Rng| -> Vec<f64> {
            let mut v: Vec<f64> = (0..n).map(|_| -(rng.random::<f64>().max(1e-12)).ln()).collect();
            let sum: f64 = v.iter().sum();
            for x in &mut v {
                *x = (*x / sum) * (1.0 - floor * n as f64) + floor;
            }
            v
        };
        let a_rows: Vec<f64> = (0..d).flat_map(|_| row(d, &mut rng)).collect();
        let c_rows: Vec<f64> = (0..d).flat_map(|_| row(m + 1, &mut rng)).collect();
        let mu = row(d, &mut rng);
        Self::new(
            DMatrix::from_row_slice(d, d, &a_rows),
            DMatrix::from_row_slice(d, m + 1, &c_rows),
            DVector::from_row_slice(&mu),
        )
        .expect("random hmm valid")
    }
}

/// Build the two-cycle HMM. States are 0-indexed internally: state `x`
/// moves to `x+1`, the last state branches to state 0 (long cycle) or to
/// state `d-q-1` (short cycle); states 0 and `d-1` emit 1. The initial
/// distribution is a point mass on the last state so sequences begin at a
/// cycle start.
pub fn two_cycle(spec: &TwoCycleSpec) -> Result<Hmm> {
    let d = spec.d;
    let q = spec.q;
    if d < 4 {
        return Err(Error::InvalidModel("two-cycle needs d >= 4".into()));
    }
    if q < 1 || q >= d - 2 {
        return Err(Error::InvalidModel(format!(
            "two-cycle needs 1 <= q < d-2, got q={q}, d={d}"
        )));
    }
    let mut a = DMatrix::zeros(d, d);
    for x in 0..d - 1 {
        a[(x, x + 1)] = 1.0;
    }
    a[(d - 1, 0)] = 0.5;
    a[(d - 1, d - 1 - q)] = 0.5;
    let mut c = DMatrix::zeros(d, 2);
    for x in 0..d {
        if x == 0 || x == d - 1 {
            c[(x, 1)] = 1.0;
        } else {
            c[(x, 0)] = 1.0;
        }
    }
    let mut mu = DVector::zeros(d);
    mu[d - 1] = 1.0;
    Hmm::new(a, c, mu)
}

/// Convex-combination perturbation toward the uniform distribution:
/// `A <- (1-eps) A + eps/d` or `C <- (1-eps) C + eps/(m+1)`.
pub fn perturb(hmm: &Hmm, eps: f64, target: PerturbTarget) -> Result<Hmm> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidModel(format!(
            "perturbation level must lie in [0,1], got {eps}"
        )));
    }
    let mut a = hmm.a.clone();
    let mut c = hmm.c.clone();
    match target {
        PerturbTarget::Transition => {
            let unif = eps / hmm.d as f64;
            for v in a.iter_mut() {
                *v = (1.0 - eps) * *v + unif;
            }
        }
        PerturbTarget::Emission => {
            let unif = eps / (hmm.m + 1) as f64;
            for v in c.iter_mut() {
                *v = (1.0 - eps) * *v + unif;
            }
        }
    }
    Hmm::new(a, c, hmm.mu.clone())
}

/// Cycle kinds recognized by [`parse_two_cycle_observations`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleKind {
    Long,
    Short,
}

/// Parse an observation sequence from the two-cycle model into its cycle
/// decomposition, verifying that it is exactly a concatenation of
/// `z_long = 1 1 0^{d-2}` and `z_short = 1 0^q` patterns (the final cycle
/// may be truncated).
pub fn parse_two_cycle_observations(z: &[usize], spec: &TwoCycleSpec) -> Result<Vec<CycleKind>> {
    let d = spec.d;
    let q = spec.q;
    let mut kinds = Vec::new();
    let mut i = 0usize;
    while i < z.len() {
        if z[i] != 1 {
            return Err(Error::ImpossiblePath {
                step: i,
                symbol: z[i],
            });
        }
        // Decide long vs short from the symbol after the leading 1.
        if i + 1 >= z.len() {
            break; // truncated at a cycle boundary
        }
        let (kind, zeros) = if z[i + 1] == 1 {
            (CycleKind::Long, d - 2)
        } else {
            (CycleKind::Short, q)
        };
        let body_start = if kind == CycleKind::Long { i + 2 } else { i + 1 };
        for j in 0..zeros {
            let pos = body_start + j;
            if pos >= z.len() {
                return Ok(kinds); // truncated mid-cycle
            }
            if z[pos] != 0 {
                return Err(Error::ImpossiblePath {
                    step: pos,
                    symbol: z[pos],
                });
            }
        }
        kinds.push(kind);
        i = body_start + zeros;
    }
    Ok(kinds)
}
