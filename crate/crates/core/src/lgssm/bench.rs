//! Runtime/memory benchmark: dual filter vs. recursive augmented Kalman.
//!
//! Runs fully non-Markovian instances (`tau = T`) over a grid of state
//! dimensions and horizons, reporting wall-clock medians per method plus a
//! log-log slope fit in `T`. Timings use adaptive inner repetition counts
//! so microsecond-scale sweeps are measured above timer resolution.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::rng;

use super::kalman::filter_estimate;
use super::model::LinearGaussianModel;
use super::sim::simulate;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub dims: Vec<usize>,
    pub horizons: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dims: vec![2, 4],
            horizons: vec![64, 128, 256, 512, 1024],
            repeats: 3,
            seed: 7,
        }
    }
}

/// One timed configuration.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub method: String,
    pub d: usize,
    pub horizon: usize,
    pub seconds: f64,
    /// Floats resident in the solver's working set.
    pub resident_f64: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BenchTable {
    pub records: Vec<BenchRecord>,
}

/// Least-squares slope of `ln(seconds)` against `ln(T)` with its standard
/// error, restricted to one method at fixed `d`.
#[derive(Debug, Clone)]
pub struct SlopeFit {
    pub method: String,
    pub d: usize,
    pub slope: f64,
    pub stderr: f64,
}

impl BenchTable {
    /// CSV with header `method,d,T,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,d,T,seconds\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.method, r.d, r.horizon, r.seconds));
        }
        out
    }

    pub fn slope_in_horizon(&self, method: &str, d: usize) -> Option<SlopeFit> {
        let pts: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter(|r| r.method == method && r.d == d)
            .map(|r| ((r.horizon as f64).ln(), r.seconds.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        let resid: f64 = pts
            .iter()
            .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
            .sum();
        let dof = (pts.len().max(3) - 2) as f64;
        let stderr = (resid / dof / sxx).sqrt();
        Some(SlopeFit {
            method: method.to_string(),
            d,
            slope,
            stderr,
        })
    }

    /// Median runtime ratio between two state dimensions at matching horizons.
    pub fn dim_multiplier(&self, method: &str, d_small: usize, d_large: usize) -> Option<f64> {
        let mut ratios = Vec::new();
        for r in self.records.iter().filter(|r| r.method == method && r.d == d_small) {
            if let Some(big) = self
                .records
                .iter()
                .find(|b| b.method == method && b.d == d_large && b.horizon == r.horizon)
            {
                ratios.push(big.seconds / r.seconds);
            }
        }
        if ratios.is_empty() {
            return None;
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(ratios[ratios.len() / 2])
    }

    pub fn resident(&self, method: &str, d: usize, horizon: usize) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.method == method && r.d == d && r.horizon == horizon)
            .map(|r| r.resident_f64)
    }
}

/// Fully non-Markovian benchmark model (`tau = T`) with lag matrices that
/// decay quadratically so paths stay bounded at every horizon.
pub fn bench_model(d: usize, horizon: usize, seed: u64) -> LinearGaussianModel {
    use rand::RngExt;
    let mut rng = rng::stream_rng(seed, 0xbe);
    let mut lags = Vec::with_capacity(horizon);
    for s in 1..=horizon {
        let scale = 0.5 / ((s * s) as f64 * (d as f64));
        lags.push(DMatrix::from_fn(d, d, |_, _| {
            (rng.random::<f64>() * 2.0 - 1.0) * scale
        }));
    }
    let c = DMatrix::from_fn(1, d, |_, _| rng.random::<f64>() + 0.5);
    LinearGaussianModel::time_invariant(
        d,
        1,
        horizon,
        lags,
        c,
        DMatrix::identity(d, d) * 0.1,
        DMatrix::identity(1, 1),
        DVector::zeros(d),
        DMatrix::identity(d, d),
    )
    .expect("bench model valid")
}

/// One dual-filter layer: backward pass, forward pass, control update.
/// Buffers are caller-owned so repeated sweeps do not allocate.
fn dual_layer_sweep(
    model: &LinearGaussianModel,
    u: &[DVector<f64>],
    f: &DVector<f64>,
    y: &mut [DVector<f64>],
    eta: &mut [DVector<f64>],
    u_next: &mut [DVector<f64>],
    r_inv_c: &DMatrix<f64>,
) {
    let t_max = model.horizon();
    y[t_max].copy_from(f);
    for t in (0..t_max).rev() {
        let (head, tail) = y.split_at_mut(t + 1);
        let yt = &mut head[t];
        yt.gemv_tr(1.0, model.c_mat(), &u[t], 0.0);
        for s in 1..=model.tau().min(t_max - t) {
            yt.gemv_tr(1.0, model.a(t + s, s), &tail[s - 1], 1.0);
        }
    }
    for t in 0..t_max {
        let (head, tail) = eta.split_at_mut(t);
        let et = &mut tail[0];
        if t == 0 {
            et.gemv(1.0, model.sigma0(), &y[0], 0.0);
        } else {
            et.gemv(1.0, model.q_mat(), &y[t], 0.0);
            for s in 1..=model.tau().min(t) {
                et.gemv(1.0, model.a(t, s), &head[t - s], 1.0);
            }
        }
    }
    for t in 0..t_max {
        u_next[t].gemv(-1.0, r_inv_c, &eta[t], 0.0);
    }
}

fn time_adaptive<F: FnMut()>(mut f: F, repeats: usize) -> f64 {
    // Calibrate an inner repetition count targeting ~25ms per sample.
    let start = Instant::now();
    f();
    let once = start.elapsed().as_secs_f64().max(1e-9);
    let inner = ((0.025 / once).ceil() as usize).clamp(1, 20_000);
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        for _ in 0..inner {
            f();
        }
        samples.push(start.elapsed().as_secs_f64() / inner as f64);
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[samples.len() / 2]
}

/// Run the benchmark grid. All configurations use `tau = T`.
pub fn bench_complexity(cfg: &BenchConfig) -> Result<BenchTable> {
    let mut table = BenchTable::default();
    for &d in &cfg.dims {
        for &horizon in &cfg.horizons {
            let model = bench_model(d, horizon, cfg.seed);
            let f = DVector::from_element(d, 1.0);
            let traj = simulate(&model, rng::derive_seed(cfg.seed, horizon as u64))?;
            let z = &traj.z[..horizon];

            // Dual filter: single layer sweep over preallocated buffers.
            let r_chol = model.r_mat().clone().cholesky().expect("R is PD");
            let r_inv_c = r_chol.solve(model.c_mat());
            let u = vec![DVector::<f64>::zeros(model.m()); horizon];
            let mut y = vec![DVector::<f64>::zeros(d); horizon + 1];
            let mut eta = vec![DVector::<f64>::zeros(d); horizon];
            let mut u_next = vec![DVector::<f64>::zeros(model.m()); horizon];
            let secs = time_adaptive(
                || {
                    dual_layer_sweep(&model, &u, &f, &mut y, &mut eta, &mut u_next, &r_inv_c);
                    std::hint::black_box(&y);
                },
                cfg.repeats,
            );
            let dual_resident =
                (horizon + 1) * d + horizon * d + 2 * horizon * model.m() + d * model.m();
            table.records.push(BenchRecord {
                method: "dual_layer".into(),
                d,
                horizon,
                seconds: secs,
                resident_f64: dual_resident,
            });

            // Dual filter: fixed 25-layer solve, so the measured scaling
            // is per-layer work rather than a varying iteration count.
            let mut u_solve = vec![DVector::<f64>::zeros(model.m()); horizon];
            let secs = time_adaptive(
                || {
                    for ut in u_solve.iter_mut() {
                        ut.fill(0.0);
                    }
                    for _ in 0..25 {
                        dual_layer_sweep(
                            &model, &u_solve, &f, &mut y, &mut eta, &mut u_next, &r_inv_c,
                        );
                        std::mem::swap(&mut u_solve, &mut u_next);
                    }
                    std::hint::black_box(&u_solve);
                },
                cfg.repeats,
            );
            table.records.push(BenchRecord {
                method: "dual_solve".into(),
                d,
                horizon,
                seconds: secs,
                resident_f64: dual_resident,
            });

            // Recursive augmented Kalman filter over the same data.
            let mut resident = 0usize;
            let secs = time_adaptive(
                || {
                    let est = filter_estimate(&model, z, &f).expect("kalman pass");
                    resident = est.resident_f64;
                    std::hint::black_box(est.mean);
                },
                cfg.repeats,
            );
            table.records.push(BenchRecord {
                method: "kalman".into(),
                d,
                horizon,
                seconds: secs,
                resident_f64: resident,
            });
        }
    }
    Ok(table)
}
