//! Trajectory simulation for the linear Gaussian model.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::linalg;
use crate::rng;

use super::model::LinearGaussianModel;

/// One simulated state/observation path.
///
/// `x` holds `X_0..X_T`; `z` holds `Z_1..Z_{T+1}` (so `z[t]` is the
/// observation emitted by `X_t`).
#[derive(Debug, Clone)]
pub struct LinearTrajectory {
    pub x: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub seed: u64,
}

fn gaussian(root: &nalgebra::DMatrix<f64>, rng: &mut impl rand::Rng) -> DVector<f64> {
    let n = root.nrows();
    let xi = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    root * xi
}

/// Simulate the model from three mutually independent noise streams
/// (initial condition, process noise, observation noise).
pub fn simulate(model: &LinearGaussianModel, seed: u64) -> Result<LinearTrajectory> {
    let t_max = model.horizon();
    let sigma0_root = linalg::psd_sqrt(model.sigma0())?;
    let q_root = linalg::psd_sqrt(model.q_mat())?;
    let r_root = linalg::psd_sqrt(model.r_mat())?;

    let mut rng_init = rng::stream_rng(seed, rng::STREAM_INITIAL);
    let mut rng_proc = rng::stream_rng(seed, rng::STREAM_PROCESS);
    let mut rng_obs = rng::stream_rng(seed, rng::STREAM_OBSERVATION);

    let mut x = Vec::with_capacity(t_max + 1);
    x.push(model.mu0() + gaussian(&sigma0_root, &mut rng_init));
    for t in 1..=t_max {
        let mut next = gaussian(&q_root, &mut rng_proc);
        for s in 1..=model.tau().min(t) {
            next += model.a(t, s) * &x[t - s];
        }
        x.push(next);
    }
    // Z_{t+1} = C X_t + W_{t+1}, 0 <= t <= T.
    let z = x
        .iter()
        .map(|xt| model.c_mat() * xt + gaussian(&r_root, &mut rng_obs))
        .collect();
    Ok(LinearTrajectory { x, z, seed })
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;

    fn scalar_model(a: &[f64], mu0: f64, sigma0: f64, q: f64, c: f64, horizon: usize) -> LinearGaussianModel {
        let lags = a
            .iter()
            .map(|&v| DMatrix::from_element(1, 1, v))
            .collect::<Vec<_>>();
        LinearGaussianModel::time_invariant(
            1,
            1,
            horizon,
            lags,
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, mu0),
            DMatrix::from_element(1, 1, sigma0),
        )
        .unwrap()
    }

    #[test]
    fn noise_free_state_is_constant() {
        // mu0=3, Sigma0=0, Q=0, A=1: X_t = 3 for every t.
        let model = scalar_model(&[1.0], 3.0, 0.0, 0.0, 1.0, 6);
        let traj = simulate(&model, 9).unwrap();
        for xt in &traj.x {
            assert!((xt[0] - 3.0).abs() < 1e-14);
        }
        assert_eq!(traj.z.len(), 7);
    }

    #[test]
    fn second_order_recursion_is_exact() {
        // tau=2, A_1=0.5, A_2=0.25, x_0=1 deterministic:
        // x_1 = 0.5, x_2 = 0.5*0.5 + 0.25*1 = 0.5.
        let model = scalar_model(&[0.5, 0.25], 1.0, 0.0, 0.0, 1.0, 2);
        let traj = simulate(&model, 3).unwrap();
        assert!((traj.x[0][0] - 1.0).abs() < 1e-15);
        assert!((traj.x[1][0] - 0.5).abs() < 1e-15);
        assert!((traj.x[2][0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sample_mean_matches_moment_propagation() {
        // E X_1 = A_1 mu0; check a 4-sigma Monte Carlo band.
        let a1 = 0.8;
        let mu0 = 2.0;
        let sigma0 = 0.5;
        let q = 0.3;
        let model = scalar_model(&[a1], mu0, sigma0, q, 1.0, 2);
        let n = 100_000;
        let mut sum = 0.0;
        for seed in 0..n {
            sum += simulate(&model, seed).unwrap().x[1][0];
        }
        let mean = sum / n as f64;
        let var_x1 = a1 * a1 * sigma0 + q;
        let band = 4.0 * (var_x1 / n as f64).sqrt();
        assert!(
            (mean - a1 * mu0).abs() < band,
            "mean {mean} outside 4-sigma band {band} around {}",
            a1 * mu0
        );
    }

    #[test]
    fn same_seed_same_path() {
        let model = LinearGaussianModel::random_stable(3, 2, 2, 8, 5);
        let a = simulate(&model, 123).unwrap();
        let b = simulate(&model, 123).unwrap();
        for (xa, xb) in a.x.iter().zip(&b.x) {
            assert_eq!(xa, xb);
        }
    }
}
