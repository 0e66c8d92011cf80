//! Self-check over random linear Gaussian instances: duality identity,
//! solver agreement, and prediction against the augmented Kalman oracle.

use std::path::Path;

use nalgebra::DVector;
use serde_json::json;

use dualfilter_core::error::{Error, Result};
use dualfilter_core::lgssm::{
    dual_cost, dual_filter_solve, kalman_augmented, mse_exact, predict_linear, simulate,
    LinearGaussianModel, SolveMethod,
};
use dualfilter_core::rng::{derive_seed, stream_rng};

use crate::config::LgssmCheckConfig;
use crate::report::{OutputFormat, ReportBuilder};

pub struct CheckOutcome {
    pub instances: usize,
    pub max_duality_gap: f64,
    pub max_mean_err: f64,
    pub max_var_err: f64,
    pub max_solver_gap: f64,
    pub pass: bool,
}

pub fn run_checks(cfg: &LgssmCheckConfig, seed: u64) -> Result<CheckOutcome> {
    use rand::RngExt;
    let mut max_duality_gap = 0.0f64;
    let mut max_mean_err = 0.0f64;
    let mut max_var_err = 0.0f64;
    let mut max_solver_gap = 0.0f64;
    for i in 0..cfg.instances {
        let inst_seed = derive_seed(seed, i as u64);
        let mut rng = stream_rng(inst_seed, 0x31);
        let d = 1 + (i % cfg.d_max);
        let m = 1 + (i % cfg.m_max);
        let t = 2 + (i % (cfg.t_max - 1));
        let tau = match i % 3 {
            0 => 1,
            1 => 2.min(t),
            _ => t,
        };
        let model = LinearGaussianModel::random_stable(d, m, tau, t, inst_seed);
        let u: Vec<DVector<f64>> = (0..t)
            .map(|_| DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        let f = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);

        let j = dual_cost(&model, &u, &f)?;
        let mse = mse_exact(&model, &u, &f)?;
        max_duality_gap = max_duality_gap.max((2.0 * j - mse).abs() / mse.abs().max(1e-12));

        let direct = dual_filter_solve(&model, &f, SolveMethod::Direct)?;
        let fixed = dual_filter_solve(
            &model,
            &f,
            SolveMethod::FixedPoint {
                tol: 1e-13,
                max_iter: 5000,
                damping: 0.5,
            },
        )?;
        for (a, b) in direct.u.iter().zip(&fixed.u) {
            max_solver_gap = max_solver_gap.max((a - b).amax());
        }

        let traj = simulate(&model, derive_seed(inst_seed, 0x32))?;
        let z = &traj.z[..t];
        let dual_pred = predict_linear(&model, &direct, z)?;
        let kalman = kalman_augmented(&model, z, &f)?;
        max_mean_err = max_mean_err
            .max((dual_pred.mean - kalman.mean).abs() / kalman.mean.abs().max(1.0));
        max_var_err = max_var_err
            .max((dual_pred.variance - kalman.variance).abs() / kalman.variance.max(1e-12));
    }
    let pass = max_duality_gap <= cfg.duality_tol
        && max_mean_err <= cfg.oracle_tol
        && max_var_err <= cfg.oracle_tol
        && max_solver_gap <= cfg.solver_agreement_tol;
    Ok(CheckOutcome {
        instances: cfg.instances,
        max_duality_gap,
        max_mean_err,
        max_var_err,
        max_solver_gap,
        pass,
    })
}

pub fn run(
    cfg: &LgssmCheckConfig,
    seed: u64,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<serde_json::Value> {
    let mut report = ReportBuilder::new("lgssm-check", out_dir, format)?;
    let outcome = run_checks(cfg, seed)?;
    let body = json!({
        "instances": outcome.instances,
        "max_relative_duality_gap": outcome.max_duality_gap,
        "max_relative_mean_error": outcome.max_mean_err,
        "max_relative_variance_error": outcome.max_var_err,
        "max_solver_agreement_gap": outcome.max_solver_gap,
        "tolerances": {
            "duality": cfg.duality_tol,
            "oracle": cfg.oracle_tol,
            "solver_agreement": cfg.solver_agreement_tol,
        },
        "pass": outcome.pass,
    });
    report.write_raw(
        "report.json",
        &serde_json::to_string_pretty(&body).expect("report json"),
    )?;
    report.add_summary("check", body);
    let summary = report.finish(cfg, seed)?;
    if !outcome.pass {
        return Err(Error::Numerical(
            "lgssm-check exceeded at least one tolerance".into(),
        ));
    }
    Ok(summary)
}
