//! Candidate-dimension sweep: fit HMMs of varying state count with
//! Baum-Welch and compare dual-filter losses against the optimal
//! benchmark on held-out data.

use std::path::Path;
use std::sync::Mutex;

use serde_json::json;

use dualfilter_core::dual_hmm::dual_filter_loss;
use dualfilter_core::error::Result;
use dualfilter_core::hmm::{
    baum_welch, cross_entropy, entropy_benchmark, perturb, simulate_hmm, two_cycle,
    BaumWelchOptions, FilterPredictor, PerturbTarget, TwoCycleSpec,
};
use dualfilter_core::rng::derive_seed;

use crate::config::{thread_count, DhatSweepConfig};
use crate::report::{fmt_f64, OutputFormat, ReportBuilder, Table};

const TAG_TRAIN: u64 = 0x90;
const TAG_BW: u64 = 0x91;
const TAG_EVAL: u64 = 0x92;

struct SweepPoint {
    d_hat: usize,
    loss_dual: f64,
    loss_fitted_filter: f64,
    trace: Vec<f64>,
    monotone: bool,
    restart: usize,
    fitted_toml: String,
}

pub fn run(
    cfg: &DhatSweepConfig,
    seed: u64,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<serde_json::Value> {
    let mut report = ReportBuilder::new("dhat-sweep", out_dir, format)?;
    let truth = two_cycle(&TwoCycleSpec { d: cfg.d, q: cfg.q })?;

    let train: Vec<Vec<usize>> = (0..cfg.train_paths)
        .map(|p| {
            simulate_hmm(
                &truth,
                cfg.train_len,
                derive_seed(derive_seed(seed, TAG_TRAIN), p as u64),
            )
            .map(|(_, z)| z[..cfg.train_len].to_vec())
        })
        .collect::<Result<_>>()?;

    let eval = cfg.eval.to_mode(derive_seed(seed, TAG_EVAL));
    let loss_optimal = entropy_benchmark(&truth, &eval)?.loss;
    let layer_opts = cfg.layer.to_options();

    let outcomes: Vec<Option<Result<SweepPoint>>> = {
        let slots: Vec<Mutex<Option<Result<SweepPoint>>>> =
            cfg.d_hat.iter().map(|_| Mutex::new(None)).collect();
        let workers = thread_count().min(cfg.d_hat.len().max(1));
        std::thread::scope(|scope| {
            for worker in 0..workers {
                let slots = &slots;
                let train = &train;
                let truth = &truth;
                let eval = &eval;
                let layer_opts = &layer_opts;
                scope.spawn(move || {
                    let mut idx = worker;
                    while idx < cfg.d_hat.len() {
                        let d_hat = cfg.d_hat[idx];
                        let outcome = (|| {
                            let fit = baum_welch(
                                train,
                                d_hat,
                                1,
                                &BaumWelchOptions {
                                    iterations: cfg.bw_iters,
                                    restarts: cfg.bw_restarts,
                                    seed: derive_seed(derive_seed(seed, TAG_BW), d_hat as u64),
                                    stop_tol: cfg.bw_stop_tol,
                                },
                            )?;
                            let monotone = fit
                                .loglik_trace
                                .windows(2)
                                .all(|w| w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()));
                            // Floor the fitted model away from hard zeros
                            // before held-out evaluation.
                            let smoothed = perturb(
                                &perturb(&fit.hmm, cfg.eval_smoothing, PerturbTarget::Transition)?,
                                cfg.eval_smoothing,
                                PerturbTarget::Emission,
                            )?;
                            let loss_dual =
                                dual_filter_loss(truth, &smoothed, layer_opts, eval, false)?.loss;
                            let mut fitted_filter = FilterPredictor::new(smoothed);
                            let loss_fitted_filter =
                                cross_entropy(truth, &mut fitted_filter, eval)?.loss;
                            Ok(SweepPoint {
                                d_hat,
                                loss_dual,
                                loss_fitted_filter,
                                trace: fit.loglik_trace,
                                monotone,
                                restart: fit.restart,
                                fitted_toml: fit.hmm.to_toml_string(),
                            })
                        })();
                        *slots[idx].lock().expect("slot lock") = Some(outcome);
                        idx += workers;
                    }
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot"))
            .collect()
    };

    let mut sweep = Table::new(&["d_hat", "loss_dual", "loss_fitted_filter", "loss_optimal"]);
    let mut point_summaries = Vec::new();
    let mut errors = Vec::new();
    for (d_hat, outcome) in cfg.d_hat.iter().zip(outcomes) {
        match outcome.expect("slot filled") {
            Ok(point) => {
                sweep.push(vec![
                    point.d_hat.to_string(),
                    fmt_f64(point.loss_dual),
                    fmt_f64(point.loss_fitted_filter),
                    fmt_f64(loss_optimal),
                ]);
                let mut trace = Table::new(&["iteration", "loglik"]);
                for (i, ll) in point.trace.iter().enumerate() {
                    trace.push(vec![(i + 1).to_string(), fmt_f64(*ll)]);
                }
                report.write_table(&format!("bw_trace_dhat{}", point.d_hat), &trace)?;
                report.write_raw(
                    &format!("fitted_dhat{}.toml", point.d_hat),
                    &point.fitted_toml,
                )?;
                point_summaries.push(json!({
                    "d_hat": point.d_hat,
                    "loss_dual": point.loss_dual,
                    "loss_fitted_filter": point.loss_fitted_filter,
                    "bw_monotone": point.monotone,
                    "bw_iterations": point.trace.len(),
                    "bw_best_restart": point.restart,
                }));
            }
            Err(err) => {
                // Record the failure and keep sweeping.
                errors.push(json!({ "d_hat": d_hat, "error": err.to_string() }));
            }
        }
    }
    report.write_table("sweep", &sweep)?;
    report.add_summary_f64("loss_optimal", loss_optimal);
    report.add_summary("points", json!(point_summaries));
    report.add_summary("errors", json!(errors));
    report.add_summary(
        "training",
        json!({ "paths": cfg.train_paths, "tokens": cfg.train_paths * cfg.train_len }),
    );
    report.finish(cfg, seed)
}
