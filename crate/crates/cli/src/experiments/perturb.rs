//! Perturbation study: how the control-weight support shifts when the
//! transition or emission matrix is mixed toward uniform.

use std::path::Path;
use std::sync::Mutex;

use serde_json::json;

use dualfilter_core::error::{Error, Result};
use dualfilter_core::hmm::{perturb, two_cycle, PerturbTarget, TwoCycleSpec};

use crate::config::{thread_count, PerturbConfig};
use crate::report::{fmt_f64, OutputFormat, ReportBuilder, Table};

use super::cycle::{run_cycle_pipeline, CycleRun};
use super::write_heatmap;

fn parse_target(name: &str) -> Result<PerturbTarget> {
    match name {
        "transition" => Ok(PerturbTarget::Transition),
        "emission" => Ok(PerturbTarget::Emission),
        other => Err(Error::Parse(format!(
            "unknown perturbation target '{other}' (expected transition|emission)"
        ))),
    }
}

fn target_name(target: PerturbTarget) -> &'static str {
    match target {
        PerturbTarget::Transition => "transition",
        PerturbTarget::Emission => "emission",
    }
}

/// Epsilon rendered for file names and CSV cells.
fn eps_label(eps: f64) -> String {
    format!("{eps}")
}

pub fn run(
    cfg: &PerturbConfig,
    seed: u64,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<serde_json::Value> {
    let mut report = ReportBuilder::new("perturb", out_dir, format)?;
    let nominal = two_cycle(&TwoCycleSpec { d: cfg.d, q: cfg.q })?;
    let targets: Vec<PerturbTarget> = cfg
        .targets
        .iter()
        .map(|t| parse_target(t))
        .collect::<Result<_>>()?;

    // All (target, eps) points share the master seed so the zero-eps point
    // reproduces the nominal two-cycle outputs byte for byte.
    let points: Vec<(PerturbTarget, f64)> = targets
        .iter()
        .flat_map(|&t| cfg.epsilons.iter().map(move |&e| (t, e)))
        .collect();
    let layer_opts = cfg.layer.to_options();
    let eval = cfg.eval.to_mode(seed);

    let results: Vec<Option<Result<CycleRun>>> = {
        let slots: Vec<Mutex<Option<Result<CycleRun>>>> =
            points.iter().map(|_| Mutex::new(None)).collect();
        let workers = thread_count().min(points.len().max(1));
        std::thread::scope(|scope| {
            for worker in 0..workers {
                let slots = &slots;
                let points = &points;
                let nominal = &nominal;
                let layer_opts = &layer_opts;
                let eval = &eval;
                scope.spawn(move || {
                    let mut idx = worker;
                    while idx < points.len() {
                        let (target, eps) = points[idx];
                        let outcome = perturb(nominal, eps, target).and_then(|model| {
                            run_cycle_pipeline(&model, cfg.horizon, seed, layer_opts, eval)
                        });
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

    let mut losses = Table::new(&["method", "d_hat", "epsilon", "loss"]);
    let mut mask_summary = Vec::new();
    for ((target, eps), outcome) in points.iter().zip(results) {
        let run = outcome.expect("slot filled")?;
        let tname = target_name(*target);
        let label = eps_label(*eps);
        write_heatmap(
            &mut report,
            &format!("heatmap_{tname}_eps{label}"),
            &run.heatmap,
            cfg.query_step,
        )?;
        losses.push(vec![
            format!("dual_filter_{tname}"),
            cfg.d.to_string(),
            label.clone(),
            fmt_f64(run.loss_dual.loss),
        ]);
        losses.push(vec![
            format!("optimal_filter_{tname}"),
            cfg.d.to_string(),
            label.clone(),
            fmt_f64(run.loss_optimal.loss),
        ]);
        let ratio = if run.on_off_magnitude_ratio.is_finite() {
            json!(run.on_off_magnitude_ratio)
        } else {
            json!("inf")
        };
        mask_summary.push(json!({
            "target": tname,
            "epsilon": eps,
            "off_mask_weight_fraction": run.off_mask_fraction,
            "on_off_magnitude_ratio": ratio,
            "max_weight_magnitude": run.max_weight_magnitude,
            "max_filter_gap": run.max_filter_gap,
            "layers": run.layers,
        }));
    }
    report.write_table("losses", &losses)?;
    report.add_summary("points", json!(mask_summary));
    report.finish(cfg, seed)
}
