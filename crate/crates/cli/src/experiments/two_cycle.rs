//! Two-cycle experiment: control-weight heatmap, filter comparison, and
//! cross-entropy against the optimal benchmark.

use std::path::Path;

use serde_json::json;

use dualfilter_core::error::Result;
use dualfilter_core::hmm::{two_cycle, TwoCycleSpec};

use crate::config::TwoCycleConfig;
use crate::report::{fmt_f64, OutputFormat, ReportBuilder, Table};

use super::cycle::run_cycle_pipeline;
use super::write_heatmap;

pub fn run(
    cfg: &TwoCycleConfig,
    seed: u64,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<serde_json::Value> {
    let mut report = ReportBuilder::new("two-cycle", out_dir, format)?;
    let hmm = two_cycle(&TwoCycleSpec { d: cfg.d, q: cfg.q })?;
    let run = run_cycle_pipeline(
        &hmm,
        cfg.horizon,
        seed,
        &cfg.layer.to_options(),
        &cfg.eval.to_mode(seed),
    )?;

    write_heatmap(&mut report, "heatmap", &run.heatmap, cfg.query_step)?;

    let mut filter_table = Table::new(&["t", "state", "pi_exact", "rho_dual"]);
    for (t, (pi, rho)) in run.pi.iter().zip(&run.rho).enumerate() {
        for x in 0..hmm.d() {
            filter_table.push(vec![
                (t + 1).to_string(),
                x.to_string(),
                fmt_f64(pi[x]),
                fmt_f64(rho[x]),
            ]);
        }
    }
    report.write_table("filter_path", &filter_table)?;

    let mut losses = Table::new(&["method", "d_hat", "epsilon", "loss"]);
    losses.push(vec![
        "dual_filter".into(),
        cfg.d.to_string(),
        "0".into(),
        fmt_f64(run.loss_dual.loss),
    ]);
    losses.push(vec![
        "optimal_filter".into(),
        cfg.d.to_string(),
        "0".into(),
        fmt_f64(run.loss_optimal.loss),
    ]);
    report.write_table("losses", &losses)?;

    let mut path_table = Table::new(&["t", "z"]);
    for (t, &sym) in run.z.iter().enumerate() {
        path_table.push(vec![(t + 1).to_string(), sym.to_string()]);
    }
    report.write_table("observations", &path_table)?;

    report.add_summary_f64("max_filter_gap", run.max_filter_gap);
    report.add_summary_f64("off_mask_weight_fraction", run.off_mask_fraction);
    report.add_summary_f64("max_weight_magnitude", run.max_weight_magnitude);
    report.add_summary("layers", json!(run.layers));
    report.add_summary_f64("loss_dual", run.loss_dual.loss);
    report.add_summary_f64("loss_optimal", run.loss_optimal.loss);
    report.add_summary(
        "loss_eval",
        json!({
            "tokens": run.loss_dual.tokens,
            "zero_probability_events": run.loss_dual.zero_prob_events,
        }),
    );
    report.finish(cfg, seed)
}
