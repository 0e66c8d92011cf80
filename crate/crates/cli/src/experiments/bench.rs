//! Runtime/memory benchmark wrapper with slope fits.

use std::path::Path;

use serde_json::json;

use dualfilter_core::error::Result;
use dualfilter_core::lgssm::{bench_complexity, BenchConfig};

use crate::config::BenchSectionConfig;
use crate::report::{OutputFormat, ReportBuilder};

pub fn run(
    cfg: &BenchSectionConfig,
    seed: u64,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<serde_json::Value> {
    let mut report = ReportBuilder::new("bench", out_dir, format)?;
    let table = bench_complexity(&BenchConfig {
        dims: cfg.dims.clone(),
        horizons: cfg.horizons.clone(),
        repeats: cfg.repeats,
        seed,
    })?;
    // Timing data is inherently non-reproducible; it is the one CSV whose
    // bytes vary between runs.
    report.write_raw("bench.csv", &table.to_csv())?;

    let mut fits = Vec::new();
    for &d in &cfg.dims {
        for method in ["dual_layer", "dual_solve", "kalman"] {
            if let Some(fit) = table.slope_in_horizon(method, d) {
                fits.push(json!({
                    "method": fit.method,
                    "d": fit.d,
                    "slope_in_T": fit.slope,
                    "stderr": fit.stderr,
                }));
            }
        }
    }
    let mut multipliers = Vec::new();
    for pair in cfg.dims.windows(2) {
        if pair[1] == 2 * pair[0] {
            for method in ["dual_layer", "kalman"] {
                if let Some(mult) = table.dim_multiplier(method, pair[0], pair[1]) {
                    multipliers.push(json!({
                        "method": method,
                        "d_small": pair[0],
                        "d_large": pair[1],
                        "runtime_multiplier": mult,
                    }));
                }
            }
        }
    }
    let residents: Vec<_> = table
        .records
        .iter()
        .map(|r| {
            json!({
                "method": r.method,
                "d": r.d,
                "T": r.horizon,
                "resident_f64": r.resident_f64,
            })
        })
        .collect();
    let fit_report = json!({
        "slopes": fits,
        "dim_doubling_multipliers": multipliers,
        "resident_memory": residents,
    });
    report.write_raw(
        "fit.json",
        &serde_json::to_string_pretty(&fit_report).expect("fit json"),
    )?;
    report.add_summary("fit", fit_report);
    report.finish(cfg, seed)
}
