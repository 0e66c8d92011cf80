//! Experiment drivers behind the CLI subcommands.

pub mod bench;
pub mod cycle;
pub mod dhat;
pub mod lgssm_check;
pub mod perturb;
pub mod two_cycle;

use crate::report::{fmt_f64, ReportBuilder, Table};
use dualfilter_core::dual_hmm::WeightHeatmap;
use dualfilter_core::error::Result;

/// Write the heatmap family of files with a given stem:
/// `{stem}.csv` (tidy rows), `{stem}.json` (dense matrix), and the slice
/// at the query step.
pub(crate) fn write_heatmap(
    report: &mut ReportBuilder,
    stem: &str,
    heatmap: &WeightHeatmap,
    query_step: usize,
) -> Result<()> {
    let mut table = Table::new(&["query_step", "time_index", "magnitude"]);
    for (s, t, mag) in heatmap.rows() {
        table.push(vec![s.to_string(), t.to_string(), fmt_f64(mag)]);
    }
    // The tidy table is always CSV and the dense matrix always JSON, so
    // downstream plotting can rely on both regardless of --format.
    report.write_raw(&format!("{stem}.csv"), &table.to_csv())?;

    let t_len = heatmap.len();
    let dense: Vec<Vec<f64>> = (1..=t_len)
        .map(|s| {
            (1..=t_len)
                .map(|t| if t <= s { heatmap.magnitudes[t - 1] } else { 0.0 })
                .collect()
        })
        .collect();
    let json = serde_json::json!({
        "t_len": t_len,
        "magnitudes": heatmap.magnitudes,
        "matrix": dense,
    });
    report.write_raw(
        &format!("{stem}.json"),
        &serde_json::to_string_pretty(&json).expect("heatmap json"),
    )?;

    let mut slice = Table::new(&["time_index", "magnitude"]);
    for (t, &mag) in heatmap.slice(query_step).iter().enumerate() {
        slice.push(vec![(t + 1).to_string(), fmt_f64(mag)]);
    }
    report.write_raw(
        &format!("{stem}_slice_s{query_step}.csv"),
        &slice.to_csv(),
    )?;
    Ok(())
}
