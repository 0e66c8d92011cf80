//! Shared pipeline for the two-cycle experiment family: simulate a path,
//! converge the path-local layer iteration, extract weights, and evaluate
//! next-token losses against the optimal-filter benchmark.

use nalgebra::DVector;

use dualfilter_core::dual_hmm::{
    dual_filter_loss, event_columns, heatmap_from_converged, iterate_layer_path, LayerOptions,
    WeightHeatmap,
};
use dualfilter_core::error::{Error, Result};
use dualfilter_core::hmm::{
    entropy_benchmark, forward_filter, simulate_hmm, CrossEntropyReport, EvalMode, Hmm,
};
use dualfilter_core::rng::derive_seed;

/// Seed stream tags for the experiment pipeline.
const TAG_PATH: u64 = 0x70;
const TAG_EVAL: u64 = 0x71;

pub struct CycleRun {
    pub z: Vec<usize>,
    pub heatmap: WeightHeatmap,
    pub rho: Vec<DVector<f64>>,
    pub pi: Vec<DVector<f64>>,
    pub max_filter_gap: f64,
    pub layers: usize,
    pub off_mask_fraction: f64,
    /// Mean weight magnitude on event columns over mean off them
    /// (infinite when nothing sits off the mask).
    pub on_off_magnitude_ratio: f64,
    pub max_weight_magnitude: f64,
    pub loss_dual: CrossEntropyReport,
    pub loss_optimal: CrossEntropyReport,
}

/// Run the pipeline on one model. The same master seed always yields the
/// same path and evaluation draws, so a perturbation level of zero
/// reproduces the nominal run exactly.
pub fn run_cycle_pipeline(
    hmm: &Hmm,
    horizon: usize,
    seed: u64,
    layer_opts: &LayerOptions,
    eval: &EvalMode,
) -> Result<CycleRun> {
    let (_, z_full) = simulate_hmm(hmm, horizon, derive_seed(seed, TAG_PATH))?;
    let z = z_full[..horizon].to_vec();

    let converged = iterate_layer_path(hmm, &z, None, layer_opts)?;
    if !converged.converged {
        return Err(Error::NonConvergence {
            iterations: converged.layers,
            residual: converged.change,
        });
    }
    let heatmap = heatmap_from_converged(&converged);
    let filter = forward_filter(hmm, &z)?;
    let max_filter_gap = converged
        .rho
        .iter()
        .zip(&filter.pi)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0f64, f64::max);
    let mask = event_columns(&z);
    let off_mask_fraction = heatmap.off_mask_fraction(&mask);
    let (mut on_sum, mut on_n, mut off_sum, mut off_n) = (0.0f64, 0usize, 0.0f64, 0usize);
    for (t, &mag) in heatmap.magnitudes.iter().enumerate() {
        if mask[t] {
            on_sum += mag;
            on_n += 1;
        } else {
            off_sum += mag;
            off_n += 1;
        }
    }
    let on_mean = if on_n > 0 { on_sum / on_n as f64 } else { 0.0 };
    let off_mean = if off_n > 0 { off_sum / off_n as f64 } else { 0.0 };
    let on_off_magnitude_ratio = if off_mean > 0.0 {
        on_mean / off_mean
    } else {
        f64::INFINITY
    };
    let max_weight_magnitude = heatmap.magnitudes.iter().cloned().fold(0.0, f64::max);

    let eval = reseed(eval, seed);
    let loss_dual = dual_filter_loss(hmm, hmm, layer_opts, &eval, false)?;
    let loss_optimal = entropy_benchmark(hmm, &eval)?;

    Ok(CycleRun {
        z,
        heatmap,
        rho: converged.rho,
        pi: filter.pi,
        max_filter_gap,
        layers: converged.layers,
        off_mask_fraction,
        on_off_magnitude_ratio,
        max_weight_magnitude,
        loss_dual,
        loss_optimal,
    })
}

fn reseed(eval: &EvalMode, seed: u64) -> EvalMode {
    match eval {
        EvalMode::MonteCarlo {
            paths,
            len,
            burn_in,
            rao_blackwell,
            ..
        } => EvalMode::MonteCarlo {
            paths: *paths,
            len: *len,
            burn_in: *burn_in,
            seed: derive_seed(seed, TAG_EVAL),
            rao_blackwell: *rao_blackwell,
        },
        other => other.clone(),
    }
}
