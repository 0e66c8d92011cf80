//! Nonlinear dual filter for HMMs: the backward stochastic difference
//! equation on the observation tree, exact duality and weight-extraction
//! oracles, the feedback control law, and the layer iterations.

pub mod bsde;
pub mod control;
pub mod encoding;
pub mod layer;
pub mod params;
pub mod weights;
pub mod tree;

pub use bsde::{
    bsde_residual, bsde_solve_tree, cost_j, duality_check, estimator_tree, extract_weights,
    filter_leaf_values, oracle_weights, reconstruct_leaf, BsdeSolution, DualityReport,
};
pub use control::{phi, rho_moments, RhoMoments};
pub use layer::{
    dual_filter_loss, dual_filter_path_predictions, iterate_layer_path, iterate_layer_tree,
    layer_path, layer_tree, ConvergedPath, ConvergedTree, DualFilterPredictor, LayerOptions,
    PathLayer, TreeLayer,
};
pub use weights::{
    event_columns, heatmap_from_converged, weights_along_path, WeightHeatmap, WeightsMethod,
};
pub use encoding::{decompose, decomposed_eval, e_encode};
pub use params::{cost_params, gamma, CostParams};
pub use tree::{Adapted, ObservationTree, TREE_GUARD};
