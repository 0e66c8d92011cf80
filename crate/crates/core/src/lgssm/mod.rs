//! Linear Gaussian model, its dual filter, and the augmented Kalman oracle.

pub mod bench;
pub mod dual;
pub mod kalman;
pub mod model;
pub mod sim;

pub use bench::{bench_complexity, BenchConfig, BenchRecord, BenchTable};
pub use dual::{
    dual_backward, dual_cost, dual_filter_solve, dual_forward, mse_exact, predict_linear,
    DualSolution, GaussianPrediction, SolveMethod,
};
pub use kalman::kalman_augmented;
pub use model::{LinearGaussianModel, LinearModelConfig, Transition};
pub use sim::{simulate, LinearTrajectory};
