//! Hidden Markov model core: representation, two-cycle generator,
//! simulation, exact filtering, next-token prediction, cross-entropy
//! evaluation, perturbation, and Baum-Welch learning.

pub mod baum_welch;
pub mod filter;
pub mod model;
pub mod predict;
pub mod sim;

pub use baum_welch::{baum_welch, BaumWelchFit, BaumWelchOptions};
pub use filter::{filter_step, forward_filter, next_token, FilterPath};
pub use model::{
    parse_two_cycle_observations, perturb, two_cycle, CycleKind, Hmm, HmmConfig, PerturbTarget,
    TwoCycleSpec,
};
pub use predict::{
    cross_entropy, entropy_benchmark, CrossEntropyReport, EvalMode, FilterPredictor,
    SequencePredictor, UniformPredictor, UnigramPredictor,
};
pub use sim::simulate_hmm;
