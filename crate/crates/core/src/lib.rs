//! Model-based inference engines built on minimum-variance duality.
//!
//! Two model classes are covered:
//!
//! * [`lgssm`] — linear Gaussian (possibly non-Markovian) state-space models.
//!   Next-observation prediction is solved through a deterministic dual
//!   optimal control problem whose forward-backward sweep doubles as a
//!   transformer-like layer transformation over a fixed `d x T` array.
//! * [`hmm`] / [`dual_hmm`] — hidden Markov models with discrete
//!   observations. The dual control system is a backward stochastic
//!   difference equation on the observation tree; its solution yields
//!   data-dependent prediction weights (the analogue of attention weights)
//!   and a layer iteration over probability sequences.
//!
//! Everything is deterministic for a fixed seed and safe to call from
//! multiple threads: solvers are pure functions of immutable model values.

pub mod dual_hmm;
pub mod error;
pub mod hmm;
pub mod lgssm;
pub mod linalg;
pub mod rng;

pub use error::{Error, Result};
