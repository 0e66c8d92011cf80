//! Experiment drivers and report plumbing for the `dualfilter` binary.

pub mod config;
pub mod experiments;
pub mod report;
