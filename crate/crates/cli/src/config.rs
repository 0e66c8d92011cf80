//! Experiment configuration: TOML file with per-experiment sections, all
//! fields defaulted so a bare invocation reproduces the reference setup.

use serde::{Deserialize, Serialize};

use dualfilter_core::error::{Error, Result};

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: Option<String>,
    pub two_cycle: TwoCycleConfig,
    pub dhat_sweep: DhatSweepConfig,
    pub perturb: PerturbConfig,
    pub bench: BenchSectionConfig,
    pub lgssm_check: LgssmCheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            out_dir: None,
            two_cycle: TwoCycleConfig::default(),
            dhat_sweep: DhatSweepConfig::default(),
            perturb: PerturbConfig::default(),
            bench: BenchSectionConfig::default(),
            lgssm_check: LgssmCheckConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

/// Shared layer-iteration knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LayerConfig {
    pub max_layers: usize,
    pub tol: f64,
    pub damping: f64,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            max_layers: 100,
            tol: 1e-8,
            damping: 0.5,
        }
    }
}

impl LayerConfig {
    pub fn to_options(&self) -> dualfilter_core::dual_hmm::LayerOptions {
        dualfilter_core::dual_hmm::LayerOptions {
            max_layers: self.max_layers,
            tol: self.tol,
            damping: self.damping,
            ..Default::default()
        }
    }
}

/// Loss-evaluation protocol: tokens in `[burn_in, burn_in + eval_len)` are
/// scored so the average reflects the stationary regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub paths: usize,
    pub eval_len: usize,
    pub burn_in: usize,
    pub rao_blackwell: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            paths: 200,
            eval_len: 192,
            burn_in: 64,
            rao_blackwell: true,
        }
    }
}

impl EvalConfig {
    pub fn to_mode(&self, seed: u64) -> dualfilter_core::hmm::EvalMode {
        dualfilter_core::hmm::EvalMode::MonteCarlo {
            paths: self.paths,
            len: self.eval_len,
            burn_in: self.burn_in,
            seed,
            rao_blackwell: self.rao_blackwell,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoCycleConfig {
    pub d: usize,
    pub q: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub query_step: usize,
    pub layer: LayerConfig,
    pub eval: EvalConfig,
}

impl Default for TwoCycleConfig {
    fn default() -> Self {
        Self {
            d: 16,
            q: 4,
            horizon: 64,
            query_step: 54,
            layer: LayerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DhatSweepConfig {
    pub d: usize,
    pub q: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub d_hat: Vec<usize>,
    pub train_paths: usize,
    pub train_len: usize,
    pub bw_iters: usize,
    pub bw_restarts: usize,
    pub bw_stop_tol: f64,
    /// Support floor mixed into fitted models before held-out evaluation
    /// (hard zeros fitted by EM would otherwise make unseen events
    /// impossible).
    pub eval_smoothing: f64,
    pub layer: LayerConfig,
    pub eval: EvalConfig,
}

impl Default for DhatSweepConfig {
    fn default() -> Self {
        Self {
            d: 16,
            q: 4,
            horizon: 64,
            d_hat: vec![8, 16, 32],
            train_paths: 64,
            train_len: 128,
            bw_iters: 600,
            bw_restarts: 10,
            bw_stop_tol: 1e-9,
            eval_smoothing: 1e-8,
            layer: LayerConfig::default(),
            eval: EvalConfig {
                paths: 200,
                eval_len: 64,
                burn_in: 64,
                rao_blackwell: true,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    pub d: usize,
    pub q: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub query_step: usize,
    pub epsilons: Vec<f64>,
    pub targets: Vec<String>,
    pub layer: LayerConfig,
    pub eval: EvalConfig,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            d: 16,
            q: 4,
            horizon: 64,
            query_step: 54,
            epsilons: vec![0.0, 0.01, 0.1, 0.2],
            targets: vec!["transition".into(), "emission".into()],
            layer: LayerConfig::default(),
            eval: EvalConfig {
                paths: 100,
                eval_len: 128,
                burn_in: 64,
                rao_blackwell: true,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSectionConfig {
    pub dims: Vec<usize>,
    pub horizons: Vec<usize>,
    pub repeats: usize,
}

impl Default for BenchSectionConfig {
    fn default() -> Self {
        Self {
            dims: vec![2, 4],
            horizons: vec![64, 128, 256, 512, 1024],
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LgssmCheckConfig {
    pub instances: usize,
    pub d_max: usize,
    pub m_max: usize,
    pub t_max: usize,
    pub duality_tol: f64,
    pub oracle_tol: f64,
    pub solver_agreement_tol: f64,
}

impl Default for LgssmCheckConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            d_max: 4,
            m_max: 3,
            t_max: 12,
            duality_tol: 1e-10,
            oracle_tol: 1e-8,
            solver_agreement_tol: 1e-10,
        }
    }
}

/// Thread count from the environment (experiments may run sweep points
/// concurrently; per-point seeds keep outputs deterministic).
pub fn thread_count() -> usize {
    std::env::var("DUALFILTER_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.two_cycle.d, 16);
        assert_eq!(cfg.two_cycle.q, 4);
        assert_eq!(cfg.two_cycle.horizon, 64);
        assert_eq!(cfg.perturb.epsilons.len(), 4);
    }

    #[test]
    fn partial_overrides_apply() {
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 11\n[two_cycle]\nd = 8\nq = 2\nT = 32\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.two_cycle.d, 8);
        assert_eq!(cfg.two_cycle.horizon, 32);
        assert_eq!(cfg.two_cycle.query_step, 54); // untouched default
    }
}
