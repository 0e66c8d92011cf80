//! Control-weight extraction along realized observation paths and the
//! heatmap/sparsity diagnostics built from them.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::hmm::Hmm;

use super::bsde::oracle_weights;
use super::layer::{iterate_layer_path, ConvergedPath, LayerOptions};
use super::tree::ObservationTree;

/// How to compute the weights.
#[derive(Debug, Clone)]
pub enum WeightsMethod {
    /// Exact extraction on the full observation tree (enumerable horizons
    /// only).
    OracleTree,
    /// Converged path-local layer iteration.
    LayerPath(LayerOptions),
}

/// Per-position control blocks along one path, one `m x d` block per
/// position stacking the controls of all `d` basis terminal conditions
/// (state indicators). The control for an arbitrary terminal vector `f`
/// is `block * f` by linearity.
///
/// Position `t` (1-based) carries the control multiplying the encoded
/// symbol `e(Z_t)`; the heatmap row for query step `s` lists positions
/// `t <= s`.
#[derive(Debug, Clone)]
pub struct WeightHeatmap {
    pub blocks: Vec<DMatrix<f64>>,
    /// Frobenius norm of each block.
    pub magnitudes: Vec<f64>,
}

impl WeightHeatmap {
    pub fn from_basis_blocks(blocks: Vec<DMatrix<f64>>) -> Self {
        let magnitudes = blocks.iter().map(|b| b.norm()).collect();
        Self { blocks, magnitudes }
    }

    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    /// Control sequence for a terminal vector `f`.
    pub fn weights_for(&self, f: &DVector<f64>) -> Vec<DVector<f64>> {
        self.blocks.iter().map(|b| b * f).collect()
    }

    /// Lower-triangular rows `(query_step, position, magnitude)`.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (1..=self.len()).flat_map(move |s| (1..=s).map(move |t| (s, t, self.magnitudes[t - 1])))
    }

    /// The slice at one query step: positions `1..=s`.
    pub fn slice(&self, query_step: usize) -> &[f64] {
        &self.magnitudes[..query_step.min(self.len())]
    }

    /// Fraction of total weight mass off the event columns.
    pub fn off_mask_fraction(&self, mask: &[bool]) -> f64 {
        let mut on = 0.0;
        let mut total = 0.0;
        for (t, &mag) in self.magnitudes.iter().enumerate() {
            total += mag;
            if mask.get(t).copied().unwrap_or(false) {
                on += mag;
            }
        }
        if total <= 0.0 {
            0.0
        } else {
            1.0 - on / total
        }
    }
}

/// Event-column mask for a path: position `t` (1-based) is an event column
/// when it immediately follows an observed 1 (or is the first position,
/// which follows the known initial cycle start).
pub fn event_columns(z: &[usize]) -> Vec<bool> {
    (1..=z.len()).map(|t| t == 1 || z[t - 2] == 1).collect()
}

/// Basis-control heatmap along a realized path.
pub fn weights_along_path(
    hmm: &Hmm,
    z: &[usize],
    method: &WeightsMethod,
) -> Result<WeightHeatmap> {
    let d = hmm.d();
    let m = hmm.m();
    match method {
        WeightsMethod::OracleTree => {
            let tree = ObservationTree::build(hmm, z.len())?;
            let mut blocks = vec![DMatrix::<f64>::zeros(m, d); z.len()];
            for i in 0..d {
                let mut f = DVector::zeros(d);
                f[i] = 1.0;
                let (_, u) = oracle_weights(&tree, &f)?;
                let mut node = 0usize;
                for (t, &sym) in z.iter().enumerate() {
                    blocks[t].column_mut(i).copy_from(u.get(t, node));
                    node = tree.child(node, sym);
                }
            }
            Ok(WeightHeatmap::from_basis_blocks(blocks))
        }
        WeightsMethod::LayerPath(opts) => {
            let converged = iterate_layer_path(hmm, z, None, opts)?;
            Ok(heatmap_from_converged(&converged))
        }
    }
}

/// Heatmap from an already-converged path solution.
pub fn heatmap_from_converged(converged: &ConvergedPath) -> WeightHeatmap {
    WeightHeatmap::from_basis_blocks(converged.u.clone())
}
