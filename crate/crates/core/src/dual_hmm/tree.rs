//! Full observation tree: the exact finite representation of the
//! observation filtration for desk-scale instances.
//!
//! Nodes at depth `t` are the `(m+1)^t` prefixes `z_{1:t}`, indexed by
//! their base-`(m+1)` digits (most significant first), so the children of
//! node `n` are `n*(m+1) + z`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hmm::Hmm;

/// Guard on the number of leaves of exact tree operations.
pub const TREE_GUARD: u128 = 1_000_000;

/// Values attached to every node of depth `<= depth`; adaptedness holds by
/// construction since a node is identified with its observation prefix.
#[derive(Debug, Clone)]
pub struct Adapted<T> {
    /// `values[t][node]` for `t = 0..=depth`.
    pub values: Vec<Vec<T>>,
}

impl<T> Adapted<T> {
    pub fn depth(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn get(&self, t: usize, node: usize) -> &T {
        &self.values[t][node]
    }
}

impl<T: Clone> Adapted<T> {
    /// Same value at every node down to `depth`.
    pub fn constant(value: T, m: usize, depth: usize) -> Self {
        let mut values = Vec::with_capacity(depth + 1);
        let mut count = 1usize;
        for _ in 0..=depth {
            values.push(vec![value.clone(); count]);
            count *= m + 1;
        }
        Adapted { values }
    }
}

/// The tree with per-node joint probabilities
/// `alpha_t(x) = P(X_t = x, Z_{1:t} = prefix)`.
#[derive(Debug, Clone)]
pub struct ObservationTree {
    hmm: Hmm,
    depth: usize,
    alpha: Vec<Vec<DVector<f64>>>,
}

impl ObservationTree {
    pub fn build(hmm: &Hmm, depth: usize) -> Result<Self> {
        let m = hmm.m();
        let leaves = (m as u128 + 1).checked_pow(depth as u32).unwrap_or(u128::MAX);
        if leaves > TREE_GUARD {
            return Err(Error::TreeTooLarge {
                leaves,
                guard: TREE_GUARD,
            });
        }
        let d = hmm.d();
        let mut alpha: Vec<Vec<DVector<f64>>> = Vec::with_capacity(depth + 1);
        alpha.push(vec![hmm.mu().clone()]);
        for t in 0..depth {
            let level = &alpha[t];
            let mut next = vec![DVector::<f64>::zeros(d); level.len() * (m + 1)];
            for (node, a) in level.iter().enumerate() {
                for z in 0..=m {
                    let child = &mut next[node * (m + 1) + z];
                    for x in 0..d {
                        let w = a[x] * hmm.c_mat()[(x, z)];
                        if w == 0.0 {
                            continue;
                        }
                        for x2 in 0..d {
                            child[x2] += w * hmm.a_mat()[(x, x2)];
                        }
                    }
                }
            }
            alpha.push(next);
        }
        Ok(Self {
            hmm: hmm.clone(),
            depth,
            alpha,
        })
    }

    pub fn hmm(&self) -> &Hmm {
        &self.hmm
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn m(&self) -> usize {
        self.hmm.m()
    }

    pub fn d(&self) -> usize {
        self.hmm.d()
    }

    pub fn node_count(&self, t: usize) -> usize {
        self.alpha[t].len()
    }

    pub fn child(&self, node: usize, z: usize) -> usize {
        node * (self.m() + 1) + z
    }

    /// Joint vector `P(X_t = ., Z_{1:t} = prefix)`.
    pub fn alpha(&self, t: usize, node: usize) -> &DVector<f64> {
        &self.alpha[t][node]
    }

    /// Prefix probability `P(Z_{1:t} = prefix)`.
    pub fn prob(&self, t: usize, node: usize) -> f64 {
        self.alpha[t][node].sum()
    }

    /// Normalized filter `P(X_t | Z_{1:t})`, or `None` on a null prefix.
    pub fn filter(&self, t: usize, node: usize) -> Option<DVector<f64>> {
        let p = self.prob(t, node);
        if p <= 0.0 {
            return None;
        }
        Some(&self.alpha[t][node] / p)
    }

    /// Digits `z_{1:t}` of a node index.
    pub fn prefix(&self, t: usize, node: usize) -> Vec<usize> {
        let base = self.m() + 1;
        let mut digits = vec![0usize; t];
        let mut n = node;
        for i in (0..t).rev() {
            digits[i] = n % base;
            n /= base;
        }
        digits
    }

    /// Node index of a prefix.
    pub fn node_of(&self, prefix: &[usize]) -> usize {
        let base = self.m() + 1;
        prefix.iter().fold(0usize, |acc, &z| acc * base + z)
    }
}
