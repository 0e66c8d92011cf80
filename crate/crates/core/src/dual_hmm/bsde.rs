//! Backward stochastic difference equation on the observation tree, the
//! associated control objective, the adapted estimator, and the exact
//! weight-extraction oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::encoding::{decompose, e_encode};
use super::params::{cost_params, gamma};
use super::tree::{Adapted, ObservationTree};

/// Solution pair of the backward equation: per node, `y` holds the
/// d-vector `Y_t(.)` and `v` the `m x d` matrix whose column `x` is
/// `V_t(x)`.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub y: Adapted<DVector<f64>>,
    pub v: Adapted<DMatrix<f64>>,
}

fn check_control(tree: &ObservationTree, u: &Adapted<DVector<f64>>) -> Result<()> {
    let t_max = tree.depth();
    if u.values.len() != t_max {
        return Err(Error::Dimension(format!(
            "control must cover depths 0..{}, got {} levels",
            t_max - 1,
            u.values.len()
        )));
    }
    for (t, level) in u.values.iter().enumerate() {
        if level.len() != tree.node_count(t) {
            return Err(Error::Dimension(format!(
                "control level {t} has {} nodes, expected {}",
                level.len(),
                tree.node_count(t)
            )));
        }
        if level.iter().any(|ut| ut.len() != tree.m()) {
            return Err(Error::Dimension("control entries must be m-vectors".into()));
        }
    }
    Ok(())
}

/// Solve the BSDE backward over the tree for a given adapted control.
///
/// At each node the conditional decomposition of `(A Y_{t+1})(x)` over the
/// next symbol yields `V_t(x)` (the martingale part) and the node value
/// `Y_t(x) = gbar_x + c(x)'(U_t + V_t(x))`.
pub fn bsde_solve_tree(
    tree: &ObservationTree,
    u: &Adapted<DVector<f64>>,
    f: &DVector<f64>,
) -> Result<BsdeSolution> {
    check_control(tree, u)?;
    let d = tree.d();
    if f.len() != d {
        return Err(Error::Dimension("terminal condition must be a d-vector".into()));
    }
    let m = tree.m();
    let t_max = tree.depth();
    let params = cost_params(tree.hmm());
    let a = tree.hmm().a_mat();

    let mut y_levels: Vec<Vec<DVector<f64>>> = vec![Vec::new(); t_max + 1];
    let mut v_levels: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); t_max];
    y_levels[t_max] = vec![f.clone(); tree.node_count(t_max)];

    for t in (0..t_max).rev() {
        let mut y_level = Vec::with_capacity(tree.node_count(t));
        let mut v_level = Vec::with_capacity(tree.node_count(t));
        for node in 0..tree.node_count(t) {
            // ay[z] = A * Y_{t+1} at child z.
            let ay: Vec<DVector<f64>> = (0..=m)
                .map(|z| a * &y_levels[t + 1][tree.child(node, z)])
                .collect();
            let mut y_node = DVector::zeros(d);
            let mut v_node = DMatrix::zeros(m, d);
            let u_node = u.get(t, node);
            for x in 0..d {
                let g: Vec<f64> = (0..=m).map(|z| ay[z][x]).collect();
                let (g_bar, g_tilde) = decompose(&g);
                y_node[x] = g_bar + params.c[x].dot(&(u_node + &g_tilde));
                v_node.column_mut(x).copy_from(&g_tilde);
            }
            y_level.push(y_node);
            v_level.push(v_node);
        }
        y_levels[t] = y_level;
        v_levels[t] = v_level;
    }
    Ok(BsdeSolution {
        y: Adapted { values: y_levels },
        v: Adapted { values: v_levels },
    })
}

/// Max residual of the backward equation over every (node, child, state).
pub fn bsde_residual(
    tree: &ObservationTree,
    u: &Adapted<DVector<f64>>,
    sol: &BsdeSolution,
) -> f64 {
    let d = tree.d();
    let m = tree.m();
    let params = cost_params(tree.hmm());
    let a = tree.hmm().a_mat();
    let mut worst = 0.0f64;
    for t in 0..tree.depth() {
        for node in 0..tree.node_count(t) {
            let u_node = u.get(t, node);
            let v_node = sol.v.get(t, node);
            for z in 0..=m {
                let e_z = e_encode(z, m).expect("valid symbol");
                let ay = a * sol.y.get(t + 1, tree.child(node, z));
                for x in 0..d {
                    let v_x = v_node.column(x);
                    let rhs = ay[x] + params.c[x].dot(&(u_node + &v_x.clone_owned()))
                        - v_x.dot(&e_z);
                    worst = worst.max((sol.y.get(t, node)[x] - rhs).abs());
                }
            }
        }
    }
    worst
}

/// Optimal-control objective
/// `J = var(Y_0(X_0)) + E[sum_t (Gamma Y_{t+1})(X_t) + (U_t+V_t(X_t))' R(X_t) (U_t+V_t(X_t))]`,
/// evaluated exactly through the tree's joint probabilities.
pub fn cost_j(
    tree: &ObservationTree,
    u: &Adapted<DVector<f64>>,
    f: &DVector<f64>,
) -> Result<f64> {
    let sol = bsde_solve_tree(tree, u, f)?;
    Ok(cost_j_given(tree, u, &sol))
}

pub(crate) fn cost_j_given(
    tree: &ObservationTree,
    u: &Adapted<DVector<f64>>,
    sol: &BsdeSolution,
) -> f64 {
    let d = tree.d();
    let m = tree.m();
    let hmm = tree.hmm();
    let params = cost_params(hmm);
    let y0 = sol.y.get(0, 0);
    let mu = hmm.mu();
    let mean: f64 = (0..d).map(|x| mu[x] * y0[x]).sum();
    let second: f64 = (0..d).map(|x| mu[x] * y0[x] * y0[x]).sum();
    let mut j = second - mean * mean;

    for t in 0..tree.depth() {
        for node in 0..tree.node_count(t) {
            let alpha = tree.alpha(t, node);
            let u_node = u.get(t, node);
            let v_node = sol.v.get(t, node);
            for x in 0..d {
                let px = alpha[x];
                if px == 0.0 {
                    continue;
                }
                let uv = u_node + v_node.column(x);
                j += px * uv.dot(&(&params.r[x] * &uv));
                // Expected carre-du-champ of Y_{t+1} over the next symbol.
                for z in 0..=m {
                    let w = px * hmm.c_mat()[(x, z)];
                    if w == 0.0 {
                        continue;
                    }
                    let y_child = sol.y.get(t + 1, tree.child(node, z));
                    let g = gamma(hmm, y_child);
                    j += w * g[x];
                }
            }
        }
    }
    j
}

/// Adapted estimator process: `S` at a node of depth `s` equals
/// `mu(Y_0) - sum_{t=1..s} U_{t-1}' e(z_t)` along the node's prefix.
pub fn estimator_tree(
    tree: &ObservationTree,
    u: &Adapted<DVector<f64>>,
    sol: &BsdeSolution,
) -> Adapted<f64> {
    let m = tree.m();
    let y0 = sol.y.get(0, 0);
    let mu = tree.hmm().mu();
    let s0: f64 = (0..tree.d()).map(|x| mu[x] * y0[x]).sum();
    let mut levels = Vec::with_capacity(tree.depth() + 1);
    levels.push(vec![s0]);
    for t in 0..tree.depth() {
        let mut next = vec![0.0f64; tree.node_count(t + 1)];
        for node in 0..tree.node_count(t) {
            let u_node = u.get(t, node);
            for z in 0..=m {
                let e_z = e_encode(z, m).expect("valid symbol");
                next[tree.child(node, z)] = levels[t][node] - u_node.dot(&e_z);
            }
        }
        levels.push(next);
    }
    Adapted { values: levels }
}

/// Duality check report: control cost, exact estimator MSE, and their gap.
#[derive(Debug, Clone)]
pub struct DualityReport {
    pub j: f64,
    pub mse: f64,
    pub gap: f64,
}

/// Compare `J_T(U;f)` with the exact `E|f(X_T) - S_T|^2` via enumeration.
pub fn duality_check(
    tree: &ObservationTree,
    u: &Adapted<DVector<f64>>,
    f: &DVector<f64>,
) -> Result<DualityReport> {
    let sol = bsde_solve_tree(tree, u, f)?;
    let j = cost_j_given(tree, u, &sol);
    let s = estimator_tree(tree, u, &sol);
    let t_max = tree.depth();
    let mut mse = 0.0;
    for leaf in 0..tree.node_count(t_max) {
        let alpha = tree.alpha(t_max, leaf);
        let s_leaf = *s.get(t_max, leaf);
        for x in 0..tree.d() {
            mse += alpha[x] * (f[x] - s_leaf).powi(2);
        }
    }
    Ok(DualityReport {
        j,
        mse,
        gap: (j - mse).abs(),
    })
}

/// Recover the unique adapted representation `(const, U)` of a leaf
/// function by backward application of the alphabet decomposition:
/// at each node the parent value is the uniform mean of its children and
/// `U(i) = -(child_i - parent)`.
pub fn extract_weights(
    leaf_values: &[f64],
    m: usize,
    depth: usize,
) -> Result<(f64, Adapted<DVector<f64>>)> {
    let expected = (m + 1).pow(depth as u32);
    if leaf_values.len() != expected {
        return Err(Error::Dimension(format!(
            "expected {expected} leaf values, got {}",
            leaf_values.len()
        )));
    }
    let mut u_levels: Vec<Vec<DVector<f64>>> = vec![Vec::new(); depth];
    let mut values = leaf_values.to_vec();
    for t in (0..depth).rev() {
        let parents = (m + 1).pow(t as u32);
        let mut parent_values = vec![0.0f64; parents];
        let mut level = Vec::with_capacity(parents);
        for node in 0..parents {
            let s = &values[node * (m + 1)..(node + 1) * (m + 1)];
            let (s_bar, s_tilde) = decompose(s);
            parent_values[node] = s_bar;
            level.push(-s_tilde);
        }
        u_levels[t] = level;
        values = parent_values;
    }
    Ok((values[0], Adapted { values: u_levels }))
}

/// Evaluate the representation `const - sum_t U_{t-1}' e(z_t)` on a leaf.
pub fn reconstruct_leaf(
    constant: f64,
    u: &Adapted<DVector<f64>>,
    prefix: &[usize],
    m: usize,
) -> f64 {
    let mut s = constant;
    let mut node = 0usize;
    for (t, &z) in prefix.iter().enumerate() {
        let u_node = u.get(t, node);
        // -U' e(z) without materializing e.
        s += if z == 0 { u_node.sum() } else { -u_node[z - 1] };
        node = node * (m + 1) + z;
    }
    s
}

/// Leaf values of `pi_T(f)` with zero-probability subtrees completed by
/// carrying the mean of their positive siblings, which zeroes the weights
/// on impossible continuations (the minimum-norm completion used by the
/// weight oracle on degenerate models).
pub fn filter_leaf_values(tree: &ObservationTree, f: &DVector<f64>) -> Result<Vec<f64>> {
    if f.len() != tree.d() {
        return Err(Error::Dimension("f must be a d-vector".into()));
    }
    let t_max = tree.depth();
    let mut leaves = vec![0.0f64; tree.node_count(t_max)];

    fn fill_constant(
        tree: &ObservationTree,
        t: usize,
        node: usize,
        value: f64,
        leaves: &mut [f64],
    ) {
        if t == tree.depth() {
            leaves[node] = value;
            return;
        }
        for z in 0..=tree.m() {
            fill_constant(tree, t + 1, tree.child(node, z), value, leaves);
        }
    }

    fn fill(
        tree: &ObservationTree,
        f: &DVector<f64>,
        t: usize,
        node: usize,
        leaves: &mut [f64],
    ) -> f64 {
        if t == tree.depth() {
            let pi = tree.filter(t, node).expect("caller guarantees positive");
            let value = pi.dot(f);
            leaves[node] = value;
            return value;
        }
        let m = tree.m();
        let mut child_values = vec![None; m + 1];
        let mut pos_sum = 0.0;
        let mut pos_count = 0usize;
        for z in 0..=m {
            let child = tree.child(node, z);
            if tree.prob(t + 1, child) > 0.0 {
                let v = fill(tree, f, t + 1, child, leaves);
                pos_sum += v;
                pos_count += 1;
                child_values[z] = Some(v);
            }
        }
        debug_assert!(pos_count > 0, "positive node has a positive child");
        let carry = pos_sum / pos_count as f64;
        let mut total = 0.0;
        for z in 0..=m {
            match child_values[z] {
                Some(v) => total += v,
                None => {
                    fill_constant(tree, t + 1, tree.child(node, z), carry, leaves);
                    total += carry;
                }
            }
        }
        total / (m + 1) as f64
    }

    fill(tree, f, 0, 0, &mut leaves);
    Ok(leaves)
}

/// The exact weight oracle: representation of `S_T = pi_T(f)`.
pub fn oracle_weights(
    tree: &ObservationTree,
    f: &DVector<f64>,
) -> Result<(f64, Adapted<DVector<f64>>)> {
    let leaves = filter_leaf_values(tree, f)?;
    extract_weights(&leaves, tree.m(), tree.depth())
}
