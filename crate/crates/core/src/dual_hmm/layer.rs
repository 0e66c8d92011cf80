//! Layer transformations over probability sequences.
//!
//! One layer runs the backward equation with the control law evaluated at
//! the input sequence `rho` (solving each node's linear consistency system
//! jointly, since the control is linear in the node value), then
//! reassembles an updated sequence `rho+` from the partial-sum
//! representation: for the basis of state indicators the partial sums pin
//! `Y_s' rho_s`, a `d x d` linear system per step.
//!
//! The tree version is exact. The path version approximates the
//! martingale part by zero along a single realized path (counterfactual
//! continuations are unavailable); its fixed point is validated against
//! the exact filter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hmm::{
    cross_entropy, filter_step, next_token, simulate_hmm, CrossEntropyReport, EvalMode,
    FilterPredictor, Hmm, SequencePredictor,
};
use crate::linalg::{lstsq_min_norm, pinv_floored, simplex_project, PINV_CUTOFF};
use crate::rng;

use super::control::{control_bracket, rho_moments};
use super::encoding::decompose;
use super::params::{cost_params, CostParams};
use super::tree::{Adapted, ObservationTree};

/// Absolute singular-value floor for the node Gram matrices. A symbol
/// whose total predictive variance sits below this level is treated as
/// deterministic, so the minimum-norm control on it is zero; without the
/// floor, near-point-mass inputs would divide one vanishing quantity by
/// another.
const GRAM_FLOOR: f64 = 1e-6;

/// Iteration controls shared by the tree and path layers.
#[derive(Debug, Clone)]
pub struct LayerOptions {
    pub max_layers: usize,
    /// Stop when the largest simplex-entry change falls below this.
    pub tol: f64,
    /// Relaxation on the rho update (1 = undamped).
    pub damping: f64,
    /// Accept a stall as converged once the change has stopped improving
    /// below this level (projection kinks leave a small numerical floor).
    pub stall_tol: f64,
}

impl Default for LayerOptions {
    fn default() -> Self {
        Self {
            max_layers: 100,
            tol: 1e-8,
            damping: 1.0,
            stall_tol: 1e-6,
        }
    }
}

/// Stall detector over the trailing change history.
fn stalled(history: &[f64], stall_tol: f64) -> bool {
    const WINDOW: usize = 8;
    if history.len() < 2 * WINDOW {
        return false;
    }
    let tail = &history[history.len() - WINDOW..];
    let prev = &history[history.len() - 2 * WINDOW..history.len() - WINDOW];
    let tail_min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let prev_min = prev.iter().cloned().fold(f64::INFINITY, f64::min);
    tail_min < stall_tol && tail_min > 0.5 * prev_min
}

/// Solve one node's control jointly with its value:
/// `[rho(R) + Cov_rho(c)] u = -(rho((c - rho(c)) b) + rho(R v))`,
/// where `b` is the node value at `u = 0`. Minimum-norm selection covers
/// the singular case (point mass with deterministic emissions).
fn node_control(
    params: &CostParams,
    rho: &DVector<f64>,
    b: &DVector<f64>,
    v: Option<&DMatrix<f64>>,
) -> DVector<f64> {
    let moments = rho_moments(params, rho);
    let gram = &moments.r_mean + &moments.c_cov;
    let rhs = control_bracket(params, rho, &moments.c_mean, b, v);
    -(pinv_floored(&gram, PINV_CUTOFF, GRAM_FLOOR) * rhs)
}

/// Least-squares correction `argmin_delta |A_aug delta - resid|^2 + ridge|delta|^2`
/// where `A_aug` stacks `mat` over a sum row. The ridge keeps the normal
/// equations solvable on rank-deficient steps while leaving exact
/// solutions fixed to machine-level accuracy.
fn proximal_correction(mat: &DMatrix<f64>, resid: &DVector<f64>) -> DVector<f64> {
    let d = mat.ncols();
    // Normal equations of [mat; 1'] delta = resid.
    let mut gram = mat.transpose() * mat;
    for i in 0..d {
        for j in 0..d {
            gram[(i, j)] += 1.0;
        }
    }
    let scale = gram.amax().max(1.0);
    let ridge = 1e-12 * scale;
    for i in 0..d {
        gram[(i, i)] += ridge;
    }
    let mut b = mat.transpose() * resid.rows(0, d);
    b.add_scalar_mut(resid[d]);
    match gram.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => lstsq_min_norm(&gram, &b, PINV_CUTOFF),
    }
}

/// Solve `mat x = rhs` only when the full-pivot factorization certifies
/// full numerical rank (relative diagonal test on the pivoted U factor).
fn full_rank_solve(mat: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let piv = mat.clone().full_piv_lu();
    let u = piv.u();
    let n = u.nrows().min(u.ncols());
    if n == 0 {
        return None;
    }
    let u00 = u[(0, 0)].abs();
    if u00 == 0.0 {
        return None;
    }
    for i in 0..n {
        if u[(i, i)].abs() <= 1e-6 * u00 {
            return None;
        }
    }
    piv.solve(rhs)
}


/// Proximal seed for a rank-deficient reconstruction step: the one-step
/// corrected-and-predicted update of the previous column, falling back to
/// the previous column itself (then uniform) when the symbol has zero
/// mass under it. Any exact solution of the step systems chains through
/// this seed unchanged, so degenerate directions inherit adapted content
/// instead of stale iterate values.
fn reconstruction_seed(hmm: &Hmm, prev: &DVector<f64>, z: usize) -> DVector<f64> {
    match filter_step(hmm, prev, z) {
        Ok((next, _)) => next,
        Err(_) => {
            let mut fallback = prev.clone();
            simplex_project(&mut fallback);
            fallback
        }
    }
}

/// Output of one exact tree layer.
#[derive(Debug, Clone)]
pub struct TreeLayer {
    /// Updated sequence; entry (0,0) is the initial distribution.
    pub rho_plus: Adapted<DVector<f64>>,
    /// Per-basis controls (basis `i` solves terminal condition `e_i`).
    pub u_basis: Vec<Adapted<DVector<f64>>>,
    /// Per-basis node values.
    pub y_basis: Vec<Adapted<DVector<f64>>>,
    /// Nodes whose reconstruction system was rank-deficient.
    pub rank_deficient_nodes: usize,
}

/// One exact layer pass over the observation tree.
pub fn layer_tree(tree: &ObservationTree, rho: &Adapted<DVector<f64>>) -> Result<TreeLayer> {
    let d = tree.d();
    let m = tree.m();
    let t_max = tree.depth();
    if rho.values.len() != t_max + 1 {
        return Err(Error::Dimension(format!(
            "rho must cover depths 0..={t_max}"
        )));
    }
    let hmm = tree.hmm();
    let params = cost_params(hmm);
    let a = hmm.a_mat();

    let mut u_basis = Vec::with_capacity(d);
    let mut y_basis = Vec::with_capacity(d);
    let mut p_basis: Vec<Adapted<f64>> = Vec::with_capacity(d);
    for i in 0..d {
        let mut y_levels: Vec<Vec<DVector<f64>>> = vec![Vec::new(); t_max + 1];
        let mut u_levels: Vec<Vec<DVector<f64>>> = vec![Vec::new(); t_max];
        let mut f = DVector::zeros(d);
        f[i] = 1.0;
        y_levels[t_max] = vec![f; tree.node_count(t_max)];
        for t in (0..t_max).rev() {
            let mut y_level = Vec::with_capacity(tree.node_count(t));
            let mut u_level = Vec::with_capacity(tree.node_count(t));
            for node in 0..tree.node_count(t) {
                let ay: Vec<DVector<f64>> = (0..=m)
                    .map(|z| a * &y_levels[t + 1][tree.child(node, z)])
                    .collect();
                let mut b = DVector::zeros(d);
                let mut v = DMatrix::zeros(m, d);
                for x in 0..d {
                    let g: Vec<f64> = (0..=m).map(|z| ay[z][x]).collect();
                    let (g_bar, g_tilde) = decompose(&g);
                    b[x] = g_bar + params.c[x].dot(&g_tilde);
                    v.column_mut(x).copy_from(&g_tilde);
                }
                let rho_node = if t == 0 { hmm.mu() } else { rho.get(t, node) };
                let u = node_control(&params, rho_node, &b, Some(&v));
                let mut y = b;
                for x in 0..d {
                    y[x] += params.c[x].dot(&u);
                }
                y_level.push(y);
                u_level.push(u);
            }
            y_levels[t] = y_level;
            u_levels[t] = u_level;
        }
        // Partial sums along every prefix.
        let y0 = &y_levels[0][0];
        let mu = hmm.mu();
        let p0: f64 = (0..d).map(|x| mu[x] * y0[x]).sum();
        let mut p_levels = Vec::with_capacity(t_max + 1);
        p_levels.push(vec![p0]);
        for t in 0..t_max {
            let mut next = vec![0.0f64; tree.node_count(t + 1)];
            for node in 0..tree.node_count(t) {
                let u_node = &u_levels[t][node];
                for z in 0..=m {
                    let dot = if z == 0 { -u_node.sum() } else { u_node[z - 1] };
                    next[tree.child(node, z)] = p_levels[t][node] - dot;
                }
            }
            p_levels.push(next);
        }
        u_basis.push(Adapted { values: u_levels });
        y_basis.push(Adapted { values: y_levels });
        p_basis.push(Adapted { values: p_levels });
    }

    // Reconstruction: per node solve [Y_s^{(i)}(x)] rho = p_s.
    let mut rho_levels: Vec<Vec<DVector<f64>>> = Vec::with_capacity(t_max + 1);
    rho_levels.push(vec![hmm.mu().clone()]);
    let mut rank_deficient = 0usize;
    for s in 1..=t_max {
        let mut level = Vec::with_capacity(tree.node_count(s));
        for node in 0..tree.node_count(s) {
            let mat = DMatrix::from_fn(d, d, |i, x| y_basis[i].get(s, node)[x]);
            let rhs = DVector::from_fn(d, |i, _| *p_basis[i].get(s, node));
            let mut solved = None;
            if let Some(candidate) = full_rank_solve(&mat, &rhs) {
                let resid = (&mat * &candidate - &rhs).amax();
                if resid.is_finite()
                    && resid <= 1e-8 * (1.0 + rhs.amax())
                    && candidate.amax() <= 1e2
                {
                    solved = Some(candidate);
                }
            }
            let mut sol = match solved {
                Some(sol) => sol,
                None => {
                    rank_deficient += 1;
                    let parent = &rho_levels[s - 1][node / (m + 1)];
                    let seed = reconstruction_seed(hmm, parent, node % (m + 1));
                    let mut resid = DVector::zeros(d + 1);
                    resid.rows_mut(0, d).copy_from(&(&rhs - &mat * &seed));
                    resid[d] = 1.0 - seed.sum();
                    &seed + proximal_correction(&mat, &resid)
                }
            };
            simplex_project(&mut sol);
            level.push(sol);
        }
        rho_levels.push(level);
    }
    Ok(TreeLayer {
        rho_plus: Adapted { values: rho_levels },
        u_basis,
        y_basis,
        rank_deficient_nodes: rank_deficient,
    })
}

/// Converged tree iteration.
#[derive(Debug, Clone)]
pub struct ConvergedTree {
    pub layer: TreeLayer,
    pub rho: Adapted<DVector<f64>>,
    pub layers: usize,
    pub change: f64,
    pub converged: bool,
}

/// Iterate [`layer_tree`] from `init` (uniform when `None`).
pub fn iterate_layer_tree(
    tree: &ObservationTree,
    init: Option<Adapted<DVector<f64>>>,
    opts: &LayerOptions,
) -> Result<ConvergedTree> {
    let d = tree.d();
    let uniform = DVector::from_element(d, 1.0 / d as f64);
    let mut rho = init.unwrap_or_else(|| {
        let mut levels = Vec::with_capacity(tree.depth() + 1);
        levels.push(vec![tree.hmm().mu().clone()]);
        for t in 1..=tree.depth() {
            levels.push(vec![uniform.clone(); tree.node_count(t)]);
        }
        Adapted { values: levels }
    });
    let mut last = None;
    let mut change = f64::INFINITY;
    let mut history = Vec::with_capacity(opts.max_layers);
    for layer_idx in 1..=opts.max_layers {
        let out = layer_tree(tree, &rho)?;
        change = 0.0;
        for t in 1..=tree.depth() {
            for node in 0..tree.node_count(t) {
                let old = &rho.values[t][node];
                let new = &out.rho_plus.values[t][node];
                let mut updated = old * (1.0 - opts.damping) + new * opts.damping;
                simplex_project(&mut updated);
                change = change.max((&updated - old).amax());
                rho.values[t][node] = updated;
            }
        }
        last = Some(out);
        history.push(change);
        if change < opts.tol || stalled(&history, opts.stall_tol) {
            return Ok(ConvergedTree {
                layer: last.unwrap(),
                rho,
                layers: layer_idx,
                change,
                converged: true,
            });
        }
    }
    Ok(ConvergedTree {
        layer: last.expect("at least one layer"),
        rho,
        layers: opts.max_layers,
        change,
        converged: false,
    })
}

/// Output of one path-local layer. Basis solutions are stored columnwise:
/// `y[t]` is `d x d` (state x basis) and `u[t]` is `m x d`
/// (control coordinate x basis).
#[derive(Debug, Clone)]
pub struct PathLayer {
    pub rho_plus: Vec<DVector<f64>>,
    pub y: Vec<DMatrix<f64>>,
    pub u: Vec<DMatrix<f64>>,
    pub rank_deficient_steps: usize,
}

/// Reusable buffers for repeated path layers.
struct PathWorkspace {
    y: Vec<DMatrix<f64>>,
    u: Vec<DMatrix<f64>>,
    b: DMatrix<f64>,
    w: DMatrix<f64>,
    rhs: DMatrix<f64>,
}

impl PathWorkspace {
    fn new(d: usize, m: usize, t_len: usize) -> Self {
        Self {
            y: (0..=t_len).map(|_| DMatrix::zeros(d, d)).collect(),
            u: (0..t_len).map(|_| DMatrix::zeros(m, d)).collect(),
            b: DMatrix::zeros(d, d),
            w: DMatrix::zeros(d, m),
            rhs: DMatrix::zeros(m, d),
        }
    }
}

/// One path-local layer (martingale part set to zero).
///
/// `rho[s]` approximates the posterior after `s+1` symbols; the step at
/// `t = 0` always uses the initial distribution.
fn layer_path_inner(
    hmm: &Hmm,
    params: &CostParams,
    c_stack: &DMatrix<f64>,
    rho: &[DVector<f64>],
    z: &[usize],
    ws: &mut PathWorkspace,
) -> (Vec<DVector<f64>>, usize) {
    let d = hmm.d();
    let m = hmm.m();
    let t_len = z.len();
    let a = hmm.a_mat();

    // Backward sweep, all basis terminal conditions at once.
    ws.y[t_len].fill_with_identity();
    for t in (0..t_len).rev() {
        let rho_t = if t == 0 { hmm.mu() } else { &rho[t - 1] };
        let moments = rho_moments(params, rho_t);
        let gram = &moments.r_mean + &moments.c_cov;
        let gram_pinv = pinv_floored(&gram, PINV_CUTOFF, GRAM_FLOOR);
        // b = A y_{t+1}; w rows = rho(x) (c(x) - rho(c))'.
        let (y_rest, y_tail) = ws.y.split_at_mut(t + 1);
        ws.b.gemm(1.0, a, &y_tail[0], 0.0);
        for x in 0..d {
            let w = rho_t[x];
            for i in 0..m {
                ws.w[(x, i)] = w * (params.c[x][i] - moments.c_mean[i]);
            }
        }
        ws.rhs.gemm(1.0, &ws.w.transpose(), &ws.b, 0.0);
        ws.u[t].gemm(-1.0, &gram_pinv, &ws.rhs, 0.0);
        let y_t = &mut y_rest[t];
        y_t.copy_from(&ws.b);
        y_t.gemm(1.0, c_stack, &ws.u[t], 1.0);
    }

    // Partial sums p_s per basis, then reconstruct rho_s.
    let mut p = ws.y[0].transpose() * hmm.mu();
    let mut rho_plus: Vec<DVector<f64>> = Vec::with_capacity(t_len);
    let mut rank_deficient = 0usize;
    for s in 1..=t_len {
        let sym = z[s - 1];
        // p -= U_{s-1}' e(z_s)
        let u_prev = &ws.u[s - 1];
        if sym == 0 {
            for i in 0..d {
                let mut acc = 0.0;
                for r in 0..m {
                    acc += u_prev[(r, i)];
                }
                p[i] += acc;
            }
        } else {
            for i in 0..d {
                p[i] -= u_prev[(sym - 1, i)];
            }
        }
        // Solve [Y_s basis values]' rho = p with an LU fast path. On a
        // rank-deficient step the system only pins rho up to null
        // directions, so solve proximally: least-squares correction of the
        // current iterate with the sum-to-one row appended. Any exact
        // solution (in particular the filter) is then a fixed point of the
        // reconstruction regardless of degeneracy.
        let mat = ws.y[s].transpose();
        let mut solved = None;
        if let Some(candidate) = full_rank_solve(&mat, &p) {
            let resid = (&mat * &candidate - &p).amax();
            if resid.is_finite() && resid <= 1e-8 * (1.0 + p.amax()) && candidate.amax() <= 1e2 {
                solved = Some(candidate);
            }
        }
        let mut sol = match solved {
            Some(sol) => sol,
            None => {
                rank_deficient += 1;
                let prev = if s == 1 {
                    hmm.mu().clone()
                } else {
                    rho_plus[s - 2].clone()
                };
                let seed = reconstruction_seed(hmm, &prev, sym);
                let mut resid = DVector::zeros(d + 1);
                resid.rows_mut(0, d).copy_from(&(&p - &mat * &seed));
                resid[d] = 1.0 - seed.sum();
                &seed + proximal_correction(&mat, &resid)
            }
        };
        simplex_project(&mut sol);
        rho_plus.push(sol);
    }
    (rho_plus, rank_deficient)
}

/// One path-local layer with fresh buffers.
pub fn layer_path(hmm: &Hmm, rho: &[DVector<f64>], z: &[usize]) -> Result<PathLayer> {
    if rho.len() != z.len() {
        return Err(Error::Dimension(format!(
            "rho length {} must match path length {}",
            rho.len(),
            z.len()
        )));
    }
    if z.iter().any(|&sym| sym > hmm.m()) {
        return Err(Error::Dimension("symbol outside alphabet".into()));
    }
    let params = cost_params(hmm);
    let c_stack = params.c_stack();
    let mut ws = PathWorkspace::new(hmm.d(), hmm.m(), z.len());
    let (rho_plus, rank_deficient) = layer_path_inner(hmm, &params, &c_stack, rho, z, &mut ws);
    Ok(PathLayer {
        rho_plus,
        y: ws.y,
        u: ws.u,
        rank_deficient_steps: rank_deficient,
    })
}

/// Converged path iteration.
#[derive(Debug, Clone)]
pub struct ConvergedPath {
    /// Converged sequence, `rho[s]` after `s+1` symbols.
    pub rho: Vec<DVector<f64>>,
    /// Final-layer per-basis values and controls (columnwise).
    pub y: Vec<DMatrix<f64>>,
    pub u: Vec<DMatrix<f64>>,
    pub layers: usize,
    pub change: f64,
    pub converged: bool,
    pub rank_deficient_steps: usize,
}

impl ConvergedPath {
    /// Control sequence for an arbitrary terminal vector, by linearity in
    /// the basis solutions.
    pub fn weights_for(&self, f: &DVector<f64>) -> Vec<DVector<f64>> {
        self.u.iter().map(|u_t| u_t * f).collect()
    }
}

/// Iterate the path layer from `init` (uniform when `None`).
pub fn iterate_layer_path(
    hmm: &Hmm,
    z: &[usize],
    init: Option<Vec<DVector<f64>>>,
    opts: &LayerOptions,
) -> Result<ConvergedPath> {
    if z.iter().any(|&sym| sym > hmm.m()) {
        return Err(Error::Dimension("symbol outside alphabet".into()));
    }
    let d = hmm.d();
    let t_len = z.len();
    let uniform = DVector::from_element(d, 1.0 / d as f64);
    let mut rho = match init {
        Some(r) => {
            if r.len() != t_len {
                return Err(Error::Dimension("init length mismatch".into()));
            }
            r
        }
        None => vec![uniform; t_len],
    };
    if t_len == 0 {
        return Ok(ConvergedPath {
            rho,
            y: vec![DMatrix::identity(d, d)],
            u: Vec::new(),
            layers: 0,
            change: 0.0,
            converged: true,
            rank_deficient_steps: 0,
        });
    }
    let params = cost_params(hmm);
    let c_stack = params.c_stack();
    let mut ws = PathWorkspace::new(d, hmm.m(), t_len);
    let mut change = f64::INFINITY;
    let mut rank_deficient = 0usize;
    let mut history = Vec::with_capacity(opts.max_layers);
    for layer_idx in 1..=opts.max_layers {
        let (rho_plus, rd) = layer_path_inner(hmm, &params, &c_stack, &rho, z, &mut ws);
        rank_deficient = rd;
        change = 0.0;
        for (old, new) in rho.iter_mut().zip(rho_plus) {
            let mut updated = &*old * (1.0 - opts.damping) + new * opts.damping;
            simplex_project(&mut updated);
            change = change.max((&updated - &*old).amax());
            *old = updated;
        }
        history.push(change);
        if change < opts.tol || stalled(&history, opts.stall_tol) {
            // One more pass at the converged sequence so the reported
            // values and controls are evaluated exactly there.
            let (_, rd) = layer_path_inner(hmm, &params, &c_stack, &rho, z, &mut ws);
            return Ok(ConvergedPath {
                rho,
                y: ws.y,
                u: ws.u,
                layers: layer_idx,
                change,
                converged: true,
                rank_deficient_steps: rd,
            });
        }
    }
    Ok(ConvergedPath {
        rho,
        y: ws.y,
        u: ws.u,
        layers: opts.max_layers,
        change,
        converged: false,
        rank_deficient_steps: rank_deficient,
    })
}

/// Next-token predictions along a realized path from one full-path
/// convergence: prediction `t` (for symbol `z[t]`) reads the converged
/// `rho` after `t` symbols.
///
/// At the fixed point the converged sequence coincides with the causal
/// filter, so this is equivalent to the streaming predictor while solving
/// each path only once; the equivalence is exercised in tests.
pub fn dual_filter_path_predictions(
    hmm: &Hmm,
    z: &[usize],
    opts: &LayerOptions,
) -> Result<(Vec<DVector<f64>>, ConvergedPath)> {
    let converged = iterate_layer_path(hmm, z, None, opts)?;
    let mut preds = Vec::with_capacity(z.len());
    for t in 0..z.len() {
        let rho_t = if t == 0 { hmm.mu() } else { &converged.rho[t - 1] };
        preds.push(next_token(hmm, rho_t));
    }
    Ok((preds, converged))
}


/// Cross-entropy of the dual filter built on `model`, evaluated on data
/// from `truth`.
///
/// With `causal = true` every prediction comes from a prefix-only
/// convergence (streaming predictor). The default full-path mode converges
/// each evaluation path once and reads predictions off the converged
/// sequence, which coincides with the causal filter at the fixed point;
/// the two modes are cross-checked in tests.
pub fn dual_filter_loss(
    truth: &Hmm,
    model: &Hmm,
    layer_opts: &LayerOptions,
    eval: &EvalMode,
    causal: bool,
) -> Result<CrossEntropyReport> {
    if causal {
        let mut predictor = DualFilterPredictor::new(model.clone(), layer_opts.clone());
        return cross_entropy(truth, &mut predictor, eval);
    }
    match eval {
        EvalMode::MonteCarlo {
            paths,
            len,
            burn_in,
            seed,
            rao_blackwell,
        } => {
            let total_len = burn_in + len;
            let mut acc = 0.0f64;
            let mut tokens = 0usize;
            let mut zero_events = 0usize;
            for p in 0..*paths {
                let (_, z) = simulate_hmm(truth, total_len, rng::derive_seed(*seed, p as u64))?;
                let z = &z[..total_len];
                let (preds, _) = dual_filter_path_predictions(model, z, layer_opts)?;
                let mut truth_filter = FilterPredictor::new(truth.clone());
                for (t, &sym) in z.iter().enumerate() {
                    if t >= *burn_in {
                        let pred = &preds[t];
                        if *rao_blackwell {
                            let true_next = truth_filter.predict_next()?;
                            for s in 0..pred.len() {
                                let pt = true_next[s];
                                if pt <= 0.0 {
                                    continue;
                                }
                                if pred[s] <= 0.0 {
                                    zero_events += 1;
                                    acc = f64::INFINITY;
                                } else {
                                    acc += -pt * pred[s].ln();
                                }
                            }
                        } else if pred[sym] <= 0.0 {
                            zero_events += 1;
                            acc = f64::INFINITY;
                        } else {
                            acc += -pred[sym].ln();
                        }
                        tokens += 1;
                    }
                    if *rao_blackwell {
                        truth_filter.observe(sym)?;
                    }
                }
            }
            Ok(CrossEntropyReport {
                loss: acc / tokens.max(1) as f64,
                tokens,
                zero_prob_events: zero_events,
            })
        }
        EvalMode::Exact { .. } => {
            let mut predictor = DualFilterPredictor::new(model.clone(), layer_opts.clone());
            cross_entropy(truth, &mut predictor, eval)
        }
    }
}

/// Streaming causal predictor backed by the path layer iteration.
///
/// Each observation extends the converged sequence by one filter step and
/// re-runs layers to convergence, so prediction `t+1` only ever sees
/// `z_{1:t}`.
#[derive(Debug, Clone)]
pub struct DualFilterPredictor {
    hmm: Hmm,
    opts: LayerOptions,
    prefix: Vec<usize>,
    rho: Vec<DVector<f64>>,
}

impl DualFilterPredictor {
    pub fn new(hmm: Hmm, opts: LayerOptions) -> Self {
        Self {
            hmm,
            opts,
            prefix: Vec::new(),
            rho: Vec::new(),
        }
    }
}

impl SequencePredictor for DualFilterPredictor {
    fn reset(&mut self) {
        self.prefix.clear();
        self.rho.clear();
    }

    fn predict_next(&mut self) -> Result<DVector<f64>> {
        let rho_t = if self.prefix.is_empty() {
            self.hmm.mu().clone()
        } else {
            self.rho[self.prefix.len() - 1].clone()
        };
        Ok(next_token(&self.hmm, &rho_t))
    }

    fn observe(&mut self, z: usize) -> Result<()> {
        // Warm start: extend with one filter step from the last converged
        // column (uniform on an impossible step under this model).
        let prev = if self.prefix.is_empty() {
            self.hmm.mu().clone()
        } else {
            self.rho[self.prefix.len() - 1].clone()
        };
        let extension = match filter_step(&self.hmm, &prev, z) {
            Ok((next, _)) => next,
            Err(_) => DVector::from_element(self.hmm.d(), 1.0 / self.hmm.d() as f64),
        };
        self.prefix.push(z);
        let mut init = self.rho.clone();
        init.push(extension);
        let converged = iterate_layer_path(&self.hmm, &self.prefix, Some(init), &self.opts)?;
        self.rho = converged.rho;
        Ok(())
    }

    fn snapshot(&self) -> Box<dyn SequencePredictor> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{forward_filter, two_cycle, Hmm, TwoCycleSpec};
    use crate::hmm::simulate_hmm;

    fn tree_filter_as_adapted(tree: &ObservationTree) -> Adapted<DVector<f64>> {
        let d = tree.d();
        let uniform = DVector::from_element(d, 1.0 / d as f64);
        let mut levels = Vec::with_capacity(tree.depth() + 1);
        levels.push(vec![tree.hmm().mu().clone()]);
        for t in 1..=tree.depth() {
            levels.push(
                (0..tree.node_count(t))
                    .map(|node| tree.filter(t, node).unwrap_or_else(|| uniform.clone()))
                    .collect(),
            );
        }
        Adapted { values: levels }
    }

    #[test]
    fn exact_filter_is_fixed_point_of_tree_layer() {
        for seed in 0..5 {
            let d = 2 + (seed as usize % 2);
            let hmm = Hmm::random_full_support(d, 1, 400 + seed);
            let tree = ObservationTree::build(&hmm, 4).unwrap();
            let pi = tree_filter_as_adapted(&tree);
            let out = layer_tree(&tree, &pi).unwrap();
            for t in 1..=4 {
                for node in 0..tree.node_count(t) {
                    let diff = (&out.rho_plus.values[t][node] - &pi.values[t][node]).amax();
                    assert!(diff < 1e-8, "seed {seed} t={t} node={node}: {diff:.2e}");
                }
            }
        }
    }

    #[test]
    fn tree_iteration_converges_to_filter_from_uniform() {
        for seed in 0..4 {
            let d = 2 + (seed as usize % 2);
            let hmm = Hmm::random_full_support(d, 1, 500 + seed);
            let tree = ObservationTree::build(&hmm, 4).unwrap();
            let out = iterate_layer_tree(
                &tree,
                None,
                &LayerOptions {
                    max_layers: 200,
                    tol: 1e-8,
                    damping: 1.0,
                    stall_tol: 1e-7,
                },
            )
            .unwrap();
            assert!(out.converged, "seed {seed}: change {}", out.change);
            let pi = tree_filter_as_adapted(&tree);
            for t in 1..=4 {
                for node in 0..tree.node_count(t) {
                    let diff = (&out.rho.values[t][node] - &pi.values[t][node]).amax();
                    assert!(diff < 1e-6, "seed {seed} t={t} node={node}: {diff:.2e}");
                }
            }
        }
    }

    #[test]
    fn one_tree_layer_from_uniform_contracts_toward_filter() {
        let hmm = Hmm::random_full_support(3, 1, 600);
        let tree = ObservationTree::build(&hmm, 4).unwrap();
        let pi = tree_filter_as_adapted(&tree);
        let uniform_init = {
            let d = tree.d();
            let uniform = DVector::from_element(d, 1.0 / d as f64);
            let mut levels = Vec::with_capacity(5);
            levels.push(vec![hmm.mu().clone()]);
            for t in 1..=4 {
                levels.push(vec![uniform.clone(); tree.node_count(t)]);
            }
            Adapted { values: levels }
        };
        let dist = |a: &Adapted<DVector<f64>>| -> f64 {
            let mut worst = 0.0f64;
            for t in 1..=4 {
                for node in 0..tree.node_count(t) {
                    worst = worst.max((&a.values[t][node] - &pi.values[t][node]).amax());
                }
            }
            worst
        };
        let before = dist(&uniform_init);
        let out = layer_tree(&tree, &uniform_init).unwrap();
        let after = dist(&out.rho_plus);
        assert!(
            after < before,
            "one layer did not contract: {before:.3e} -> {after:.3e}"
        );
    }

    #[test]
    fn path_iteration_matches_filter_on_two_cycle() {
        let spec = TwoCycleSpec { d: 16, q: 4 };
        let hmm = two_cycle(&spec).unwrap();
        let (_, z) = simulate_hmm(&hmm, 64, 9).unwrap();
        let z = &z[..64];
        let opts = LayerOptions {
            damping: 0.5,
            ..Default::default()
        };
        let out = iterate_layer_path(&hmm, z, None, &opts).unwrap();
        assert!(out.converged, "no convergence: change {}", out.change);
        let path = forward_filter(&hmm, z).unwrap();
        for (s, (got, want)) in out.rho.iter().zip(&path.pi).enumerate() {
            assert!(
                (got - want).amax() < 1e-3,
                "s={s}: {:.3e}",
                (got - want).amax()
            );
        }
    }

    #[test]
    fn path_weights_sparse_on_event_columns() {
        let spec = TwoCycleSpec { d: 8, q: 2 };
        let hmm = two_cycle(&spec).unwrap();
        let (_, z) = simulate_hmm(&hmm, 48, 4).unwrap();
        let z = &z[..48];
        let opts = LayerOptions {
            damping: 0.5,
            ..Default::default()
        };
        let out = iterate_layer_path(&hmm, z, None, &opts).unwrap();
        assert!(out.converged);
        // f = next-token functional P(Z=1 | x).
        let f = DVector::from_fn(8, |x, _| hmm.c_mat()[(x, 1)]);
        let u = out.weights_for(&f);
        for (t, u_t) in u.iter().enumerate() {
            let position = t + 1; // weight multiplies e(Z_{t+1}), position t+1
            let event = position == 1 || z[position - 2] == 1;
            if !event {
                assert!(
                    u_t.amax() < 1e-6,
                    "position {position}: weight {:.3e} off event column",
                    u_t.amax()
                );
            }
        }
        // Some weight must actually be nonzero (at the branch points).
        assert!(u.iter().any(|u_t| u_t.amax() > 1e-4));
    }

    #[test]
    fn deterministic_single_cycle_has_zero_weights() {
        // A pure cycle (no branch): the filter is a point mass everywhere
        // and all controls vanish.
        use nalgebra::DMatrix;
        let d = 5;
        let mut a = DMatrix::zeros(d, d);
        for x in 0..d - 1 {
            a[(x, x + 1)] = 1.0;
        }
        a[(d - 1, 0)] = 1.0;
        let mut c = DMatrix::zeros(d, 2);
        for x in 0..d {
            if x == 0 {
                c[(x, 1)] = 1.0;
            } else {
                c[(x, 0)] = 1.0;
            }
        }
        let mut mu = DVector::zeros(d);
        mu[0] = 1.0;
        let hmm = Hmm::new(a, c, mu).unwrap();
        let (_, z) = simulate_hmm(&hmm, 20, 1).unwrap();
        let out = iterate_layer_path(&hmm, &z[..20], None, &LayerOptions::default()).unwrap();
        assert!(out.converged);
        for u_t in &out.u {
            assert!(u_t.amax() < 1e-7);
        }
        for (s, rho_s) in out.rho.iter().enumerate() {
            assert!((rho_s.max() - 1.0).abs() < 1e-9, "s={s} not a point mass");
        }
    }

    #[test]
    fn streaming_predictor_agrees_with_full_path_shortcut() {
        let spec = TwoCycleSpec { d: 8, q: 2 };
        let hmm = two_cycle(&spec).unwrap();
        let (_, z) = simulate_hmm(&hmm, 32, 17).unwrap();
        let z = &z[..32];
        let opts = LayerOptions {
            damping: 0.5,
            ..Default::default()
        };
        let (preds, _) = dual_filter_path_predictions(&hmm, z, &opts).unwrap();
        let mut streaming = DualFilterPredictor::new(hmm.clone(), opts);
        for (t, &sym) in z.iter().enumerate() {
            let p = streaming.predict_next().unwrap();
            assert!(
                (&p - &preds[t]).amax() < 1e-6,
                "t={t}: streaming vs shortcut {:.3e}",
                (&p - &preds[t]).amax()
            );
            streaming.observe(sym).unwrap();
        }
    }
}
