//! Perturbation vector over the train edges, the perturbed adjacency it
//! induces, deletion policies, and the gradient of the fairness objective
//! with respect to it.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, BipartiteGraph, NormalizedAdjacency};
use crate::labels::EvalLabels;
use crate::losses::{bounded_distance, fairness_loss, user_utility, GroupAssignment, LossConfig};
use crate::model::{logistic, propagate_layers, score_users, ModelParameters, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationMode {
    /// `logistic(p̂)`, used by the optimizer.
    Continuous,
    /// `1[logistic(p̂) ≥ 0.5]`, used for bookkeeping and reported metrics.
    Binary,
}

/// One real-valued entry per perturbable edge.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationState {
    pub p_hat: Vec<f64>,
    /// Position `j` → graph edge id.
    edges: Vec<usize>,
    deleted: Vec<bool>,
    candidate: Vec<bool>,
    alpha: f64,
    num_graph_edges: usize,
}

impl PerturbationState {
    pub fn len(&self) -> usize {
        self.p_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_hat.is_empty()
    }

    /// Graph edge id of every position.
    pub fn edge_ids(&self) -> &[usize] {
        &self.edges
    }

    pub fn deleted_mask(&self) -> &[bool] {
        &self.deleted
    }

    pub fn candidate_mask(&self) -> &[bool] {
        &self.candidate
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn num_deleted(&self) -> usize {
        self.deleted.iter().filter(|&&d| d).count()
    }

    /// Positions whose value can still change.
    pub fn is_active(&self, j: usize) -> bool {
        self.candidate[j] && !self.deleted[j]
    }

    /// Marks position `j` deleted; used when replaying a recorded set.
    pub fn delete(&mut self, j: usize) {
        self.deleted[j] = true;
    }
}

/// Fills `p̂` with `alpha` over the given train edges. `alpha` must keep the
/// binarized graph equal to the original one.
pub fn init_state(graph: &BipartiteGraph, edges: &[usize], alpha: f64) -> Result<PerturbationState> {
    if !(logistic(alpha) >= 0.5) {
        return Err(Error::InvalidInit { alpha });
    }
    assert!(edges.iter().all(|&e| e < graph.num_edges()), "edge id out of range");
    Ok(PerturbationState {
        p_hat: vec![alpha; edges.len()],
        edges: edges.to_vec(),
        deleted: vec![false; edges.len()],
        candidate: vec![true; edges.len()],
        alpha,
        num_graph_edges: graph.num_edges(),
    })
}

/// [`init_state`] over every train edge.
pub fn init_full_state(graph: &BipartiteGraph, alpha: f64) -> Result<PerturbationState> {
    let edges: Vec<usize> = (0..graph.num_edges()).collect();
    init_state(graph, &edges, alpha)
}

fn position_weight(state: &PerturbationState, j: usize, mode: PerturbationMode) -> f64 {
    if state.deleted[j] {
        return 0.0;
    }
    if !state.candidate[j] {
        return 1.0;
    }
    let s = logistic(state.p_hat[j]);
    match mode {
        PerturbationMode::Continuous => s,
        PerturbationMode::Binary => {
            if s >= 0.5 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Weight of every graph edge; edges outside the perturbable set keep 1.
pub fn edge_weights(state: &PerturbationState, mode: PerturbationMode) -> Vec<f64> {
    let mut w = vec![1.0; state.num_graph_edges];
    for (j, &e) in state.edges.iter().enumerate() {
        w[e] = position_weight(state, j, mode);
    }
    w
}

pub fn perturbed_normalized_adjacency<'g>(
    graph: &'g BipartiteGraph,
    state: &PerturbationState,
    mode: PerturbationMode,
) -> NormalizedAdjacency<'g> {
    normalize_adjacency(graph, Some(&edge_weights(state, mode)))
}

/// Permanently deletes every active entry whose weight fell below 0.5.
pub fn apply_monotonic_policy(state: &mut PerturbationState) {
    for j in 0..state.len() {
        if state.candidate[j] && logistic(state.p_hat[j]) < 0.5 {
            state.deleted[j] = true;
        }
    }
}

/// Restricts perturbation to edges of unprotected users.
pub fn apply_cn_policy(graph: &BipartiteGraph, state: &mut PerturbationState, groups: &GroupAssignment) -> Result<()> {
    let unprotected = groups.unprotected();
    if groups.counts()[unprotected] == 0 {
        return Err(Error::DegenerateGroup("unprotected group is empty".into()));
    }
    for (j, &e) in state.edges.iter().enumerate() {
        let (u, _) = graph.edge(e);
        state.candidate[j] = groups.group_of(u) == unprotected;
    }
    Ok(())
}

/// Gradient of `L_fair + L_dist` with respect to `p̂`, split into parts.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientOutput {
    /// Total gradient, zero on inactive positions.
    pub gradient: Vec<f64>,
    /// `∂S_unprot/∂p̂`, zero on inactive positions.
    pub direction: Vec<f64>,
    pub distance_gradient: Vec<f64>,
    /// Smoothed utility per group index over the batch.
    pub utilities: [f64; 2],
    pub fairness: f64,
    pub distance: f64,
}

/// Gradient over all users that have relevant evaluation items.
pub fn loss_gradient(
    graph: &BipartiteGraph,
    state: &PerturbationState,
    params: &ModelParameters,
    groups: &GroupAssignment,
    labels: &EvalLabels,
    cfg: &LossConfig,
) -> Result<GradientOutput> {
    batch_loss_gradient(graph, state, params, groups, labels, cfg, &labels.users_with_relevant())
}

/// Gradient of the objective restricted to `users`. The protected group's
/// utility enters as a constant: only unprotected users are backpropagated.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss_gradient(
    graph: &BipartiteGraph,
    state: &PerturbationState,
    params: &ModelParameters,
    groups: &GroupAssignment,
    labels: &EvalLabels,
    cfg: &LossConfig,
    users: &[usize],
) -> Result<GradientOutput> {
    let weights = edge_weights(state, PerturbationMode::Continuous);
    let adj = normalize_adjacency(graph, Some(&weights));
    let prop = propagate_layers(&adj, params);
    let out = &prop.output;
    let nu = params.num_users;

    let users: Vec<usize> = users.iter().copied().filter(|&u| labels.has_relevant(u)).collect();
    let scores = score_users(out, nu, &users);
    let unprot = groups.unprotected();
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    let mut score_grads = Vec::new();
    for (row_idx, &u) in users.iter().enumerate() {
        let g = groups.group_of(u);
        let row = scores.row(row_idx);
        let row = row.as_slice().expect("row-major scores");
        let (s, grad) = user_utility(row, graph, labels, u, cfg, g == unprot)?;
        sums[g] += s;
        counts[g] += 1;
        if let Some(grad) = grad {
            score_grads.push((u, grad));
        }
    }
    for g in 0..2 {
        if counts[g] == 0 {
            return Err(Error::DegenerateGroup(format!(
                "group '{}' has no users with relevant items in the batch",
                groups.name(g)
            )));
        }
    }
    let utilities = [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64];

    // ∂S_unprot/∂E*
    let scale = 1.0 / counts[unprot] as f64;
    let mut g_out = Array2::<f64>::zeros(out.raw_dim());
    for (u, grad) in &score_grads {
        for &(i, v) in grad {
            let c = scale * v;
            if c == 0.0 {
                continue;
            }
            g_out.row_mut(*u).scaled_add(c, &out.row(nu + i));
            g_out.row_mut(nu + i).scaled_add(c, &out.row(*u));
        }
    }

    let d_norm = normalized_value_gradient(&adj, params, &prop.layers, &g_out);
    let d_weight = weight_gradient(&adj, &d_norm);

    let x: f64 = state
        .edges
        .iter()
        .map(|&e| (1.0 - weights[e]).powi(2))
        .sum();
    let dist_scale = 0.5 * cfg.beta / ((1.0 + x) * (1.0 + x));

    let fairness_factor = 2.0 * (utilities[unprot] - utilities[groups.protected()]);
    let n = state.len();
    let mut direction = vec![0.0; n];
    let mut distance_gradient = vec![0.0; n];
    let mut gradient = vec![0.0; n];
    for j in 0..n {
        if !state.is_active(j) {
            continue;
        }
        let e = state.edges[j];
        let w = weights[e];
        let dw = w * (1.0 - w);
        direction[j] = d_weight[e] * dw;
        distance_gradient[j] = dist_scale * (-2.0 * (1.0 - w)) * dw;
        gradient[j] = fairness_factor * direction[j] + distance_gradient[j];
        if !gradient[j].is_finite() {
            return Err(Error::NonFiniteGradient { index: j });
        }
    }
    Ok(GradientOutput {
        gradient,
        direction,
        distance_gradient,
        utilities,
        fairness: fairness_loss(&utilities),
        distance: bounded_distance(x, cfg.beta),
    })
}

/// Gradient with respect to each stored normalized value `L̃_e`, summing the
/// `(u,i)` and `(i,u)` positions.
fn normalized_value_gradient(
    adj: &NormalizedAdjacency<'_>,
    params: &ModelParameters,
    layers: &[Array2<f64>],
    g_out: &Array2<f64>,
) -> Vec<f64> {
    let graph = adj.graph();
    let nu = graph.num_users();
    // adjoints[k-1] is the total derivative w.r.t. E_k for k = 1..=K
    let (depth, direct) = match params.variant {
        Variant::LayerAverage => (params.layers, 1.0 / (params.layers + 1) as f64),
        Variant::SingleLayerLinear => (1, 1.0),
    };
    let mut adjoints: Vec<Array2<f64>> = Vec::with_capacity(depth);
    if depth > 0 {
        adjoints.push(g_out * direct);
        for _ in 1..depth {
            let prev = adjoints.last().expect("non-empty");
            let mut next = adj.multiply(prev.view());
            if params.variant == Variant::LayerAverage {
                next.scaled_add(direct, g_out);
            }
            adjoints.push(next);
        }
        adjoints.reverse();
    }
    let mut grad = vec![0.0; graph.num_edges()];
    for (k, adjoint) in adjoints.iter().enumerate() {
        let input = &layers[k];
        for (e, &(u, i)) in graph.edges().iter().enumerate() {
            let it = nu + i;
            grad[e] += adjoint.row(u).dot(&input.row(it)) + adjoint.row(it).dot(&input.row(u));
        }
    }
    grad
}

/// Chains value gradients through the weighted degrees to edge weights.
fn weight_gradient(adj: &NormalizedAdjacency<'_>, d_norm: &[f64]) -> Vec<f64> {
    let graph = adj.graph();
    let nu = graph.num_users();
    let deg = adj.weighted_degrees();
    let values = adj.values();
    let mut node = vec![0.0; graph.num_nodes()];
    for (e, &(u, i)) in graph.edges().iter().enumerate() {
        let t = d_norm[e] * values[e];
        node[u] += t;
        node[nu + i] += t;
    }
    for (v, c) in node.iter_mut().enumerate() {
        *c = if deg[v] > 0.0 { -0.5 * *c / deg[v] } else { 0.0 };
    }
    graph
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(u, i))| {
            let (du, di) = (deg[u], deg[nu + i]);
            let direct = if du > 0.0 && di > 0.0 {
                d_norm[e] / (du * di).sqrt()
            } else {
                0.0
            };
            direct + node[u] + node[nu + i]
        })
        .collect()
}

/// The scalar differentiated by [`loss_gradient`], with the protected
/// utility frozen at `frozen_protected`.
#[allow(clippy::too_many_arguments)]
pub fn surrogate_loss(
    graph: &BipartiteGraph,
    state: &PerturbationState,
    params: &ModelParameters,
    groups: &GroupAssignment,
    labels: &EvalLabels,
    cfg: &LossConfig,
    users: &[usize],
    frozen_protected: f64,
) -> Result<f64> {
    let weights = edge_weights(state, PerturbationMode::Continuous);
    let adj = normalize_adjacency(graph, Some(&weights));
    let out = propagate_layers(&adj, params).output;
    let unprot = groups.unprotected();
    let members: Vec<usize> = users
        .iter()
        .copied()
        .filter(|&u| labels.has_relevant(u) && groups.group_of(u) == unprot)
        .collect();
    if members.is_empty() {
        return Err(Error::DegenerateGroup("unprotected group has no users with relevant items".into()));
    }
    let scores = score_users(&out, params.num_users, &members);
    let mut total = 0.0;
    for (r, &u) in members.iter().enumerate() {
        let row = scores.row(r);
        total += user_utility(row.as_slice().expect("row-major"), graph, labels, u, cfg, false)?.0;
    }
    let s_unprot = total / members.len() as f64;
    let x: f64 = state.edges.iter().map(|&e| (1.0 - weights[e]).powi(2)).sum();
    Ok((s_unprot - frozen_protected).powi(2) + bounded_distance(x, cfg.beta))
}

/// Largest relative error between [`loss_gradient`] and central finite
/// differences of the surrogate loss, over active positions.
pub fn finite_difference_check(
    graph: &BipartiteGraph,
    state: &PerturbationState,
    params: &ModelParameters,
    groups: &GroupAssignment,
    labels: &EvalLabels,
    cfg: &LossConfig,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidStep(step));
    }
    let users = labels.users_with_relevant();
    let analytic = batch_loss_gradient(graph, state, params, groups, labels, cfg, &users)?;
    let frozen = analytic.utilities[groups.protected()];
    let mut worst: f64 = 0.0;
    let mut probe = state.clone();
    for j in 0..state.len() {
        if !state.is_active(j) {
            continue;
        }
        let base = state.p_hat[j];
        probe.p_hat[j] = base + step;
        let up = surrogate_loss(graph, &probe, params, groups, labels, cfg, &users, frozen)?;
        probe.p_hat[j] = base - step;
        let down = surrogate_loss(graph, &probe, params, groups, labels, cfg, &users, frozen)?;
        probe.p_hat[j] = base;
        let fd = (up - down) / (2.0 * step);
        let err = (analytic.gradient[j] - fd).abs() / fd.abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
