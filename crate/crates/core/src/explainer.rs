//! The edge-deletion optimization loop, the random-deletion baseline and
//! replay of a recorded deletion set.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalstat::{group_means, per_user_ndcg};
use crate::graph::{normalize_adjacency, BipartiteGraph};
use crate::labels::EvalLabels;
use crate::losses::{GroupAssignment, LossConfig};
use crate::model::{propagate, score, topk, ModelParameters, RecommendationLists, RelevanceMatrix};
use crate::optim::{Optimizer, OptimizerKind};
use crate::perturb::{
    apply_cn_policy, apply_monotonic_policy, batch_loss_gradient, edge_weights, init_full_state,
    PerturbationMode, PerturbationState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    pub max_epochs: usize,
    pub early_stop_delta: f64,
    pub early_stop_patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub monotonic: bool,
    pub cn: bool,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Initial value of every `p̂` entry.
    pub alpha: f64,
    /// Store wall-clock seconds in epoch records. Off by default so that
    /// trajectories are byte-reproducible.
    pub record_timing: bool,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            max_epochs: 800,
            early_stop_delta: 0.001,
            early_stop_patience: 15,
            learning_rate: 700.0,
            batch_size: 64,
            monotonic: true,
            cn: false,
            seed: 0,
            optimizer: OptimizerKind::PlainGradient,
            alpha: 1.0,
            record_timing: false,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.early_stop_patience == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "max_epochs, early_stop_patience and batch_size must be >= 1".into(),
            ));
        }
        if !(self.early_stop_delta >= 0.0) {
            return Err(Error::InvalidArgument("early_stop_delta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training fairness loss over the epoch's batches; NaN (null in
    /// JSON) for the initial state.
    #[serde(deserialize_with = "f64_or_null")]
    pub fairness_loss: f64,
    /// Unprotected minus protected NDCG@k of the binarized graph.
    pub delta_ndcg: f64,
    /// NDCG@k per group index.
    pub group_ndcg: [f64; 2],
    pub deleted: usize,
    pub deleted_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

fn f64_or_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "reason")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    Budget,
    NodeEmptied { kind: String, index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeletedEdge {
    pub edge: usize,
    pub user: usize,
    pub item: usize,
    /// Epoch in which the edge was first deleted.
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationResult {
    pub method: String,
    /// Edges deleted in the selected state.
    pub deleted: Vec<DeletedEdge>,
    pub selected_epoch: usize,
    pub selected: EpochRecord,
    pub trajectory: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub num_train_edges: usize,
    pub fingerprint: Option<String>,
}

impl ExplanationResult {
    pub fn deleted_edge_ids(&self) -> Vec<usize> {
        self.deleted.iter().map(|d| d.edge).collect()
    }
}

/// Fails with `NodeEmptied` when a node that has edges in the graph has
/// zero total weight.
pub fn check_nonempty(graph: &BipartiteGraph, weights: &[f64]) -> Result<()> {
    for u in 0..graph.num_users() {
        let edges = graph.user_edges(u);
        if !edges.is_empty() && edges.iter().all(|&e| weights[e] == 0.0) {
            return Err(Error::NodeEmptied { kind: "user", index: u });
        }
    }
    for i in 0..graph.num_items() {
        let edges = graph.item_edges(i);
        if !edges.is_empty() && edges.iter().all(|&e| weights[e] == 0.0) {
            return Err(Error::NodeEmptied { kind: "item", index: i });
        }
    }
    Ok(())
}

fn binary_weights_without(graph: &BipartiteGraph, deleted: &[usize]) -> Vec<f64> {
    let mut w = vec![1.0; graph.num_edges()];
    for &e in deleted {
        w[e] = 0.0;
    }
    w
}

/// Scores and top-k lists of the frozen model on the graph without
/// `deleted`.
pub fn replay(
    graph: &BipartiteGraph,
    params: &ModelParameters,
    deleted: &[usize],
    k: usize,
) -> Result<(RelevanceMatrix, RecommendationLists)> {
    let w = binary_weights_without(graph, deleted);
    check_nonempty(graph, &w)?;
    let adj = normalize_adjacency(graph, Some(&w));
    let scores = score(&propagate(&adj, params), params.num_users);
    let lists = topk(&scores, graph, k)?;
    Ok((scores, lists))
}

/// Per-user NDCG@k of the frozen model under edge weights `w`.
pub fn weighted_ndcg(
    graph: &BipartiteGraph,
    params: &ModelParameters,
    weights: &[f64],
    labels: &EvalLabels,
    k: usize,
) -> Vec<Option<f64>> {
    let adj = normalize_adjacency(graph, Some(weights));
    let scores = score(&propagate(&adj, params), params.num_users);
    per_user_ndcg(&scores, graph, labels, k)
}

/// Per-user NDCG@k after deleting `deleted`.
pub fn replay_ndcg(
    graph: &BipartiteGraph,
    params: &ModelParameters,
    deleted: &[usize],
    labels: &EvalLabels,
    k: usize,
) -> Result<Vec<Option<f64>>> {
    let w = binary_weights_without(graph, deleted);
    check_nonempty(graph, &w)?;
    Ok(weighted_ndcg(graph, params, &w, labels, k))
}

/// Everything an epoch record needs besides the training loss.
struct Evaluator<'a> {
    graph: &'a BipartiteGraph,
    params: &'a ModelParameters,
    groups: &'a GroupAssignment,
    labels: &'a EvalLabels,
    k: usize,
}

impl Evaluator<'_> {
    fn record(&self, epoch: usize, fairness_loss: f64, weights: &[f64], deleted: usize) -> EpochRecord {
        let per_user = weighted_ndcg(self.graph, self.params, weights, self.labels, self.k);
        let group_ndcg = group_means(&per_user, self.groups);
        EpochRecord {
            epoch,
            fairness_loss,
            delta_ndcg: group_ndcg[self.groups.unprotected()] - group_ndcg[self.groups.protected()],
            group_ndcg,
            deleted,
            deleted_fraction: deleted as f64 / self.graph.num_edges().max(1) as f64,
            seconds: None,
        }
    }
}

/// Better under the selection rule: smaller |ΔNDCG|, then fewer deletions,
/// then earlier.
fn better(a: &EpochRecord, b: &EpochRecord) -> bool {
    let (x, y) = (a.delta_ndcg.abs(), b.delta_ndcg.abs());
    x < y || (x == y && (a.deleted < b.deleted || (a.deleted == b.deleted && a.epoch < b.epoch)))
}

struct EarlyStop {
    best: f64,
    stale: usize,
    delta: f64,
    patience: usize,
}

impl EarlyStop {
    fn new(cfg: &ExplainerConfig) -> Self {
        EarlyStop {
            best: f64::INFINITY,
            stale: 0,
            delta: cfg.early_stop_delta,
            patience: cfg.early_stop_patience,
        }
    }

    /// Returns true when the run should stop.
    fn update(&mut self, loss: f64) -> bool {
        if loss < self.best - self.delta || self.best.is_infinite() {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

/// Splits `users` into batches of about `batch_size` whose group mix follows
/// the overall proportions.
pub fn stratified_batches(
    users: &[usize],
    groups: &GroupAssignment,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut members: [Vec<usize>; 2] =
        [0, 1].map(|g| users.iter().copied().filter(|&u| groups.group_of(u) == g).collect());
    for m in &mut members {
        m.shuffle(rng);
    }
    let n = users.len();
    let nb = n.div_ceil(batch_size.max(1)).max(1);
    let mut batches = Vec::with_capacity(nb);
    let (mut taken0, mut taken1) = (0, 0);
    for b in 1..=nb {
        let cum = b * n / nb;
        let want0 = cum * members[0].len() / n.max(1);
        let want1 = cum - want0;
        let mut batch = members[0][taken0..want0].to_vec();
        batch.extend_from_slice(&members[1][taken1..want1]);
        taken0 = want0;
        taken1 = want1;
        batches.push(batch);
    }
    batches
}

fn first_deletions(state: &PerturbationState, first: &mut [Option<usize>], weights: &[f64], epoch: usize) {
    for (j, &e) in state.edge_ids().iter().enumerate() {
        if weights[e] == 0.0 && first[j].is_none() {
            first[j] = Some(epoch);
        }
    }
}

fn deleted_list(graph: &BipartiteGraph, weights: &[f64], first: &[Option<usize>], state: &PerturbationState) -> Vec<DeletedEdge> {
    let mut out = Vec::new();
    for (j, &e) in state.edge_ids().iter().enumerate() {
        if weights[e] == 0.0 {
            let (user, item) = graph.edge(e);
            out.push(DeletedEdge {
                edge: e,
                user,
                item,
                epoch: first[j].unwrap_or(0),
            });
        }
    }
    out.sort_by_key(|d| d.edge);
    out
}

/// Learns a set of train edges whose deletion narrows the utility gap
/// between the groups.
pub fn explain(
    graph: &BipartiteGraph,
    params: &ModelParameters,
    groups: &GroupAssignment,
    labels: &EvalLabels,
    loss_cfg: &LossConfig,
    cfg: &ExplainerConfig,
) -> Result<ExplanationResult> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let mut state = init_full_state(graph, cfg.alpha)?;
    if cfg.cn {
        apply_cn_policy(graph, &mut state, groups)?;
    }
    let users = labels.users_with_relevant();
    let eval = Evaluator {
        graph,
        params,
        groups,
        labels,
        k: loss_cfg.k_eval,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, state.len(), cfg.learning_rate);
    let mut first = vec![None; state.len()];
    let mut stopper = EarlyStop::new(cfg);

    let w0 = edge_weights(&state, PerturbationMode::Binary);
    let mut trajectory = vec![eval.record(0, f64::NAN, &w0, 0)];
    let mut best = trajectory[0].clone();
    let mut best_deleted = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut fairness = 0.0;
        let mut batches_run = 0usize;
        for batch in stratified_batches(&users, groups, cfg.batch_size, &mut rng) {
            let grad = match batch_loss_gradient(graph, &state, params, groups, labels, loss_cfg, &batch) {
                Ok(g) => g,
                Err(Error::DegenerateGroup(m)) => {
                    log::debug!("epoch {epoch}: skipping batch ({m})");
                    continue;
                }
                Err(e) => return Err(e),
            };
            fairness += grad.fairness;
            batches_run += 1;
            optimizer.step(&mut state.p_hat, &grad.gradient);
            if cfg.monotonic {
                apply_monotonic_policy(&mut state);
            }
        }
        if batches_run == 0 {
            return Err(Error::DegenerateGroup("no batch contains both groups".into()));
        }
        let fairness = fairness / batches_run as f64;

        let w = edge_weights(&state, PerturbationMode::Binary);
        if let Err(Error::NodeEmptied { kind, index }) = check_nonempty(graph, &w) {
            log::warn!("epoch {epoch}: {kind} {index} lost all edges; keeping epoch {}", epoch - 1);
            // the previous epoch is the last recorded, valid state
            stop_reason = StopReason::NodeEmptied {
                kind: kind.to_string(),
                index,
            };
            break;
        }
        first_deletions(&state, &mut first, &w, epoch);
        let deleted = w.iter().filter(|&&x| x == 0.0).count();
        let mut rec = eval.record(epoch, fairness, &w, deleted);
        if cfg.record_timing {
            rec.seconds = Some(started.elapsed().as_secs_f64());
        }
        log::debug!(
            "epoch {epoch}: fair {:.6} delta {:.6} deleted {deleted}",
            rec.fairness_loss,
            rec.delta_ndcg
        );
        if better(&rec, &best) {
            best = rec.clone();
            best_deleted = deleted_list(graph, &w, &first, &state);
        }
        trajectory.push(rec);
        if stopper.update(fairness) {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok(ExplanationResult {
        method: if cfg.cn { "gnnuers+cn" } else { "gnnuers" }.to_string(),
        deleted: best_deleted,
        selected_epoch: best.epoch,
        selected: best,
        trajectory,
        stop_reason,
        num_train_edges: graph.num_edges(),
        fingerprint: None,
    })
}

/// Deletion probability of the random baseline.
pub fn rnd_p_rate(num_edges: usize) -> f64 {
    100.0 / num_edges as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomConfig {
    pub max_epochs: usize,
    pub early_stop_delta: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Stop once this many edges are deleted and report that state.
    pub budget: Option<usize>,
    pub record_timing: bool,
}

impl Default for RandomConfig {
    fn default() -> Self {
        RandomConfig {
            max_epochs: 800,
            early_stop_delta: 0.001,
            early_stop_patience: 15,
            seed: 0,
            budget: None,
            record_timing: false,
        }
    }
}

/// Deletes each surviving edge with probability `100/|E|` per epoch.
/// Without a budget the reported epoch follows the same selection rule
/// as [`explain`]; with one, it is the state that reaches the budget.
pub fn rnd_p_baseline(
    graph: &BipartiteGraph,
    params: &ModelParameters,
    groups: &GroupAssignment,
    labels: &EvalLabels,
    loss_cfg: &LossConfig,
    cfg: &RandomConfig,
) -> Result<ExplanationResult> {
    let m = graph.num_edges();
    if m < 100 {
        return Err(Error::InvalidArgument(format!("random baseline needs >= 100 edges, got {m}")));
    }
    let rho = rnd_p_rate(m);
    log::info!("random baseline: rho = {rho}");
    let eval = Evaluator {
        graph,
        params,
        groups,
        labels,
        k: loss_cfg.k_eval,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = vec![1.0; m];
    let mut first: Vec<Option<usize>> = vec![None; m];
    let mut trajectory = vec![eval.record(0, f64::NAN, &w, 0)];
    let mut best = trajectory[0].clone();
    let mut best_w = w.clone();
    let mut stopper = EarlyStop::new(&ExplainerConfig {
        early_stop_delta: cfg.early_stop_delta,
        early_stop_patience: cfg.early_stop_patience,
        ..Default::default()
    });
    let mut stop_reason = StopReason::MaxEpochs;
    let mut deleted = 0usize;
    let budget = cfg.budget.unwrap_or(usize::MAX);
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut next = w.clone();
        let mut added = Vec::new();
        for e in 0..m {
            if next[e] == 1.0 && rng.gen::<f64>() < rho {
                added.push(e);
            }
        }
        let mut hit_budget = false;
        if deleted + added.len() >= budget {
            added.shuffle(&mut rng);
            added.truncate(budget - deleted);
            added.sort_unstable();
            hit_budget = true;
        }
        for &e in &added {
            next[e] = 0.0;
        }
        if let Err(Error::NodeEmptied { kind, index }) = check_nonempty(graph, &next) {
            stop_reason = StopReason::NodeEmptied {
                kind: kind.to_string(),
                index,
            };
            break;
        }
        w = next;
        deleted += added.len();
        for &e in &added {
            first[e] = Some(epoch);
        }
        let per_user = weighted_ndcg(graph, params, &w, labels, loss_cfg.k_eval);
        let g = group_means(&per_user, groups);
        let fairness = (g[0] - g[1]).powi(2);
        let mut rec = eval.record(epoch, fairness, &w, deleted);
        if cfg.record_timing {
            rec.seconds = Some(started.elapsed().as_secs_f64());
        }
        let selected = if cfg.budget.is_some() { hit_budget } else { better(&rec, &best) };
        if selected {
            best = rec.clone();
            best_w = w.clone();
        }
        trajectory.push(rec);
        if hit_budget {
            stop_reason = StopReason::Budget;
            break;
        }
        if stopper.update(fairness) {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    let deleted_edges = (0..m)
        .filter(|&e| best_w[e] == 0.0)
        .map(|e| {
            let (user, item) = graph.edge(e);
            DeletedEdge {
                edge: e,
                user,
                item,
                epoch: first[e].unwrap_or(0),
            }
        })
        .collect();
    Ok(ExplanationResult {
        method: "rnd-p".to_string(),
        deleted: deleted_edges,
        selected_epoch: best.epoch,
        selected: best,
        trajectory,
        stop_reason,
        num_train_edges: m,
        fingerprint: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    #[test]
    fn rate_examples() {
        assert_eq!(rnd_p_rate(1000), 0.1);
        assert_eq!(rnd_p_rate(100), 1.0);
    }

    #[test]
    fn batches_follow_proportions() {
        let labels: Vec<usize> = (0..100).map(|u| usize::from(u >= 70)).collect();
        let groups = GroupAssignment::new(labels, ["A".into(), "B".into()], 1).unwrap();
        let users: Vec<usize> = (0..100).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = stratified_batches(&users, &groups, 20, &mut rng);
        assert_eq!(batches.len(), 5);
        for b in &batches {
            assert_eq!(b.len(), 20);
            assert_eq!(b.iter().filter(|&&u| u < 70).count(), 14);
        }
    }

    #[test]
    fn emptied_node_detected() {
        let g = build_graph([("a", "x"), ("a", "y"), ("b", "y")]).unwrap();
        assert!(check_nonempty(&g, &[1.0, 1.0, 1.0]).is_ok());
        assert!(matches!(
            check_nonempty(&g, &[0.0, 1.0, 1.0]),
            Err(Error::NodeEmptied { kind: "item", index: 0 })
        ));
        let p = ModelParameters::init(2, 2, 4, 1, crate::model::Variant::LayerAverage, 0);
        assert!(matches!(replay(&g, &p, &[2], 1), Err(Error::NodeEmptied { kind: "user", index: 1 })));
    }
}
