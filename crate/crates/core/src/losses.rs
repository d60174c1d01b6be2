//! Differentiable fairness objective: smoothed NDCG, the pairwise group
//! utility gap, and the bounded distance from the original graph.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::UserAttributeTable;
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, NormalizedAdjacency};
use crate::labels::EvalLabels;
use crate::model::{logistic, propagate, score, ModelParameters, RelevanceMatrix};
use crate::perturb::{edge_weights, perturbed_normalized_adjacency, PerturbationMode, PerturbationState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Sigmoid temperature of the rank approximation.
    pub gamma: f64,
    /// Weight of the distance term.
    pub beta: f64,
    /// Cutoff for reported NDCG.
    pub k_eval: usize,
    /// Optional cap on the scored list per user. Relevant items are always
    /// kept; the rest are the highest-scoring unseen items.
    pub max_candidates: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.1,
            beta: 0.5,
            k_eval: 10,
            max_candidates: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.k_eval == 0 {
            return Err(Error::InvalidArgument("k_eval must be >= 1".into()));
        }
        Ok(())
    }
}

/// Binary demographic partition of the users.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    labels: Vec<usize>,
    names: [String; 2],
    protected: usize,
}

impl GroupAssignment {
    /// `labels[u]` is 0 or 1; both groups must be non-empty.
    pub fn new(labels: Vec<usize>, names: [String; 2], protected: usize) -> Result<Self> {
        if labels.iter().any(|&g| g > 1) || protected > 1 {
            return Err(Error::InvalidArgument("group labels must be 0 or 1".into()));
        }
        for g in 0..2 {
            if !labels.contains(&g) {
                return Err(Error::DegenerateGroup(format!("group '{}' has no users", names[g])));
            }
        }
        Ok(GroupAssignment {
            labels,
            names,
            protected,
        })
    }

    /// Groups users by `attribute`, which must take exactly two values.
    /// Group 0 is the lexicographically smaller label. Group 1 starts out
    /// as protected; see [`GroupAssignment::designate`].
    pub fn from_attribute(graph: &BipartiteGraph, table: &UserAttributeTable, attribute: &str) -> Result<Self> {
        let mut values = Vec::with_capacity(graph.num_users());
        for id in graph.user_ids() {
            let v = table
                .get(id, attribute)
                .ok_or_else(|| Error::MissingAttribute { users: vec![id.clone()] })?;
            values.push(v);
        }
        let distinct: BTreeSet<&str> = values.iter().copied().collect();
        if distinct.len() != 2 {
            return Err(Error::DegenerateGroup(format!(
                "attribute '{attribute}' has {} distinct values, expected 2",
                distinct.len()
            )));
        }
        let names: Vec<&str> = distinct.into_iter().collect();
        let labels = values.iter().map(|v| usize::from(*v == names[1])).collect();
        Self::new(labels, [names[0].to_string(), names[1].to_string()], 1)
    }

    /// Marks the group with the lower utility as protected.
    pub fn designate(&mut self, utilities: [f64; 2]) {
        self.protected = usize::from(utilities[1] < utilities[0]);
    }

    pub fn num_users(&self) -> usize {
        self.labels.len()
    }

    pub fn group_of(&self, u: usize) -> usize {
        self.labels[u]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn name(&self, g: usize) -> &str {
        &self.names[g]
    }

    pub fn names(&self) -> &[String; 2] {
        &self.names
    }

    pub fn protected(&self) -> usize {
        self.protected
    }

    pub fn unprotected(&self) -> usize {
        1 - self.protected
    }

    pub fn is_protected(&self, u: usize) -> bool {
        self.labels[u] == self.protected
    }

    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&u| self.labels[u] == g).collect()
    }

    pub fn counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&g| g == 1).count();
        [self.labels.len() - ones, ones]
    }
}

/// Ideal DCG of `n` binary hits.
pub fn ideal_dcg(n: usize) -> f64 {
    (1..=n).map(|p| 1.0 / ((1 + p) as f64).log2()).sum()
}

/// Smoothed negative NDCG of the list `r` against binary relevance `a`.
pub fn ndcg_approx_loss(r: &[f64], a: &[bool], gamma: f64) -> Result<f64> {
    ndcg_approx_loss_grad(r, a, gamma).map(|(l, _)| l)
}

/// Loss and its gradient with respect to `r`. Only relevant positions
/// carry gain, so the cost is `O(hits · |r|)`.
pub fn ndcg_approx_loss_grad(r: &[f64], a: &[bool], gamma: f64) -> Result<(f64, Vec<f64>)> {
    assert_eq!(r.len(), a.len());
    let hits: Vec<usize> = (0..a.len()).filter(|&i| a[i]).collect();
    if hits.is_empty() {
        return Err(Error::NoRelevantItems);
    }
    let idcg = ideal_dcg(hits.len());
    let ln2 = std::f64::consts::LN_2;
    let mut grad = vec![0.0; r.len()];
    let mut gains = Vec::with_capacity(hits.len());
    let mut slopes = vec![0.0; r.len()];
    let mut terms = Vec::with_capacity(r.len());
    for &i in &hits {
        terms.clear();
        for (j, &rj) in r.iter().enumerate() {
            if j == i {
                continue;
            }
            let s = logistic((rj - r[i]) / gamma);
            terms.push(s);
            slopes[j] = s * (1.0 - s) / gamma;
        }
        // summing in sorted order makes the value independent of list order
        terms.sort_unstable_by(f64::total_cmp);
        let z = 1.0 + terms.iter().sum::<f64>();
        let lz = (1.0 + z).ln();
        gains.push(ln2 / lz);
        // d(-gain/log2(1+z))/dz, scaled by 1/idcg below
        let c = ln2 / (lz * lz * (1.0 + z));
        let mut own = 0.0;
        for j in 0..r.len() {
            if j == i {
                continue;
            }
            grad[j] += c * slopes[j];
            own += c * slopes[j];
        }
        grad[i] -= own;
    }
    for g in &mut grad {
        *g /= idcg;
    }
    gains.sort_unstable_by(f64::total_cmp);
    let dcg: f64 = gains.iter().sum();
    Ok((-dcg / idcg, grad))
}

/// Unseen items scored for `u`, with the optional cap applied.
pub fn candidate_items(
    row: &[f64],
    train_graph: &BipartiteGraph,
    labels: &EvalLabels,
    u: usize,
    cfg: &LossConfig,
) -> Vec<usize> {
    let seen = train_graph.user_items(u);
    let mut items: Vec<usize> = (0..row.len())
        .filter(|i| seen.binary_search(i).is_err())
        .collect();
    if let Some(cap) = cfg.max_candidates {
        if items.len() > cap {
            let (mut keep, mut rest): (Vec<usize>, Vec<usize>) =
                items.into_iter().partition(|&i| labels.is_relevant(u, i));
            rest.sort_by(|a, b| row[*b].total_cmp(&row[*a]).then(a.cmp(b)));
            rest.truncate(cap.saturating_sub(keep.len()));
            keep.extend(rest);
            keep.sort_unstable();
            items = keep;
        }
    }
    items
}

/// Per-user smoothed utility `-loss` and, when `with_grad`, its gradient
/// over the full item row.
pub(crate) fn user_utility(
    row: &[f64],
    train_graph: &BipartiteGraph,
    labels: &EvalLabels,
    u: usize,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<(f64, Option<Vec<(usize, f64)>>)> {
    let items = candidate_items(row, train_graph, labels, u, cfg);
    let r: Vec<f64> = items.iter().map(|&i| row[i]).collect();
    let a: Vec<bool> = items.iter().map(|&i| labels.is_relevant(u, i)).collect();
    if with_grad {
        let (loss, g) = ndcg_approx_loss_grad(&r, &a, cfg.gamma)?;
        let grad = items.into_iter().zip(g).map(|(i, v)| (i, -v)).collect();
        Ok((-loss, Some(grad)))
    } else {
        Ok((-ndcg_approx_loss(&r, &a, cfg.gamma)?, None))
    }
}

/// Mean smoothed utility of group `g` over its users that have relevant
/// evaluation items.
pub fn group_utility(
    scores: &RelevanceMatrix,
    train_graph: &BipartiteGraph,
    labels: &EvalLabels,
    groups: &GroupAssignment,
    g: usize,
    cfg: &LossConfig,
) -> Result<f64> {
    let users: Vec<usize> = groups
        .members(g)
        .into_iter()
        .filter(|&u| labels.has_relevant(u))
        .collect();
    if users.is_empty() {
        return Err(Error::DegenerateGroup(format!(
            "group '{}' has no users with relevant items",
            groups.name(g)
        )));
    }
    let mut total = 0.0;
    for &u in &users {
        let row = scores.row(u);
        let row = row.as_slice().expect("row-major scores");
        total += user_utility(row, train_graph, labels, u, cfg, false)?.0;
    }
    Ok(total / users.len() as f64)
}

/// Mean squared pairwise difference of the group utilities.
pub fn fairness_loss(utilities: &[f64]) -> f64 {
    let n = utilities.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = utilities[i] - utilities[j];
            sum += d * d;
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// `beta/2 · x/(1+x)` for a raw squared distance `x`.
pub fn bounded_distance(x: f64, beta: f64) -> f64 {
    0.5 * beta * x / (1.0 + x)
}

/// Squared distance between the perturbed and the original adjacency,
/// one term per perturbable edge.
pub fn squared_distance(state: &PerturbationState, mode: PerturbationMode) -> f64 {
    let w = edge_weights(state, mode);
    state.edge_ids().iter().map(|&e| (1.0 - w[e]).powi(2)).sum()
}

pub fn distance_loss(state: &PerturbationState, mode: PerturbationMode, beta: f64) -> f64 {
    bounded_distance(squared_distance(state, mode), beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeLoss {
    /// Smoothed utility per group index.
    pub utilities: [f64; 2],
    pub fairness: f64,
    pub distance: f64,
    pub total: f64,
}

/// `L_fair + L_dist` of the perturbed model over all users.
pub fn composite_loss(
    graph: &BipartiteGraph,
    state: &PerturbationState,
    params: &ModelParameters,
    groups: &GroupAssignment,
    labels: &EvalLabels,
    cfg: &LossConfig,
    mode: PerturbationMode,
) -> Result<CompositeLoss> {
    let adj = perturbed_normalized_adjacency(graph, state, mode);
    composite_loss_with(graph, &adj, state, params, groups, labels, cfg, mode)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn composite_loss_with(
    graph: &BipartiteGraph,
    adj: &NormalizedAdjacency<'_>,
    state: &PerturbationState,
    params: &ModelParameters,
    groups: &GroupAssignment,
    labels: &EvalLabels,
    cfg: &LossConfig,
    mode: PerturbationMode,
) -> Result<CompositeLoss> {
    let scores = score(&propagate(adj, params), params.num_users);
    let utilities = [
        group_utility(&scores, graph, labels, groups, 0, cfg)?,
        group_utility(&scores, graph, labels, groups, 1, cfg)?,
    ];
    let fairness = fairness_loss(&utilities);
    let distance = distance_loss(state, mode, cfg.beta);
    Ok(CompositeLoss {
        utilities,
        fairness,
        distance,
        total: fairness + distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn single_item_loss() {
        assert_eq!(ndcg_approx_loss(&[3.7], &[true], 0.1).unwrap(), -1.0);
    }

    #[test]
    fn two_item_examples() {
        assert_relative_eq!(ndcg_approx_loss(&[5.0, 1.0], &[true, false], 0.1).unwrap(), -1.0, epsilon = 1e-12);
        let l = ndcg_approx_loss(&[1.0, 5.0], &[true, false], 0.1).unwrap();
        assert_relative_eq!(l, -1.0 / 3f64.log2(), epsilon = 1e-12);
    }

    #[test]
    fn no_relevant() {
        assert!(matches!(ndcg_approx_loss(&[1.0], &[false], 0.1), Err(Error::NoRelevantItems)));
    }

    #[test]
    fn fairness_examples() {
        assert_eq!(fairness_loss(&[0.4, 0.4]), 0.0);
        assert_relative_eq!(fairness_loss(&[0.3, 0.2]), 0.01, epsilon = 1e-15);
        assert_relative_eq!(fairness_loss(&[0.1, 0.2, 0.4]), 0.14 / 3.0, epsilon = 1e-15);
        assert_eq!(fairness_loss(&[0.1, 0.2, 0.4]), fairness_loss(&[0.4, 0.1, 0.2]));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(bounded_distance(0.0, 1.0), 0.0);
        assert_eq!(bounded_distance(1.0, 1.0), 0.25);
        assert_eq!(bounded_distance(3.0, 0.5), 0.1875);
        assert!(bounded_distance(1e12, 2.0) < 1.0);
    }

    #[test]
    fn gradient_matches_differences() {
        let r = [0.3, -0.1, 0.25, 0.8, 0.05];
        let a = [true, false, true, false, false];
        let (_, g) = ndcg_approx_loss_grad(&r, &a, 0.2).unwrap();
        let h = 1e-6;
        for j in 0..r.len() {
            let mut up = r;
            let mut down = r;
            up[j] += h;
            down[j] -= h;
            let fd = (ndcg_approx_loss(&up, &a, 0.2).unwrap() - ndcg_approx_loss(&down, &a, 0.2).unwrap()) / (2.0 * h);
            assert_relative_eq!(g[j], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn groups_from_attribute() {
        let g = crate::graph::build_graph([("a", "x"), ("b", "x"), ("c", "y")]).unwrap();
        let mut t = UserAttributeTable::new();
        t.set("a", "gender", "M");
        t.set("b", "gender", "F");
        t.set("c", "gender", "M");
        let mut groups = GroupAssignment::from_attribute(&g, &t, "gender").unwrap();
        assert_eq!(groups.labels(), &[1, 0, 1]);
        assert_eq!(groups.name(0), "F");
        groups.designate([0.3, 0.1]);
        assert_eq!(groups.protected(), 1);
        assert!(groups.is_protected(0));
        t.set("b", "gender", "M");
        assert!(matches!(
            GroupAssignment::from_attribute(&g, &t, "gender"),
            Err(Error::DegenerateGroup(_))
        ));
    }

    proptest! {
        #[test]
        fn loss_range_and_permutation(
            pairs in prop::collection::vec((-3.0f64..3.0, any::<bool>()), 1..30),
            shift in 0usize..30,
        ) {
            let mut pairs = pairs;
            pairs[0].1 = true;
            let r: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let a: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let l = ndcg_approx_loss(&r, &a, 0.1).unwrap();
            prop_assert!((-1.0..0.0).contains(&l));
            let k = shift % pairs.len();
            let mut rot = pairs.clone();
            rot.rotate_left(k);
            let r2: Vec<f64> = rot.iter().map(|p| p.0).collect();
            let a2: Vec<bool> = rot.iter().map(|p| p.1).collect();
            let l2 = ndcg_approx_loss(&r2, &a2, 0.1).unwrap();
            prop_assert_eq!(l, l2);
        }

        #[test]
        fn fairness_nonnegative(s in prop::collection::vec(-1.0f64..1.0, 2..6)) {
            let f = fairness_loss(&s);
            prop_assert!(f >= 0.0);
            let all_equal = s.iter().all(|v| *v == s[0]);
            prop_assert_eq!(f == 0.0, all_equal);
        }

        #[test]
        fn distance_bounded(x in 0.0f64..1e9, beta in 0.001f64..2.0) {
            let d = bounded_distance(x, beta);
            prop_assert!(d >= 0.0 && d < beta / 2.0);
        }
    }
}
