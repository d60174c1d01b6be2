#![allow(dead_code)]

use fairgraph::graph::BipartiteGraph;
use fairgraph::labels::EvalLabels;
use fairgraph::losses::GroupAssignment;
use fairgraph::model::{ModelParameters, Variant};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub graph: BipartiteGraph,
    pub labels: EvalLabels,
    pub groups: GroupAssignment,
    pub params: ModelParameters,
}

/// Random bipartite graph where every user has at least one train edge
/// and at least one held-out item, users alternate between two groups.
pub fn random_fixture(seed: u64, num_users: usize, num_items: usize, dim: usize, layers: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    let mut held = Vec::new();
    for u in 0..num_users {
        let mut items: Vec<usize> = (0..num_items).collect();
        items.shuffle(&mut rng);
        let n_train = rng.gen_range(1..=(num_items - 1).min(4));
        let n_test = rng.gen_range(1..=(num_items - n_train).min(3));
        for &i in &items[..n_train] {
            edges.push((u, i));
        }
        held.push(items[n_train..n_train + n_test].to_vec());
    }
    let graph = BipartiteGraph::from_parts(
        (0..num_users).map(|u| format!("u{u}")).collect(),
        (0..num_items).map(|i| format!("i{i}")).collect(),
        edges,
    )
    .unwrap();
    let labels = EvalLabels::new(held);
    let groups = GroupAssignment::new(
        (0..num_users).map(|u| u % 2).collect(),
        ["A".to_string(), "B".to_string()],
        1,
    )
    .unwrap();
    let params = ModelParameters::init(num_users, num_items, dim, layers, Variant::LayerAverage, seed ^ 0x5eed);
    Fixture { graph, labels, groups, params }
}

/// Random bipartite graph with independent edge probability `p`.
pub fn random_graph(seed: u64, num_users: usize, num_items: usize, p: f64) -> BipartiteGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..num_users {
        for i in 0..num_items {
            if rng.gen_bool(p) {
                edges.push((u, i));
            }
        }
    }
    BipartiteGraph::from_parts(
        (0..num_users).map(|u| format!("u{u}")).collect(),
        (0..num_items).map(|i| format!("i{i}")).collect(),
        edges,
    )
    .unwrap()
}

/// Planted-bias synthetic run up to a trained backbone, with groups
/// designated by test-set utility.
pub fn synthetic_fixture(seed: u64, epochs: usize) -> Fixture {
    use fairgraph::data::{generate_synthetic, split, SplitRatios, SyntheticSpec};
    use fairgraph::evalstat::{group_means, per_user_ndcg};
    use fairgraph::graph::{build_graph, normalize_adjacency};
    use fairgraph::model::{propagate, score, train_backbone, TrainConfig};

    let (records, table) = generate_synthetic(&SyntheticSpec::planted_bias(seed)).unwrap();
    let parts = split(&records, SplitRatios::default(), seed).unwrap();
    let full = build_graph(parts.all().map(|r| (r.user.as_str(), r.item.as_str()))).unwrap();
    let train_edges = parts
        .train
        .iter()
        .map(|r| (full.user_index(&r.user).unwrap(), full.item_index(&r.item).unwrap()))
        .collect();
    let graph = full.with_edges(train_edges).unwrap();
    let val = EvalLabels::from_records(&graph, &parts.val).unwrap();
    let labels = EvalLabels::from_records(&graph, &parts.test).unwrap();
    let cfg = TrainConfig { epochs, lr: 0.01, batch_size: 256, seed, ..Default::default() };
    let (params, _) = train_backbone(&graph, &val, &cfg).unwrap();
    let mut groups = GroupAssignment::from_attribute(&graph, &table, "gender").unwrap();
    let scores = score(&propagate(&normalize_adjacency(&graph, None), &params), graph.num_users());
    groups.designate(group_means(&per_user_ndcg(&scores, &graph, &labels, 10), &groups));
    Fixture { graph, labels, groups, params }
}
