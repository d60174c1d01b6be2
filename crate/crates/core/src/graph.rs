//! Sparse bipartite user–item graph and its symmetric normalization.
//!
//! Users and items live in disjoint dense index spaces. When the graph is
//! viewed as a single `n × n` adjacency (as the propagation code does),
//! user `u` is node `u` and item `i` is node `num_users + i`.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Compressed adjacency rows for one side of the graph.
#[derive(Debug, Clone, Default)]
struct Csr {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    edge_ids: Vec<usize>,
}

impl Csr {
    fn build(rows: usize, pairs: impl Iterator<Item = (usize, usize, usize)>) -> Self {
        let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); rows];
        for (row, col, edge) in pairs {
            buckets[row].push((col, edge));
        }
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut neighbors = Vec::new();
        let mut edge_ids = Vec::new();
        offsets.push(0);
        for mut bucket in buckets {
            bucket.sort_unstable();
            for (col, edge) in bucket {
                neighbors.push(col);
                edge_ids.push(edge);
            }
            offsets.push(neighbors.len());
        }
        Csr {
            offsets,
            neighbors,
            edge_ids,
        }
    }

    fn row(&self, r: usize) -> (&[usize], &[usize]) {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.neighbors[a..b], &self.edge_ids[a..b])
    }
}

/// Immutable bipartite interaction graph.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    by_user: Csr,
    by_item: Csr,
}

/// Per-node edge counts, users first then items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeVector {
    pub num_users: usize,
    pub values: Vec<usize>,
}

impl DegreeVector {
    pub fn user(&self, u: usize) -> usize {
        self.values[u]
    }

    pub fn item(&self, i: usize) -> usize {
        self.values[self.num_users + i]
    }

    pub fn users(&self) -> &[usize] {
        &self.values[..self.num_users]
    }

    pub fn items(&self) -> &[usize] {
        &self.values[self.num_users..]
    }
}

/// Builds a graph from `(user-id, item-id)` pairs, assigning dense indices
/// in first-seen order.
pub fn build_graph<U, I>(interactions: impl IntoIterator<Item = (U, I)>) -> Result<BipartiteGraph>
where
    U: AsRef<str>,
    I: AsRef<str>,
{
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut user_index = HashMap::new();
    let mut item_index = HashMap::new();
    let mut edges = Vec::new();
    for (u, i) in interactions {
        let u = u.as_ref();
        let i = i.as_ref();
        let ui = *user_index.entry(u.to_string()).or_insert_with(|| {
            user_ids.push(u.to_string());
            user_ids.len() - 1
        });
        let ii = *item_index.entry(i.to_string()).or_insert_with(|| {
            item_ids.push(i.to_string());
            item_ids.len() - 1
        });
        edges.push((ui, ii));
    }
    if edges.is_empty() {
        return Err(Error::EmptyGraph);
    }
    BipartiteGraph::from_parts(user_ids, item_ids, edges)
}

/// Normalizes a degree value to `x^{-1/2}`, with `0^{-1/2} := 0`.
#[inline]
pub fn inv_sqrt(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / x.sqrt()
    } else {
        0.0
    }
}

impl BipartiteGraph {
    /// Builds a graph over explicit node spaces. Nodes may have no edges,
    /// which is how train subgraphs keep the index space of the full log.
    pub fn from_parts(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let num_users = user_ids.len();
        let num_items = item_ids.len();
        for &(u, i) in &edges {
            if u >= num_users || i >= num_items {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {i}) outside {num_users} users x {num_items} items"
                )));
            }
        }
        let by_user = Csr::build(
            num_users,
            edges.iter().enumerate().map(|(e, &(u, i))| (u, i, e)),
        );
        for u in 0..num_users {
            let (items, _) = by_user.row(u);
            if let Some(w) = items.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::DuplicateEdge {
                    user: user_ids[u].clone(),
                    item: item_ids[w[0]].clone(),
                });
            }
        }
        let by_item = Csr::build(
            num_items,
            edges.iter().enumerate().map(|(e, &(u, i))| (i, u, e)),
        );
        let user_index = user_ids
            .iter()
            .enumerate()
            .map(|(k, s)| (s.clone(), k))
            .collect();
        let item_index = item_ids
            .iter()
            .enumerate()
            .map(|(k, s)| (s.clone(), k))
            .collect();
        Ok(BipartiteGraph {
            user_ids,
            item_ids,
            user_index,
            item_index,
            edges,
            by_user,
            by_item,
        })
    }

    /// A graph over the same node spaces with a different edge set.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::from_parts(self.user_ids.clone(), self.item_ids.clone(), edges)
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users() + self.num_items()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn user_id(&self, u: usize) -> &str {
        &self.user_ids[u]
    }

    pub fn item_id(&self, i: usize) -> &str {
        &self.item_ids[i]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    /// Items of user `u`, ascending.
    pub fn user_items(&self, u: usize) -> &[usize] {
        self.by_user.row(u).0
    }

    /// Edge ids of user `u`, aligned with [`Self::user_items`].
    pub fn user_edges(&self, u: usize) -> &[usize] {
        self.by_user.row(u).1
    }

    /// Users of item `i`, ascending.
    pub fn item_users(&self, i: usize) -> &[usize] {
        self.by_item.row(i).0
    }

    pub fn item_edges(&self, i: usize) -> &[usize] {
        self.by_item.row(i).1
    }

    pub fn has_edge(&self, u: usize, i: usize) -> bool {
        self.edge_id(u, i).is_some()
    }

    pub fn edge_id(&self, u: usize, i: usize) -> Option<usize> {
        let (items, ids) = self.by_user.row(u);
        items.binary_search(&i).ok().map(|k| ids[k])
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_items(u).len()
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_users(i).len()
    }

    /// Node index of item `i` in the joint `n × n` view.
    pub fn item_node(&self, i: usize) -> usize {
        self.num_users() + i
    }
}

/// Exact edge counts per node.
pub fn degrees(graph: &BipartiteGraph) -> DegreeVector {
    let mut values = Vec::with_capacity(graph.num_nodes());
    values.extend((0..graph.num_users()).map(|u| graph.user_degree(u)));
    values.extend((0..graph.num_items()).map(|i| graph.item_degree(i)));
    DegreeVector {
        num_users: graph.num_users(),
        values,
    }
}

/// `D^{-1/2} A D^{-1/2}` stored once per undirected edge; the `(u,i)` and
/// `(i,u)` entries share the stored value.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency<'g> {
    graph: &'g BipartiteGraph,
    weights: Vec<f64>,
    weighted_degrees: Vec<f64>,
    values: Vec<f64>,
}

/// Symmetric normalization with optional per-edge weights in `[0, 1]`.
///
/// The entry for edge `(u,i)` with weight `w` is `w / sqrt(d(u) d(i))` where
/// `d` is the weighted degree. A node whose weighted degree is zero gets
/// zero entries.
pub fn normalize_adjacency<'g>(
    graph: &'g BipartiteGraph,
    edge_weights: Option<&[f64]>,
) -> NormalizedAdjacency<'g> {
    let weights: Vec<f64> = match edge_weights {
        Some(w) => {
            assert_eq!(w.len(), graph.num_edges(), "one weight per edge");
            w.to_vec()
        }
        None => vec![1.0; graph.num_edges()],
    };
    let nu = graph.num_users();
    let mut weighted_degrees = vec![0.0; graph.num_nodes()];
    for (e, &(u, i)) in graph.edges().iter().enumerate() {
        weighted_degrees[u] += weights[e];
        weighted_degrees[nu + i] += weights[e];
    }
    let values = graph
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(u, i))| {
            weights[e] * inv_sqrt(weighted_degrees[u]) * inv_sqrt(weighted_degrees[nu + i])
        })
        .collect();
    NormalizedAdjacency {
        graph,
        weights,
        weighted_degrees,
        values,
    }
}

impl<'g> NormalizedAdjacency<'g> {
    pub fn graph(&self) -> &'g BipartiteGraph {
        self.graph
    }

    /// Normalized value per edge id.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted degree per joint node index.
    pub fn weighted_degrees(&self) -> &[f64] {
        &self.weighted_degrees
    }

    /// Entry at `(u, i)` in user-major order; zero when no edge exists.
    pub fn user_item(&self, u: usize, i: usize) -> f64 {
        self.graph
            .edge_id(u, i)
            .map(|e| self.values[e])
            .unwrap_or(0.0)
    }

    /// Entry at `(i, u)` read through the item-major ordering.
    pub fn item_user(&self, i: usize, u: usize) -> f64 {
        let users = self.graph.item_users(i);
        match users.binary_search(&u) {
            Ok(k) => self.values[self.graph.item_edges(i)[k]],
            Err(_) => 0.0,
        }
    }

    /// Row sums of the normalized matrix, per joint node index.
    pub fn row_sums(&self) -> Vec<f64> {
        let nu = self.graph.num_users();
        let mut sums = vec![0.0; self.graph.num_nodes()];
        for (e, &(u, i)) in self.graph.edges().iter().enumerate() {
            sums[u] += self.values[e];
            sums[nu + i] += self.values[e];
        }
        sums
    }

    /// `L · X` for a node-feature matrix with `num_nodes` rows.
    pub fn multiply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        self.multiply_into(x, &mut out);
        out
    }

    /// Writes `L · X` into `out`, overwriting it.
    pub fn multiply_into(&self, x: ArrayView2<'_, f64>, out: &mut Array2<f64>) {
        assert_eq!(x.nrows(), self.graph.num_nodes());
        out.fill(0.0);
        let nu = self.graph.num_users();
        for (e, &(u, i)) in self.graph.edges().iter().enumerate() {
            let v = self.values[e];
            if v == 0.0 {
                continue;
            }
            let item = nu + i;
            out.row_mut(u).scaled_add(v, &x.row(item));
            out.row_mut(item).scaled_add(v, &x.row(u));
        }
    }

    /// Dense `n × n` matrix, for small-graph checks.
    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.graph.num_nodes();
        let nu = self.graph.num_users();
        let mut m = Array2::zeros((n, n));
        for (e, &(u, i)) in self.graph.edges().iter().enumerate() {
            m[[u, nu + i]] = self.values[e];
            m[[nu + i, u]] = self.values[e];
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BipartiteGraph {
        build_graph([("u0", "i0"), ("u0", "i1"), ("u1", "i0")]).unwrap()
    }

    #[test]
    fn builds_in_first_seen_order() {
        let g = tiny();
        assert_eq!(g.num_users(), 2);
        assert_eq!(g.num_items(), 2);
        assert_eq!(g.num_edges(), 3);
        assert_eq!(g.user_degree(0), 2);
        assert_eq!(g.user_index("u1"), Some(1));
        assert_eq!(g.item_id(1), "i1");
        assert_eq!(g.edge_id(1, 0), Some(2));
        assert_eq!(g.edge_id(1, 1), None);
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(matches!(
            build_graph([("u0", "i0"), ("u0", "i0")]),
            Err(Error::DuplicateEdge { .. })
        ));
        let none: [(&str, &str); 0] = [];
        assert!(matches!(build_graph(none), Err(Error::EmptyGraph)));
    }

    #[test]
    fn star_degrees() {
        let g = build_graph([("u", "a"), ("u", "b"), ("u", "c")]).unwrap();
        let d = degrees(&g);
        assert_eq!(d.user(0), 3);
        assert_eq!(d.items(), &[1, 1, 1]);
    }

    #[test]
    fn single_edge_normalizes_to_one() {
        let g = build_graph([("u", "i")]).unwrap();
        let l = normalize_adjacency(&g, None);
        assert_eq!(l.user_item(0, 0), 1.0);
    }

    #[test]
    fn two_leaf_star_entries() {
        let g = build_graph([("u", "i1"), ("u", "i2")]).unwrap();
        let l = normalize_adjacency(&g, None);
        let expected = 1.0 / 2f64.sqrt();
        assert!((l.user_item(0, 0) - expected).abs() < 1e-15);
        assert!((l.item_user(1, 0) - expected).abs() < 1e-15);
        assert!((expected - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn zero_weight_is_finite() {
        let g = build_graph([("u", "i")]).unwrap();
        let l = normalize_adjacency(&g, Some(&[0.0]));
        assert_eq!(l.values(), &[0.0]);
        assert!(l.row_sums().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn weighted_single_edge() {
        let g = build_graph([("u", "i")]).unwrap();
        let l = normalize_adjacency(&g, Some(&[0.25]));
        assert!((l.values()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn subgraph_keeps_node_space() {
        let g = tiny();
        let sub = g.with_edges(vec![(0, 1)]).unwrap();
        assert_eq!(sub.num_users(), 2);
        assert_eq!(sub.user_degree(1), 0);
        let l = normalize_adjacency(&sub, None);
        assert_eq!(l.row_sums()[1], 0.0);
    }
}
