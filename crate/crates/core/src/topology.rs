//! Node-level graph properties (degree, density, intra-group distance),
//! Gini coefficients, quartile partitions and the distribution of deleted
//! edges over them.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::losses::GroupAssignment;

/// Same-type reference nodes `Z`, as a membership mask over joint node
/// indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceSet {
    members: Vec<bool>,
    size: usize,
}

impl ReferenceSet {
    pub fn from_nodes(num_nodes: usize, nodes: impl IntoIterator<Item = usize>) -> Self {
        let mut members = vec![false; num_nodes];
        for v in nodes {
            members[v] = true;
        }
        let size = members.iter().filter(|&&m| m).count();
        ReferenceSet { members, size }
    }

    pub fn all_users(graph: &BipartiteGraph) -> Self {
        Self::from_nodes(graph.num_nodes(), 0..graph.num_users())
    }

    pub fn all_items(graph: &BipartiteGraph) -> Self {
        Self::from_nodes(graph.num_nodes(), graph.num_users()..graph.num_nodes())
    }

    pub fn contains(&self, v: usize) -> bool {
        self.members[v]
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
}

/// Neighbors of a joint node index.
fn neighbors(graph: &BipartiteGraph, v: usize) -> impl Iterator<Item = usize> + '_ {
    let nu = graph.num_users();
    let (users, items): (&[usize], &[usize]) = if v < nu {
        (&[], graph.user_items(v))
    } else {
        (graph.item_users(v - nu), &[])
    };
    users.iter().copied().chain(items.iter().map(move |&i| nu + i))
}

pub fn degree(graph: &BipartiteGraph, v: usize) -> usize {
    let nu = graph.num_users();
    if v < nu {
        graph.user_degree(v)
    } else {
        graph.item_degree(v - nu)
    }
}

/// Mean over the neighbors of `z` of the fraction of `Z` adjacent to that
/// neighbor. Nodes without neighbors get 0.
pub fn density(graph: &BipartiteGraph, z: usize, reference: &ReferenceSet) -> f64 {
    let deg = degree(graph, z);
    if reference.is_empty() || deg == 0 {
        return 0.0;
    }
    let hits: usize = neighbors(graph, z)
        .map(|n| neighbors(graph, n).filter(|&v| reference.contains(v)).count())
        .sum();
    hits as f64 / reference.len() as f64 / deg as f64
}

/// `(Σ_n count_n / n) / |Z|`, where `count_n` is the number of members at
/// same-type distance `n`.
fn igd_from_counts(counts: &[usize], reference_size: usize) -> f64 {
    let sum = counts
        .iter()
        .enumerate()
        .skip(1)
        .fold(0.0, |acc, (n, &c)| acc + c as f64 / n as f64);
    sum / reference_size as f64
}

/// Closeness of `z` to the other members of `Z`: the sum of `1/Γ` over
/// reachable members, where `Γ` is the number of opposite-type nodes on a
/// shortest path, divided by `|Z|`.
pub fn intra_group_distance(graph: &BipartiteGraph, z: usize, reference: &ReferenceSet) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let mut dist = vec![usize::MAX; graph.num_nodes()];
    dist[z] = 0;
    let mut queue = VecDeque::from([z]);
    let mut counts = vec![0usize; 1];
    while let Some(v) = queue.pop_front() {
        if v != z && reference.contains(v) {
            let n = dist[v] / 2;
            if counts.len() <= n {
                counts.resize(n + 1, 0);
            }
            counts[n] += 1;
        }
        for n in neighbors(graph, v) {
            if dist[n] == usize::MAX {
                dist[n] = dist[v] + 1;
                queue.push_back(n);
            }
        }
    }
    igd_from_counts(&counts, reference.len())
}

/// Intra-group distance of every source, with each source's reference set
/// being the nodes that share its label. Runs 64 breadth-first searches at
/// once with bitsets.
pub fn intra_group_distances(graph: &BipartiteGraph, sources: &[usize], labels: &[Option<usize>]) -> Vec<f64> {
    let n = graph.num_nodes();
    let num_labels = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; num_labels];
    for l in labels.iter().flatten() {
        sizes[*l] += 1;
    }
    let mut out = vec![0.0; sources.len()];
    let mut visited = vec![0u64; n];
    let mut frontier = vec![0u64; n];
    let mut next = vec![0u64; n];
    for (chunk_idx, chunk) in sources.chunks(64).enumerate() {
        visited.fill(0);
        frontier.fill(0);
        for (b, &s) in chunk.iter().enumerate() {
            visited[s] |= 1 << b;
            frontier[s] |= 1 << b;
        }
        let mut counts: Vec<[usize; 64]> = vec![[0; 64]];
        let mut level = 0usize;
        loop {
            level += 1;
            let mut any = false;
            for v in 0..n {
                let mut bits = 0u64;
                for u in neighbors(graph, v) {
                    bits |= frontier[u];
                }
                bits &= !visited[v];
                next[v] = bits;
                any |= bits != 0;
            }
            if !any {
                break;
            }
            for v in 0..n {
                let bits = next[v];
                if bits == 0 {
                    continue;
                }
                visited[v] |= bits;
                if level % 2 == 0 {
                    if counts.len() <= level / 2 {
                        counts.push([0; 64]);
                    }
                    if let Some(lv) = labels[v] {
                        let mut rest = bits;
                        while rest != 0 {
                            let b = rest.trailing_zeros() as usize;
                            rest &= rest - 1;
                            if labels[chunk[b]] == Some(lv) {
                                counts[level / 2][b] += 1;
                            }
                        }
                    }
                }
            }
            std::mem::swap(&mut frontier, &mut next);
        }
        for (b, &s) in chunk.iter().enumerate() {
            out[chunk_idx * 64 + b] = match labels[s] {
                Some(l) => {
                    let per_level: Vec<usize> = counts.iter().map(|c| c[b]).collect();
                    igd_from_counts(&per_level, sizes[l])
                }
                None => 0.0,
            };
        }
    }
    out
}

/// Mean absolute difference over all pairs, halved and divided by the mean.
pub fn gini(values: &[f64]) -> Result<f64> {
    let total: f64 = values.iter().sum();
    if values.is_empty() || total == 0.0 {
        return Err(Error::AllZero);
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok((weighted / (n * total)).max(0.0))
}

/// Splits `nodes` into four bins by ascending value (ties by node index).
/// The first `len % 4` bins get one extra node.
pub fn quartile_partition(nodes: &[usize], values: &[f64]) -> Result<[Vec<usize>; 4]> {
    if nodes.len() < 4 {
        return Err(Error::GroupTooSmall(nodes.len()));
    }
    let mut order: Vec<(f64, usize)> = nodes.iter().map(|&v| (values[v], v)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let base = nodes.len() / 4;
    let extra = nodes.len() % 4;
    let mut bins: [Vec<usize>; 4] = Default::default();
    let mut it = order.into_iter().map(|(_, v)| v);
    for (q, bin) in bins.iter_mut().enumerate() {
        let size = base + usize::from(q < extra);
        bin.extend(it.by_ref().take(size));
    }
    Ok(bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileCell {
    pub group: String,
    pub property: String,
    /// 1 (lowest) to 4 (highest).
    pub quartile: usize,
    pub nodes: usize,
    pub deleted: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileDistribution {
    pub property: String,
    pub cells: Vec<QuartileCell>,
}

impl QuartileDistribution {
    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.mass).sum()
    }
}

/// Attributes each deleted edge to its user's (group, quartile) cell and
/// normalizes by the number of deletions. `quartiles[g]` holds the bins of
/// group `g`, indexed by user.
pub fn deleted_edge_distribution(
    deleted_users: &[usize],
    groups: &GroupAssignment,
    quartiles: &[[Vec<usize>; 4]; 2],
    property: &str,
) -> Result<QuartileDistribution> {
    if deleted_users.is_empty() {
        return Err(Error::NoDeletions);
    }
    let mut cell_of = vec![None; groups.num_users()];
    for (g, bins) in quartiles.iter().enumerate() {
        for (q, bin) in bins.iter().enumerate() {
            for &u in bin {
                cell_of[u] = Some((g, q));
            }
        }
    }
    let mut counts = [[0usize; 4]; 2];
    for &u in deleted_users {
        let (g, q) = cell_of[u].ok_or_else(|| Error::InvalidArgument(format!("user {u} is in no quartile")))?;
        counts[g][q] += 1;
    }
    let total = deleted_users.len() as f64;
    let mut cells = Vec::with_capacity(8);
    for g in 0..2 {
        for q in 0..4 {
            cells.push(QuartileCell {
                group: groups.name(g).to_string(),
                property: property.to_string(),
                quartile: q + 1,
                nodes: quartiles[g][q].len(),
                deleted: counts[g][q],
                mass: counts[g][q] as f64 / total,
            });
        }
    }
    Ok(QuartileDistribution {
        property: property.to_string(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePropertyRow {
    pub node_id: String,
    /// `user` or `item`.
    pub kind: String,
    pub group: String,
    pub deg: usize,
    pub dy: f64,
    pub igd: f64,
}

/// Per-node DEG, DY and IGD. User DY is relative to all users and user IGD
/// to the user's demographic group; item properties are relative to all
/// items.
pub fn node_property_table(graph: &BipartiteGraph, groups: &GroupAssignment) -> Vec<NodePropertyRow> {
    let nu = graph.num_users();
    let n = graph.num_nodes();
    let all_users = ReferenceSet::all_users(graph);
    let all_items = ReferenceSet::all_items(graph);
    let labels: Vec<Option<usize>> = (0..n)
        .map(|v| Some(if v < nu { groups.group_of(v) } else { 2 }))
        .collect();
    let nodes: Vec<usize> = (0..n).collect();
    let igd = intra_group_distances(graph, &nodes, &labels);
    (0..n)
        .map(|v| {
            let is_user = v < nu;
            NodePropertyRow {
                node_id: if is_user {
                    graph.user_id(v).to_string()
                } else {
                    graph.item_id(v - nu).to_string()
                },
                kind: if is_user { "user" } else { "item" }.to_string(),
                group: if is_user {
                    groups.name(groups.group_of(v)).to_string()
                } else {
                    "-".to_string()
                },
                deg: degree(graph, v),
                dy: density(graph, v, if is_user { &all_users } else { &all_items }),
                igd: igd[v],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    #[test]
    fn density_examples() {
        // u0's items have degrees 2 and 4 among 10 users
        let mut pairs = vec![("u0", "a"), ("u0", "b"), ("u1", "a"), ("u1", "b"), ("u2", "b"), ("u3", "b")];
        for u in ["u4", "u5", "u6", "u7", "u8", "u9"] {
            pairs.push((u, "c"));
        }
        let g = build_graph(pairs).unwrap();
        let dy = density(&g, 0, &ReferenceSet::all_users(&g));
        assert!((dy - 0.3).abs() < 1e-15);

        let g = build_graph([("u", "a"), ("u", "b")]).unwrap();
        assert_eq!(density(&g, 0, &ReferenceSet::all_users(&g)), 1.0);

        let g = build_graph([("u", "a"), ("u", "b"), ("v", "a"), ("v", "b")]).unwrap();
        assert_eq!(density(&g, 0, &ReferenceSet::all_users(&g)), 1.0);
    }

    #[test]
    fn igd_examples() {
        let g = build_graph([("u1", "i1"), ("u2", "i1"), ("u2", "i2"), ("u3", "i2")]).unwrap();
        let z = ReferenceSet::all_users(&g);
        assert_eq!(intra_group_distance(&g, 0, &z), 0.5);
        let isolated = ReferenceSet::from_nodes(g.num_nodes(), [0]);
        assert_eq!(intra_group_distance(&g, 0, &isolated), 0.0);

        let g = build_graph([("a", "x"), ("a", "y"), ("b", "x"), ("b", "y"), ("c", "x"), ("c", "y")]).unwrap();
        let z = ReferenceSet::all_users(&g);
        assert!((intra_group_distance(&g, 0, &z) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bitset_matches_single_source() {
        let g = build_graph([("u1", "i1"), ("u2", "i1"), ("u2", "i2"), ("u3", "i2"), ("u4", "i3")]).unwrap();
        let labels: Vec<Option<usize>> = (0..g.num_nodes())
            .map(|v| if v < g.num_users() { Some(v % 2) } else { Some(2) })
            .collect();
        let nodes: Vec<usize> = (0..g.num_nodes()).collect();
        let fast = intra_group_distances(&g, &nodes, &labels);
        for v in nodes {
            let z = ReferenceSet::from_nodes(g.num_nodes(), (0..g.num_nodes()).filter(|&w| labels[w] == labels[v]));
            assert_eq!(fast[v], intra_group_distance(&g, v, &z), "node {v}");
        }
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(gini(&[0.0, 1.0]).unwrap(), 0.5);
        assert!(matches!(gini(&[0.0, 0.0]), Err(Error::AllZero)));
    }

    #[test]
    fn quartile_examples() {
        let values: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let eight: Vec<usize> = (0..8).collect();
        let bins = quartile_partition(&eight, &values).unwrap();
        assert!(bins.iter().all(|b| b.len() == 2));
        assert_eq!(bins[3], vec![6, 7]);
        let nine: Vec<usize> = (0..9).collect();
        let sizes: Vec<usize> = quartile_partition(&nine, &values).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 2, 2, 2]);
        let flat = vec![1.0; 8];
        let bins = quartile_partition(&eight, &flat).unwrap();
        assert_eq!(bins[0], vec![0, 1]);
        assert!(matches!(quartile_partition(&[0, 1, 2], &values), Err(Error::GroupTooSmall(3))));
    }

    #[test]
    fn distribution_examples() {
        let groups = GroupAssignment::new(vec![0, 0, 0, 0, 1, 1, 1, 1], ["A".into(), "B".into()], 1).unwrap();
        let q = [
            [vec![0], vec![1], vec![2], vec![3]],
            [vec![4], vec![5], vec![6], vec![7]],
        ];
        let d = deleted_edge_distribution(&[3, 3, 3], &groups, &q, "DEG").unwrap();
        assert_eq!(d.cells[3].mass, 1.0);
        assert_eq!(d.total_mass(), 1.0);
        let d = deleted_edge_distribution(&[0, 2], &groups, &q, "DEG").unwrap();
        assert_eq!((d.cells[0].mass, d.cells[2].mass), (0.5, 0.5));
        assert!(matches!(deleted_edge_distribution(&[], &groups, &q, "DEG"), Err(Error::NoDeletions)));
    }
}
