mod common;

use common::random_graph;
use fairgraph::graph::BipartiteGraph;
use fairgraph::losses::GroupAssignment;
use fairgraph::topology::{
    deleted_edge_distribution, density, gini, intra_group_distance, intra_group_distances, quartile_partition,
    ReferenceSet,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INF: usize = usize::MAX / 4;

fn dense_adjacency(g: &BipartiteGraph) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let mut a = vec![vec![0; n]; n];
    for &(u, i) in g.edges() {
        let v = g.num_users() + i;
        a[u][v] = 1;
        a[v][u] = 1;
    }
    a
}

fn floyd_warshall(a: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = a.len();
    let mut d: Vec<Vec<usize>> = (0..n)
        .map(|r| (0..n).map(|c| if r == c { 0 } else if a[r][c] == 1 { 1 } else { INF }).collect())
        .collect();
    for k in 0..n {
        for r in 0..n {
            for c in 0..n {
                if d[r][k] + d[k][c] < d[r][c] {
                    d[r][c] = d[r][k] + d[k][c];
                }
            }
        }
    }
    d
}

fn oracle_dy(a: &[Vec<usize>], z: usize, members: &[usize]) -> f64 {
    let n = a.len();
    let deg: usize = a[z].iter().sum();
    if deg == 0 || members.is_empty() {
        return 0.0;
    }
    // (A²)[z][v] counts the common neighbors of z and v
    let walks: usize = members.iter().map(|&v| (0..n).map(|m| a[z][m] * a[m][v]).sum::<usize>()).sum();
    walks as f64 / members.len() as f64 / deg as f64
}

fn oracle_igd(d: &[Vec<usize>], z: usize, members: &[usize]) -> f64 {
    let mut counts = vec![0usize; d.len()];
    for &v in members {
        if v != z && d[z][v] < INF {
            counts[d[z][v] / 2] += 1;
        }
    }
    let sum = counts.iter().enumerate().skip(1).fold(0.0, |acc, (n, &c)| acc + c as f64 / n as f64);
    sum / members.len() as f64
}

#[test]
fn density_and_distance_match_brute_force() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nu = rng.gen_range(2..=25);
        let ni = rng.gen_range(2..=50 - nu);
        let g = random_graph(seed, nu, ni, rng.gen_range(0.05..0.5));
        let a = dense_adjacency(&g);
        let d = floyd_warshall(&a);
        let labels: Vec<Option<usize>> = (0..g.num_nodes())
            .map(|v| if v < nu { Some(rng.gen_range(0..2)) } else { Some(2) })
            .collect();
        let sources: Vec<usize> = (0..g.num_nodes()).collect();
        let fast = intra_group_distances(&g, &sources, &labels);
        let all_users: Vec<usize> = (0..nu).collect();
        for v in 0..g.num_nodes() {
            let members: Vec<usize> = (0..g.num_nodes()).filter(|&x| labels[x] == labels[v]).collect();
            let reference = ReferenceSet::from_nodes(g.num_nodes(), members.iter().copied());
            let expected = oracle_igd(&d, v, &members);
            assert_eq!(intra_group_distance(&g, v, &reference).to_bits(), expected.to_bits(), "seed {seed} node {v}");
            assert_eq!(fast[v].to_bits(), expected.to_bits(), "seed {seed} node {v}");
            assert!((0.0..=1.0).contains(&expected));

            let same_type: Vec<usize> = if v < nu { all_users.clone() } else { (nu..g.num_nodes()).collect() };
            let opposite: Vec<usize> = if v < nu { (nu..g.num_nodes()).collect() } else { all_users.clone() };
            for z_set in [&same_type, &opposite, &members] {
                let reference = ReferenceSet::from_nodes(g.num_nodes(), z_set.iter().copied());
                let dy = density(&g, v, &reference);
                assert_eq!(dy.to_bits(), oracle_dy(&a, v, z_set).to_bits(), "seed {seed} node {v}");
                assert!((0.0..=1.0).contains(&dy));
            }
        }
    }
}

#[test]
fn adding_a_shortcut_never_lowers_distance_scores() {
    // path u0-i0-u1-i1-u2, then the shortcut u0-i1
    let ids = |p: &str, n: usize| (0..n).map(|k| format!("{p}{k}")).collect::<Vec<_>>();
    let path = BipartiteGraph::from_parts(ids("u", 3), ids("i", 2), vec![(0, 0), (1, 0), (1, 1), (2, 1)]).unwrap();
    let shortcut = path.with_edges(vec![(0, 0), (1, 0), (1, 1), (2, 1), (0, 1)]).unwrap();
    let users = ReferenceSet::all_users(&path);
    for u in 0..3 {
        assert!(intra_group_distance(&shortcut, u, &users) >= intra_group_distance(&path, u, &users));
    }
    assert_eq!(intra_group_distance(&path, 0, &users), 0.5);
    assert!(intra_group_distance(&shortcut, 0, &users) > 0.5);

    for seed in 0..20u64 {
        let g = random_graph(seed, 10, 12, 0.12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u, i) = loop {
            let (u, i) = (rng.gen_range(0..10), rng.gen_range(0..12));
            if !g.has_edge(u, i) {
                break (u, i);
            }
        };
        let mut edges = g.edges().to_vec();
        edges.push((u, i));
        let h = g.with_edges(edges).unwrap();
        let z = ReferenceSet::all_users(&g);
        for v in 0..10 {
            assert!(intra_group_distance(&h, v, &z) >= intra_group_distance(&g, v, &z));
        }
    }
}

#[test]
fn quartile_masses_sum_to_one() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(12..40);
        let labels: Vec<usize> = (0..n).map(|u| usize::from(u % 3 == 0)).collect();
        let groups = GroupAssignment::new(labels, ["A".into(), "B".into()], 1).unwrap();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let quartiles = [0, 1].map(|g| quartile_partition(&groups.members(g), &values).unwrap());
        for bins in &quartiles {
            let sizes: Vec<usize> = bins.iter().map(Vec::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        let deleted: Vec<usize> = (0..rng.gen_range(1..200)).map(|_| rng.gen_range(0..n)).collect();
        let dist = deleted_edge_distribution(&deleted, &groups, &quartiles, "DEG").unwrap();
        assert!((dist.total_mass() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn gini_of_two_point_distribution() {
    assert_eq!(gini(&[0.0, 1.0]).unwrap(), 0.5);
}

proptest! {
    #[test]
    fn gini_matches_pairwise_definition(values in prop::collection::vec(0.0f64..100.0, 1..40)) {
        prop_assume!(values.iter().sum::<f64>() > 0.0);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let pairs: f64 = values.iter().flat_map(|x| values.iter().map(move |y| (x - y).abs())).sum();
        let expected = pairs / (2.0 * n * n * mean);
        let g = gini(&values).unwrap();
        prop_assert!((g - expected).abs() <= 1e-12);
        prop_assert!((0.0..1.0).contains(&g));
    }
}
