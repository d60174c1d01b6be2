//! Evaluation protocol: exact NDCG@k, stratified subgroup resampling, the
//! Wilcoxon signed-rank test and per-group utility-change reports.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::labels::EvalLabels;
use crate::losses::{ideal_dcg, GroupAssignment};
use crate::model::{topk_row, RelevanceMatrix};

/// Binary-gain NDCG of the first `k` entries of `list`.
pub fn ndcg_at_k(list: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::NoRelevantItems);
    }
    let dcg: f64 = list
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| relevant.contains(item))
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum();
    Ok(dcg / ideal_dcg(k.min(relevant.len())))
}

/// NDCG@k per user; `None` for users without relevant items.
pub fn per_user_ndcg(
    scores: &RelevanceMatrix,
    train_graph: &BipartiteGraph,
    labels: &EvalLabels,
    k: usize,
) -> Vec<Option<f64>> {
    (0..scores.scores.nrows())
        .map(|u| {
            if !labels.has_relevant(u) {
                return None;
            }
            let list = topk_row(scores.row(u), train_graph.user_items(u), k);
            ndcg_at_k(&list, labels.items(u), k).ok()
        })
        .collect()
}

/// Mean of the defined per-user values of each group.
pub fn group_means(per_user: &[Option<f64>], groups: &GroupAssignment) -> [f64; 2] {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (u, v) in per_user.iter().enumerate() {
        if let Some(v) = v {
            sums[groups.group_of(u)] += v;
            counts[groups.group_of(u)] += 1;
        }
    }
    [0, 1].map(|g| if counts[g] > 0 { sums[g] / counts[g] as f64 } else { f64::NAN })
}

/// Largest-remainder split of `total` proportional to `weights`. Ties in
/// the remainder go to the earlier entry.
pub fn largest_remainder(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut alloc: Vec<usize> = weights.iter().map(|w| w * total / sum).collect();
    let mut rem: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(g, w)| (w * total % sum, g))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - alloc.iter().sum::<usize>();
    for &(_, g) in rem.iter().take(missing) {
        alloc[g] += 1;
    }
    alloc
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupSample {
    pub users: Vec<usize>,
    /// Members per group index.
    pub counts: [usize; 2],
}

/// `count` samples of `batch_size` users each, drawn without replacement
/// and stratified by group.
pub fn sample_subgroups(
    users: &[usize],
    groups: &GroupAssignment,
    batch_size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SubgroupSample>> {
    if batch_size == 0 || batch_size * 5 > users.len() {
        return Err(Error::BatchTooLarge {
            batch_size,
            users: users.len(),
        });
    }
    let members: [Vec<usize>; 2] =
        [0, 1].map(|g| users.iter().copied().filter(|&u| groups.group_of(u) == g).collect());
    let alloc = largest_remainder(&[members[0].len(), members[1].len()], batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut picked = Vec::with_capacity(batch_size);
        for g in 0..2 {
            for k in sample(&mut rng, members[g].len(), alloc[g]) {
                picked.push(members[g][k]);
            }
        }
        out.push(SubgroupSample {
            users: picked,
            counts: [alloc[0], alloc[1]],
        });
    }
    Ok(out)
}

/// Per-sample mean NDCG of the unprotected group minus that of the
/// protected group.
pub fn delta_ndcg(samples: &[SubgroupSample], per_user: &[Option<f64>], groups: &GroupAssignment) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let m = sample_group_means(s, per_user, groups)?;
            Ok(m[groups.unprotected()] - m[groups.protected()])
        })
        .collect()
}

/// Mean per-user value of each group within one sample.
pub fn sample_group_means(s: &SubgroupSample, per_user: &[Option<f64>], groups: &GroupAssignment) -> Result<[f64; 2]> {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for &u in &s.users {
        if let Some(v) = per_user[u] {
            sums[groups.group_of(u)] += v;
            counts[groups.group_of(u)] += 1;
        }
    }
    if counts.contains(&0) {
        return Err(Error::DegenerateGroup("sample lacks users of one group".into()));
    }
    Ok([sums[0] / counts[0] as f64, sums[1] / counts[1] as f64])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignedRankMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedRankResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub method: SignedRankMethod,
}

/// Average ranks of `|d|`, doubled so they are integers.
pub fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|a, b| abs[*a].total_cmp(&abs[*b]));
    let mut ranks = vec![0; abs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && abs[order[end]] == abs[order[start]] {
            end += 1;
        }
        // ranks start+1..=end averaged, times two
        let doubled = (start + 1 + end) as u64;
        for &k in &order[start..end] {
            ranks[k] = doubled;
        }
        start = end;
    }
    ranks
}

/// Upper bound of `n` for the exact null distribution.
pub const EXACT_LIMIT: usize = 25;

/// Two-sided Wilcoxon signed-rank test of `x - y`, dropping zero
/// differences.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<SignedRankResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Err(Error::AllZeroDifferences);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let plus: u64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total: u64 = ranks.iter().sum();
    let minus = total - plus;
    let w2 = plus.min(minus);
    let statistic = w2 as f64 / 2.0;

    if n <= EXACT_LIMIT {
        // counts[s] = number of sign patterns with doubled positive sum s
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] > 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let tail: u64 = counts[..=w2 as usize].iter().sum();
        let p = (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0);
        return Ok(SignedRankResult {
            statistic,
            p_value: p,
            n,
            method: SignedRankMethod::Exact,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    for chunk in sorted.chunk_by(|a, b| a == b) {
        let t = chunk.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * normal.sf(z)).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(SignedRankResult {
        statistic,
        p_value: p,
        n,
        method: SignedRankMethod::NormalApproximation,
    })
}

/// `p < 0.05/m` per entry.
pub fn bonferroni(p_values: &[f64], m: usize) -> Vec<bool> {
    assert!(m >= 1, "m must be >= 1");
    let threshold = 0.05 / m as f64;
    p_values.iter().map(|&p| p < threshold).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupChange {
    pub group: String,
    pub unprotected: bool,
    pub before: f64,
    pub after: f64,
    /// `(after - before) / before`, as a fraction.
    pub relative_change: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub groups: Vec<GroupChange>,
}

impl UtilityReport {
    /// Tab-separated table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("group\tunprotected\tbefore\tafter\trelative_change_pct\tp_value\tsignificant\n");
        for g in &self.groups {
            s.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{:.4}\t{:.6e}\t{}\n",
                g.group,
                g.unprotected,
                g.before,
                g.after,
                100.0 * g.relative_change,
                g.p_value,
                g.significant
            ));
        }
        s
    }

    pub fn change(&self, group: &str) -> Option<&GroupChange> {
        self.groups.iter().find(|g| g.group == group)
    }
}

/// Per-group NDCG before and after, with a signed-rank test over the
/// subgroup-level group means and Bonferroni correction by `m`.
pub fn utility_change_report(
    before: &[Option<f64>],
    after: &[Option<f64>],
    groups: &GroupAssignment,
    samples: &[SubgroupSample],
    m: usize,
) -> Result<UtilityReport> {
    let mb = group_means(before, groups);
    let ma = group_means(after, groups);
    let mut sb = [Vec::new(), Vec::new()];
    let mut sa = [Vec::new(), Vec::new()];
    for s in samples {
        let b = sample_group_means(s, before, groups)?;
        let a = sample_group_means(s, after, groups)?;
        for g in 0..2 {
            sb[g].push(b[g]);
            sa[g].push(a[g]);
        }
    }
    let mut out = Vec::with_capacity(2);
    for g in 0..2 {
        let p = match wilcoxon_signed_rank(&sb[g], &sa[g]) {
            Ok(r) => r.p_value,
            Err(Error::AllZeroDifferences) => 1.0,
            Err(e) => return Err(e),
        };
        let relative_change = if mb[g] != 0.0 { (ma[g] - mb[g]) / mb[g] } else { 0.0 };
        out.push(GroupChange {
            group: groups.name(g).to_string(),
            unprotected: g == groups.unprotected(),
            before: mb[g],
            after: ma[g],
            relative_change,
            p_value: p,
            significant: bonferroni(&[p], m)[0],
        });
    }
    Ok(UtilityReport { groups: out })
}
