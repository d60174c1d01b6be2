use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::InteractionRecord;
use crate::error::{Error, Result};

/// Per-user holdout ratios: `test` of each history, then `val` of what remains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub test: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            test: 0.2,
            val: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<InteractionRecord>,
    pub val: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
}

impl DatasetSplit {
    /// All records, train first.
    pub fn all(&self) -> impl Iterator<Item = &InteractionRecord> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    /// Item ids per user in one part.
    pub fn membership(part: &[InteractionRecord]) -> HashMap<&str, Vec<&str>> {
        let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
        for r in part {
            out.entry(r.user.as_str()).or_default().push(r.item.as_str());
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Part {
    Train,
    Val,
    Test,
}

fn holdout_counts(n: usize, ratios: SplitRatios) -> (usize, usize) {
    let n_test = ((ratios.test * n as f64).round() as usize).clamp(1, n - 2);
    let rest = n - n_test;
    let n_val = ((ratios.val * rest as f64).round() as usize).min(rest - 1);
    (n_test, n_val)
}

/// Per-user split into train/validation/test.
///
/// Each user with `n` records gets `round(test·n)` test records (clamped to
/// `[1, n-2]`) and `round(val·rest)` validation records from the remainder
/// (clamped to `[0, rest-1]`). Users whose records all carry timestamps
/// hold out their most recent records; other users are shuffled with the
/// seeded generator. Output parts preserve the input record order.
pub fn split(records: &[InteractionRecord], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    let mut by_user: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (k, r) in records.iter().enumerate() {
        let s = *slot.entry(r.user.as_str()).or_insert_with(|| {
            by_user.push(Vec::new());
            by_user.len() - 1
        });
        by_user[s].push(k);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part = vec![Part::Train; records.len()];
    for idx in &by_user {
        let n = idx.len();
        if n < 3 {
            return Err(Error::TooFewInteractions {
                user: records[idx[0]].user.clone(),
                count: n,
            });
        }
        let (n_test, n_val) = holdout_counts(n, ratios);
        let temporal = idx.iter().all(|&k| records[k].timestamp.is_some());
        // Holdout order: the first `n_test` are test, the next `n_val` validation.
        let holdout: Vec<usize> = if temporal {
            let mut sorted = idx.clone();
            sorted.sort_by_key(|&k| (records[k].timestamp, k));
            sorted.into_iter().rev().collect()
        } else {
            let mut shuffled = idx.clone();
            shuffled.shuffle(&mut rng);
            shuffled
        };
        for &k in &holdout[..n_test] {
            part[k] = Part::Test;
        }
        for &k in &holdout[n_test..n_test + n_val] {
            part[k] = Part::Val;
        }
    }

    let mut out = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (r, p) in records.iter().zip(part) {
        match p {
            Part::Train => out.train.push(r.clone()),
            Part::Val => out.val.push(r.clone()),
            Part::Test => out.test.push(r.clone()),
        }
    }
    Ok(out)
}
