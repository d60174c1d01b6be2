use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InteractionRecord, UserAttributeTable};
use crate::error::{Error, Result};

/// Two-group synthetic interaction log with a planted utility gap.
///
/// Group A users are labeled gender `M` / age 25, group B users gender `F`
/// / age 45, so either attribute selects the same partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub users_per_group: [usize; 2],
    pub num_items: usize,
    pub mean_degree: [f64; 2],
    /// Zipf exponent of each group's item popularity.
    pub skew: [f64; 2],
    /// Fraction of the catalog that both groups draw from; the rest is
    /// split into group-exclusive halves.
    pub overlap: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::planted_bias(0)
    }
}

impl SyntheticSpec {
    /// The planted-bias configuration used by the efficacy experiments:
    /// group A is more active and concentrates on a popular head that the
    /// recommender learns well, group B spreads more evenly.
    pub fn planted_bias(seed: u64) -> Self {
        SyntheticSpec {
            users_per_group: [50, 50],
            num_items: 200,
            mean_degree: [30.0, 20.0],
            skew: [1.2, 0.8],
            overlap: 0.8,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
        if self.users_per_group.iter().any(|&n| n == 0) || self.num_items < 2 {
            return bad("user and item counts must be positive");
        }
        if self.skew.iter().any(|s| !(*s >= 0.0)) {
            return bad("skew exponents must be >= 0");
        }
        if self.mean_degree.iter().any(|d| !(*d >= 3.0)) {
            return bad("mean degree must be at least 3");
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad("overlap must lie in [0, 1]");
        }
        Ok(())
    }

    /// Item indices each group draws from.
    pub fn catalogs(&self) -> [Vec<usize>; 2] {
        let shared = (self.overlap * self.num_items as f64).round() as usize;
        let exclusive = self.num_items - shared;
        let a_only = exclusive.div_ceil(2);
        let a: Vec<usize> = (0..a_only).chain(exclusive..self.num_items).collect();
        let b: Vec<usize> = (a_only..self.num_items).collect();
        [a, b]
    }
}

pub const GROUP_GENDER: [&str; 2] = ["M", "F"];
pub const GROUP_AGE: [&str; 2] = ["25", "45"];

/// Generates records and attributes from `spec`; identical specs give
/// identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<InteractionRecord>, UserAttributeTable)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let catalogs = spec.catalogs();

    let mut records = Vec::new();
    let mut table = UserAttributeTable::new();
    let mut clock = 0u64;
    let mut user = 0usize;
    for g in 0..2 {
        let mut ranked = catalogs[g].clone();
        ranked.shuffle(&mut rng);
        let weighted: Vec<(usize, f64)> = ranked
            .iter()
            .enumerate()
            .map(|(r, &item)| (item, (r as f64 + 1.0).powf(-spec.skew[g])))
            .collect();
        let mean = spec.mean_degree[g];
        let lo = (mean / 2.0).round().max(3.0) as usize;
        let hi = ((1.5 * mean).round() as usize).max(lo);
        for _ in 0..spec.users_per_group[g] {
            let id = format!("u{user}");
            user += 1;
            table.set(&id, "gender", GROUP_GENDER[g]);
            table.set(&id, "age", GROUP_AGE[g]);
            let degree = rng.gen_range(lo..=hi).min(weighted.len());
            let mut picked: Vec<usize> = weighted
                .choose_multiple_weighted(&mut rng, degree, |w| w.1)
                .expect("weights are positive")
                .map(|w| w.0)
                .collect();
            picked.shuffle(&mut rng);
            for item in picked {
                records.push(InteractionRecord::new(&id, format!("i{item}"), Some(clock)));
                clock += 1;
            }
        }
    }
    Ok((records, table))
}
