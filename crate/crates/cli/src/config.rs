use std::fs;
use std::path::{Path, PathBuf};

use fairgraph::data::{FormatSpec, SyntheticSpec};
use fairgraph::explainer::{ExplainerConfig, RandomConfig};
use fairgraph::losses::LossConfig;
use fairgraph::model::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    Synthetic,
    Movielens1m,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Directory holding `ratings.dat` and `users.dat` for `movielens-1m`.
    pub path: Option<PathBuf>,
    /// Interaction and attribute files for `files`.
    pub interactions: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    /// Column layout for `files`; `movielens-1m` uses its own.
    pub format: FormatSpec,
    pub synthetic: SyntheticSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: DatasetSource::Synthetic,
            path: None,
            interactions: None,
            attributes: None,
            format: FormatSpec::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl DatasetConfig {
    /// Interaction and attribute paths, for file-backed sources.
    pub fn files(&self) -> CliResult<Option<(PathBuf, PathBuf)>> {
        match self.source {
            DatasetSource::Synthetic => Ok(None),
            DatasetSource::Movielens1m => {
                let dir = self
                    .path
                    .as_ref()
                    .ok_or_else(|| CliError::Input("dataset.path is required for movielens-1m".into()))?;
                Ok(Some((dir.join("ratings.dat"), dir.join("users.dat"))))
            }
            DatasetSource::Files => match (&self.interactions, &self.attributes) {
                (Some(i), Some(a)) => Ok(Some((i.clone(), a.clone()))),
                _ => Err(CliError::Input(
                    "dataset.interactions and dataset.attributes are required for files".into(),
                )),
            },
        }
    }

    pub fn format_spec(&self) -> FormatSpec {
        match self.source {
            DatasetSource::Movielens1m => FormatSpec::movielens_1m(),
            _ => self.format.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Users with fewer distinct items are dropped (single pass).
    pub k_min: usize,
    /// Ages below this are Younger. Required when `attribute = "age"`.
    pub age_threshold: Option<f64>,
    /// Collapse repeated (user, item) events, e.g. plays of one artist.
    pub group_artists: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            k_min: 5,
            age_threshold: None,
            group_artists: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test: f64,
    pub val: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test: 0.2,
            val: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub max_epochs: usize,
    pub early_stop_delta: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Fixed deletion budget.
    pub budget: Option<usize>,
    /// Take the budget from this method's explanation instead.
    pub budget_from: Option<String>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let r = RandomConfig::default();
        BaselineConfig {
            max_epochs: r.max_epochs,
            early_stop_delta: r.early_stop_delta,
            early_stop_patience: r.early_stop_patience,
            seed: r.seed,
            budget: None,
            budget_from: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub k: usize,
    pub subgroups: usize,
    /// Users per subgroup sample; the explainer batch size when unset.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            k: 10,
            subgroups: 100,
            batch_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// `gender` or `age`.
    pub attribute: String,
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub backbone: TrainConfig,
    pub loss: LossConfig,
    pub explainer: ExplainerConfig,
    pub baseline: BaselineConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("run"),
            attribute: "gender".into(),
            dataset: DatasetConfig::default(),
            preprocess: PreprocessConfig::default(),
            split: SplitConfig::default(),
            backbone: TrainConfig::default(),
            loss: LossConfig::default(),
            explainer: ExplainerConfig::default(),
            baseline: BaselineConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file and applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        let raw: toml::Table = toml::from_str(&text).map_err(|e| CliError::Input(format!("invalid config: {e}")))?;
        let mut cfg: RunConfig = toml::Value::Table(raw.clone())
            .try_into()
            .map_err(|e| CliError::Input(format!("invalid config: {e}")))?;
        let known = toml::Value::try_from(&cfg).map_err(|e| CliError::Input(e.to_string()))?;
        if let Some(key) = unknown_key(&raw, &known, "") {
            return Err(CliError::Input(format!("unknown config key '{key}'")));
        }
        for o in overrides {
            cfg = cfg.with_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `dotted.key=value` override. The value is parsed as a
    /// TOML literal, falling back to a bare string.
    pub fn with_override(&self, assignment: &str) -> CliResult<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("override '{assignment}' is not key=value")))?;
        let key = key.trim();
        let value = parse_literal(raw.trim());
        let mut tree = toml::Value::try_from(self).map_err(|e| CliError::Input(e.to_string()))?;
        let path: Vec<&str> = key.split('.').collect();
        let (last, parents) = path.split_last().expect("split yields one part");
        let mut node = &mut tree;
        for part in parents {
            node = node
                .get_mut(*part)
                .filter(|v| v.is_table())
                .ok_or_else(|| CliError::Input(format!("unknown config key '{key}'")))?;
        }
        node.as_table_mut()
            .expect("parents are tables")
            .insert(last.to_string(), value.clone());
        let cfg: RunConfig = tree
            .try_into()
            .map_err(|e| CliError::Input(format!("override '{assignment}': {e}")))?;
        // keys the structs do not know are dropped on the way back
        let check = toml::Value::try_from(&cfg).map_err(|e| CliError::Input(e.to_string()))?;
        let mut node = &check;
        for part in &path {
            node = node
                .get(*part)
                .ok_or_else(|| CliError::Input(format!("unknown config key '{key}'")))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.attribute != "gender" && self.attribute != "age" {
            return Err(CliError::Input(format!(
                "attribute must be 'gender' or 'age', got '{}'",
                self.attribute
            )));
        }
        if self.attribute == "age" && self.preprocess.age_threshold.is_none() {
            return Err(CliError::Input("preprocess.age_threshold is required for attribute 'age'".into()));
        }
        if self.preprocess.k_min == 0 {
            return Err(CliError::Input("preprocess.k_min must be >= 1".into()));
        }
        if let Some((i, a)) = self.dataset.files()? {
            for p in [i, a] {
                if !p.is_file() {
                    return Err(CliError::Input(format!("dataset file not found: {}", p.display())));
                }
            }
        }
        self.loss.validate().map_err(CliError::input)?;
        self.explainer.validate().map_err(CliError::input)?;
        Ok(())
    }

    /// Key under which the attribute's group label is stored.
    pub fn attribute_key(&self) -> &str {
        if self.attribute == "age" {
            fairgraph::data::AGE_GROUP
        } else {
            "gender"
        }
    }

    pub fn subgroup_batch(&self) -> usize {
        self.evaluation.batch_size.unwrap_or(self.explainer.batch_size)
    }

    pub fn random_config(&self, budget: Option<usize>) -> RandomConfig {
        RandomConfig {
            max_epochs: self.baseline.max_epochs,
            early_stop_delta: self.baseline.early_stop_delta,
            early_stop_patience: self.baseline.early_stop_patience,
            seed: self.baseline.seed,
            budget: budget.or(self.baseline.budget),
            record_timing: self.explainer.record_timing,
        }
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// First key of `input` that does not survive a round trip through the
/// config structs.
fn unknown_key(input: &toml::Table, known: &toml::Value, prefix: &str) -> Option<String> {
    for (k, v) in input {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (known.get(k), v) {
            (None, _) => return Some(path),
            (Some(inner), toml::Value::Table(t)) => {
                if let Some(bad) = unknown_key(t, inner, &path) {
                    return Some(bad);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
