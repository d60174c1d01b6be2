use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fairgraph::data::{
    binarize_age, filter_min_degree, generate_synthetic, group_events_by_item, ingest, read_records, split,
    write_records, AttributeFormat, FormatSpec, InteractionFormat, InteractionRecord, SplitRatios,
    UserAttributeTable, AGE_GROUP,
};
use fairgraph::evalstat::{
    delta_ndcg, group_means, per_user_ndcg, sample_subgroups, utility_change_report, wilcoxon_signed_rank,
    bonferroni, SubgroupSample, UtilityReport,
};
use fairgraph::explainer::{
    explain, replay_ndcg, rnd_p_baseline, rnd_p_rate, EpochRecord, ExplanationResult, StopReason,
};
use fairgraph::graph::{build_graph, normalize_adjacency, BipartiteGraph};
use fairgraph::labels::EvalLabels;
use fairgraph::losses::GroupAssignment;
use fairgraph::model::{
    propagate, read_checkpoint, score, train_backbone, write_checkpoint, ModelParameters, TrainingLog,
};
use fairgraph::topology::{deleted_edge_distribution, gini, node_property_table, quartile_partition, NodePropertyRow};
use fairgraph::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DatasetSource, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Gnnuers,
    GnnuersCn,
    RndP,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Gnnuers => "gnnuers",
            Method::GnnuersCn => "gnnuers-cn",
            Method::RndP => "rnd-p",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gnnuers" => Some(Method::Gnnuers),
            "gnnuers-cn" => Some(Method::GnnuersCn),
            "rnd-p" => Some(Method::RndP),
            _ => None,
        }
    }
}

/// Where each stage reads and writes, relative to the run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn of(cfg: &RunConfig) -> Self {
        Self::new(&cfg.output_dir)
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn split(&self, part: &str) -> PathBuf {
        self.root.join("split").join(format!("{part}.tsv"))
    }

    pub fn attributes(&self) -> PathBuf {
        self.root.join("split").join("attributes.tsv")
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.tsv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.jsonl")
    }

    pub fn explain_dir(&self, method: &str) -> PathBuf {
        self.root.join("explain").join(method)
    }

    pub fn evaluate_dir(&self) -> PathBuf {
        self.root.join("evaluate")
    }

    pub fn topology_dir(&self) -> PathBuf {
        self.root.join("topology")
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn fingerprint_line(fp: &str) -> String {
    format!("# fingerprint={fp}\n")
}

/// Fails unless the leading comment block of `path` carries `expected`.
fn require_fingerprint(path: &Path, expected: &str) -> CliResult<()> {
    let text = read_file(path)?;
    let found = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# fingerprint="));
    match found {
        Some(f) if f == expected => Ok(()),
        Some(f) => Err(CliError::Input(format!(
            "{} was produced by config {f}, current config is {expected}",
            path.display()
        ))),
        None => Err(CliError::Input(format!("{} carries no config fingerprint", path.display()))),
    }
}

fn load_dataset(cfg: &RunConfig) -> CliResult<(Vec<InteractionRecord>, UserAttributeTable)> {
    match cfg.dataset.source {
        DatasetSource::Synthetic => generate_synthetic(&cfg.dataset.synthetic).map_err(CliError::input),
        _ => {
            let (i, a) = cfg.dataset.files()?.expect("file-backed source");
            ingest(&i, &a, &cfg.dataset.format_spec()).map_err(CliError::input)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub attribute: String,
    pub group: String,
    pub users: usize,
    /// Percentage of users.
    pub representation: f64,
    /// Mean and Gini of each user property on the train graph.
    pub mean_deg: f64,
    pub gini_deg: f64,
    pub mean_dy: f64,
    pub gini_dy: f64,
    pub mean_igd: f64,
    pub gini_igd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub min_user_degree: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub groups: Vec<GroupStats>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn group_stats(attribute: &str, groups: &GroupAssignment, rows: &[NodePropertyRow]) -> Vec<GroupStats> {
    let n = groups.num_users() as f64;
    (0..2)
        .map(|g| {
            let members = groups.members(g);
            let col = |f: fn(&NodePropertyRow) -> f64| -> Vec<f64> { members.iter().map(|&u| f(&rows[u])).collect() };
            let deg = col(|r| r.deg as f64);
            let dy = col(|r| r.dy);
            let igd = col(|r| r.igd);
            let g_or_zero = |v: &[f64]| gini(v).unwrap_or(0.0);
            GroupStats {
                attribute: attribute.to_string(),
                group: groups.name(g).to_string(),
                users: members.len(),
                representation: 100.0 * members.len() as f64 / n,
                mean_deg: mean(&deg),
                gini_deg: g_or_zero(&deg),
                mean_dy: mean(&dy),
                gini_dy: g_or_zero(&dy),
                mean_igd: mean(&igd),
                gini_igd: g_or_zero(&igd),
            }
        })
        .collect()
}

fn stats_tsv(fp: &str, cfg: &RunConfig, report: &IngestReport) -> String {
    let mut out = fingerprint_line(fp);
    if cfg.dataset.source == DatasetSource::Synthetic {
        let spec = serde_json::to_string(&cfg.dataset.synthetic).expect("spec serializes");
        let _ = writeln!(out, "# generator={spec}");
    }
    out.push_str("statistic\tattribute\tgroup\tvalue\n");
    for (k, v) in [
        ("users", report.users),
        ("items", report.items),
        ("interactions", report.interactions),
        ("min_user_deg", report.min_user_degree),
        ("train_interactions", report.train),
        ("val_interactions", report.val),
        ("test_interactions", report.test),
    ] {
        let _ = writeln!(out, "{k}\t-\t-\t{v}");
    }
    for g in &report.groups {
        for (k, v) in [
            ("representation_pct", g.representation),
            ("mean_user_deg", g.mean_deg),
            ("gini_user_deg", g.gini_deg),
            ("mean_user_dy", g.mean_dy),
            ("gini_user_dy", g.gini_dy),
            ("mean_user_igd", g.mean_igd),
            ("gini_user_igd", g.gini_igd),
        ] {
            let _ = writeln!(out, "{k}\t{}\t{}\t{v}", g.attribute, g.group);
        }
        let _ = writeln!(out, "users\t{}\t{}\t{}", g.attribute, g.group, g.users);
    }
    out
}

fn attributes_tsv(fp: &str, table: &UserAttributeTable) -> String {
    let users: Vec<&str> = table.users().collect();
    let columns: Vec<&str> = ["gender", "age"]
        .into_iter()
        .filter(|c| users.iter().all(|u| table.get(u, c).is_some()))
        .collect();
    let mut out = fingerprint_line(fp);
    let _ = writeln!(out, "user_id\t{}", columns.join("\t"));
    for u in users {
        let values: Vec<&str> = columns.iter().map(|c| table.get(u, c).unwrap_or("")).collect();
        let _ = writeln!(out, "{u}\t{}", values.join("\t"));
    }
    out
}

/// Reads, filters and splits the dataset, then writes the split files and
/// the statistics block.
pub fn cmd_ingest(cfg: &RunConfig) -> CliResult<IngestReport> {
    let fp = cfg.fingerprint();
    let layout = Layout::of(cfg);
    let (mut records, mut table) = load_dataset(cfg)?;
    if cfg.preprocess.group_artists {
        records = group_events_by_item(records);
    }
    let before = records.len();
    records = filter_min_degree(records, cfg.preprocess.k_min);
    if records.len() < before {
        log::info!("k_min={} removed {} interactions", cfg.preprocess.k_min, before - records.len());
    }
    if records.is_empty() {
        return Err(CliError::input(Error::EmptyGraph));
    }
    let kept: BTreeSet<&str> = records.iter().map(|r| r.user.as_str()).collect();
    table.retain_users(&kept);
    if let Some(t) = cfg.preprocess.age_threshold {
        binarize_age(&mut table, t).map_err(CliError::input)?;
    }
    let ratios = SplitRatios {
        test: cfg.split.test,
        val: cfg.split.val,
    };
    let parts = split(&records, ratios, cfg.split.seed).map_err(CliError::input)?;

    let comments = vec![
        format!("fingerprint={fp}"),
        format!("seed={} test={} val={}", cfg.split.seed, ratios.test, ratios.val),
    ];
    fs::create_dir_all(layout.root.join("split"))
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", layout.root.display())))?;
    for (name, part) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
        write_records(&layout.split(name), part, &comments).map_err(CliError::input)?;
    }
    write_file(&layout.attributes(), &attributes_tsv(&fp, &table))?;
    write_file(&layout.config(), &format!("{}{}", fingerprint_line(&fp), cfg.to_toml()))?;

    let session = Session::assemble(cfg, &parts.train, &parts.val, &parts.test, table)?;
    let mut user_degree: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *user_degree.entry(r.user.as_str()).or_default() += 1;
    }
    let items: BTreeSet<&str> = records.iter().map(|r| r.item.as_str()).collect();
    let mut groups_out = Vec::new();
    let mut attributes = vec!["gender"];
    if cfg.preprocess.age_threshold.is_some() {
        attributes.push(AGE_GROUP);
    }
    for attr in attributes {
        if session.table.users().any(|u| session.table.get(u, attr).is_none()) {
            continue;
        }
        let groups = GroupAssignment::from_attribute(&session.graph, &session.table, attr).map_err(CliError::input)?;
        let rows = node_property_table(&session.graph, &groups);
        let name = if attr == AGE_GROUP { "age" } else { attr };
        groups_out.extend(group_stats(name, &groups, &rows));
    }
    let report = IngestReport {
        users: user_degree.len(),
        items: items.len(),
        interactions: records.len(),
        min_user_degree: user_degree.values().copied().min().unwrap_or(0),
        train: parts.train.len(),
        val: parts.val.len(),
        test: parts.test.len(),
        groups: groups_out,
    };
    write_file(&layout.stats(), &stats_tsv(&fp, cfg, &report))?;
    Ok(report)
}

/// The train graph and evaluation labels of a run.
#[derive(Debug, Clone)]
pub struct Session {
    pub graph: BipartiteGraph,
    pub val: EvalLabels,
    pub test: EvalLabels,
    pub table: UserAttributeTable,
}

impl Session {
    fn assemble(
        cfg: &RunConfig,
        train: &[InteractionRecord],
        val: &[InteractionRecord],
        test: &[InteractionRecord],
        mut table: UserAttributeTable,
    ) -> CliResult<Self> {
        let all = train.iter().chain(val).chain(test);
        let full = build_graph(all.map(|r| (r.user.as_str(), r.item.as_str()))).map_err(CliError::input)?;
        let edges = train
            .iter()
            .map(|r| (full.user_index(&r.user).unwrap(), full.item_index(&r.item).unwrap()))
            .collect();
        let graph = full.with_edges(edges).map_err(CliError::input)?;
        let val = EvalLabels::from_records(&graph, val).map_err(CliError::input)?;
        let test = EvalLabels::from_records(&graph, test).map_err(CliError::input)?;
        if let Some(t) = cfg.preprocess.age_threshold {
            if table.users().any(|u| table.get(u, AGE_GROUP).is_none()) {
                binarize_age(&mut table, t).map_err(CliError::input)?;
            }
        }
        Ok(Session { graph, val, test, table })
    }

    /// Reloads the split written by [`cmd_ingest`].
    pub fn load(cfg: &RunConfig) -> CliResult<Self> {
        let fp = cfg.fingerprint();
        let layout = Layout::of(cfg);
        let mut parts = Vec::new();
        for name in ["train", "val", "test"] {
            let path = layout.split(name);
            require_fingerprint(&path, &fp)?;
            parts.push(read_records(&path).map_err(CliError::input)?);
        }
        let attr_path = layout.attributes();
        require_fingerprint(&attr_path, &fp)?;
        let header = read_file(&attr_path)?
            .lines()
            .find(|l| !l.starts_with('#'))
            .map(str::to_string)
            .unwrap_or_default();
        let has = |c: &str| header.split('\t').any(|h| h == c);
        let format = FormatSpec {
            interactions: InteractionFormat::default(),
            attributes: AttributeFormat {
                gender_column: has("gender").then(|| "gender".into()),
                age_column: has("age").then(|| "age".into()),
                ..Default::default()
            },
        };
        let (_, table) = ingest(&layout.split("train"), &attr_path, &format).map_err(CliError::input)?;
        Self::assemble(cfg, &parts[0], &parts[1], &parts[2], table)
    }

    /// Groups of the analyzed attribute, protected by lower test utility
    /// of the unperturbed model.
    pub fn groups(&self, cfg: &RunConfig, params: &ModelParameters) -> CliResult<GroupAssignment> {
        let mut groups =
            GroupAssignment::from_attribute(&self.graph, &self.table, cfg.attribute_key()).map_err(CliError::input)?;
        groups.designate(group_means(&self.baseline_ndcg(cfg, params), &groups));
        Ok(groups)
    }

    pub fn baseline_ndcg(&self, cfg: &RunConfig, params: &ModelParameters) -> Vec<Option<f64>> {
        let scores = score(&propagate(&normalize_adjacency(&self.graph, None), params), self.graph.num_users());
        per_user_ndcg(&scores, &self.graph, &self.test, cfg.evaluation.k)
    }

    pub fn load_model(&self, cfg: &RunConfig) -> CliResult<ModelParameters> {
        let path = Layout::of(cfg).checkpoint();
        require_fingerprint(&path, &cfg.fingerprint())?;
        read_checkpoint(&path, &self.graph).map(|(p, _)| p).map_err(CliError::input)
    }
}

#[derive(Serialize)]
struct LogLine<'a, T: Serialize> {
    record: &'a str,
    #[serde(flatten)]
    body: T,
}

fn json_line<T: Serialize>(record: &str, body: T) -> String {
    let mut s = serde_json::to_string(&LogLine { record, body }).expect("record serializes");
    s.push('\n');
    s
}

/// Trains the backbone on the train split, keeps the best validation
/// epoch, and writes the checkpoint and training log.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainingLog> {
    let fp = cfg.fingerprint();
    let layout = Layout::of(cfg);
    let session = Session::load(cfg)?;
    let (params, log) = train_backbone(&session.graph, &session.val, &cfg.backbone).map_err(CliError::training)?;
    let mut meta = BTreeMap::new();
    meta.insert("fingerprint".to_string(), fp.clone());
    meta.insert("best_epoch".to_string(), log.best_epoch.to_string());
    if let Some(v) = log.best_val_ndcg {
        meta.insert("best_val_ndcg".to_string(), v.to_string());
    }
    write_checkpoint(&layout.checkpoint(), &params, &session.graph, &meta).map_err(CliError::training)?;
    let mut text = json_line("header", serde_json::json!({"fingerprint": fp, "best_epoch": log.best_epoch}));
    for e in &log.epochs {
        text.push_str(&json_line("epoch", e));
    }
    write_file(&layout.train_log(), &text)?;
    Ok(log)
}

/// Run summary stored next to each explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub method: String,
    pub fingerprint: String,
    pub attribute: String,
    pub groups: [String; 2],
    pub protected: String,
    pub initial_group_ndcg: [f64; 2],
    pub selected_epoch: usize,
    pub selected: EpochRecord,
    pub stop_reason: StopReason,
    pub epochs_recorded: usize,
    pub num_train_edges: usize,
    pub deleted: usize,
    pub deleted_fraction: f64,
    pub deletion_rate: Option<f64>,
    pub budget: Option<usize>,
    pub seed: u64,
    pub checkpoint_sha256: String,
    pub deleted_edges_sha256: String,
}

pub fn read_manifest(cfg: &RunConfig, method: &str) -> CliResult<Manifest> {
    let path = Layout::of(cfg).explain_dir(method).join("manifest.json");
    let text = read_file(&path)?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let fp = cfg.fingerprint();
    if m.fingerprint != fp {
        return Err(CliError::Input(format!(
            "{} was produced by config {}, current config is {fp}",
            path.display(),
            m.fingerprint
        )));
    }
    Ok(m)
}

fn deleted_edges_tsv(fp: &str, graph: &BipartiteGraph, res: &ExplanationResult) -> String {
    let mut out = fingerprint_line(fp);
    out.push_str("user_id\titem_id\tepoch\n");
    for d in &res.deleted {
        let _ = writeln!(out, "{}\t{}\t{}", graph.user_id(d.user), graph.item_id(d.item), d.epoch);
    }
    out
}

/// Edge ids of a method's deletion set, checked against the manifest.
pub fn read_deleted_edges(cfg: &RunConfig, graph: &BipartiteGraph, method: &str) -> CliResult<Vec<usize>> {
    let manifest = read_manifest(cfg, method)?;
    let path = Layout::of(cfg).explain_dir(method).join("deleted_edges.tsv");
    require_fingerprint(&path, &manifest.fingerprint)?;
    if sha256_file(&path)? != manifest.deleted_edges_sha256 {
        return Err(CliError::Input(format!("{} does not match its manifest checksum", path.display())));
    }
    let text = read_file(&path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().filter(|l| !l.starts_with('#')).enumerate().skip(1) {
        let mut f = line.split('\t');
        let (u, i) = (f.next().unwrap_or(""), f.next().unwrap_or(""));
        let edge = graph
            .user_index(u)
            .zip(graph.item_index(i))
            .and_then(|(u, i)| graph.edge_id(u, i))
            .ok_or_else(|| CliError::Input(format!("{}: row {k}: ({u}, {i}) is not a train edge", path.display())))?;
        out.push(edge);
    }
    Ok(out)
}

fn explainer_error(e: Error) -> CliError {
    match e {
        Error::DegenerateGroup(_) | Error::InvalidArgument(_) | Error::InvalidInit { .. } => CliError::input(e),
        other => CliError::explainer(other),
    }
}

/// Runs each method and writes `explain/<method>/{epochs.jsonl,
/// deleted_edges.tsv, manifest.json}`. A run that empties a node keeps its
/// artifacts and fails with the explainer exit code.
pub fn cmd_explain(cfg: &RunConfig, methods: &[Method]) -> CliResult<Vec<ExplanationResult>> {
    let fp = cfg.fingerprint();
    let layout = Layout::of(cfg);
    let session = Session::load(cfg)?;
    let params = session.load_model(cfg)?;
    let groups = session.groups(cfg, &params)?;
    let initial = group_means(&session.baseline_ndcg(cfg, &params), &groups);
    let checkpoint_sha256 = sha256_file(&layout.checkpoint())?;
    let g = &session.graph;
    let mut results = Vec::new();
    let mut emptied = Vec::new();
    for &method in methods {
        let (mut res, rate, budget) = match method {
            Method::Gnnuers | Method::GnnuersCn => {
                let mut ecfg = cfg.explainer.clone();
                ecfg.cn = method == Method::GnnuersCn;
                let res = explain(g, &params, &groups, &session.test, &cfg.loss, &ecfg).map_err(explainer_error)?;
                (res, None, None)
            }
            Method::RndP => {
                let budget = match &cfg.baseline.budget_from {
                    Some(m) => Some(read_manifest(cfg, m)?.deleted),
                    None => cfg.baseline.budget,
                };
                let rate = rnd_p_rate(g.num_edges());
                log::info!("rnd-p: deletion probability per edge and epoch = {rate}");
                let rcfg = cfg.random_config(budget);
                let res = rnd_p_baseline(g, &params, &groups, &session.test, &cfg.loss, &rcfg)
                    .map_err(explainer_error)?;
                (res, Some(rate), budget)
            }
        };
        res.fingerprint = Some(fp.clone());
        if res.deleted.is_empty() && !matches!(res.stop_reason, StopReason::NodeEmptied { .. }) {
            log::warn!("{}: no edge deleted, the groups show no utility gap to explain", method.as_str());
        }
        let dir = layout.explain_dir(method.as_str());
        let mut epochs = json_line(
            "header",
            serde_json::json!({"fingerprint": fp, "method": method.as_str(), "protected": groups.name(groups.protected())}),
        );
        for r in &res.trajectory {
            epochs.push_str(&json_line("epoch", r));
        }
        write_file(&dir.join("epochs.jsonl"), &epochs)?;
        let deleted_path = dir.join("deleted_edges.tsv");
        write_file(&deleted_path, &deleted_edges_tsv(&fp, g, &res))?;
        let manifest = Manifest {
            method: method.as_str().to_string(),
            fingerprint: fp.clone(),
            attribute: cfg.attribute.clone(),
            groups: groups.names().clone(),
            protected: groups.name(groups.protected()).to_string(),
            initial_group_ndcg: initial,
            selected_epoch: res.selected_epoch,
            selected: res.selected.clone(),
            stop_reason: res.stop_reason.clone(),
            epochs_recorded: res.trajectory.len(),
            num_train_edges: res.num_train_edges,
            deleted: res.deleted.len(),
            deleted_fraction: res.deleted.len() as f64 / res.num_train_edges as f64,
            deletion_rate: rate,
            budget,
            seed: if method == Method::RndP { cfg.baseline.seed } else { cfg.explainer.seed },
            checkpoint_sha256: checkpoint_sha256.clone(),
            deleted_edges_sha256: sha256_file(&deleted_path)?,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_file(&dir.join("manifest.json"), &(json + "\n"))?;
        if let StopReason::NodeEmptied { kind, index } = &res.stop_reason {
            emptied.push(format!("{}: {kind} {index} lost all its edges", method.as_str()));
        }
        results.push(res);
    }
    if !emptied.is_empty() {
        return Err(CliError::Explainer(format!(
            "run aborted, last valid epoch kept: {}",
            emptied.join("; ")
        )));
    }
    Ok(results)
}

/// Methods with an explanation on disk, in name order.
pub fn explained_methods(cfg: &RunConfig) -> Vec<String> {
    let dir = Layout::of(cfg).root.join("explain");
    let mut out: Vec<String> = fs::read_dir(&dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.path().join("manifest.json").is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_delta: f64,
    pub mean_abs_delta: f64,
    /// `1 - mean|Δ| / mean|Δ_NP|`.
    pub reduction: f64,
    pub deleted: usize,
    pub deleted_fraction: f64,
    pub group_ndcg: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    pub statistic: Option<f64>,
    pub p_value: f64,
    pub n: usize,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub groups: [String; 2],
    pub protected: String,
    pub summaries: Vec<MethodSummary>,
    /// ΔNDCG per subgroup sample, NP first.
    pub deltas: Vec<(String, Vec<f64>)>,
    pub significance: Vec<PairTest>,
    pub utility: Vec<(String, UtilityReport)>,
}

fn summarize(name: &str, deltas: &[f64], np_abs: f64, deleted: usize, edges: usize, means: [f64; 2]) -> MethodSummary {
    let mean_abs = mean(&deltas.iter().map(|d| d.abs()).collect::<Vec<_>>());
    MethodSummary {
        method: name.to_string(),
        mean_delta: mean(deltas),
        mean_abs_delta: mean_abs,
        reduction: if np_abs > 0.0 { 1.0 - mean_abs / np_abs } else { 0.0 },
        deleted,
        deleted_fraction: deleted as f64 / edges as f64,
        group_ndcg: means,
    }
}

/// Samples subgroups, compares ΔNDCG of the unperturbed model (NP) with
/// every explanation, and writes the distribution, summary, significance
/// and utility-change tables.
pub fn cmd_evaluate(cfg: &RunConfig, methods: Option<&[String]>) -> CliResult<EvaluationReport> {
    let fp = cfg.fingerprint();
    let layout = Layout::of(cfg);
    let session = Session::load(cfg)?;
    let params = session.load_model(cfg)?;
    let groups = session.groups(cfg, &params)?;
    let g = &session.graph;
    let k = cfg.evaluation.k;
    let methods: Vec<String> = match methods {
        Some(m) => m.to_vec(),
        None => explained_methods(cfg),
    };
    let before = session.baseline_ndcg(cfg, &params);
    let users = session.test.users_with_relevant();
    let samples: Vec<SubgroupSample> =
        sample_subgroups(&users, &groups, cfg.subgroup_batch(), cfg.evaluation.subgroups, cfg.evaluation.seed)
            .map_err(CliError::input)?;
    let np = delta_ndcg(&samples, &before, &groups).map_err(CliError::input)?;
    let np_abs = mean(&np.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let mut summaries = vec![summarize("NP", &np, np_abs, 0, g.num_edges(), group_means(&before, &groups))];
    let mut deltas = vec![("NP".to_string(), np)];
    let mut utility = Vec::new();
    for m in &methods {
        let deleted = read_deleted_edges(cfg, g, m)?;
        let after = replay_ndcg(g, &params, &deleted, &session.test, k).map_err(CliError::input)?;
        let d = delta_ndcg(&samples, &after, &groups).map_err(CliError::input)?;
        summaries.push(summarize(m, &d, np_abs, deleted.len(), g.num_edges(), group_means(&after, &groups)));
        deltas.push((m.clone(), d));
        let report =
            utility_change_report(&before, &after, &groups, &samples, methods.len()).map_err(CliError::input)?;
        utility.push((m.clone(), report));
    }

    let pairs: Vec<(usize, usize)> =
        (0..deltas.len()).flat_map(|a| (a + 1..deltas.len()).map(move |b| (a, b))).collect();
    let mut significance = Vec::new();
    for &(a, b) in &pairs {
        let (statistic, p, n) = match wilcoxon_signed_rank(&deltas[a].1, &deltas[b].1) {
            Ok(r) => (Some(r.statistic), r.p_value, r.n),
            Err(Error::AllZeroDifferences) => (None, 1.0, 0),
            Err(e) => return Err(CliError::input(e)),
        };
        significance.push(PairTest {
            a: deltas[a].0.clone(),
            b: deltas[b].0.clone(),
            statistic,
            p_value: p,
            n,
            significant: bonferroni(&[p], pairs.len().max(1))[0],
        });
    }

    let dir = layout.evaluate_dir();
    let mut text = fingerprint_line(&fp);
    let names: Vec<&str> = deltas.iter().map(|(n, _)| n.as_str()).collect();
    let _ = writeln!(text, "sample\t{}", names.join("\t"));
    for s in 0..samples.len() {
        let row: Vec<String> = deltas.iter().map(|(_, d)| d[s].to_string()).collect();
        let _ = writeln!(text, "{s}\t{}", row.join("\t"));
    }
    write_file(&dir.join("delta_ndcg.tsv"), &text)?;

    let mut text = fingerprint_line(&fp);
    let _ = writeln!(
        text,
        "method\tmean_delta\tmean_abs_delta\treduction\tdeleted\tdeleted_fraction\tndcg_{}\tndcg_{}",
        groups.name(0),
        groups.name(1)
    );
    for s in &summaries {
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.method, s.mean_delta, s.mean_abs_delta, s.reduction, s.deleted, s.deleted_fraction, s.group_ndcg[0],
            s.group_ndcg[1]
        );
    }
    write_file(&dir.join("summary.tsv"), &text)?;

    let mut text = fingerprint_line(&fp);
    text.push_str("a\tb\tstatistic\tp_value\tn\tsignificant\n");
    for t in &significance {
        let stat = t.statistic.map_or("-".to_string(), |s| s.to_string());
        let _ = writeln!(text, "{}\t{}\t{stat}\t{:e}\t{}\t{}", t.a, t.b, t.p_value, t.n, t.significant);
    }
    write_file(&dir.join("significance.tsv"), &text)?;

    for (m, report) in &utility {
        write_file(&dir.join(format!("utility_{m}.tsv")), &(fingerprint_line(&fp) + &report.to_tsv()))?;
    }

    Ok(EvaluationReport {
        groups: groups.names().clone(),
        protected: groups.name(groups.protected()).to_string(),
        summaries,
        deltas,
        significance,
        utility,
    })
}

/// Writes per-node DEG/DY/IGD and, for each explanation, the deleted-edge
/// mass over user quartiles of each property.
pub fn cmd_topology(cfg: &RunConfig, methods: Option<&[String]>) -> CliResult<()> {
    let fp = cfg.fingerprint();
    let layout = Layout::of(cfg);
    let session = Session::load(cfg)?;
    let params = session.load_model(cfg)?;
    let groups = session.groups(cfg, &params)?;
    let g = &session.graph;
    let methods: Vec<String> = match methods {
        Some(m) => m.to_vec(),
        None => explained_methods(cfg),
    };
    if methods.is_empty() {
        return Err(CliError::Input(format!(
            "no explanation found under {}",
            layout.root.join("explain").display()
        )));
    }
    let deleted: Vec<(String, Vec<usize>)> = methods
        .iter()
        .map(|m| read_deleted_edges(cfg, g, m).map(|d| (m.clone(), d)))
        .collect::<CliResult<_>>()?;

    let rows = node_property_table(g, &groups);
    let dir = layout.topology_dir();
    let mut text = fingerprint_line(&fp);
    text.push_str("node_id\ttype\tgroup\tDEG\tDY\tIGD\n");
    for r in &rows {
        let _ = writeln!(text, "{}\t{}\t{}\t{}\t{}\t{}", r.node_id, r.kind, r.group, r.deg, r.dy, r.igd);
    }
    write_file(&dir.join("node_properties.tsv"), &text)?;

    let nu = g.num_users();
    let properties: [(&str, Vec<f64>); 3] = [
        ("DEG", rows[..nu].iter().map(|r| r.deg as f64).collect()),
        ("DY", rows[..nu].iter().map(|r| r.dy).collect()),
        ("IGD", rows[..nu].iter().map(|r| r.igd).collect()),
    ];
    let mut text = fingerprint_line(&fp);
    text.push_str("group\tproperty\tmean\tgini\n");
    for grp in 0..2 {
        let members = groups.members(grp);
        for (name, values) in &properties {
            let v: Vec<f64> = members.iter().map(|&u| values[u]).collect();
            let gi = gini(&v).map_or("-".to_string(), |x| x.to_string());
            let _ = writeln!(text, "{}\t{name}\t{}\t{gi}", groups.name(grp), mean(&v));
        }
    }
    write_file(&dir.join("group_properties.tsv"), &text)?;

    let mut quartiles = Vec::new();
    for (name, values) in &properties {
        let q0 = quartile_partition(&groups.members(0), values).map_err(CliError::input)?;
        let q1 = quartile_partition(&groups.members(1), values).map_err(CliError::input)?;
        quartiles.push((*name, [q0, q1]));
    }
    for (m, edges) in &deleted {
        let mut text = fingerprint_line(&fp);
        text.push_str("group\tproperty\tquartile\tnodes\tdeleted\tmass\n");
        if edges.is_empty() {
            log::warn!("{m}: no deleted edges, the quartile table is empty");
        } else {
            let users: Vec<usize> = edges.iter().map(|&e| g.edge(e).0).collect();
            for (name, q) in &quartiles {
                let dist = deleted_edge_distribution(&users, &groups, q, name).map_err(CliError::input)?;
                for c in &dist.cells {
                    let _ = writeln!(
                        text,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        c.group, c.property, c.quartile, c.nodes, c.deleted, c.mass
                    );
                }
            }
        }
        write_file(&dir.join(format!("quartiles_{m}.tsv")), &text)?;
    }
    Ok(())
}

/// Writes the configured synthetic dataset as interaction and attribute
/// files readable with the default `files` layout.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> CliResult<(PathBuf, PathBuf)> {
    let (records, table) = generate_synthetic(&cfg.dataset.synthetic).map_err(CliError::input)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", out_dir.display())))?;
    let spec = serde_json::to_string(&cfg.dataset.synthetic).expect("spec serializes");
    let interactions = out_dir.join("interactions.tsv");
    write_records(&interactions, &records, &[format!("generator={spec}")]).map_err(CliError::input)?;
    let attributes = out_dir.join("attributes.tsv");
    let mut text = format!("# generator={spec}\n");
    text.push_str(attributes_tsv("-", &table).split_once('\n').map_or("", |(_, rest)| rest));
    write_file(&attributes, &text)?;
    Ok((interactions, attributes))
}

/// Every stage in order: ingest, train, explain, evaluate and, when some
/// explanation deleted edges, topology.
pub fn run_pipeline(cfg: &RunConfig, methods: &[Method]) -> CliResult<EvaluationReport> {
    cmd_ingest(cfg)?;
    cmd_train(cfg)?;
    let explained = cmd_explain(cfg, methods);
    let names: Vec<String> = methods.iter().map(|m| m.as_str().to_string()).collect();
    let report = cmd_evaluate(cfg, Some(&names))?;
    if report.summaries.iter().any(|s| s.deleted > 0) {
        cmd_topology(cfg, Some(&names))?;
    }
    explained?;
    Ok(report)
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub name: String,
    pub overrides: Vec<String>,
    pub outcome: Result<EvaluationReport, (i32, String)>,
}

/// Cartesian product of `axes` (key, values), each point run through the
/// full pipeline in its own directory, `jobs` at a time.
pub fn cmd_sweep(cfg: &RunConfig, axes: &[(String, Vec<String>)], methods: &[Method], jobs: usize) -> CliResult<Vec<SweepRun>> {
    let mut points: Vec<Vec<String>> = vec![Vec::new()];
    for (key, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(format!("{key}={v}"));
                    q
                })
            })
            .collect();
    }
    let mut configs = Vec::with_capacity(points.len());
    for (idx, overrides) in points.iter().enumerate() {
        let mut c = cfg.clone();
        for o in overrides {
            c = c.with_override(o)?;
        }
        c.output_dir = cfg.output_dir.join(format!("run-{idx:03}"));
        c.validate()?;
        configs.push(c);
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<EvaluationReport, (i32, String)>>>> =
        configs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let out = run_pipeline(&configs[i], methods).map_err(|e| (e.exit_code(), e.to_string()));
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    let runs: Vec<SweepRun> = slots
        .into_iter()
        .zip(points)
        .enumerate()
        .map(|(idx, (slot, overrides))| SweepRun {
            name: format!("run-{idx:03}"),
            overrides,
            outcome: slot.into_inner().expect("slot lock").expect("every point ran"),
        })
        .collect();

    let mut text = fingerprint_line(&cfg.fingerprint());
    text.push_str("run\toverrides\tfingerprint\texit_code\tmethod\tmean_abs_delta\treduction\tdeleted\n");
    for (run, c) in runs.iter().zip(&configs) {
        let ov = run.overrides.join(" ");
        match &run.outcome {
            Ok(report) => {
                for s in &report.summaries {
                    let _ = writeln!(
                        text,
                        "{}\t{ov}\t{}\t0\t{}\t{}\t{}\t{}",
                        run.name,
                        c.fingerprint(),
                        s.method,
                        s.mean_abs_delta,
                        s.reduction,
                        s.deleted
                    );
                }
            }
            Err((code, msg)) => {
                log::warn!("{}: {msg}", run.name);
                let _ = writeln!(text, "{}\t{ov}\t{}\t{code}\t-\t-\t-\t-", run.name, c.fingerprint());
            }
        }
    }
    write_file(&cfg.output_dir.join("sweep.tsv"), &text)?;
    Ok(runs)
}
