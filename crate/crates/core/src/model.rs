//! The frozen backbone recommender: an embedding table propagated through
//! the normalized adjacency and scored by inner product.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evalstat::ndcg_at_k;
use crate::graph::{normalize_adjacency, BipartiteGraph, NormalizedAdjacency};
use crate::labels::EvalLabels;
use crate::optim::Adam;

/// How layer outputs combine into the final embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `(1/(K+1)) Σ_{k=0..K} L^k E`
    LayerAverage,
    /// `L E`
    SingleLayerLinear,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::LayerAverage => "layer-average",
            Variant::SingleLayerLinear => "single-layer-linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "layer-average" => Some(Variant::LayerAverage),
            "single-layer-linear" => Some(Variant::SingleLayerLinear),
            _ => None,
        }
    }
}

/// Trained weights: one embedding row per node, users first.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub embeddings: Array2<f64>,
    pub num_users: usize,
    pub num_items: usize,
    pub layers: usize,
    pub variant: Variant,
}

impl ModelParameters {
    pub fn new(embeddings: Array2<f64>, num_users: usize, layers: usize, variant: Variant) -> Self {
        let num_items = embeddings.nrows() - num_users;
        ModelParameters {
            embeddings,
            num_users,
            num_items,
            layers,
            variant,
        }
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    /// Gaussian initialization with standard deviation `0.1/sqrt(d)`.
    pub fn init(num_users: usize, num_items: usize, dim: usize, layers: usize, variant: Variant, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.1 / (dim as f64).sqrt();
        let embeddings = Array2::from_shape_simple_fn((num_users + num_items, dim), || {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        ModelParameters::new(embeddings, num_users, layers, variant)
    }
}

/// Layer activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// `E_0 = E, E_k = L E_{k-1}`.
    pub layers: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

pub fn propagate_layers(adj: &NormalizedAdjacency<'_>, params: &ModelParameters) -> Propagation {
    assert_eq!(adj.graph().num_nodes(), params.embeddings.nrows());
    match params.variant {
        Variant::LayerAverage => {
            let mut layers = Vec::with_capacity(params.layers + 1);
            layers.push(params.embeddings.clone());
            let mut output = params.embeddings.clone();
            for k in 1..=params.layers {
                let next = adj.multiply(layers[k - 1].view());
                output += &next;
                layers.push(next);
            }
            output /= (params.layers + 1) as f64;
            Propagation { layers, output }
        }
        Variant::SingleLayerLinear => {
            let output = adj.multiply(params.embeddings.view());
            Propagation {
                layers: vec![params.embeddings.clone()],
                output,
            }
        }
    }
}

/// Final node embeddings under adjacency `adj`.
pub fn propagate(adj: &NormalizedAdjacency<'_>, params: &ModelParameters) -> Array2<f64> {
    propagate_layers(adj, params).output
}

/// Applies the transpose of the propagation operator to `grad`. The
/// operator is a polynomial in the symmetric `L`, so this is the same map.
pub fn propagate_transpose(
    adj: &NormalizedAdjacency<'_>,
    layers: usize,
    variant: Variant,
    grad: ArrayView2<'_, f64>,
) -> Array2<f64> {
    match variant {
        Variant::LayerAverage => {
            let mut current = grad.to_owned();
            let mut out = current.clone();
            for _ in 0..layers {
                current = adj.multiply(current.view());
                out += &current;
            }
            out /= (layers + 1) as f64;
            out
        }
        Variant::SingleLayerLinear => adj.multiply(grad),
    }
}

/// Dense `|U| × |I|` user–item scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMatrix {
    pub scores: Array2<f64>,
}

impl RelevanceMatrix {
    pub fn row(&self, u: usize) -> ArrayView1<'_, f64> {
        self.scores.row(u)
    }
}

/// `R_{u,i} = <E*_u, E*_i>` for every user.
pub fn score(final_embeddings: &Array2<f64>, num_users: usize) -> RelevanceMatrix {
    let users = final_embeddings.slice(ndarray::s![..num_users, ..]);
    let items = final_embeddings.slice(ndarray::s![num_users.., ..]);
    RelevanceMatrix {
        scores: users.dot(&items.t()),
    }
}

/// Scores of the listed users only, one row per entry of `users`.
pub fn score_users(final_embeddings: &Array2<f64>, num_users: usize, users: &[usize]) -> Array2<f64> {
    let rows = final_embeddings.select(Axis(0), users);
    let items = final_embeddings.slice(ndarray::s![num_users.., ..]);
    rows.dot(&items.t())
}

/// Per-user top-k lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecommendationLists {
    pub k: usize,
    pub lists: Vec<Vec<usize>>,
}

/// Top `k` items of one score row, skipping `exclude` (ascending). Ties
/// go to the lower item index.
pub fn topk_row(row: ArrayView1<'_, f64>, exclude: &[usize], k: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..row.len())
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let cmp = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k, cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(cmp);
    candidates
}

/// Top-k per user with each user's training items masked out.
pub fn topk(scores: &RelevanceMatrix, train_graph: &BipartiteGraph, k: usize) -> Result<RecommendationLists> {
    let num_items = scores.scores.ncols();
    let lists = (0..scores.scores.nrows())
        .map(|u| {
            let seen = train_graph.user_items(u);
            let available = num_items - seen.len();
            if k > available {
                return Err(Error::KTooLarge { user: u, k, available });
            }
            Ok(topk_row(scores.row(u), seen, k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RecommendationLists { k, lists })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub variant: Variant,
    pub epochs: usize,
    pub lr: f64,
    pub neg_samples: usize,
    pub batch_size: usize,
    pub reg: f64,
    pub seed: u64,
    /// Cutoff of the validation NDCG used for epoch selection.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            layers: 2,
            variant: Variant::LayerAverage,
            epochs: 300,
            lr: 1e-3,
            neg_samples: 1,
            batch_size: 2048,
            reg: 1e-4,
            seed: 0,
            eval_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub val_ndcg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<TrainEpoch>,
    pub best_epoch: usize,
    pub best_val_ndcg: Option<f64>,
}

/// Mean BPR loss (with L2 on the layer-0 rows involved) over the triples
/// `(user, positive, negative)`, and its gradient w.r.t. the embeddings.
pub fn bpr_loss_and_gradient(
    adj: &NormalizedAdjacency<'_>,
    params: &ModelParameters,
    triples: &[(usize, usize, usize)],
    reg: f64,
) -> (f64, Array2<f64>) {
    let out = propagate(adj, params);
    let nu = params.num_users;
    let b = triples.len().max(1) as f64;
    let mut g_out = Array2::<f64>::zeros(out.raw_dim());
    let mut g_emb = Array2::<f64>::zeros(out.raw_dim());
    let mut loss = 0.0;
    for &(u, i, j) in triples {
        let (iu, ju) = (nu + i, nu + j);
        let x = out.row(u).dot(&out.row(iu)) - out.row(u).dot(&out.row(ju));
        loss += softplus(-x);
        let c = -logistic(-x) / b;
        let diff = &out.row(iu) - &out.row(ju);
        g_out.row_mut(u).scaled_add(c, &diff);
        g_out.row_mut(iu).scaled_add(c, &out.row(u));
        g_out.row_mut(ju).scaled_add(-c, &out.row(u));
        for node in [u, iu, ju] {
            let row = params.embeddings.row(node);
            loss += 0.5 * reg * row.dot(&row);
            g_emb.row_mut(node).scaled_add(reg / b, &row);
        }
    }
    g_emb += &propagate_transpose(adj, params.layers, params.variant, g_out.view());
    (loss / b, g_emb)
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean NDCG@k over users with held-out items.
pub fn mean_ndcg(scores: &RelevanceMatrix, train_graph: &BipartiteGraph, labels: &EvalLabels, k: usize) -> Option<f64> {
    let users = labels.users_with_relevant();
    if users.is_empty() {
        return None;
    }
    let total: f64 = users
        .iter()
        .map(|&u| {
            let list = topk_row(scores.row(u), train_graph.user_items(u), k);
            ndcg_at_k(&list, labels.items(u), k).unwrap_or(0.0)
        })
        .sum();
    Some(total / users.len() as f64)
}

/// Trains the backbone with pairwise ranking and uniform negative sampling,
/// keeping the epoch with the best validation NDCG@`eval_k`.
pub fn train_backbone(
    train_graph: &BipartiteGraph,
    validation: &EvalLabels,
    cfg: &TrainConfig,
) -> Result<(ModelParameters, TrainingLog)> {
    if train_graph.num_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    if cfg.dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
    }
    let adj = normalize_adjacency(train_graph, None);
    let mut params = ModelParameters::init(
        train_graph.num_users(),
        train_graph.num_items(),
        cfg.dim,
        cfg.layers,
        cfg.variant,
        cfg.seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(params.embeddings.len(), cfg.lr);
    let num_items = train_graph.num_items();

    let validate = |p: &ModelParameters| -> Option<f64> {
        let scores = score(&propagate(&adj, p), p.num_users);
        mean_ndcg(&scores, train_graph, validation, cfg.eval_k)
    };

    let mut best = params.clone();
    let mut best_ndcg = validate(&params);
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_graph.num_edges()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut triples = Vec::with_capacity(chunk.len() * cfg.neg_samples);
            for &e in chunk {
                let (u, i) = train_graph.edge(e);
                if train_graph.user_degree(u) >= num_items {
                    continue;
                }
                for _ in 0..cfg.neg_samples {
                    let j = loop {
                        let j = rng.gen_range(0..num_items);
                        if !train_graph.has_edge(u, j) {
                            break j;
                        }
                    };
                    triples.push((u, i, j));
                }
            }
            if triples.is_empty() {
                continue;
            }
            let (loss, grad) = bpr_loss_and_gradient(&adj, &params, &triples, cfg.reg);
            if !loss.is_finite() {
                return Err(Error::DivergedTraining { epoch, loss });
            }
            epoch_loss += loss;
            batches += 1;
            adam.step(
                params.embeddings.as_slice_mut().expect("contiguous"),
                grad.as_slice().expect("contiguous"),
            );
        }
        let loss = epoch_loss / batches.max(1) as f64;
        let val_ndcg = validate(&params);
        if let (Some(v), Some(b)) = (val_ndcg, best_ndcg) {
            if v > b {
                best_ndcg = Some(v);
                best = params.clone();
                best_epoch = epoch;
            }
        } else if best_ndcg.is_none() {
            best = params.clone();
            best_epoch = epoch;
        }
        log::debug!("backbone epoch {epoch}: loss {loss:.6} val {val_ndcg:?}");
        log.push(TrainEpoch {
            epoch,
            loss,
            val_ndcg,
        });
    }
    Ok((
        best,
        TrainingLog {
            epochs: log,
            best_epoch,
            best_val_ndcg: best_ndcg,
        },
    ))
}

const CHECKPOINT_MAGIC: &str = "fairgraph-checkpoint v1";

/// Writes a text checkpoint: `# key=value` metadata lines (including a
/// SHA-256 of the body) followed by one tab-separated row per node.
pub fn write_checkpoint(
    path: &Path,
    params: &ModelParameters,
    graph: &BipartiteGraph,
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    let mut body = String::new();
    for (node, row) in params.embeddings.rows().into_iter().enumerate() {
        let (kind, id) = if node < params.num_users {
            ("U", graph.user_id(node))
        } else {
            ("I", graph.item_id(node - params.num_users))
        };
        let _ = write!(body, "{kind}\t{id}");
        for v in row {
            let _ = write!(body, "\t{v}");
        }
        body.push('\n');
    }
    let checksum = hex::encode(Sha256::digest(body.as_bytes()));
    let mut text = format!("# {CHECKPOINT_MAGIC}\n");
    let mut meta = metadata.clone();
    meta.insert("dim".into(), params.dim().to_string());
    meta.insert("layers".into(), params.layers.to_string());
    meta.insert("variant".into(), params.variant.as_str().into());
    meta.insert("users".into(), params.num_users.to_string());
    meta.insert("items".into(), params.num_items.to_string());
    meta.insert("checksum".into(), checksum);
    for (k, v) in &meta {
        let _ = writeln!(text, "# {k}={v}");
    }
    text.push_str(&body);
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint written by [`write_checkpoint`] and checks that its
/// node ids match `graph`. Returns the parameters and the metadata.
pub fn read_checkpoint(path: &Path, graph: &BipartiteGraph) -> Result<(ModelParameters, BTreeMap<String, String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut meta = BTreeMap::new();
    let mut body_start = 0;
    let mut lines = text.split_inclusive('\n');
    match lines.next() {
        Some(l) if l.trim_end() == format!("# {CHECKPOINT_MAGIC}") => body_start += l.len(),
        _ => return Err(bad("missing header".into())),
    }
    for l in lines {
        let Some(rest) = l.strip_prefix("# ") else { break };
        let (k, v) = rest
            .trim_end()
            .split_once('=')
            .ok_or_else(|| bad(format!("bad metadata line '{}'", l.trim_end())))?;
        meta.insert(k.to_string(), v.to_string());
        body_start += l.len();
    }
    let body = &text[body_start..];
    let checksum = hex::encode(Sha256::digest(body.as_bytes()));
    if meta.get("checksum") != Some(&checksum) {
        return Err(bad("checksum mismatch".into()));
    }
    let get = |k: &str| -> Result<usize> {
        meta.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(format!("missing '{k}'")))
    };
    let (dim, layers, users, items) = (get("dim")?, get("layers")?, get("users")?, get("items")?);
    let variant = meta
        .get("variant")
        .and_then(|v| Variant::parse(v))
        .ok_or_else(|| bad("missing 'variant'".into()))?;
    if users != graph.num_users() || items != graph.num_items() {
        return Err(bad(format!(
            "checkpoint has {users} users / {items} items, graph has {} / {}",
            graph.num_users(),
            graph.num_items()
        )));
    }
    let mut embeddings = Array2::zeros((users + items, dim));
    let mut rows = 0;
    for (node, line) in body.lines().enumerate() {
        let mut fields = line.split('\t');
        let kind = fields.next().unwrap_or("");
        let id = fields.next().unwrap_or("");
        let expected = if node < users {
            ("U", graph.user_id(node))
        } else if node < users + items {
            ("I", graph.item_id(node - users))
        } else {
            return Err(bad("too many rows".into()));
        };
        if (kind, id) != expected {
            return Err(bad(format!("row {node} is {kind} {id}, expected {} {}", expected.0, expected.1)));
        }
        for d in 0..dim {
            embeddings[[node, d]] = fields
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("row {node}: bad value at {d}")))?;
        }
        rows += 1;
    }
    if rows != users + items {
        return Err(bad(format!("expected {} rows, found {rows}", users + items)));
    }
    Ok((ModelParameters::new(embeddings, users, layers, variant), meta))
}
