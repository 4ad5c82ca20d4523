//! Pointwise logistic rankers trained on logged clicks, with or without
//! inverse-propensity weighting of the clicked examples.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::PropensityEstimate;
use crate::exec::Exec;
use crate::rng::{stream_rng, Stream};
use crate::types::{read_jsonl, write_jsonl, Impression, Rank};

/// Feature vectors keyed by `(query_id, item_id)`, all of one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    index: HashMap<(String, String), usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FeatureRecord {
    query_id: String,
    item_id: String,
    features: Vec<f64>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        FeatureTable {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Adds or replaces one vector.
    pub fn insert(&mut self, query_id: &str, item_id: &str, features: Vec<f64>) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature for ({query_id}, {item_id})"
            )));
        }
        let key = (query_id.to_string(), item_id.to_string());
        match self.index.get(&key) {
            Some(&row) => self.data[row * self.dim..(row + 1) * self.dim].copy_from_slice(&features),
            None => {
                self.index.insert(key, self.index.len());
                self.data.extend(features);
            }
        }
        Ok(())
    }

    pub fn get(&self, query_id: &str, item_id: &str) -> Option<&[f64]> {
        let row = self
            .index
            .get(&(query_id.to_string(), item_id.to_string()))
            .copied()?;
        Some(&self.data[row * self.dim..(row + 1) * self.dim])
    }

    /// Vectors for each impression, in log order.
    pub fn for_log<'a>(&'a self, log: &[Impression]) -> Result<Vec<&'a [f64]>> {
        let mut missing = 0;
        let rows: Vec<&[f64]> = log
            .iter()
            .filter_map(|imp| {
                let fv = self.get(&imp.query_id, &imp.item_id);
                missing += usize::from(fv.is_none());
                fv
            })
            .collect();
        if missing > 0 {
            return Err(Error::Validation(format!(
                "{missing} impression(s) have no feature vector"
            )));
        }
        Ok(rows)
    }

    /// One `{query_id, item_id, features}` object per line, in insertion order.
    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<()> {
        let mut keys: Vec<(&(String, String), &usize)> = self.index.iter().collect();
        keys.sort_by_key(|(_, &row)| row);
        let records: Vec<FeatureRecord> = keys
            .into_iter()
            .map(|((q, i), &row)| FeatureRecord {
                query_id: q.clone(),
                item_id: i.clone(),
                features: self.data[row * self.dim..(row + 1) * self.dim].to_vec(),
            })
            .collect();
        write_jsonl(out, &records)
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let records: Vec<FeatureRecord> = read_jsonl(input)?;
        let mut table = FeatureTable::new(records.first().map_or(0, |r| r.features.len()));
        for r in records {
            table.insert(&r.query_id, &r.item_id, r.features)?;
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    Ips,
    Naive,
}

impl std::fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainingMode::Ips => "ips",
            TrainingMode::Naive => "naive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub clip_floor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 256,
            l2: 1e-4,
            clip_floor: 0.05,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::config("l2", "must be >= 0"));
        }
        check_clip_floor(self.clip_floor)
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("serializable")))
    }
}

fn check_clip_floor(clip_floor: f64) -> Result<()> {
    if clip_floor > 0.0 && clip_floor <= 1.0 {
        Ok(())
    } else {
        Err(Error::config("clip_floor", "must lie in (0, 1]"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mode: TrainingMode,
    pub clip_floor: f64,
    pub config_hash: String,
    /// SHA-256 of the propensity CSV used in IPS mode.
    pub propensity_sha256: Option<String>,
    /// Mean weighted training loss after the last epoch.
    pub final_loss: f64,
}

impl RankerModel {
    pub fn zeros(dim: usize, mode: TrainingMode) -> Self {
        RankerModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            mode,
            clip_floor: TrainConfig::default().clip_floor,
            config_hash: String::new(),
            propensity_sha256: None,
            final_loss: f64::NAN,
        }
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                actual: features.len(),
            });
        }
        Ok(self.logit(features))
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }
}

/// `1 / max(estimate[rank], clip_floor)`.
pub fn ips_weight(rank: Rank, est: &PropensityEstimate, clip_floor: f64) -> Result<f64> {
    check_clip_floor(clip_floor)?;
    if rank.index() >= est.len() {
        return Err(Error::Range {
            what: "rank",
            value: i64::from(rank.get()),
            bound: format!("propensity estimate covers {} ranks", est.len()),
        });
    }
    let p = est
        .estimate(rank)
        .ok_or_else(|| Error::Validation(format!("no propensity estimate at rank {rank}")))?;
    Ok(1.0 / p.max(clip_floor))
}

/// One weighted training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: bool,
    pub weight: f64,
}

/// Click-labelled examples; in IPS mode clicked rows carry inverse-propensity
/// weights and unclicked rows weight 1.
pub fn build_examples(
    log: &[Impression],
    features: &FeatureTable,
    mode: TrainingMode,
    est: Option<&PropensityEstimate>,
    clip_floor: f64,
) -> Result<Vec<Example>> {
    let rows = features.for_log(log)?;
    let est = match (mode, est) {
        (TrainingMode::Ips, None) => {
            return Err(Error::Validation("ips training needs a propensity estimate".into()))
        }
        (_, est) => est,
    };
    log.iter()
        .zip(rows)
        .map(|(imp, fv)| {
            let weight = match (mode, imp.clicked) {
                (TrainingMode::Ips, true) => ips_weight(imp.rank, est.expect("checked"), clip_floor)?,
                _ => 1.0,
            };
            Ok(Example {
                features: fv.to_vec(),
                label: imp.clicked,
                weight,
            })
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

const REDUCE_CHUNK: usize = 64;

struct Partial {
    loss: f64,
    grad: Vec<f64>,
    grad_bias: f64,
}

fn partial(model: &RankerModel, batch: &[Example], with_grad: bool) -> Partial {
    let mut p = Partial {
        loss: 0.0,
        grad: vec![0.0; if with_grad { model.weights.len() } else { 0 }],
        grad_bias: 0.0,
    };
    for ex in batch {
        let z = model.logit(&ex.features);
        p.loss += ex.weight * if ex.label { softplus(-z) } else { softplus(z) };
        if with_grad {
            let d = ex.weight * (sigmoid(z) - f64::from(u8::from(ex.label)));
            for (g, x) in p.grad.iter_mut().zip(&ex.features) {
                *g += d * x;
            }
            p.grad_bias += d;
        }
    }
    p
}

/// Per-chunk partial sums reduced in chunk order, so any executor gives the
/// same bits.
fn reduce(model: &RankerModel, batch: &[Example], with_grad: bool, exec: Exec) -> Partial {
    let parts = exec.map_chunks(batch, REDUCE_CHUNK, |c| partial(model, c, with_grad));
    let mut total = Partial {
        loss: 0.0,
        grad: vec![0.0; if with_grad { model.weights.len() } else { 0 }],
        grad_bias: 0.0,
    };
    for p in parts {
        total.loss += p.loss;
        for (t, g) in total.grad.iter_mut().zip(&p.grad) {
            *t += g;
        }
        total.grad_bias += p.grad_bias;
    }
    total
}

/// Weighted mean logistic loss over `batch` plus `l2 / 2 * |w|^2`.
pub fn weighted_loss(model: &RankerModel, batch: &[Example], l2: f64) -> f64 {
    if batch.is_empty() {
        return 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    }
    let p = reduce(model, batch, false, Exec::Sequential);
    p.loss / batch.len() as f64 + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of [`weighted_loss`]: `(d/dw, d/dbias)`.
pub fn gradient(model: &RankerModel, batch: &[Example], l2: f64) -> (Vec<f64>, f64) {
    gradient_with(model, batch, l2, Exec::Sequential)
}

fn gradient_with(model: &RankerModel, batch: &[Example], l2: f64, exec: Exec) -> (Vec<f64>, f64) {
    let n = batch.len().max(1) as f64;
    let p = reduce(model, batch, true, exec);
    let grad = p
        .grad
        .iter()
        .zip(&model.weights)
        .map(|(g, w)| g / n + l2 * w)
        .collect();
    (grad, p.grad_bias / n)
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences with step `epsilon`. Denominators are floored at 1e-4 so that
/// near-zero components are compared absolutely.
pub fn gradient_check(model: &RankerModel, batch: &[Example], l2: f64, epsilon: f64) -> Result<f64> {
    if !(1e-8..=1e-3).contains(&epsilon) {
        return Err(Error::config("epsilon", "must lie in [1e-8, 1e-3]"));
    }
    let (grad, grad_bias) = gradient(model, batch, l2);
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    let mut compare = |analytic: f64, numeric: f64| {
        let scale = analytic.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic - numeric).abs() / scale);
    };
    for (j, &w) in model.weights.iter().enumerate() {
        probe.weights[j] = w + epsilon;
        let up = weighted_loss(&probe, batch, l2);
        probe.weights[j] = w - epsilon;
        let down = weighted_loss(&probe, batch, l2);
        probe.weights[j] = w;
        compare(grad[j], (up - down) / (2.0 * epsilon));
    }
    probe.bias = model.bias + epsilon;
    let up = weighted_loss(&probe, batch, l2);
    probe.bias = model.bias - epsilon;
    let down = weighted_loss(&probe, batch, l2);
    compare(grad_bias, (up - down) / (2.0 * epsilon));
    Ok(worst)
}

/// Mini-batch gradient descent from zero weights, single-threaded.
pub fn train(
    log: &[Impression],
    features: &FeatureTable,
    mode: TrainingMode,
    est: Option<&PropensityEstimate>,
    config: &TrainConfig,
) -> Result<RankerModel> {
    train_with(log, features, mode, est, config, Exec::Sequential)
}

/// As [`train`]; `exec` parallelises gradient accumulation within each batch
/// without changing the result.
pub fn train_with(
    log: &[Impression],
    features: &FeatureTable,
    mode: TrainingMode,
    est: Option<&PropensityEstimate>,
    config: &TrainConfig,
    exec: Exec,
) -> Result<RankerModel> {
    config.validate()?;
    let examples = build_examples(log, features, mode, est, config.clip_floor)?;
    fit(&examples, features.dim(), mode, config, exec)
}

/// Fits a model to prepared examples.
pub fn fit(
    examples: &[Example],
    dim: usize,
    mode: TrainingMode,
    config: &TrainConfig,
    exec: Exec,
) -> Result<RankerModel> {
    config.validate()?;
    if let Some(bad) = examples.iter().find(|e| e.features.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            actual: bad.features.len(),
        });
    }
    let mut model = RankerModel {
        clip_floor: config.clip_floor,
        config_hash: config.hash(),
        ..RankerModel::zeros(dim, mode)
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        let mut rng = stream_rng(config.seed, Stream::Training, epoch as u64);
        order.shuffle(&mut rng);
        for ids in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(ids.iter().map(|&i| examples[i].clone()));
            let (grad, grad_bias) = gradient_with(&model, &batch, config.l2, exec);
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= config.learning_rate * g;
            }
            model.bias -= config.learning_rate * grad_bias;
        }
        let loss = epoch_loss(&model, examples, config.l2, exec);
        log::debug!("epoch {epoch}: loss {loss:.6}");
        if !loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        model.final_loss = loss;
    }
    Ok(model)
}

fn epoch_loss(model: &RankerModel, examples: &[Example], l2: f64, exec: Exec) -> f64 {
    if examples.is_empty() {
        return weighted_loss(model, examples, l2);
    }
    let p = reduce(model, examples, false, exec);
    p.loss / examples.len() as f64 + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Model scores for the listed items of one query.
pub fn model_scores(
    model: &RankerModel,
    features: &FeatureTable,
    query_id: &str,
    item_ids: &[String],
) -> Result<Vec<f64>> {
    item_ids
        .iter()
        .map(|item| {
            let fv = features.get(query_id, item).ok_or_else(|| {
                Error::Validation(format!("no feature vector for ({query_id}, {item})"))
            })?;
            model.score(fv)
        })
        .collect()
}

/// Indices of `candidates` in descending model score; equal scores are
/// ordered by ascending item id.
pub fn score_items(model: &RankerModel, candidates: &[(&str, &[f64])]) -> Result<Vec<usize>> {
    let scores = candidates
        .iter()
        .map(|(_, fv)| model.score(fv))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| candidates[a].0.cmp(candidates[b].0))
    });
    Ok(order)
}
