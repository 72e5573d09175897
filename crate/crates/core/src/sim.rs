//! Supervised-to-bandit conversion and exact ground-truth policy values.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, LoggedDataset, LoggedRecord};
use crate::error::{OpeError, Result};
use crate::math::DenseMatrix;
use crate::policy::{sample_from, Policy, TabularPolicy};

/// Reads a comma-separated file with a header row. Every column other than
/// `label_column` must be numeric. Label values are re-indexed densely in
/// sorted order (numerically when every label parses as a number).
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, label_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, label_column: &str) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| OpeError::Parse {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        return Err(OpeError::Parse {
            line: 1,
            reason: "missing header row".into(),
        });
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| OpeError::Parse {
            line: 1,
            reason: format!("label column '{label_column}' not found"),
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (row_no, rec) in rdr.records().enumerate() {
        let line = row_no + 2;
        let rec = rec.map_err(|e| OpeError::Parse {
            line,
            reason: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(OpeError::Parse {
                line,
                reason: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for (i, field) in rec.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(field.to_string());
            } else {
                let v: f64 = field.parse().map_err(|_| OpeError::Parse {
                    line,
                    reason: format!("non-numeric feature '{field}' in column '{}'", &headers[i]),
                })?;
                if !v.is_finite() {
                    return Err(OpeError::Parse {
                        line,
                        reason: format!("non-finite feature in column '{}'", &headers[i]),
                    });
                }
                features.push(v);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(OpeError::Parse {
            line: 2,
            reason: "no data rows".into(),
        });
    }

    let names = dense_label_order(&raw_labels);
    let labels = raw_labels
        .iter()
        .map(|l| {
            names
                .iter()
                .position(|n| n == l)
                .expect("label was collected")
        })
        .collect();
    let contexts = DenseMatrix::new(raw_labels.len(), feature_names.len(), features)?;
    let mut ds = LabeledDataset::new(contexts, labels, names.len())?;
    ds.feature_names = Some(feature_names);
    ds.label_names = Some(names);
    Ok(ds)
}

fn dense_label_order(raw: &[String]) -> Vec<String> {
    let unique: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    let mut names: Vec<String> = unique.into_iter().map(str::to_string).collect();
    if names.iter().all(|n| n.parse::<f64>().is_ok()) {
        names.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        });
    }
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.6,
            seed: 0,
        }
    }
}

/// Seeded shuffle followed by a cut at `round(train_fraction * n)`.
pub fn split(
    data: &LabeledDataset,
    config: &SplitConfig,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let n = data.len();
    if n < 2 {
        return Err(OpeError::invalid("splitting needs at least two rows"));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(OpeError::invalid("train fraction must lie in (0, 1)"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let cut = ((config.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    Ok((data.subset(&order[..cut])?, data.subset(&order[cut..])?))
}

/// Per-feature mean and standard deviation; constant features get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &LabeledDataset) -> Self {
        let (n, d) = (data.len() as f64, data.dim());
        let mut mean = vec![0.0; d];
        for row in data.contexts().iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in data.contexts().iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn transform(&self, data: &LabeledDataset) -> LabeledDataset {
        let mut out = data.clone();
        let d = self.mean.len();
        for (i, v) in out.contexts_mut().data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - self.mean[j]) / self.scale[j];
        }
        out
    }
}

/// Keeps every example of a random half of the classes and a fraction
/// `beta` of the examples of the others. A classifier trained on the result
/// under-weights the down-sampled classes, giving a skewed logging policy.
pub fn biased_subsample(data: &LabeledDataset, beta: f64, seed: u64) -> Result<LabeledDataset> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(OpeError::invalid("beta must lie in (0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = (0..data.classes()).collect();
    classes.shuffle(&mut rng);
    let mut reduced = vec![false; data.classes()];
    for &c in &classes[..data.classes() / 2] {
        reduced[c] = true;
    }
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| !reduced[data.label(i)] || rng.gen::<f64>() < beta)
        .collect();
    if keep.is_empty() {
        return Err(OpeError::invalid("biased subsample is empty"));
    }
    data.subset(&keep)
}

/// Samples one action per row from `logging`; reward is 1 for the correct
/// label and 0 otherwise; the propensity of the sampled action is recorded.
pub fn log_bandit_feedback(
    data: &LabeledDataset,
    logging: &dyn Policy,
    seed: u64,
) -> Result<LoggedDataset> {
    if logging.action_count() != data.classes() {
        return Err(OpeError::invalid(format!(
            "logging policy has {} actions, dataset has {} classes",
            logging.action_count(),
            data.classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..data.len())
        .map(|i| {
            let x = data.context(i);
            let probs = logging.probabilities(x)?;
            let a = sample_from(&probs, &mut rng);
            Ok(LoggedRecord {
                context: x.to_vec(),
                action: a,
                reward: if a == data.label(i) { 1.0 } else { 0.0 },
                propensity: Some(probs[a]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LoggedDataset::new(records, data.classes(), 0.0, 1.0)
}

/// Exact expected reward of `target` over the dataset's contexts:
/// `(1/n) Σ_x π(label(x) | x)`.
pub fn true_value(data: &LabeledDataset, target: &dyn Policy) -> Result<f64> {
    if target.action_count() != data.classes() {
        return Err(OpeError::invalid(
            "policy action count must equal class count",
        ));
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        total += target.probabilities(data.context(i))?[data.label(i)];
    }
    Ok(total / data.len() as f64)
}

/// Gaussian class blobs: class means drawn on a sphere of radius `spread`.
pub fn make_blobs(
    n: usize,
    dim: usize,
    classes: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n == 0 || dim == 0 || classes < 2 {
        return Err(OpeError::invalid(
            "blobs need n >= 1, dim >= 1, classes >= 2",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| spread * x / norm).collect()
        })
        .collect();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        data.extend(centers[y].iter().map(|c| c + standard_normal(&mut rng)));
        labels.push(y);
    }
    LabeledDataset::new(DenseMatrix::new(n, dim, data)?, labels, classes)
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Finite contextual bandit with an explicit reward table, so policy values
/// can be computed by exact enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBandit {
    contexts: Vec<Vec<f64>>,
    context_probs: Vec<f64>,
    rewards: Vec<Vec<f64>>,
}

impl SyntheticBandit {
    pub fn new(
        contexts: Vec<Vec<f64>>,
        context_probs: Vec<f64>,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = contexts.len();
        if m == 0 || context_probs.len() != m || rewards.len() != m {
            return Err(OpeError::invalid(
                "one probability and reward row per context",
            ));
        }
        let k = rewards[0].len();
        if k < 2 || rewards.iter().any(|r| r.len() != k) {
            return Err(OpeError::invalid(
                "reward table must have >= 2 actions per row",
            ));
        }
        if rewards.iter().flatten().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(OpeError::invalid("rewards must lie in [0, 1]"));
        }
        if context_probs.iter().any(|&p| !(p >= 0.0))
            || (context_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(OpeError::invalid(
                "context probabilities must form a distribution",
            ));
        }
        Ok(Self {
            contexts,
            context_probs,
            rewards,
        })
    }

    /// `n_contexts` one-hot contexts (padded/truncated to `dim`), uniform
    /// context distribution and rewards uniform on [0, 1].
    pub fn random(n_contexts: usize, dim: usize, actions: usize, seed: u64) -> Result<Self> {
        if n_contexts == 0 || n_contexts > 50 || !(2..=5).contains(&actions) {
            return Err(OpeError::invalid(
                "synthetic bandits hold <= 50 contexts and 2..=5 actions",
            ));
        }
        let dim = dim.max(n_contexts);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let contexts = (0..n_contexts)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let rewards = (0..n_contexts)
            .map(|_| (0..actions).map(|_| rng.gen::<f64>()).collect())
            .collect();
        Self::new(contexts, vec![1.0 / n_contexts as f64; n_contexts], rewards)
    }

    pub fn contexts(&self) -> &[Vec<f64>] {
        &self.contexts
    }

    pub fn actions(&self) -> usize {
        self.rewards[0].len()
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    /// Policy over this bandit's contexts from an explicit probability table.
    pub fn policy(&self, table: Vec<Vec<f64>>) -> Result<TabularPolicy> {
        TabularPolicy::new(self.contexts.clone(), table)
    }

    /// `V^π = Σ_x P(x) Σ_a π(a|x) r(x, a)`.
    pub fn true_value(&self, policy: &dyn Policy) -> Result<f64> {
        let mut v = 0.0;
        for ((x, px), row) in self
            .contexts
            .iter()
            .zip(&self.context_probs)
            .zip(&self.rewards)
        {
            let probs = policy.probabilities(x)?;
            v += px * probs.iter().zip(row).map(|(p, r)| p * r).sum::<f64>();
        }
        Ok(v)
    }

    pub fn sample_logged<R: Rng + ?Sized>(
        &self,
        n: usize,
        logging: &dyn Policy,
        rng: &mut R,
    ) -> Result<LoggedDataset> {
        let records = (0..n)
            .map(|_| {
                let c = sample_from(&self.context_probs, rng);
                let probs = logging.probabilities(&self.contexts[c])?;
                let a = sample_from(&probs, rng);
                Ok(LoggedRecord {
                    context: self.contexts[c].clone(),
                    action: a,
                    reward: self.rewards[c][a],
                    propensity: Some(probs[a]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LoggedDataset::new(records, self.actions(), 0.0, 1.0)
    }
}
