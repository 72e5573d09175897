//! Conditional action distributions `π(a|x)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, LoggedDataset};
use crate::error::{OpeError, Result};
use crate::math::{
    minibatches, sgd_step, FeedForwardNet, NetGradients, NetShape, SgdConfig, SpectralNormalizer,
};

/// Smallest probability an estimated policy may assign before renormalizing.
pub const PROBABILITY_FLOOR: f64 = 1e-4;

/// A distribution over `action_count()` actions for each context.
pub trait Policy: Send + Sync {
    fn action_count(&self) -> usize;

    fn probabilities(&self, context: &[f64]) -> Result<Vec<f64>>;
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn action_count(&self) -> usize {
        (**self).action_count()
    }

    fn probabilities(&self, context: &[f64]) -> Result<Vec<f64>> {
        (**self).probabilities(context)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn action_count(&self) -> usize {
        (**self).action_count()
    }

    fn probabilities(&self, context: &[f64]) -> Result<Vec<f64>> {
        (**self).probabilities(context)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformPolicy {
    actions: usize,
}

pub fn uniform_policy(actions: usize) -> Result<UniformPolicy> {
    if actions < 2 {
        return Err(OpeError::invalid("a policy needs at least two actions"));
    }
    Ok(UniformPolicy { actions })
}

impl Policy for UniformPolicy {
    fn action_count(&self) -> usize {
        self.actions
    }

    fn probabilities(&self, _context: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.actions as f64; self.actions])
    }
}

/// Explicit probability table over a finite context set. A context is matched
/// to the nearest stored context (exact matches in practice).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    contexts: Vec<Vec<f64>>,
    table: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(contexts: Vec<Vec<f64>>, table: Vec<Vec<f64>>) -> Result<Self> {
        if contexts.is_empty() || contexts.len() != table.len() {
            return Err(OpeError::invalid(
                "one probability row per context is required",
            ));
        }
        let k = table[0].len();
        if k < 2 {
            return Err(OpeError::invalid("a policy needs at least two actions"));
        }
        for row in &table {
            if row.len() != k {
                return Err(OpeError::invalid("ragged probability table"));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(OpeError::invalid("table rows must be probability vectors"));
            }
        }
        Ok(Self { contexts, table })
    }

    fn lookup(&self, context: &[f64]) -> Result<usize> {
        if context.len() != self.contexts[0].len() {
            return Err(OpeError::invalid("context dimension mismatch"));
        }
        let dist =
            |c: &[f64]| -> f64 { c.iter().zip(context).map(|(a, b)| (a - b) * (a - b)).sum() };
        Ok((0..self.contexts.len())
            .min_by(|&a, &b| dist(&self.contexts[a]).total_cmp(&dist(&self.contexts[b])))
            .expect("non-empty"))
    }
}

impl Policy for TabularPolicy {
    fn action_count(&self) -> usize {
        self.table[0].len()
    }

    fn probabilities(&self, context: &[f64]) -> Result<Vec<f64>> {
        Ok(self.table[self.lookup(context)?].clone())
    }
}

/// Softmax over the logits of a feed-forward net, with a temperature and a
/// probability floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxClassifierPolicy {
    net: FeedForwardNet,
    temperature: f64,
    floor: f64,
}

impl SoftmaxClassifierPolicy {
    pub fn new(net: FeedForwardNet, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(OpeError::invalid("temperature must be positive"));
        }
        if net.output_dim() < 2 {
            return Err(OpeError::invalid("a policy needs at least two actions"));
        }
        Ok(Self {
            net,
            temperature,
            floor: PROBABILITY_FLOOR,
        })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(OpeError::invalid("temperature must be positive"));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn net(&self) -> &FeedForwardNet {
        &self.net
    }

    pub fn logits(&self, context: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(context)
    }
}

impl Policy for SoftmaxClassifierPolicy {
    fn action_count(&self) -> usize {
        self.net.output_dim()
    }

    fn probabilities(&self, context: &[f64]) -> Result<Vec<f64>> {
        let logits = self.net.forward(context)?;
        let scaled: Vec<f64> = logits.iter().map(|z| z / self.temperature).collect();
        Ok(apply_floor(softmax(&scaled), self.floor))
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Clamp to `floor` and renormalize.
pub(crate) fn apply_floor(mut probs: Vec<f64>, floor: f64) -> Vec<f64> {
    if floor <= 0.0 {
        return probs;
    }
    probs.iter_mut().for_each(|p| *p = p.max(floor));
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    probs
}

/// Trains a softmax classifier on `(inputs[i] -> targets[i])` by minimizing
/// the multinomial log-loss with plain SGD.
fn fit_softmax_net(
    inputs: &[&[f64]],
    targets: &[usize],
    classes: usize,
    shape: &NetShape,
    sgd: &SgdConfig,
) -> Result<FeedForwardNet> {
    sgd.validate()?;
    if inputs.is_empty() {
        return Err(OpeError::invalid("cannot train on an empty dataset"));
    }
    if classes < 2 {
        return Err(OpeError::invalid("a policy needs at least two actions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sgd.seed);
    let mut net = FeedForwardNet::random(inputs[0].len(), &shape.hidden, classes, &mut rng)?;
    let mut sn = shape
        .spectral_norm
        .then(|| SpectralNormalizer::new(&net, 1));
    let mut grads = NetGradients::zeros_like(&net);
    for epoch in 0..sgd.epochs {
        for batch in minibatches(inputs.len(), sgd.batch_size, &mut rng) {
            grads.scale(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                let trace = net.forward_trace(inputs[i])?;
                let mut g = softmax(trace.output());
                g[targets[i]] -= 1.0;
                net.backward_into(&trace, &g, &mut grads, scale)?;
            }
            sgd_step(&mut net, &grads, sgd).map_err(|e| with_epoch(e, epoch))?;
            if let Some(sn) = sn.as_mut() {
                sn.apply(&mut net);
            }
        }
    }
    Ok(net)
}

fn with_epoch(e: OpeError, epoch: usize) -> OpeError {
    match e {
        OpeError::TrainingFault { reason, .. } => OpeError::TrainingFault { epoch, reason },
        other => other,
    }
}

/// Classifier trained on fully observed labels; used as an evaluation policy
/// or as a logging "sample model".
pub fn train_classifier_policy(
    data: &LabeledDataset,
    shape: &NetShape,
    sgd: &SgdConfig,
    temperature: f64,
) -> Result<SoftmaxClassifierPolicy> {
    if data.is_empty() {
        return Err(OpeError::invalid("cannot train on an empty dataset"));
    }
    let inputs: Vec<&[f64]> = (0..data.len()).map(|i| data.context(i)).collect();
    let net = fit_softmax_net(&inputs, data.labels(), data.classes(), shape, sgd)?;
    SoftmaxClassifierPolicy::new(net, temperature)
}

/// Logging-policy estimate `p̂(a|x)` fitted on logged `(context, action)` pairs.
pub fn estimate_logging_policy(
    logged: &LoggedDataset,
    shape: &NetShape,
    sgd: &SgdConfig,
) -> Result<SoftmaxClassifierPolicy> {
    if logged.is_empty() {
        return Err(OpeError::invalid(
            "cannot estimate a policy from an empty log",
        ));
    }
    let k = logged.actions();
    if let Some(r) = logged.records().iter().find(|r| r.action >= k) {
        return Err(OpeError::invalid(format!(
            "action {} out of range",
            r.action
        )));
    }
    let inputs: Vec<&[f64]> = logged
        .records()
        .iter()
        .map(|r| r.context.as_slice())
        .collect();
    let targets: Vec<usize> = logged.records().iter().map(|r| r.action).collect();
    let net = fit_softmax_net(&inputs, &targets, k, shape, sgd)?;
    SoftmaxClassifierPolicy::new(net, 1.0)
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_from<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    // rounding left u above the cumulative sum; fall back to the last
    // action with positive mass
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

pub fn sample_action<R: Rng + ?Sized>(
    policy: &dyn Policy,
    context: &[f64],
    rng: &mut R,
) -> Result<usize> {
    Ok(sample_from(&policy.probabilities(context)?, rng))
}
