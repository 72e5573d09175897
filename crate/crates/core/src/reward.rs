//! Reward models `r̂(x, a)` used by the direct and doubly robust estimators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::error::{OpeError, Result};
use crate::math::{
    minibatches, sgd_step, FeedForwardNet, NetGradients, NetShape, SgdConfig, SpectralNormalizer,
};
use crate::policy::Policy;
use crate::robust::{clip, joint_input, DensityRatio, RobustRegressor};

pub trait RewardModel: Send + Sync {
    fn actions(&self) -> usize;

    fn predict(&self, context: &[f64], action: usize) -> Result<f64>;

    /// Predictions for every action at one context.
    fn predict_all(&self, context: &[f64]) -> Result<Vec<f64>> {
        (0..self.actions())
            .map(|a| self.predict(context, a))
            .collect()
    }
}

/// Same reward everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRewardModel {
    pub value: f64,
    pub actions: usize,
}

impl RewardModel for ConstantRewardModel {
    fn actions(&self) -> usize {
        self.actions
    }

    fn predict(&self, _context: &[f64], action: usize) -> Result<f64> {
        check_action(action, self.actions)?;
        Ok(self.value)
    }
}

/// Reward model backed by a closure; handy for synthetic problems.
pub struct FnRewardModel<F> {
    f: F,
    actions: usize,
}

impl<F> FnRewardModel<F>
where
    F: Fn(&[f64], usize) -> f64 + Send + Sync,
{
    pub fn new(actions: usize, f: F) -> Self {
        Self { f, actions }
    }
}

impl<F> RewardModel for FnRewardModel<F>
where
    F: Fn(&[f64], usize) -> f64 + Send + Sync,
{
    fn actions(&self) -> usize {
        self.actions
    }

    fn predict(&self, context: &[f64], action: usize) -> Result<f64> {
        check_action(action, self.actions)?;
        Ok((self.f)(context, action))
    }
}

fn check_action(action: usize, actions: usize) -> Result<()> {
    if action >= actions {
        return Err(OpeError::invalid(format!(
            "action {action} out of range for {actions} actions"
        )));
    }
    Ok(())
}

/// Feed-forward regressor fitted by squared loss, the standard DM model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectRegressor {
    net: FeedForwardNet,
    actions: usize,
    reward_range: (f64, f64),
}

impl DirectRegressor {
    pub fn net(&self) -> &FeedForwardNet {
        &self.net
    }
}

impl RewardModel for DirectRegressor {
    fn actions(&self) -> usize {
        self.actions
    }

    fn predict(&self, context: &[f64], action: usize) -> Result<f64> {
        let out = self
            .net
            .forward(&joint_input(context, action, self.actions)?)?;
        Ok(clip(out[0], self.reward_range))
    }
}

pub fn train_direct(
    logged: &LoggedDataset,
    shape: &NetShape,
    sgd: &SgdConfig,
) -> Result<DirectRegressor> {
    sgd.validate()?;
    if logged.is_empty() {
        return Err(OpeError::invalid("cannot train on an empty log"));
    }
    let actions = logged.actions();
    let mut rng = ChaCha8Rng::seed_from_u64(sgd.seed);
    let mut net =
        FeedForwardNet::random(logged.context_dim() + actions, &shape.hidden, 1, &mut rng)?;
    let mut sn = shape
        .spectral_norm
        .then(|| SpectralNormalizer::new(&net, 1));
    let inputs = logged
        .records()
        .iter()
        .map(|r| joint_input(&r.context, r.action, actions))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = NetGradients::zeros_like(&net);
    for epoch in 0..sgd.epochs {
        for batch in minibatches(inputs.len(), sgd.batch_size, &mut rng) {
            grads.scale(0.0);
            let scale = 2.0 / batch.len() as f64;
            for &i in &batch {
                let trace = net.forward_trace(&inputs[i])?;
                let resid = trace.output()[0] - logged.records()[i].reward;
                net.backward_into(&trace, &[resid], &mut grads, scale)?;
            }
            sgd_step(&mut net, &grads, sgd).map_err(|e| match e {
                OpeError::TrainingFault { reason, .. } => OpeError::TrainingFault { epoch, reason },
                other => other,
            })?;
            if let Some(sn) = sn.as_mut() {
                sn.apply(&mut net);
            }
        }
    }
    Ok(DirectRegressor {
        net,
        actions,
        reward_range: logged.reward_range(),
    })
}

/// Robust regressor evaluated at the shift between a logging and a target
/// policy: the ratio for `(x, a)` is `p(a|x) / π(a|x)`.
pub struct ShiftedRobustModel<'a> {
    pub regressor: &'a RobustRegressor,
    pub target: &'a dyn Policy,
    pub logging: &'a dyn Policy,
    pub ratio_max: f64,
}

impl RewardModel for ShiftedRobustModel<'_> {
    fn actions(&self) -> usize {
        self.regressor.actions()
    }

    fn predict(&self, context: &[f64], action: usize) -> Result<f64> {
        Ok(self.predict_all(context)?[action])
    }

    fn predict_all(&self, context: &[f64]) -> Result<Vec<f64>> {
        let pi = self.target.probabilities(context)?;
        let p = self.logging.probabilities(context)?;
        (0..self.actions())
            .map(|a| {
                let ratio = DensityRatio::from_probabilities(p[a], pi[a], self.ratio_max)?;
                self.regressor.predict_clipped(context, a, ratio)
            })
            .collect()
    }
}

/// Robust regressor queried with unit density ratio, for the i.i.d. ablation.
pub struct IidRobustModel<'a> {
    pub regressor: &'a RobustRegressor,
}

impl RewardModel for IidRobustModel<'_> {
    fn actions(&self) -> usize {
        self.regressor.actions()
    }

    fn predict(&self, context: &[f64], action: usize) -> Result<f64> {
        self.regressor
            .predict_clipped(context, action, DensityRatio::ONE)
    }
}
