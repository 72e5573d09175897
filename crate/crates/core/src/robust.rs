//! Minimax robust regression under covariate shift.
//!
//! The predictor is a conditional Gaussian whose precision and mean depend on
//! the density ratio `w = p(a|x) / π(a|x)` between the logging and target
//! policies:
//!
//! ```text
//! σ²(x, a) = 1 / (2 w ρ_r + 1/σ₀²)
//! μ(x, a)  = σ²(x, a) · (−2 w ⟨ρ_xr, f(x, a)⟩ + μ₀/σ₀²)
//! ```
//!
//! where `f` is the output of a feed-forward feature net. Where the target
//! policy puts mass the logging policy rarely explored (`w → 0`) the
//! prediction falls back to the base distribution `N(μ₀, σ₀²)`.
//!
//! Training minimizes the importance-weighted negative log-likelihood on the
//! target distribution, `(1/n) Σ (1/w_i) · −log N(r_i; μ_i, σ_i²)`. The
//! `1/w` weight cancels the `w` in every derivative, which is why the
//! parameter gradients below contain no density ratio.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::error::{OpeError, Result};
use crate::math::{
    minibatches, sgd_step, FeedForwardNet, NetGradients, NetShape, SgdConfig, SpectralNormalizer,
};
use crate::policy::Policy;

pub const MODEL_FORMAT: &str = "ope-robust-regressor/1";

/// Quadratic-potential parameters. `rho_r` stays in `[0, rho_r_max]` so every
/// predicted variance is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoParams {
    pub rho_r: f64,
    pub rho_xr: Vec<f64>,
}

impl RhoParams {
    pub fn zeros(k: usize) -> Self {
        Self {
            rho_r: 0.0,
            rho_xr: vec![0.0; k],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseGaussian {
    pub mu0: f64,
    pub sigma0_sq: f64,
}

impl Default for BaseGaussian {
    fn default() -> Self {
        Self {
            mu0: 0.5,
            sigma0_sq: 1.0,
        }
    }
}

impl BaseGaussian {
    pub fn new(mu0: f64, sigma0_sq: f64) -> Result<Self> {
        if !(sigma0_sq > 0.0 && sigma0_sq.is_finite() && mu0.is_finite()) {
            return Err(OpeError::invalid(
                "base variance must be positive and finite",
            ));
        }
        Ok(Self { mu0, sigma0_sq })
    }
}

/// `p(a|x) / π(a|x)` clipped to `[0, max]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DensityRatio(f64);

impl DensityRatio {
    pub const ONE: DensityRatio = DensityRatio(1.0);

    pub fn new(value: f64, max: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(OpeError::invalid(format!(
                "density ratio {value} is not a nonnegative number"
            )));
        }
        Ok(Self(value.min(max)))
    }

    /// Ratio of logging to target probability; a zero target probability maps
    /// to the cap.
    pub fn from_probabilities(logging: f64, target: f64, max: f64) -> Result<Self> {
        if target <= 0.0 {
            return Self::new(if logging > 0.0 { max } else { 0.0 }, max);
        }
        Self::new(logging / target, max)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub variance: f64,
}

/// Closed-form conditional Gaussian for a feature projection `⟨ρ_xr, f⟩`.
pub fn conditional_gaussian(
    rho_r: f64,
    projection: f64,
    base: &BaseGaussian,
    ratio: DensityRatio,
) -> GaussianPrediction {
    let w = ratio.value();
    let shift = 2.0 * w * rho_r;
    let pull = -2.0 * w * projection;
    // with no shift the reciprocal round trip could perturb the base by an ulp
    if shift == 0.0 && pull == 0.0 {
        return GaussianPrediction {
            mean: base.mu0,
            variance: base.sigma0_sq,
        };
    }
    let variance = if shift == 0.0 {
        base.sigma0_sq
    } else {
        1.0 / (shift + 1.0 / base.sigma0_sq)
    };
    let mean = variance * (pull + base.mu0 / base.sigma0_sq);
    GaussianPrediction { mean, variance }
}

/// One-hot action encoding appended to the context.
pub fn action_encoding(action: usize, actions: usize) -> Result<Vec<f64>> {
    if action >= actions {
        return Err(OpeError::invalid(format!(
            "action {action} out of range for {actions} actions"
        )));
    }
    let mut v = vec![0.0; actions];
    v[action] = 1.0;
    Ok(v)
}

pub(crate) fn joint_input(context: &[f64], action: usize, actions: usize) -> Result<Vec<f64>> {
    let mut v = Vec::with_capacity(context.len() + actions);
    v.extend_from_slice(context);
    v.extend(action_encoding(action, actions)?);
    Ok(v)
}

/// Hyperparameters of the robust trainer other than SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub base: BaseGaussian,
    /// L2 shrinkage on `ρ`.
    pub eta: f64,
    pub rho_r_max: f64,
    pub ratio_max: f64,
    pub reward_range: (f64, f64),
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            base: BaseGaussian::default(),
            eta: 1e-3,
            rho_r_max: 1e3,
            ratio_max: 100.0,
            reward_range: (0.0, 1.0),
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        BaseGaussian::new(self.base.mu0, self.base.sigma0_sq)?;
        if !(self.eta >= 0.0) {
            return Err(OpeError::invalid("eta must be nonnegative"));
        }
        if !(self.rho_r_max > 0.0) || !(self.ratio_max > 0.0) {
            return Err(OpeError::invalid(
                "rho_r_max and ratio_max must be positive",
            ));
        }
        if !(self.reward_range.0 < self.reward_range.1) {
            return Err(OpeError::invalid("reward range must satisfy r_min < r_max"));
        }
        Ok(())
    }
}

/// One training example for the robust objective.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustSample<'a> {
    pub context: &'a [f64],
    pub action: usize,
    pub reward: f64,
    pub ratio: DensityRatio,
}

/// Per-sample quantities that enter the `ρ` gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments<'a> {
    pub reward: f64,
    pub mean: f64,
    pub variance: f64,
    pub features: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoGradients {
    pub rho_r: f64,
    pub rho_xr: Vec<f64>,
}

/// `∂/∂ρ_r = mean(r²) − mean(μ² + σ²)` and `∂/∂ρ_xr = mean((r − μ) f)`.
///
/// Both are derivatives of the importance-weighted negative log-likelihood;
/// the exact `ρ_xr` derivative is twice the returned vector.
pub fn rho_gradients_from(moments: &[SampleMoments<'_>]) -> Result<RhoGradients> {
    let n = moments.len();
    if n == 0 {
        return Err(OpeError::invalid("rho gradients need a nonempty minibatch"));
    }
    let k = moments[0].features.len();
    let mut g_r = 0.0;
    let mut g_xr = vec![0.0; k];
    for m in moments {
        if m.features.len() != k {
            return Err(OpeError::invalid("feature dimension mismatch in minibatch"));
        }
        g_r += m.reward * m.reward - (m.mean * m.mean + m.variance);
        let resid = m.reward - m.mean;
        for (g, f) in g_xr.iter_mut().zip(m.features) {
            *g += resid * f;
        }
    }
    let inv = 1.0 / n as f64;
    let out = RhoGradients {
        rho_r: g_r * inv,
        rho_xr: g_xr.into_iter().map(|g| g * inv).collect(),
    };
    if !out.rho_r.is_finite() || out.rho_xr.iter().any(|g| !g.is_finite()) {
        return Err(OpeError::TrainingFault {
            epoch: 0,
            reason: "non-finite rho gradient".into(),
        });
    }
    Ok(out)
}

/// Conditional Gaussian reward model `P̂(r | x, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustRegressor {
    format: String,
    net: FeedForwardNet,
    rho: RhoParams,
    base: BaseGaussian,
    eta: f64,
    actions: usize,
    reward_range: (f64, f64),
}

impl RobustRegressor {
    /// Untrained regressor with `ρ = 0`, i.e. the base distribution everywhere.
    pub fn new(net: FeedForwardNet, actions: usize, config: &RobustConfig) -> Result<Self> {
        config.validate()?;
        if net.input_dim() <= actions {
            return Err(OpeError::invalid(
                "feature net input must hold context and action encoding",
            ));
        }
        let k = net.output_dim();
        Ok(Self {
            format: MODEL_FORMAT.to_string(),
            net,
            rho: RhoParams::zeros(k),
            base: config.base,
            eta: config.eta,
            actions,
            reward_range: config.reward_range,
        })
    }

    pub fn rho(&self) -> &RhoParams {
        &self.rho
    }

    pub fn set_rho(&mut self, rho: RhoParams) -> Result<()> {
        if rho.rho_xr.len() != self.net.output_dim() || !(rho.rho_r >= 0.0) {
            return Err(OpeError::invalid(
                "rho must match the feature dimension and have rho_r >= 0",
            ));
        }
        self.rho = rho;
        Ok(())
    }

    pub fn base(&self) -> &BaseGaussian {
        &self.base
    }

    pub fn net(&self) -> &FeedForwardNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut FeedForwardNet {
        &mut self.net
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn feature_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn features(&self, context: &[f64], action: usize) -> Result<Vec<f64>> {
        self.net
            .forward(&joint_input(context, action, self.actions)?)
    }

    fn projection(&self, features: &[f64]) -> f64 {
        self.rho
            .rho_xr
            .iter()
            .zip(features)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn predict_from_features(
        &self,
        features: &[f64],
        ratio: DensityRatio,
    ) -> GaussianPrediction {
        conditional_gaussian(self.rho.rho_r, self.projection(features), &self.base, ratio)
    }

    pub fn predict(
        &self,
        context: &[f64],
        action: usize,
        ratio: DensityRatio,
    ) -> Result<GaussianPrediction> {
        Ok(self.predict_from_features(&self.features(context, action)?, ratio))
    }

    /// Mean prediction rounded into the reward range.
    pub fn predict_clipped(
        &self,
        context: &[f64],
        action: usize,
        ratio: DensityRatio,
    ) -> Result<f64> {
        Ok(clip(
            self.predict(context, action, ratio)?.mean,
            self.reward_range,
        ))
    }

    pub fn rho_gradients(&self, batch: &[RobustSample<'_>]) -> Result<RhoGradients> {
        let feats = batch
            .iter()
            .map(|s| self.features(s.context, s.action))
            .collect::<Result<Vec<_>>>()?;
        let moments: Vec<SampleMoments<'_>> = batch
            .iter()
            .zip(&feats)
            .map(|(s, f)| {
                let p = self.predict_from_features(f, s.ratio);
                SampleMoments {
                    reward: s.reward,
                    mean: p.mean,
                    variance: p.variance,
                    features: f,
                }
            })
            .collect();
        rho_gradients_from(&moments)
    }

    /// `(1/n) Σ (1/w_i) · −log N(r_i; μ_i, σ_i²)`, the training objective.
    pub fn weighted_nll(&self, batch: &[RobustSample<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(OpeError::invalid("objective needs a nonempty batch"));
        }
        let mut total = 0.0;
        for s in batch {
            if !(s.ratio.value() > 0.0) {
                return Err(OpeError::invalid(
                    "the weighted objective needs positive density ratios",
                ));
            }
            let p = self.predict(s.context, s.action, s.ratio)?;
            total += gaussian_nll(s.reward, p) / s.ratio.value();
        }
        Ok(total / batch.len() as f64)
    }

    /// Gradient of [`Self::weighted_nll`] with respect to the feature net.
    pub fn feature_net_gradients(&self, batch: &[RobustSample<'_>]) -> Result<NetGradients> {
        let mut grads = NetGradients::zeros_like(&self.net);
        let scale = 2.0 / batch.len() as f64;
        for s in batch {
            let trace = self
                .net
                .forward_trace(&joint_input(s.context, s.action, self.actions)?)?;
            let p = self.predict_from_features(trace.output(), s.ratio);
            let resid = s.reward - p.mean;
            let out_grad: Vec<f64> = self.rho.rho_xr.iter().map(|r| r * resid).collect();
            self.net
                .backward_into(&trace, &out_grad, &mut grads, scale)?;
        }
        Ok(grads)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| OpeError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let reg: RobustRegressor =
            serde_json::from_str(text).map_err(|e| OpeError::Format(e.to_string()))?;
        if reg.format != MODEL_FORMAT {
            return Err(OpeError::Format(format!(
                "unsupported model format '{}'",
                reg.format
            )));
        }
        FeedForwardNet::new(reg.net.layers().to_vec())?;
        if reg.rho.rho_xr.len() != reg.net.output_dim() {
            return Err(OpeError::Format(
                "rho dimension does not match feature net".into(),
            ));
        }
        Ok(reg)
    }
}

pub(crate) fn clip(v: f64, range: (f64, f64)) -> f64 {
    v.max(range.0).min(range.1)
}

fn gaussian_nll(r: f64, p: GaussianPrediction) -> f64 {
    let d = r - p.mean;
    0.5 * d * d / p.variance + 0.5 * (std::f64::consts::TAU * p.variance).ln()
}

/// Robust regressor together with the per-epoch training objective.
#[derive(Debug, Clone)]
pub struct RobustFit {
    pub regressor: RobustRegressor,
    /// Mean importance-weighted log-likelihood seen during each epoch.
    pub epoch_log_likelihood: Vec<f64>,
}

/// Density ratios `p(a_i|x_i) / π(a_i|x_i)` of the logged actions. Logged
/// propensities take precedence over evaluating `logging`.
pub fn training_ratios(
    logged: &LoggedDataset,
    target: &dyn Policy,
    logging: Option<&dyn Policy>,
    ratio_max: f64,
) -> Result<Vec<DensityRatio>> {
    logged
        .records()
        .iter()
        .map(|rec| {
            let pi = target.probabilities(&rec.context)?[rec.action];
            let p = match (rec.propensity, logging) {
                (Some(p), _) => p,
                (None, Some(policy)) => policy.probabilities(&rec.context)?[rec.action],
                (None, None) => {
                    return Err(OpeError::invalid(
                        "no logged propensity and no logging policy",
                    ))
                }
            };
            DensityRatio::from_probabilities(p, pi, ratio_max)
        })
        .collect()
}

/// Stochastic gradient training of the robust regressor under covariate
/// shift between `logging` and `target`.
pub fn train_robust(
    logged: &LoggedDataset,
    target: &dyn Policy,
    logging: &dyn Policy,
    shape: &NetShape,
    sgd: &SgdConfig,
    config: &RobustConfig,
) -> Result<RobustRegressor> {
    train_robust_traced(logged, target, logging, shape, sgd, config).map(|f| f.regressor)
}

pub fn train_robust_traced(
    logged: &LoggedDataset,
    target: &dyn Policy,
    logging: &dyn Policy,
    shape: &NetShape,
    sgd: &SgdConfig,
    config: &RobustConfig,
) -> Result<RobustFit> {
    if target.action_count() != logged.actions() || logging.action_count() != logged.actions() {
        return Err(OpeError::invalid(
            "policy action counts must match the logged dataset",
        ));
    }
    let ratios = training_ratios(logged, target, Some(logging), config.ratio_max)?;
    fit(logged, &ratios, shape, sgd, config)
}

/// The i.i.d. ablation: every density ratio fixed to 1. Callers predicting
/// with the result should pass [`DensityRatio::ONE`].
pub fn train_iid(
    logged: &LoggedDataset,
    shape: &NetShape,
    sgd: &SgdConfig,
    config: &RobustConfig,
) -> Result<RobustRegressor> {
    train_iid_traced(logged, shape, sgd, config).map(|f| f.regressor)
}

pub fn train_iid_traced(
    logged: &LoggedDataset,
    shape: &NetShape,
    sgd: &SgdConfig,
    config: &RobustConfig,
) -> Result<RobustFit> {
    let ratios = vec![DensityRatio::ONE; logged.len()];
    fit(logged, &ratios, shape, sgd, config)
}

fn fit(
    logged: &LoggedDataset,
    ratios: &[DensityRatio],
    shape: &NetShape,
    sgd: &SgdConfig,
    config: &RobustConfig,
) -> Result<RobustFit> {
    sgd.validate()?;
    config.validate()?;
    if logged.is_empty() {
        return Err(OpeError::invalid("cannot train on an empty log"));
    }
    let k = *shape
        .hidden
        .last()
        .ok_or_else(|| OpeError::invalid("robust regression needs at least one hidden layer"))?;
    let actions = logged.actions();
    let mut rng = ChaCha8Rng::seed_from_u64(sgd.seed);
    let net = FeedForwardNet::random(logged.context_dim() + actions, &shape.hidden, k, &mut rng)?;
    let mut reg = RobustRegressor::new(net, actions, config)?;
    let mut sn = shape
        .spectral_norm
        .then(|| SpectralNormalizer::new(&reg.net, 1));

    let inputs = logged
        .records()
        .iter()
        .map(|r| joint_input(&r.context, r.action, actions))
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = logged.records().iter().map(|r| r.reward).collect();

    let lr = sgd.learning_rate;
    let mut grads = NetGradients::zeros_like(&reg.net);
    let mut history = Vec::with_capacity(sgd.epochs);
    for epoch in 0..sgd.epochs {
        let fault = |reason: &str| OpeError::TrainingFault {
            epoch,
            reason: reason.to_string(),
        };
        let mut epoch_ll = 0.0;
        for batch in minibatches(inputs.len(), sgd.batch_size, &mut rng) {
            let traces = batch
                .iter()
                .map(|&i| reg.net.forward_trace(&inputs[i]))
                .collect::<Result<Vec<_>>>()?;
            let preds: Vec<GaussianPrediction> = batch
                .iter()
                .zip(&traces)
                .map(|(&i, t)| reg.predict_from_features(t.output(), ratios[i]))
                .collect();
            let moments: Vec<SampleMoments<'_>> = batch
                .iter()
                .zip(&traces)
                .zip(&preds)
                .map(|((&i, t), p)| SampleMoments {
                    reward: rewards[i],
                    mean: p.mean,
                    variance: p.variance,
                    features: t.output(),
                })
                .collect();
            let rho_grad =
                rho_gradients_from(&moments).map_err(|_| fault("non-finite rho gradient"))?;

            grads.scale(0.0);
            let scale = 2.0 / batch.len() as f64;
            for ((&i, trace), p) in batch.iter().zip(&traces).zip(&preds) {
                let resid = rewards[i] - p.mean;
                let w = ratios[i].value();
                if w > 0.0 {
                    epoch_ll -= gaussian_nll(rewards[i], *p) / w;
                }
                let out_grad: Vec<f64> = reg.rho.rho_xr.iter().map(|r| r * resid).collect();
                reg.net.backward_into(trace, &out_grad, &mut grads, scale)?;
            }
            if !epoch_ll.is_finite() {
                return Err(fault("objective is not finite"));
            }

            let rho = &mut reg.rho;
            rho.rho_r = (rho.rho_r - lr * (rho_grad.rho_r + config.eta * rho.rho_r))
                .clamp(0.0, config.rho_r_max);
            for (p, g) in rho.rho_xr.iter_mut().zip(&rho_grad.rho_xr) {
                *p -= lr * (g + config.eta * *p);
            }
            if rho.rho_xr.iter().any(|v| !v.is_finite()) {
                return Err(fault("rho diverged"));
            }
            sgd_step(&mut reg.net, &grads, sgd)
                .map_err(|_| fault("non-finite feature-net gradient"))?;
            if let Some(sn) = sn.as_mut() {
                sn.apply(&mut reg.net);
            }
        }
        history.push(epoch_ll / inputs.len() as f64);
    }
    Ok(RobustFit {
        regressor: reg,
        epoch_log_likelihood: history,
    })
}
