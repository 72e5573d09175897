//! Experiment configuration, read from TOML.
//!
//! Every section rejects unknown keys. Relative dataset paths resolve
//! against the directory of the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::estimators::{
    EstimatorKind, EstimatorSpec, DEFAULT_SHRINK_CAP, DEFAULT_TAU, DEFAULT_WEIGHT_MAX,
};
use crate::math::NetShape;
use crate::robust::{BaseGaussian, RobustConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoggingMode {
    /// `p(a|x) = 1/K`, propensities logged.
    Uniform,
    /// Classifier trained on a class-biased subsample, propensities logged.
    BiasedKnown,
    /// Same logging policy as `BiasedKnown`, but propensities are dropped and
    /// the policy is re-estimated from the logged training split.
    Estimated,
}

impl LoggingMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::BiasedKnown => "biased_known",
            Self::Estimated => "estimated",
        }
    }
}

impl fmt::Display for LoggingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LoggingMode {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "biased_known" => Ok(Self::BiasedKnown),
            "estimated" => Ok(Self::Estimated),
            other => Err(OpeError::Config(format!("unknown logging mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    #[serde(default = "default_label")]
    pub label_column: String,
}

fn default_label() -> String {
    "class".into()
}

/// Gaussian blobs, for runs that do not need a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub rows: usize,
    pub dim: usize,
    pub classes: usize,
    #[serde(default = "one")]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub trials: usize,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 0,
            train_fraction: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoggingSection {
    pub mode: LoggingMode,
    /// Fraction of examples kept from the down-sampled half of the classes
    /// when training the biased logging policy.
    pub beta: f64,
    pub sample_epochs: usize,
    pub sample_temperature: f64,
    /// Epochs for the logging-policy estimate in `estimated` mode.
    pub estimate_epochs: usize,
}

impl Default for LoggingSection {
    fn default() -> Self {
        Self {
            mode: LoggingMode::Estimated,
            beta: 0.1,
            sample_epochs: 5,
            sample_temperature: 1.0,
            estimate_epochs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    pub epochs: usize,
    pub temperature: f64,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            epochs: 5,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub spectral_norm: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let s = NetShape::default();
        Self {
            hidden: s.hidden,
            spectral_norm: s.spectral_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdSection {
    pub learning_rate: f64,
    pub reward_epochs: usize,
    pub batch_size: usize,
}

impl Default for SgdSection {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            reward_epochs: 20,
            batch_size: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustSection {
    pub mu0: f64,
    pub sigma0_sq: f64,
    pub eta: f64,
    pub rho_r_max: f64,
    pub ratio_max: f64,
}

impl Default for RobustSection {
    fn default() -> Self {
        let r = RobustConfig::default();
        Self {
            mu0: r.base.mu0,
            sigma0_sq: r.base.sigma0_sq,
            eta: r.eta,
            rho_r_max: r.rho_r_max,
            ratio_max: r.ratio_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub list: Vec<String>,
    pub tau: f64,
    pub shrink_cap: f64,
    pub weight_max: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            list: EstimatorKind::ALL
                .iter()
                .map(|k| k.name().to_string())
                .collect(),
            tau: DEFAULT_TAU,
            shrink_cap: DEFAULT_SHRINK_CAP,
            weight_max: DEFAULT_WEIGHT_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub enabled: bool,
    pub delta: f64,
    pub constant: f64,
    pub epsilon: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            enabled: true,
            delta: 0.05,
            constant: 1.0,
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub logging: LoggingSection,
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub sgd: SgdSection,
    #[serde(default)]
    pub robust: RobustSection,
    #[serde(default)]
    pub estimators: EstimatorSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

impl ExperimentConfig {
    /// Config for a CSV dataset with every other field at its default.
    pub fn for_dataset(path: impl Into<PathBuf>, label_column: &str, mode: LoggingMode) -> Self {
        Self {
            dataset: Some(DatasetSection {
                path: Some(path.into()),
                label_column: label_column.to_string(),
            }),
            synthetic: None,
            experiment: ExperimentSection::default(),
            logging: LoggingSection {
                mode,
                ..LoggingSection::default()
            },
            target: TargetSection::default(),
            network: NetworkSection::default(),
            sgd: SgdSection::default(),
            robust: RobustSection::default(),
            estimators: EstimatorSection::default(),
            diagnostics: DiagnosticsSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| OpeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; a relative dataset path is taken
    /// relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| OpeError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(ds) = cfg.dataset.as_mut() {
            if let Some(p) = ds.path.as_mut() {
                if p.is_relative() {
                    if let Some(dir) = path.parent() {
                        *p = dir.join(&*p);
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| OpeError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OpeError::Config(m.to_string()));
        match (&self.dataset, &self.synthetic) {
            (Some(DatasetSection { path: Some(_), .. }), None) => {}
            (None, Some(s)) => {
                if s.rows < 2 || s.dim == 0 || s.classes < 2 || !(s.spread > 0.0) {
                    return bad("synthetic needs rows >= 2, dim >= 1, classes >= 2 and spread > 0");
                }
            }
            (Some(_), Some(_)) => return bad("give either [dataset] or [synthetic], not both"),
            _ => return bad("a [dataset] path or a [synthetic] section is required"),
        }
        let e = &self.experiment;
        if e.trials == 0 {
            return bad("experiment.trials must be at least 1");
        }
        if !(e.train_fraction > 0.0 && e.train_fraction < 1.0) {
            return bad("experiment.train_fraction must lie in (0, 1)");
        }
        if !(self.logging.beta > 0.0 && self.logging.beta <= 1.0) {
            return bad("logging.beta must lie in (0, 1]");
        }
        if !(self.logging.sample_temperature > 0.0) || !(self.target.temperature > 0.0) {
            return bad("temperatures must be positive");
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return bad("network.hidden needs at least one positive width");
        }
        if !(self.sgd.learning_rate > 0.0 && self.sgd.learning_rate.is_finite()) {
            return bad("sgd.learning_rate must be positive");
        }
        if self.sgd.batch_size == 0 {
            return bad("sgd.batch_size must be at least 1");
        }
        self.robust_config()
            .validate()
            .map_err(|e| OpeError::Config(e.to_string()))?;
        if !(self.estimators.weight_max > 0.0) {
            return bad("estimators.weight_max must be positive");
        }
        if self.estimators.list.is_empty() {
            return bad("estimators.list must not be empty");
        }
        for spec in self.estimator_specs()? {
            spec.validate()?;
        }
        let d = &self.diagnostics;
        if !(d.delta > 0.0 && d.delta < 1.0) || d.constant < 0.0 || d.epsilon < 0.0 {
            return bad("diagnostics need delta in (0, 1) and nonnegative constant and epsilon");
        }
        Ok(())
    }

    pub fn estimator_specs(&self) -> Result<Vec<EstimatorSpec>> {
        let mut seen = Vec::new();
        let mut specs = Vec::new();
        for name in &self.estimators.list {
            let kind: EstimatorKind = name.parse()?;
            if seen.contains(&kind) {
                return Err(OpeError::Config(format!("estimator {kind} listed twice")));
            }
            seen.push(kind);
            specs.push(EstimatorSpec {
                kind,
                tau: kind.uses_tau().then_some(self.estimators.tau),
                shrink_cap: kind.uses_shrink_cap().then_some(self.estimators.shrink_cap),
            });
        }
        Ok(specs)
    }

    pub fn net_shape(&self) -> NetShape {
        NetShape {
            hidden: self.network.hidden.clone(),
            spectral_norm: self.network.spectral_norm,
        }
    }

    pub fn robust_config(&self) -> RobustConfig {
        RobustConfig {
            base: BaseGaussian {
                mu0: self.robust.mu0,
                sigma0_sq: self.robust.sigma0_sq,
            },
            eta: self.robust.eta,
            rho_r_max: self.robust.rho_r_max,
            ratio_max: self.robust.ratio_max,
            reward_range: (0.0, 1.0),
        }
    }
}
