//! Repeated-trial benchmark: classification data converted to bandit
//! feedback, every configured estimator scored against the exact value of
//! the target policy.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, LoggingMode};
use crate::data::{LabeledDataset, LoggedDataset};
use crate::diagnostics::{bound_report, BoundInputs, BoundReport};
use crate::error::{OpeError, Result};
use crate::estimators::{
    EstimatorKind, EstimatorSpec, EvaluationSet, ModelTable, ModelTables, ModelTag,
};
use crate::math::SgdConfig;
use crate::policy::{estimate_logging_policy, train_classifier_policy, uniform_policy, Policy};
use crate::reward::{train_direct, IidRobustModel, ShiftedRobustModel};
use crate::robust::{train_iid, train_robust, RobustRegressor};
use crate::sim::{
    biased_subsample, load_csv, log_bandit_feedback, make_blobs, split, true_value, SplitConfig,
    Standardizer,
};

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` under master seed `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ trial as u64)
}

fn stream(seed: u64, k: u64) -> u64 {
    splitmix64(seed.wrapping_add(k.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<LabeledDataset> {
    match (&config.dataset, &config.synthetic) {
        (Some(ds), _) => {
            let path = ds
                .path
                .as_ref()
                .ok_or_else(|| OpeError::Config("dataset.path is required".into()))?;
            load_csv(path, &ds.label_column)
        }
        (None, Some(s)) => make_blobs(s.rows, s.dim, s.classes, s.spread, s.seed),
        (None, None) => Err(OpeError::Config("no dataset configured".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub true_value: f64,
    /// `(estimator, estimate)` in config order.
    pub estimates: Vec<(EstimatorKind, f64)>,
    pub diagnostics: Option<TrialDiagnostics>,
    #[serde(skip)]
    pub seconds: f64,
}

impl TrialResult {
    pub fn errors(&self) -> Vec<(EstimatorKind, f64)> {
        self.estimates
            .iter()
            .map(|&(k, v)| (k, (v - self.true_value).abs()))
            .collect()
    }
}

/// Measured bound inputs and the resulting values for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialDiagnostics {
    pub inputs: BoundInputs,
    pub bounds: BoundReport,
}

/// Runs one trial on an already loaded dataset.
pub fn run_trial_on(
    config: &ExperimentConfig,
    data: &LabeledDataset,
    trial: usize,
    seed: u64,
) -> Result<TrialResult> {
    let started = Instant::now();
    let specs = config.estimator_specs()?;
    let shape = config.net_shape();
    let sgd = SgdConfig {
        learning_rate: config.sgd.learning_rate,
        epochs: config.sgd.reward_epochs,
        batch_size: config.sgd.batch_size,
        seed: 0,
    };
    let robust_cfg = config.robust_config();

    let (train, test) = split(
        data,
        &SplitConfig {
            train_fraction: config.experiment.train_fraction,
            seed: stream(seed, 0),
        },
    )?;
    let scaler = Standardizer::fit(&train);
    let (train, test) = (scaler.transform(&train), scaler.transform(&test));
    let k = data.classes();

    let target = train_classifier_policy(
        &train,
        &shape,
        &sgd.with_epochs(config.target.epochs)
            .with_seed(stream(seed, 1)),
        config.target.temperature,
    )?;

    let logging: Box<dyn Policy> = match config.logging.mode {
        LoggingMode::Uniform => Box::new(uniform_policy(k)?),
        LoggingMode::BiasedKnown | LoggingMode::Estimated => {
            let sample = biased_subsample(&train, config.logging.beta, stream(seed, 2))?;
            Box::new(train_classifier_policy(
                &sample,
                &shape,
                &sgd.with_epochs(config.logging.sample_epochs)
                    .with_seed(stream(seed, 3)),
                config.logging.sample_temperature,
            )?)
        }
    };
    let mut logged_train = log_bandit_feedback(&train, logging.as_ref(), stream(seed, 4))?;
    let mut logged_test = log_bandit_feedback(&test, logging.as_ref(), stream(seed, 5))?;

    // In estimated mode the estimators never see the true logging policy.
    let estimated;
    let logging_used: &dyn Policy = if config.logging.mode == LoggingMode::Estimated {
        logged_train = logged_train.without_propensities();
        logged_test = logged_test.without_propensities();
        estimated = estimate_logging_policy(
            &logged_train,
            &shape,
            &sgd.with_epochs(config.logging.estimate_epochs)
                .with_seed(stream(seed, 6)),
        )?;
        &estimated
    } else {
        logging.as_ref()
    };

    let needs = |tag: ModelTag| specs.iter().any(|s| s.kind.model() == Some(tag));
    let mut tables = ModelTables::default();
    if needs(ModelTag::Direct) {
        let dm = train_direct(&logged_train, &shape, &sgd.with_seed(stream(seed, 7)))?;
        tables.direct = Some(ModelTable::new(&logged_test, &dm)?);
    }
    let mut robust: Option<RobustRegressor> = None;
    if needs(ModelTag::Robust) || config.diagnostics.enabled {
        let reg = train_robust(
            &logged_train,
            &target,
            logging_used,
            &shape,
            &sgd.with_seed(stream(seed, 8)),
            &robust_cfg,
        )?;
        if needs(ModelTag::Robust) {
            let model = ShiftedRobustModel {
                regressor: &reg,
                target: &target,
                logging: logging_used,
                ratio_max: robust_cfg.ratio_max,
            };
            tables.robust = Some(ModelTable::new(&logged_test, &model)?);
        }
        robust = Some(reg);
    }
    if needs(ModelTag::RobustIid) {
        let reg = train_iid(
            &logged_train,
            &shape,
            &sgd.with_seed(stream(seed, 9)),
            &robust_cfg,
        )?;
        tables.robust_iid = Some(ModelTable::new(
            &logged_test,
            &IidRobustModel { regressor: &reg },
        )?);
    }

    let set = EvaluationSet::new(
        &logged_test,
        &target,
        Some(logging_used),
        config.estimators.weight_max,
    )?;
    let estimates = specs
        .iter()
        .map(|spec| Ok((spec.kind, spec.estimate(&set, &tables)?)))
        .collect::<Result<Vec<_>>>()?;
    let diagnostics = match (&robust, config.diagnostics.enabled) {
        (Some(reg), true) => measure_diagnostics(config, &set, &logged_test, reg)?,
        _ => None,
    };
    Ok(TrialResult {
        trial,
        seed,
        true_value: true_value(&test, &target)?,
        estimates,
        diagnostics,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// `W` is the largest importance weight, `l` the smallest feature norm at a
/// logged `(x, a)`, and `E_p[w r]` the IPS average. Returns `None` when a
/// feature vector vanishes, since the bounds need `l > 0`.
fn measure_diagnostics(
    config: &ExperimentConfig,
    set: &EvaluationSet,
    logged: &LoggedDataset,
    reg: &RobustRegressor,
) -> Result<Option<TrialDiagnostics>> {
    let mut l = f64::INFINITY;
    for rec in logged.records() {
        let f = reg.features(&rec.context, rec.action)?;
        l = l.min(f.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    if !(l > 0.0) {
        return Ok(None);
    }
    let inputs = BoundInputs {
        w: set.max_weight(),
        b: config.robust.rho_r_max,
        sigma0_sq: config.robust.sigma0_sq,
        eta1: config.robust.eta,
        eta2: config.robust.eta,
        l,
        n: set.len() as f64,
        delta: config.diagnostics.delta,
        epsilon: config.diagnostics.epsilon,
        e_p_wr: crate::estimators::v_ips(set)?,
        c: config.diagnostics.constant,
    };
    Ok(Some(TrialDiagnostics {
        inputs,
        bounds: bound_report(&inputs)?,
    }))
}

/// Loads the configured dataset and runs trial `trial`.
pub fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<TrialResult> {
    config.validate()?;
    let data = load_dataset(config)?;
    let seed = trial_seed(config.experiment.seed, trial);
    run_trial_on(config, &data, trial, seed).map_err(|e| wrap(trial, seed, e))
}

fn wrap(trial: usize, seed: u64, e: OpeError) -> OpeError {
    OpeError::Trial {
        trial,
        seed,
        source: Box::new(e),
    }
}

/// RMSE summary for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub rmse: f64,
    /// Standard deviation of the per-trial absolute errors.
    pub std: f64,
    pub n_trials: usize,
}

/// Averages of the per-trial bound values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub bias_bound: f64,
    pub variance_bound: f64,
    pub minimax_lower_bound: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub summaries: Vec<EstimatorSummary>,
    pub trials: Vec<TrialResult>,
    pub diagnostics: Option<DiagnosticsSummary>,
}

impl ExperimentReport {
    pub fn from_trials(
        config: ExperimentConfig,
        specs: &[EstimatorSpec],
        trials: Vec<TrialResult>,
    ) -> Result<Self> {
        if trials.is_empty() {
            return Err(OpeError::invalid("a report needs at least one trial"));
        }
        let summaries = specs
            .iter()
            .map(|spec| {
                let errors = trials
                    .iter()
                    .map(|t| {
                        t.errors()
                            .into_iter()
                            .find(|(k, _)| *k == spec.kind)
                            .map(|(_, e)| e)
                            .ok_or_else(|| {
                                OpeError::invalid(format!("trial {} lacks {}", t.trial, spec.kind))
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (rmse, std) = rmse_and_std(&errors);
                Ok(EstimatorSummary {
                    estimator: spec.kind,
                    rmse,
                    std,
                    n_trials: errors.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let diag: Vec<&TrialDiagnostics> = trials
            .iter()
            .filter_map(|t| t.diagnostics.as_ref())
            .collect();
        let diagnostics = (!diag.is_empty()).then(|| {
            let n = diag.len() as f64;
            DiagnosticsSummary {
                bias_bound: diag.iter().map(|d| d.bounds.bias).sum::<f64>() / n,
                variance_bound: diag.iter().map(|d| d.bounds.variance).sum::<f64>() / n,
                minimax_lower_bound: diag.iter().map(|d| d.bounds.minimax).sum::<f64>() / n,
                trials: diag.len(),
            }
        });
        Ok(Self {
            config,
            summaries,
            trials,
            diagnostics,
        })
    }

    pub fn summary(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == kind)
    }
}

/// `sqrt(mean(e²))` and the population standard deviation of `e`.
pub fn rmse_and_std(errors: &[f64]) -> (f64, f64) {
    let n = errors.len() as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    (rmse, var.sqrt())
}

/// A failed run: the first error plus every trial that did finish.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct ExperimentFailure {
    #[source]
    pub error: OpeError,
    pub completed: Vec<TrialResult>,
}

/// Runs all trials, in parallel when `jobs != 1` (0 means one worker per
/// core). Results are assembled in trial order, so the report does not
/// depend on scheduling.
pub fn run_experiment(
    config: &ExperimentConfig,
    jobs: usize,
) -> std::result::Result<ExperimentReport, ExperimentFailure> {
    let fail = |error| ExperimentFailure {
        error,
        completed: Vec::new(),
    };
    config.validate().map_err(fail)?;
    let specs = config.estimator_specs().map_err(fail)?;
    let data = load_dataset(config).map_err(fail)?;
    let run = |trial: usize| {
        let seed = trial_seed(config.experiment.seed, trial);
        run_trial_on(config, &data, trial, seed).map_err(|e| wrap(trial, seed, e))
    };
    let outcomes = map_trials(config.experiment.trials, jobs, run).map_err(fail)?;
    let mut completed = Vec::new();
    let mut first_error = None;
    for outcome in outcomes {
        match outcome {
            Ok(t) => completed.push(t),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(error) = first_error {
        return Err(ExperimentFailure { error, completed });
    }
    ExperimentReport::from_trials(config.clone(), &specs, completed).map_err(fail)
}

#[cfg(feature = "parallel")]
fn map_trials<F>(trials: usize, jobs: usize, run: F) -> Result<Vec<Result<TrialResult>>>
where
    F: Fn(usize) -> Result<TrialResult> + Sync,
{
    use rayon::prelude::*;
    if jobs == 1 {
        return Ok((0..trials).map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| OpeError::Config(format!("cannot start worker pool: {e}")))?;
    // `run` is only Fn + Send; the closure makes the Sync bound rayon needs
    #[allow(clippy::redundant_closure)]
    Ok(pool.install(|| (0..trials).into_par_iter().map(|t| run(t)).collect()))
}

#[cfg(not(feature = "parallel"))]
fn map_trials<F>(trials: usize, _jobs: usize, run: F) -> Result<Vec<Result<TrialResult>>>
where
    F: Fn(usize) -> Result<TrialResult> + Sync,
{
    Ok((0..trials).map(run).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SyntheticSection;

    fn tiny(mode: LoggingMode) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_dataset("unused.csv", "class", mode);
        cfg.dataset = None;
        cfg.synthetic = Some(SyntheticSection {
            rows: 120,
            dim: 3,
            classes: 3,
            spread: 2.0,
            seed: 4,
        });
        cfg.experiment.trials = 2;
        cfg.network.hidden = vec![8, 8];
        cfg.sgd.reward_epochs = 2;
        cfg
    }

    #[test]
    fn rmse_and_std_by_hand() {
        let (rmse, std) = rmse_and_std(&[0.1, 0.3]);
        assert!((rmse - 0.05f64.sqrt()).abs() < 1e-15);
        assert!((std - 0.1).abs() < 1e-15);
        assert_eq!(rmse_and_std(&[0.25]), (0.25, 0.0));
    }

    #[test]
    fn trial_is_reproducible() {
        for mode in [
            LoggingMode::Uniform,
            LoggingMode::BiasedKnown,
            LoggingMode::Estimated,
        ] {
            let cfg = tiny(mode);
            let a = run_trial(&cfg, 0).unwrap();
            let b = run_trial(&cfg, 0).unwrap();
            assert_eq!(a.estimates, b.estimates);
            assert_eq!(a.estimates.len(), 13);
            assert!((0.0..=1.0).contains(&a.true_value));
        }
    }

    #[test]
    fn report_has_one_row_per_estimator() {
        let mut cfg = tiny(LoggingMode::Uniform);
        cfg.estimators.list = vec!["IPS".into(), "DR".into()];
        let report = run_experiment(&cfg, 2).unwrap();
        assert_eq!(report.summaries.len(), 2);
        assert!(report
            .summaries
            .iter()
            .all(|s| s.n_trials == 2 && s.rmse >= 0.0));
        assert_eq!(report.trials.len(), 2);
    }

    #[test]
    fn parallel_and_serial_agree() {
        let cfg = tiny(LoggingMode::Estimated);
        let a = run_experiment(&cfg, 1).unwrap();
        let b = run_experiment(&cfg, 3).unwrap();
        assert_eq!(a.summaries, b.summaries);
    }

    #[test]
    fn seeds_differ_across_trials() {
        assert_ne!(trial_seed(0, 0), trial_seed(0, 1));
        assert_ne!(trial_seed(0, 0), trial_seed(1, 0));
    }
}
