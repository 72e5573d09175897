//! Value estimators `V̂(π)` built from logged bandit feedback.
//!
//! Every estimator works on an [`EvaluationSet`] (target probabilities and
//! importance weights per record) and, where it needs one, a
//! [`ModelTable`] of reward predictions for all actions at each logged
//! context. IPS and DR-family estimates are not clipped and may leave the
//! reward range.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::error::{OpeError, Result};
use crate::policy::Policy;
use crate::reward::RewardModel;

pub const DEFAULT_WEIGHT_MAX: f64 = 1e4;
pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_SHRINK_CAP: f64 = 0.5;

#[derive(Debug, Clone)]
struct EvalRecord {
    target: Vec<f64>,
    action: usize,
    reward: f64,
    weight: f64,
}

/// Logged records paired with target-policy probabilities and importance
/// weights `w = π(a|x) / p(a|x)` clipped to `[0, weight_max]`.
#[derive(Debug, Clone)]
pub struct EvaluationSet {
    records: Vec<EvalRecord>,
    actions: usize,
}

impl EvaluationSet {
    /// A logged propensity takes precedence over `logging`; records without
    /// one need a logging policy.
    pub fn new(
        logged: &LoggedDataset,
        target: &dyn Policy,
        logging: Option<&dyn Policy>,
        weight_max: f64,
    ) -> Result<Self> {
        if logged.is_empty() {
            return Err(OpeError::invalid("cannot evaluate on an empty dataset"));
        }
        if !(weight_max >= 0.0) {
            return Err(OpeError::invalid("weight_max must be nonnegative"));
        }
        if target.action_count() != logged.actions() {
            return Err(OpeError::invalid(
                "target policy action count does not match the log",
            ));
        }
        let records = logged
            .records()
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let target = target.probabilities(&rec.context)?;
                let p = match (rec.propensity, logging) {
                    (Some(p), _) => p,
                    (None, Some(policy)) => policy.probabilities(&rec.context)?[rec.action],
                    (None, None) => {
                        return Err(OpeError::invalid(format!(
                            "record {i} has no propensity and no logging policy was given"
                        )))
                    }
                };
                let pi = target[rec.action];
                let weight = if pi == 0.0 {
                    0.0
                } else if p > 0.0 {
                    (pi / p).min(weight_max)
                } else if weight_max.is_finite() {
                    weight_max
                } else {
                    return Err(OpeError::invalid(format!("record {i} has zero propensity")));
                };
                Ok(EvalRecord {
                    target,
                    action: rec.action,
                    reward: rec.reward,
                    weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            records,
            actions: logged.actions(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn weights(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.weight).collect()
    }

    pub fn max_weight(&self) -> f64 {
        self.records.iter().map(|r| r.weight).fold(0.0, f64::max)
    }
}

/// Reward predictions for every action at each logged context, aligned with
/// the records of the dataset they were computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTable {
    rows: Vec<Vec<f64>>,
}

impl ModelTable {
    pub fn new(logged: &LoggedDataset, model: &dyn RewardModel) -> Result<Self> {
        if model.actions() != logged.actions() {
            return Err(OpeError::invalid(
                "reward model action count does not match the log",
            ));
        }
        let rows = logged
            .records()
            .iter()
            .map(|r| model.predict_all(&r.context))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OpeError::invalid("reward predictions must be finite"));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

fn check(set: &EvaluationSet, model: &ModelTable) -> Result<()> {
    if model.rows.len() != set.len() || model.rows.iter().any(|r| r.len() != set.actions) {
        return Err(OpeError::invalid(
            "model table does not match the evaluation set",
        ));
    }
    Ok(())
}

/// Per-record `(Σ_a π(a|x) r̂(x,a), r̂(x, a_i))`.
fn model_terms<'a>(
    set: &'a EvaluationSet,
    model: &'a ModelTable,
) -> impl Iterator<Item = (&'a EvalRecord, f64, f64)> + 'a {
    set.records.iter().zip(&model.rows).map(|(rec, row)| {
        let on_policy: f64 = rec.target.iter().zip(row).map(|(p, m)| p * m).sum();
        (rec, on_policy, row[rec.action])
    })
}

fn mean(sum: f64, n: usize) -> f64 {
    sum / n as f64
}

pub fn v_dm(set: &EvaluationSet, model: &ModelTable) -> Result<f64> {
    check(set, model)?;
    let s: f64 = model_terms(set, model).map(|(_, v, _)| v).sum();
    Ok(mean(s, set.len()))
}

pub fn v_ips(set: &EvaluationSet) -> Result<f64> {
    let s: f64 = set.records.iter().map(|r| r.weight * r.reward).sum();
    Ok(mean(s, set.len()))
}

pub fn v_snips(set: &EvaluationSet) -> Result<f64> {
    let (num, den) = set.records.iter().fold((0.0, 0.0), |(n, d), r| {
        (n + r.weight * r.reward, d + r.weight)
    });
    if den <= 0.0 {
        return Err(OpeError::UndefinedEstimate(
            "all importance weights are zero".into(),
        ));
    }
    Ok(num / den)
}

pub fn v_dr(set: &EvaluationSet, model: &ModelTable) -> Result<f64> {
    v_dr_shrink(set, model, f64::INFINITY)
}

pub fn v_sndr(set: &EvaluationSet, model: &ModelTable) -> Result<f64> {
    check(set, model)?;
    let (mut dm, mut num, mut den) = (0.0, 0.0, 0.0);
    for (rec, on_policy, logged) in model_terms(set, model) {
        dm += on_policy;
        num += rec.weight * (rec.reward - logged);
        den += rec.weight;
    }
    if den <= 0.0 {
        return Err(OpeError::UndefinedEstimate(
            "all importance weights are zero".into(),
        ));
    }
    Ok(mean(dm, set.len()) + num / den)
}

/// Each record contributes its DR term when `w ≤ tau` and its DM term
/// otherwise.
pub fn v_dr_switch(set: &EvaluationSet, model: &ModelTable, tau: f64) -> Result<f64> {
    check(set, model)?;
    if !(tau >= 0.0) {
        return Err(OpeError::invalid("switch threshold must be nonnegative"));
    }
    let s: f64 = model_terms(set, model)
        .map(|(rec, on_policy, logged)| {
            if rec.weight <= tau {
                on_policy + rec.weight * (rec.reward - logged)
            } else {
                on_policy
            }
        })
        .sum();
    Ok(mean(s, set.len()))
}

/// DR with the weights capped at `cap` inside the residual term.
pub fn v_dr_shrink(set: &EvaluationSet, model: &ModelTable, cap: f64) -> Result<f64> {
    check(set, model)?;
    if !(cap >= 0.0) {
        return Err(OpeError::invalid("shrink cap must be nonnegative"));
    }
    let (mut dm, mut resid) = (0.0, 0.0);
    for (rec, on_policy, logged) in model_terms(set, model) {
        dm += on_policy;
        resid += rec.weight.min(cap) * (rec.reward - logged);
    }
    Ok(mean(dm, set.len()) + mean(resid, set.len()))
}

/// DM with the robust mean in place of `r̂`.
pub fn v_dm_r(set: &EvaluationSet, robust: &ModelTable) -> Result<f64> {
    v_dm(set, robust)
}

pub fn v_tr(set: &EvaluationSet, robust: &ModelTable) -> Result<f64> {
    v_dr(set, robust)
}

pub fn v_sntr(set: &EvaluationSet, robust: &ModelTable) -> Result<f64> {
    v_sndr(set, robust)
}

pub fn v_tr_switch(set: &EvaluationSet, robust: &ModelTable, tau: f64) -> Result<f64> {
    v_dr_switch(set, robust, tau)
}

pub fn v_tr_shrink(set: &EvaluationSet, robust: &ModelTable, cap: f64) -> Result<f64> {
    v_dr_shrink(set, robust, cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    Dm,
    Ips,
    Snips,
    Dr,
    Sndr,
    DrSwitch,
    DrShrink,
    DmR,
    DmI,
    Tr,
    Sntr,
    TrSwitch,
    TrShrink,
}

/// Which reward model an estimator reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Direct,
    Robust,
    RobustIid,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 13] = [
        Self::Dm,
        Self::Ips,
        Self::Snips,
        Self::Dr,
        Self::Sndr,
        Self::DrSwitch,
        Self::DrShrink,
        Self::DmR,
        Self::DmI,
        Self::Tr,
        Self::Sntr,
        Self::TrSwitch,
        Self::TrShrink,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dm => "DM",
            Self::Ips => "IPS",
            Self::Snips => "SnIPS",
            Self::Dr => "DR",
            Self::Sndr => "SnDR",
            Self::DrSwitch => "DR_SWITCH",
            Self::DrShrink => "DR_SHRINK",
            Self::DmR => "DM_R",
            Self::DmI => "DM_I",
            Self::Tr => "TR",
            Self::Sntr => "SnTR",
            Self::TrSwitch => "TR_SWITCH",
            Self::TrShrink => "TR_SHRINK",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::Dm => "direct method with a squared-loss reward regressor",
            Self::Ips => "inverse propensity scoring",
            Self::Snips => "self-normalized inverse propensity scoring",
            Self::Dr => "doubly robust",
            Self::Sndr => "doubly robust with self-normalized correction",
            Self::DrSwitch => "doubly robust, switching to DM above weight tau",
            Self::DrShrink => "doubly robust with weights capped at shrink_cap",
            Self::DmR => "direct method with the covariate-shift robust regressor",
            Self::DmI => "direct method with the robust regressor at unit density ratio",
            Self::Tr => "triply robust",
            Self::Sntr => "triply robust with self-normalized correction",
            Self::TrSwitch => "triply robust, switching to DM_R above weight tau",
            Self::TrShrink => "triply robust with weights capped at shrink_cap",
        }
    }

    /// Reward model the estimator needs, if any.
    pub fn model(self) -> Option<ModelTag> {
        match self {
            Self::Ips | Self::Snips => None,
            Self::Dm | Self::Dr | Self::Sndr | Self::DrSwitch | Self::DrShrink => {
                Some(ModelTag::Direct)
            }
            Self::DmR | Self::Tr | Self::Sntr | Self::TrSwitch | Self::TrShrink => {
                Some(ModelTag::Robust)
            }
            Self::DmI => Some(ModelTag::RobustIid),
        }
    }

    pub fn uses_tau(self) -> bool {
        matches!(self, Self::DrSwitch | Self::TrSwitch)
    }

    pub fn uses_shrink_cap(self) -> bool {
        matches!(self, Self::DrShrink | Self::TrShrink)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| OpeError::Config(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub tau: Option<f64>,
    pub shrink_cap: Option<f64>,
}

impl EstimatorSpec {
    /// Spec with the default threshold or cap filled in where the kind needs one.
    pub fn with_defaults(kind: EstimatorKind) -> Self {
        Self {
            kind,
            tau: kind.uses_tau().then_some(DEFAULT_TAU),
            shrink_cap: kind.uses_shrink_cap().then_some(DEFAULT_SHRINK_CAP),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let name = self.kind.name();
        match (self.kind.uses_tau(), self.tau) {
            (true, None) => return Err(OpeError::Config(format!("{name} needs tau"))),
            (false, Some(_)) => return Err(OpeError::Config(format!("{name} does not take tau"))),
            (true, Some(t)) if !(t > 0.0) => {
                return Err(OpeError::Config(format!("{name}: tau must be positive")))
            }
            _ => {}
        }
        match (self.kind.uses_shrink_cap(), self.shrink_cap) {
            (true, None) => Err(OpeError::Config(format!("{name} needs shrink_cap"))),
            (false, Some(_)) => Err(OpeError::Config(format!("{name} does not take shrink_cap"))),
            (true, Some(c)) if !(c > 0.0) => Err(OpeError::Config(format!(
                "{name}: shrink_cap must be positive"
            ))),
            _ => Ok(()),
        }
    }

    /// Evaluate on `set`, reading reward predictions from `models`.
    pub fn estimate(&self, set: &EvaluationSet, models: &ModelTables) -> Result<f64> {
        self.validate()?;
        let table = |tag: ModelTag| {
            models.get(tag).ok_or_else(|| {
                OpeError::invalid(format!("{} needs a {tag:?} reward model", self.kind))
            })
        };
        let tau = self.tau.unwrap_or(DEFAULT_TAU);
        let cap = self.shrink_cap.unwrap_or(DEFAULT_SHRINK_CAP);
        match self.kind {
            EstimatorKind::Ips => v_ips(set),
            EstimatorKind::Snips => v_snips(set),
            EstimatorKind::Dm => v_dm(set, table(ModelTag::Direct)?),
            EstimatorKind::Dr => v_dr(set, table(ModelTag::Direct)?),
            EstimatorKind::Sndr => v_sndr(set, table(ModelTag::Direct)?),
            EstimatorKind::DrSwitch => v_dr_switch(set, table(ModelTag::Direct)?, tau),
            EstimatorKind::DrShrink => v_dr_shrink(set, table(ModelTag::Direct)?, cap),
            EstimatorKind::DmR => v_dm_r(set, table(ModelTag::Robust)?),
            EstimatorKind::DmI => v_dm(set, table(ModelTag::RobustIid)?),
            EstimatorKind::Tr => v_tr(set, table(ModelTag::Robust)?),
            EstimatorKind::Sntr => v_sntr(set, table(ModelTag::Robust)?),
            EstimatorKind::TrSwitch => v_tr_switch(set, table(ModelTag::Robust)?, tau),
            EstimatorKind::TrShrink => v_tr_shrink(set, table(ModelTag::Robust)?, cap),
        }
    }
}

/// Prediction tables for the three reward-model tags.
#[derive(Debug, Clone, Default)]
pub struct ModelTables {
    pub direct: Option<ModelTable>,
    pub robust: Option<ModelTable>,
    pub robust_iid: Option<ModelTable>,
}

impl ModelTables {
    pub fn get(&self, tag: ModelTag) -> Option<&ModelTable> {
        match tag {
            ModelTag::Direct => self.direct.as_ref(),
            ModelTag::Robust => self.robust.as_ref(),
            ModelTag::RobustIid => self.robust_iid.as_ref(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LoggedRecord;
    use crate::policy::TabularPolicy;

    /// Two one-hot contexts, K = 2; target and propensities chosen so the
    /// weights are known in advance.
    fn table_case(
        prop: &[f64],
        actions: &[usize],
        rewards: &[f64],
        target: Vec<Vec<f64>>,
    ) -> EvaluationSet {
        let n = prop.len();
        let contexts: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let records = (0..n)
            .map(|i| LoggedRecord {
                context: contexts[i].clone(),
                action: actions[i],
                reward: rewards[i],
                propensity: Some(prop[i]),
            })
            .collect();
        let log = LoggedDataset::new(records, 2, 0.0, 1.0).unwrap();
        let pi = TabularPolicy::new(contexts, target).unwrap();
        EvaluationSet::new(&log, &pi, None, DEFAULT_WEIGHT_MAX).unwrap()
    }

    // w = (2, 0.5, 1), r = (1, 0, 1)
    fn three_records() -> EvaluationSet {
        table_case(
            &[0.5, 0.8, 0.6],
            &[0, 1, 0],
            &[1.0, 0.0, 1.0],
            vec![vec![1.0, 0.0], vec![0.6, 0.4], vec![0.6, 0.4]],
        )
    }

    #[test]
    fn ips_and_snips_hand_values() {
        let set = three_records();
        let w = set.weights();
        for (a, b) in w.iter().zip([2.0, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((v_ips(&set).unwrap() - 1.0).abs() < 1e-15);
        assert!((v_snips(&set).unwrap() - 3.0 / 3.5).abs() < 1e-15);
    }

    #[test]
    fn dm_hand_value() {
        // π rows (1,0), (0.6,0.4), (0.6,0.4); model rows below
        let set = three_records();
        let m =
            ModelTable::from_rows(vec![vec![0.2, 0.9], vec![0.5, 0.1], vec![1.0, 0.0]]).unwrap();
        let expected = (0.2 + (0.3 + 0.04) + 0.6) / 3.0;
        assert!((v_dm(&set, &m).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn dr_family_hand_values() {
        let set = three_records();
        let m =
            ModelTable::from_rows(vec![vec![0.2, 0.9], vec![0.5, 0.1], vec![1.0, 0.0]]).unwrap();
        let dm = (0.2 + 0.34 + 0.6) / 3.0;
        // residuals at logged actions: 1-0.2, 0-0.1, 1-1.0
        let resid = [0.8, -0.1, 0.0];
        let w = [2.0, 0.5, 1.0];
        let dr = dm + (w[0] * resid[0] + w[1] * resid[1] + w[2] * resid[2]) / 3.0;
        assert!((v_dr(&set, &m).unwrap() - dr).abs() < 1e-14);
        let sndr = dm + (1.6 - 0.05) / 3.5;
        assert!((v_sndr(&set, &m).unwrap() - sndr).abs() < 1e-14);
        // tau = 1: record 0 (w = 2) falls back to DM
        let sw = dm + (0.5 * -0.1) / 3.0;
        assert!((v_dr_switch(&set, &m, 1.0).unwrap() - sw).abs() < 1e-14);
        // cap 0.5: weights (0.5, 0.5, 0.5)
        let sh = dm + 0.5 * (0.8 - 0.1) / 3.0;
        assert!((v_dr_shrink(&set, &m, 0.5).unwrap() - sh).abs() < 1e-14);
    }

    #[test]
    fn shrink_cap_on_two_records() {
        // w = (2, 0.3)
        let set = table_case(
            &[0.5, 1.0],
            &[0, 1],
            &[1.0, 0.5],
            vec![vec![1.0, 0.0], vec![0.7, 0.3]],
        );
        let m = ModelTable::from_rows(vec![vec![0.4, 0.4], vec![0.2, 0.1]]).unwrap();
        let dm = (0.4 + (0.14 + 0.03)) / 2.0;
        let expected = dm + (0.5 * 0.6 + 0.3 * 0.4) / 2.0;
        assert!((v_dr_shrink(&set, &m, 0.5).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn snips_needs_positive_weight() {
        let set = table_case(&[0.5], &[1], &[1.0], vec![vec![1.0, 0.0]]);
        assert!(matches!(v_snips(&set), Err(OpeError::UndefinedEstimate(_))));
        let m = ModelTable::from_rows(vec![vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            v_sndr(&set, &m),
            Err(OpeError::UndefinedEstimate(_))
        ));
    }

    #[test]
    fn zero_propensity_without_clip_is_rejected() {
        let records = vec![LoggedRecord {
            context: vec![0.0],
            action: 0,
            reward: 1.0,
            propensity: None,
        }];
        let log = LoggedDataset::new(records, 2, 0.0, 1.0).unwrap();
        let pi = TabularPolicy::new(vec![vec![0.0]], vec![vec![1.0, 0.0]]).unwrap();
        let p = TabularPolicy::new(vec![vec![0.0]], vec![vec![0.0, 1.0]]).unwrap();
        assert!(EvaluationSet::new(&log, &pi, Some(&p), f64::INFINITY).is_err());
        let set = EvaluationSet::new(&log, &pi, Some(&p), 10.0).unwrap();
        assert_eq!(set.weights(), vec![10.0]);
        assert!(EvaluationSet::new(&log, &pi, None, 10.0).is_err());
    }

    #[test]
    fn spec_validation() {
        for kind in EstimatorKind::ALL {
            EstimatorSpec::with_defaults(kind).validate().unwrap();
            assert_eq!(kind.name().parse::<EstimatorKind>().unwrap(), kind);
        }
        let bad = EstimatorSpec {
            kind: EstimatorKind::Dr,
            tau: Some(0.5),
            shrink_cap: None,
        };
        assert!(bad.validate().is_err());
        let missing = EstimatorSpec {
            kind: EstimatorKind::TrSwitch,
            tau: None,
            shrink_cap: None,
        };
        assert!(missing.validate().is_err());
        assert_eq!(
            "dr-switch".parse::<EstimatorKind>().unwrap(),
            EstimatorKind::DrSwitch
        );
        assert!("XYZ".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn estimate_requires_its_model() {
        let set = three_records();
        let err =
            EstimatorSpec::with_defaults(EstimatorKind::Tr).estimate(&set, &ModelTables::default());
        assert!(err.is_err());
        let ips = EstimatorSpec::with_defaults(EstimatorKind::Ips)
            .estimate(&set, &ModelTables::default());
        assert!((ips.unwrap() - 1.0).abs() < 1e-15);
    }
}
