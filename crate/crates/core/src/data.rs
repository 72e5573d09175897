//! Labeled (fully observed) and logged (bandit feedback) datasets.

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::math::DenseMatrix;

/// Multiclass dataset with every label observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    contexts: DenseMatrix,
    labels: Vec<usize>,
    classes: usize,
    pub feature_names: Option<Vec<String>>,
    pub label_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(contexts: DenseMatrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if contexts.rows() == 0 {
            return Err(OpeError::invalid("dataset must contain at least one row"));
        }
        if labels.len() != contexts.rows() {
            return Err(OpeError::invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                contexts.rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(OpeError::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            contexts,
            labels,
            classes,
            feature_names: None,
            label_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.contexts.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn contexts(&self) -> &DenseMatrix {
        &self.contexts
    }

    pub fn context(&self, i: usize) -> &[f64] {
        self.contexts.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Rows selected by `indices`, keeping class count and names.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.context(i));
        }
        let mut out = Self::new(
            DenseMatrix::new(indices.len(), d, data)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.classes,
        )?;
        out.feature_names.clone_from(&self.feature_names);
        out.label_names.clone_from(&self.label_names);
        Ok(out)
    }

    pub(crate) fn contexts_mut(&mut self) -> &mut DenseMatrix {
        &mut self.contexts
    }
}

/// One logged interaction `(x, a, r)` with the logging propensity when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRecord {
    pub context: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub propensity: Option<f64>,
}

/// Bandit feedback collected by some logging policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDataset {
    records: Vec<LoggedRecord>,
    actions: usize,
    reward_min: f64,
    reward_max: f64,
}

impl LoggedDataset {
    pub fn new(
        records: Vec<LoggedRecord>,
        actions: usize,
        reward_min: f64,
        reward_max: f64,
    ) -> Result<Self> {
        if !(reward_min < reward_max) {
            return Err(OpeError::invalid("reward range must satisfy r_min < r_max"));
        }
        for (i, rec) in records.iter().enumerate() {
            if rec.action >= actions {
                return Err(OpeError::invalid(format!(
                    "record {i}: action {} out of range for {actions} actions",
                    rec.action
                )));
            }
            if !(rec.reward >= reward_min && rec.reward <= reward_max) {
                return Err(OpeError::invalid(format!(
                    "record {i}: reward {} outside [{reward_min}, {reward_max}]",
                    rec.reward
                )));
            }
            if let Some(p) = rec.propensity {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(OpeError::invalid(format!(
                        "record {i}: propensity {p} not in (0, 1]"
                    )));
                }
            }
        }
        Ok(Self {
            records,
            actions,
            reward_min,
            reward_max,
        })
    }

    pub fn records(&self) -> &[LoggedRecord] {
        &self.records
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

    pub fn reward_range(&self) -> (f64, f64) {
        (self.reward_min, self.reward_max)
    }

    pub fn context_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.context.len())
    }

    /// Copy with logged propensities removed, for the unknown-logging setting.
    pub fn without_propensities(&self) -> Self {
        Self {
            records: self
                .records
                .iter()
                .map(|r| LoggedRecord {
                    propensity: None,
                    ..r.clone()
                })
                .collect(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(action: usize, reward: f64, propensity: Option<f64>) -> LoggedRecord {
        LoggedRecord {
            context: vec![0.0],
            action,
            reward,
            propensity,
        }
    }

    #[test]
    fn logged_dataset_validates_records() {
        assert!(LoggedDataset::new(vec![rec(2, 0.0, None)], 2, 0.0, 1.0).is_err());
        assert!(LoggedDataset::new(vec![rec(0, 1.5, None)], 2, 0.0, 1.0).is_err());
        assert!(LoggedDataset::new(vec![rec(0, 1.0, Some(0.0))], 2, 0.0, 1.0).is_err());
        assert!(LoggedDataset::new(vec![rec(1, 1.0, Some(1.0))], 2, 0.0, 1.0).is_ok());
    }

    #[test]
    fn labeled_dataset_validates_labels() {
        let m = DenseMatrix::zeros(2, 1);
        assert!(LabeledDataset::new(m.clone(), vec![0, 3], 3).is_err());
        assert!(LabeledDataset::new(m.clone(), vec![0], 3).is_err());
        assert!(LabeledDataset::new(DenseMatrix::zeros(0, 1), vec![], 3).is_err());
        let ds = LabeledDataset::new(m, vec![0, 2], 3).unwrap();
        assert_eq!(ds.subset(&[1]).unwrap().labels(), &[2]);
    }
}
