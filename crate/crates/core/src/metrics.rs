//! Predictive scores and the predictive robustness score (PRS).

use serde::{Deserialize, Serialize};

use crate::data::{Targets, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Targets paired with model outputs: class probabilities `[n×K]` or values `[n×1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub targets: Targets,
    pub predictions: Tensor,
    pub task: Task,
}

impl PredictionSet {
    pub fn new(targets: Targets, predictions: Tensor, task: Task) -> Result<Self> {
        let width = task.output_dim();
        if predictions.ndim() != 2 || predictions.rows() != targets.len() || predictions.row_len() != width {
            return Err(Error::Dimension(format!(
                "{} targets against predictions {:?} (width {width} expected)",
                targets.len(),
                predictions.shape()
            )));
        }
        match (&targets, task) {
            (Targets::Classes(c), Task::Classification { classes }) => {
                if let Some(&bad) = c.iter().find(|&&l| l >= classes) {
                    return Err(Error::Label { label: bad, classes });
                }
                for i in 0..predictions.rows() {
                    let s: f64 = predictions.row(i).iter().sum();
                    if (s - 1.0).abs() > 1e-6 {
                        return Err(Error::Dimension(format!("probabilities of row {i} sum to {s}")));
                    }
                }
            }
            (Targets::Values(_), Task::Regression) => {}
            _ => return Err(Error::Consistency("targets do not match the task".into())),
        }
        Ok(Self {
            targets,
            predictions,
            task,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Target rows in prediction space (one-hot for classification).
    fn target_rows(&self) -> Vec<Vec<f64>> {
        match &self.targets {
            Targets::Classes(c) => {
                let k = self.predictions.row_len();
                c.iter()
                    .map(|&l| (0..k).map(|j| if j == l { 1.0 } else { 0.0 }).collect())
                    .collect()
            }
            Targets::Values(v) => v.iter().map(|&y| vec![y]).collect(),
        }
    }

    pub fn rmse(&self) -> Result<f64> {
        let y: Vec<Vec<f64>> = self.target_rows();
        let yhat: Vec<Vec<f64>> = (0..self.len()).map(|i| self.predictions.row(i).to_vec()).collect();
        rmse_rows(&y, &yhat)
    }

    /// F1-macro for classification, R² for regression.
    pub fn score(&self) -> Result<ScoreReport> {
        let (metric, value) = match (&self.targets, self.task) {
            (Targets::Classes(c), Task::Classification { classes }) => {
                let predicted: Vec<usize> = (0..self.len()).map(|i| argmax(self.predictions.row(i))).collect();
                (ScoreKind::F1Macro, f1_macro(c, &predicted, classes)?)
            }
            (Targets::Values(v), Task::Regression) => (ScoreKind::R2, r2(v, self.predictions.data())?),
            _ => return Err(Error::Consistency("targets do not match the task".into())),
        };
        Ok(ScoreReport {
            metric,
            value,
            task: self.task,
            n: self.len(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    F1Macro,
    R2,
    Rmse,
    Prs,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::F1Macro => "f1_macro",
            ScoreKind::R2 => "r2",
            ScoreKind::Rmse => "rmse",
            ScoreKind::Prs => "prs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f1_macro" => Some(ScoreKind::F1Macro),
            "r2" => Some(ScoreKind::R2),
            "rmse" => Some(ScoreKind::Rmse),
            "prs" => Some(ScoreKind::Prs),
            _ => None,
        }
    }

    /// Predictive score for a task.
    pub fn for_task(task: Task) -> Self {
        if task.is_classification() {
            ScoreKind::F1Macro
        } else {
            ScoreKind::R2
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: ScoreKind,
    pub value: f64,
    pub task: Task,
    pub n: usize,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Root mean squared error of scalars.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    if y.len() != yhat.len() {
        return Err(Error::Dimension(format!(
            "{} targets, {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// RMSE over vector rows: square root of the mean squared Euclidean row error.
pub fn rmse_rows(y: &[Vec<f64>], yhat: &[Vec<f64>]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    if y.len() != yhat.len() || y.iter().zip(yhat).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Dimension("target and prediction rows differ in shape".into()));
    }
    let sse: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>())
        .sum();
    Ok((sse / y.len() as f64).sqrt())
}

pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    if y.len() != yhat.len() {
        return Err(Error::Dimension(format!(
            "{} targets, {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedVariance);
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Unweighted mean of per-class F1 over all `classes`. A class that is
/// neither present nor predicted scores 0.
pub fn f1_macro(y: &[usize], yhat: &[usize], classes: usize) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    if y.len() != yhat.len() {
        return Err(Error::Dimension(format!(
            "{} targets, {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if classes == 0 {
        return Err(Error::Parameter("f1 needs at least one class".into()));
    }
    if let Some(&bad) = y.iter().chain(yhat).find(|&&l| l >= classes) {
        return Err(Error::Label { label: bad, classes });
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fne = vec![0usize; classes];
    for (&t, &p) in y.iter().zip(yhat) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fne[t] += 1;
        }
    }
    let total: f64 = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fne[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / classes as f64)
}

/// `min(1, exp(1 − rmse_miss / rmse_full))`.
pub fn prs_from_rmse(rmse_miss: f64, rmse_full: f64) -> Result<f64> {
    if rmse_full == 0.0 {
        return Err(Error::DegenerateReference);
    }
    if !(rmse_miss.is_finite() && rmse_full.is_finite()) || rmse_miss < 0.0 || rmse_full < 0.0 {
        return Err(Error::Parameter(format!(
            "invalid RMSE pair ({rmse_miss}, {rmse_full})"
        )));
    }
    Ok((1.0 - rmse_miss / rmse_full).exp().min(1.0))
}

/// PRS of predictions under missing sensors against full-sensor predictions.
pub fn prs(miss: &PredictionSet, full: &PredictionSet) -> Result<f64> {
    if miss.targets != full.targets {
        return Err(Error::Consistency("PRS prediction sets have different targets".into()));
    }
    prs_from_rmse(miss.rmse()?, full.rmse()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(),
            12.5_f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(rmse(&[2.0], &[5.0]).unwrap(), 3.0);
        assert!(matches!(rmse(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn r2_examples() {
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert!(matches!(r2(&[4.0, 4.0], &[1.0, 2.0]), Err(Error::UndefinedVariance)));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_macro(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
        assert_abs_diff_eq!(
            f1_macro(&[1, 0, 1, 0], &[1, 0, 0, 0], 2).unwrap(),
            (2.0 / 3.0 + 4.0 / 5.0) / 2.0,
            epsilon = 1e-15
        );
        assert_eq!(f1_macro(&[1, 0, 1, 0], &[0, 1, 0, 1], 2).unwrap(), 0.0);
        // class 2 never occurs nor is predicted
        assert_abs_diff_eq!(f1_macro(&[0, 1], &[0, 1], 3).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(f1_macro(&[3], &[0], 3), Err(Error::Label { .. })));
    }

    #[test]
    fn prs_examples() {
        assert_eq!(prs_from_rmse(1.0, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(prs_from_rmse(2.0, 1.0).unwrap(), (-1.0_f64).exp(), epsilon = 1e-12);
        assert_eq!(prs_from_rmse(0.5, 1.0).unwrap(), 1.0);
        assert!(matches!(prs_from_rmse(0.5, 0.0), Err(Error::DegenerateReference)));
    }

    #[test]
    fn classification_rmse_uses_one_hot_rows() {
        let set = PredictionSet::new(
            Targets::Classes(vec![0, 1]),
            Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(),
            Task::Classification { classes: 2 },
        )
        .unwrap();
        // second row error is (1, -1): squared norm 2; mean over 2 rows is 1
        assert_eq!(set.rmse().unwrap(), 1.0);
        assert_eq!(prs(&set, &set).unwrap(), 1.0);
    }

    #[test]
    fn probabilities_must_be_normalized() {
        let r = PredictionSet::new(
            Targets::Classes(vec![0]),
            Tensor::from_rows(&[vec![0.5, 0.4]]).unwrap(),
            Task::Classification { classes: 2 },
        );
        assert!(r.is_err());
    }
}
