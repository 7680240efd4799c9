//! Evaluation metrics: accuracy, confidence of right answers, illusiveness
//! of wrong ones, ground-truth probability on wrong ones and the rate of
//! predictions landing on the noise category, plus multi-run aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::tensor::TensorBuffer;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub samples: usize,
    /// Fraction of rows whose argmax equals the truth.
    pub accuracy: f64,
    /// Mean max-probability over correct rows.
    pub p_c: Option<f64>,
    /// Mean max-probability over wrong rows.
    pub p_i: Option<f64>,
    /// Mean truth-probability over wrong rows.
    pub p_g: Option<f64>,
    /// Predictions of the noise category per 10,000 samples.
    pub noise_rate: f64,
    /// Per-epoch accuracy on the training set, when tracked.
    #[serde(default)]
    pub train_curve: Vec<f64>,
    /// Per-epoch accuracy on the test set, when tracked.
    #[serde(default)]
    pub test_curve: Vec<f64>,
}

impl RunMetrics {
    pub fn with_curves(mut self, train_curve: Vec<f64>, test_curve: Vec<f64>) -> Self {
        self.train_curve = train_curve;
        self.test_curve = test_curve;
        self
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Single-run metrics from probability rows. Argmax ties go to the lowest
/// index.
pub fn compute_metrics(rows: &TensorBuffer, truths: &[usize], noise_index: Option<usize>) -> Result<RunMetrics> {
    let n = rows.rows();
    if n == 0 || rows.shape().len() != 2 {
        return Err(Error::Metrics("metrics need a non-empty [n, k] probability block".into()));
    }
    if truths.len() != n {
        return Err(Error::Metrics(format!("{n} rows but {} truths", truths.len())));
    }
    let k = rows.row_len();
    let mut correct_conf = Vec::new();
    let mut wrong_conf = Vec::new();
    let mut wrong_truth = Vec::new();
    let mut noise_hits = 0usize;
    for (i, &t) in truths.iter().enumerate() {
        let row = rows.row(i);
        if t >= k || Some(t) == noise_index {
            return Err(Error::Metrics(format!("invalid truth {t} for row {i}")));
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Metrics(format!("row {i} is not a probability distribution")));
        }
        let (pred, conf) = argmax(row);
        if pred == t {
            correct_conf.push(conf);
        } else {
            wrong_conf.push(conf);
            wrong_truth.push(row[t]);
        }
        if Some(pred) == noise_index {
            noise_hits += 1;
        }
    }
    Ok(RunMetrics {
        samples: n,
        accuracy: correct_conf.len() as f64 / n as f64,
        p_c: mean(&correct_conf),
        p_i: mean(&wrong_conf),
        p_g: mean(&wrong_truth),
        noise_rate: 10_000.0 * noise_hits as f64 / n as f64,
        train_curve: Vec::new(),
        test_curve: Vec::new(),
    })
}

/// Accuracy of hard predictions.
pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(Error::Metrics("accuracy needs equal, non-empty inputs".into()));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Aggregate over `R` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: usize,
    pub accuracy: f64,
    /// Population standard deviation of run accuracies.
    pub sigma_accuracy: f64,
    pub p_c: Option<f64>,
    pub p_i: Option<f64>,
    pub p_g: Option<f64>,
    pub noise_rate: f64,
    pub train_curve: Vec<f64>,
    pub test_curve: Vec<f64>,
}

/// Mean computed as `x0 + mean(x - x0)`, exact when all values are equal.
pub fn shifted_mean(values: &[f64]) -> f64 {
    let x0 = values[0];
    x0 + values.iter().map(|v| v - x0).sum::<f64>() / values.len() as f64
}

/// Population standard deviation around [`shifted_mean`].
pub fn population_std(values: &[f64]) -> f64 {
    let m = shifted_mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| shifted_mean(&defined))
}

fn mean_curve(curves: Vec<&[f64]>) -> Vec<f64> {
    let len = curves[0].len();
    if len == 0 || curves.iter().any(|c| c.len() != len) {
        return Vec::new();
    }
    (0..len)
        .map(|e| shifted_mean(&curves.iter().map(|c| c[e]).collect::<Vec<_>>()))
        .collect()
}

pub fn aggregate(runs: &[RunMetrics]) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::Metrics("aggregate needs at least one run".into()));
    }
    let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let noise: Vec<f64> = runs.iter().map(|r| r.noise_rate).collect();
    Ok(MetricsReport {
        runs: runs.len(),
        accuracy: shifted_mean(&acc),
        sigma_accuracy: population_std(&acc),
        p_c: mean_defined(runs.iter().map(|r| r.p_c)),
        p_i: mean_defined(runs.iter().map(|r| r.p_i)),
        p_g: mean_defined(runs.iter().map(|r| r.p_g)),
        noise_rate: shifted_mean(&noise),
        train_curve: mean_curve(runs.iter().map(|r| r.train_curve.as_slice()).collect()),
        test_curve: mean_curve(runs.iter().map(|r| r.test_curve.as_slice()).collect()),
    })
}

/// `train[e] - test[e]` per epoch.
pub fn overfit_gap(train: &[f64], test: &[f64]) -> Result<Vec<f64>> {
    if train.len() != test.len() {
        return Err(Error::state(format!(
            "train curve has {} epochs, test curve {}",
            train.len(),
            test.len()
        )));
    }
    Ok(train.iter().zip(test).map(|(a, b)| a - b).collect())
}
