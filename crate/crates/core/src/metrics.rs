//! Collaborative-fairness and accuracy summaries.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Per-client accuracies without federation (`standalone`) and after it (`federated`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyProfile {
    acc_standalone: Vec<f64>,
    acc_federated: Vec<f64>,
}

impl AccuracyProfile {
    pub fn new(acc_standalone: Vec<f64>, acc_federated: Vec<f64>) -> Result<Self> {
        if acc_standalone.len() != acc_federated.len() {
            return Err(Error::DimensionMismatch {
                expected: acc_standalone.len(),
                actual: acc_federated.len(),
            });
        }
        if acc_standalone
            .iter()
            .chain(&acc_federated)
            .any(|a| !(0.0..=1.0).contains(a))
        {
            return Err(invalid("accuracies must lie in [0, 1]"));
        }
        Ok(Self {
            acc_standalone,
            acc_federated,
        })
    }

    pub fn standalone(&self) -> &[f64] {
        &self.acc_standalone
    }

    pub fn federated(&self) -> &[f64] {
        &self.acc_federated
    }

    pub fn clients(&self) -> usize {
        self.acc_federated.len()
    }
}

/// Sample Pearson correlation. Zero variance in either input is an error.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `100 · ρ(Acc_standalone, Acc_federated)`.
pub fn cf_coefficient(profile: &AccuracyProfile) -> Result<f64> {
    Ok(100.0 * pearson(&profile.acc_standalone, &profile.acc_federated)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub max_acc: f64,
    pub avg_acc: f64,
    /// `None` when the correlation is undefined (fewer than two clients or constant accuracies).
    pub cf: Option<f64>,
}

pub fn summarize(profile: &AccuracyProfile) -> Result<Summary> {
    let acc = profile.federated();
    if acc.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max_acc = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let avg_acc = acc.iter().sum::<f64>() / acc.len() as f64;
    Ok(Summary {
        max_acc,
        avg_acc,
        cf: cf_coefficient(profile).ok(),
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
