//! Predictive = aleatoric + epistemic decompositions over a set of
//! ensemble members or student heads.
//!
//! Means are accumulated incrementally (`m += (x - m) / k`), so a set of
//! identical members averages to exactly that member and yields an exactly
//! zero epistemic term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyTriple {
    pub predictive: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

impl UncertaintyTriple {
    /// Builds the triple with `predictive = aleatoric + epistemic`.
    pub fn from_parts(aleatoric: f64, epistemic: f64) -> Self {
        Self {
            predictive: aleatoric + epistemic,
            aleatoric,
            epistemic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Predictive,
    Aleatoric,
    Epistemic,
}

impl UncertaintyKind {
    pub const ALL: [UncertaintyKind; 3] = [
        UncertaintyKind::Predictive,
        UncertaintyKind::Aleatoric,
        UncertaintyKind::Epistemic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UncertaintyKind::Predictive => "predictive",
            UncertaintyKind::Aleatoric => "aleatoric",
            UncertaintyKind::Epistemic => "epistemic",
        }
    }

    pub fn of(self, t: &UncertaintyTriple) -> f64 {
        match self {
            UncertaintyKind::Predictive => t.predictive,
            UncertaintyKind::Aleatoric => t.aleatoric,
            UncertaintyKind::Epistemic => t.epistemic,
        }
    }
}

pub fn running_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    for (k, v) in values.into_iter().enumerate() {
        mean += (v - mean) / (k + 1) as f64;
    }
    mean
}

/// Column-wise running mean of equally long rows.
pub fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let k = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; k];
    for (s, row) in rows.iter().enumerate() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += (v - *m) / (s + 1) as f64;
        }
    }
    mean
}

/// Shannon entropy in nats with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Population variance around the running mean.
pub fn population_variance(values: &[f64]) -> f64 {
    let mean = running_mean(values.iter().copied());
    running_mean(values.iter().map(|v| (v - mean) * (v - mean)))
}

/// Entropy of the mean (predictive), mean entropy (aleatoric) and their
/// difference, the mutual information (epistemic).
pub fn decompose_classification(member_probs: &[Vec<f64>]) -> Result<UncertaintyTriple> {
    let k = member_probs.first().map(Vec::len).unwrap_or(0);
    if k == 0 {
        return Err(Error::Input(
            "need at least one non-empty probability row".into(),
        ));
    }
    for (i, row) in member_probs.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Input(format!(
                "row {i} has {} classes, expected {k}",
                row.len()
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input(format!(
                "row {i} is not a probability vector (sum {s})"
            )));
        }
    }
    let total = entropy(&mean_rows(member_probs));
    let aleatoric = running_mean(member_probs.iter().map(|r| entropy(r)));
    Ok(UncertaintyTriple::from_parts(aleatoric, total - aleatoric))
}

/// Mean predicted variance (aleatoric) plus population variance of the
/// predicted means (epistemic).
pub fn decompose_regression(member_pairs: &[Gaussian]) -> Result<UncertaintyTriple> {
    if member_pairs.is_empty() {
        return Err(Error::Input("need at least one member".into()));
    }
    if let Some(g) = member_pairs
        .iter()
        .find(|g| !(g.variance > 0.0) || !g.mean.is_finite())
    {
        return Err(Error::Numeric(format!(
            "member variance must be positive and finite, got {} (mean {})",
            g.variance, g.mean
        )));
    }
    let aleatoric = running_mean(member_pairs.iter().map(|g| g.variance));
    let means: Vec<f64> = member_pairs.iter().map(|g| g.mean).collect();
    Ok(UncertaintyTriple::from_parts(
        aleatoric,
        population_variance(&means),
    ))
}
