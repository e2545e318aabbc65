//! Classification error, calibration, Gaussian NLL and histogram distances.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::Gaussian;

pub const DEFAULT_ECE_BINS: usize = 10;
pub const DEFAULT_HIST_BINS: usize = 50;

fn check_pairs(probs: usize, labels: usize) -> Result<()> {
    if probs == 0 {
        return Err(Error::Input("metric needs at least one prediction".into()));
    }
    if probs != labels {
        return Err(Error::Input(format!(
            "{probs} predictions but {labels} labels"
        )));
    }
    Ok(())
}

/// Index and value of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in p.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub fn error_rate(pred_probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_pairs(pred_probs.len(), labels.len())?;
    let wrong = pred_probs
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p).0 != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Bin of a confidence in `(0, 1]` split into `bins` right-inclusive bins.
fn confidence_bin(conf: f64, bins: usize) -> usize {
    let scaled = conf * bins as f64;
    let mut idx = scaled.ceil() as isize - 1;
    // Guard against rounding at an edge: bin b covers (b/B, (b+1)/B].
    if idx >= 0 && (idx as f64) / (bins as f64) >= conf {
        idx -= 1;
    }
    idx.clamp(0, bins as isize - 1) as usize
}

/// Expected calibration error with `bins` uniform bins over `(0, 1]`.
pub fn ece(pred_probs: &[Vec<f64>], labels: &[usize], bins: usize) -> Result<f64> {
    check_pairs(pred_probs.len(), labels.len())?;
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    for (p, &y) in pred_probs.iter().zip(labels) {
        let (k, conf) = argmax(p);
        let b = confidence_bin(conf, bins);
        count[b] += 1;
        conf_sum[b] += conf;
        if k == y {
            correct[b] += 1;
        }
    }
    let n = labels.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            (c / n) * (correct[b] as f64 / c - conf_sum[b] / c).abs()
        })
        .sum())
}

/// Mean full Gaussian negative log-likelihood, including `½ log 2π`.
pub fn nll_gaussian(pred: &[Gaussian], targets: &[f64]) -> Result<f64> {
    check_pairs(pred.len(), targets.len())?;
    let log2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for (p, &y) in pred.iter().zip(targets) {
        if !(p.variance > 0.0) {
            return Err(Error::Numeric(format!(
                "predicted variance must be positive, got {}",
                p.variance
            )));
        }
        let r = p.mean - y;
        total += 0.5 * (r * r / p.variance + p.variance.ln() + log2pi);
    }
    Ok(total / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub masses: Vec<f64>,
    /// Set when built from no values; masses are then all zero.
    pub empty: bool,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn edges(&self) -> Vec<f64> {
        let b = self.bins();
        let w = (self.hi - self.lo) / b as f64;
        (0..=b)
            .map(|i| {
                if i == b {
                    self.hi
                } else {
                    self.lo + w * i as f64
                }
            })
            .collect()
    }
}

pub fn build_histogram(values: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if bins == 0 {
        return Err(Error::Config("a histogram needs at least one bin".into()));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!(
            "invalid histogram range [{lo}, {hi}]"
        )));
    }
    let mut masses = vec![0.0; bins];
    if values.is_empty() {
        return Ok(Histogram {
            lo,
            hi,
            masses,
            empty: true,
        });
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("cannot histogram NaN values".into()));
    }
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let idx = ((v - lo) / width).floor();
        let idx = if idx.is_nan() { 0.0 } else { idx };
        counts[(idx.max(0.0) as usize).min(bins - 1)] += 1;
    }
    let n = values.len() as f64;
    for (m, c) in masses.iter_mut().zip(counts) {
        *m = c as f64 / n;
    }
    Ok(Histogram {
        lo,
        hi,
        masses,
        empty: false,
    })
}

/// Smallest range covering both samples; widened around a single point so
/// bins have positive width.
pub fn shared_range(a: &[f64], b: &[f64]) -> (f64, f64) {
    let finite = a.iter().chain(b).copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !(lo <= hi) {
        return (0.0, 1.0);
    }
    if hi > lo {
        return (lo, hi);
    }
    let pad = if lo == 0.0 { 1e-12 } else { lo.abs() * 1e-9 };
    (lo - pad, hi + pad)
}

/// `Σ_i |H_a(i) − H_b(i)|` over histograms sharing one binning.
pub fn total_variation(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.bins() != b.bins() || a.lo != b.lo || a.hi != b.hi {
        return Err(Error::Input("histograms use different binnings".into()));
    }
    Ok(a.masses
        .iter()
        .zip(&b.masses)
        .map(|(x, y)| (x - y).abs())
        .sum())
}

/// `bin_left,bin_right,mass_a,mass_b`
pub fn write_histogram_csv<W: Write>(
    out: &mut W,
    a: &Histogram,
    b: Option<&Histogram>,
) -> std::io::Result<()> {
    writeln!(out, "bin_left,bin_right,mass_a,mass_b")?;
    let edges = a.edges();
    for i in 0..a.bins() {
        let mb = b.map_or(f64::NAN, |h| h.masses[i]);
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            edges[i],
            edges[i + 1],
            a.masses[i],
            mb
        )?;
    }
    Ok(())
}
