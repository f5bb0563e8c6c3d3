use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 15;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!(
            "metric inputs must be non-empty and of equal length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn mse_metric(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// RMSE of `signal` against `reference`, divided by the reference's RMS.
pub fn nrmse(signal: &[f64], reference: &[f64]) -> Result<f64> {
    let mse = mse_metric(signal, reference)?;
    let rms = (reference.iter().map(|v| v * v).sum::<f64>() / reference.len() as f64).sqrt();
    if rms == 0.0 {
        return Err(Error::invalid("nrmse is undefined for an all-zero reference"));
    }
    Ok(mse.sqrt() / rms)
}

/// Zero-lag Pearson correlation. Pairs with a constant side score 1 when
/// both are constant and equal, else 0.
pub fn xcorr(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn ssim_kernel() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over every full Gaussian-weighted window, dynamic range 1.
pub fn ssim_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    if a.len() < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "ssim needs at least {SSIM_WINDOW} samples, got {}",
            a.len()
        )));
    }
    let w = ssim_kernel();
    let positions = a.len() - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for p in 0..positions {
        let (xa, xb) = (&a[p..p + SSIM_WINDOW], &b[p..p + SSIM_WINDOW]);
        let mut ma = 0.0;
        let mut mb = 0.0;
        for k in 0..SSIM_WINDOW {
            ma += w[k] * xa[k];
            mb += w[k] * xb[k];
        }
        let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
        for k in 0..SSIM_WINDOW {
            let (da, db) = (xa[k] - ma, xb[k] - mb);
            va += w[k] * da * da;
            vb += w[k] * db * db;
            cov += w[k] * da * db;
        }
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
        total += num / den;
    }
    Ok(total / positions as f64)
}

/// Rows are true classes, columns predictions.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if truth.len() != predicted.len() {
        return Err(Error::shape(format!(
            "{} labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut m = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(Error::invalid(format!("class index out of range for {classes} classes")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub total: usize,
    pub accuracy: f64,
    /// One-vs-rest; a class with no positives scores 1.
    pub sensitivity: Vec<f64>,
    /// One-vs-rest; a class with no negatives scores 1.
    pub specificity: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_metrics(confusion: &[Vec<usize>]) -> Result<ClassMetrics> {
    let k = confusion.len();
    if k == 0 || confusion.iter().any(|row| row.len() != k) {
        return Err(Error::shape("confusion matrix must be square and non-empty"));
    }
    let total: usize = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::invalid("no predictions to score"));
    }
    let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut sensitivity = Vec::with_capacity(k);
    let mut specificity = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c];
        let actual: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let fp = predicted - tp;
        let negatives = total - actual;
        sensitivity.push(ratio(tp, actual));
        specificity.push(ratio(negatives - fp, negatives));
    }
    Ok(ClassMetrics {
        total,
        accuracy: trace as f64 / total as f64,
        sensitivity,
        specificity,
        confusion: confusion.to_vec(),
    })
}
