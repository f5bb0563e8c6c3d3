use super::{BeatRecord, LabelScheme};
use crate::error::{Error, Result};

/// Minimum spacing between detected R-peaks, in samples.
pub const REFRACTORY_GAP: usize = 72;

/// Annotated peak positions are returned verbatim. Otherwise local maxima
/// above `mean + 1.5 std` are kept, and of any two closer than
/// [`REFRACTORY_GAP`] only the taller survives.
pub fn locate_r_peaks(raw: &[f64], annotations: Option<&[usize]>) -> Result<Vec<usize>> {
    if raw.is_empty() {
        return Err(Error::data("cannot locate R-peaks in an empty signal"));
    }
    if let Some(a) = annotations {
        return Ok(a.to_vec());
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + 1.5 * std;
    let mut peaks: Vec<usize> = Vec::new();
    for i in 0..raw.len() {
        let v = raw[i];
        let left = i == 0 || raw[i - 1] < v;
        let right = i + 1 == raw.len() || raw[i + 1] <= v;
        if !(v > threshold && left && right) {
            continue;
        }
        match peaks.last() {
            Some(&p) if i - p < REFRACTORY_GAP => {
                if v > raw[p] {
                    *peaks.last_mut().expect("non-empty") = i;
                }
            }
            _ => peaks.push(i),
        }
    }
    Ok(peaks)
}

/// `width` samples with `width / 2` before the peak; out-of-range
/// positions are zero.
pub fn window_beat(raw: &[f64], r_index: usize, width: usize) -> Vec<f64> {
    let left = width / 2;
    (0..width)
        .map(|j| {
            (r_index + j)
                .checked_sub(left)
                .and_then(|i| raw.get(i))
                .copied()
                .unwrap_or(0.0)
        })
        .collect()
}

/// Per-beat min-max scaling to `[0, 1]`; a constant beat becomes zeros.
pub fn normalize(samples: &[f64]) -> Vec<f64> {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; samples.len()];
    }
    samples.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Windows and normalizes every annotated beat of a raw recording. Beats
/// whose symbol is outside the scheme are skipped.
pub fn extract_beats(
    raw: &[f64],
    annotations: &[(usize, String)],
    scheme: LabelScheme,
    width: usize,
    source: &str,
) -> Result<Vec<BeatRecord>> {
    let idx: Vec<usize> = annotations.iter().map(|a| a.0).collect();
    let peaks = locate_r_peaks(raw, Some(&idx))?;
    Ok(peaks
        .iter()
        .zip(annotations)
        .filter_map(|(&p, (_, sym))| {
            let label = scheme.from_symbol(sym)?;
            let w = normalize(&window_beat(raw, p, width));
            Some(BeatRecord::clean(w, label, format!("{source}@{p}")))
        })
        .collect())
}
