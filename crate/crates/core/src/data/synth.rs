use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{normalize, BeatRecord, WINDOW};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub width: usize,
    /// Standard deviation of additive white noise before normalization.
    pub noise: f64,
    /// Relative jitter of bump positions, widths and heights.
    pub jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 4,
            per_class: 200,
            width: WINDOW,
            noise: 0.02,
            jitter: 0.08,
        }
    }
}

/// `(centre, width, height)` of the P, QRS and T bumps as fractions of the
/// window, per class.
const TEMPLATES: [[(f64, f64, f64); 3]; 4] = [
    [(0.32, 0.030, 0.15), (0.50, 0.014, 1.0), (0.72, 0.050, 0.30)],
    [(0.40, 0.022, 0.12), (0.50, 0.014, 0.9), (0.68, 0.040, 0.22)],
    [(0.30, 0.030, 0.02), (0.50, 0.038, 1.0), (0.75, 0.060, -0.35)],
    [(0.34, 0.030, 0.08), (0.50, 0.025, 0.8), (0.73, 0.050, 0.18)],
];

fn waveform(params: &[(f64, f64, f64); 3], width: usize) -> impl Fn(usize) -> f64 + '_ {
    let w = width as f64;
    move |i| {
        params
            .iter()
            .map(|&(c, s, h)| {
                let d = (i as f64 - c * w) / (s * w);
                h * (-0.5 * d * d).exp()
            })
            .sum()
    }
}

/// Desk-scale corpus: each class is a sum of three Gaussian bumps with
/// per-record jitter and noise, min-max normalized. Records are ordered by
/// class.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64) -> Result<Vec<BeatRecord>> {
    if !(2..=TEMPLATES.len()).contains(&cfg.classes) {
        return Err(Error::invalid(format!(
            "synthetic corpus supports 2 to {} classes, got {}",
            TEMPLATES.len(),
            cfg.classes
        )));
    }
    if cfg.width < 16 || cfg.per_class == 0 {
        return Err(Error::invalid("synthetic corpus needs width >= 16 and per_class >= 1"));
    }
    if !(cfg.noise >= 0.0 && cfg.jitter >= 0.0) {
        return Err(Error::invalid("noise and jitter must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(cfg.classes * cfg.per_class);
    for class in 0..cfg.classes {
        for i in 0..cfg.per_class {
            let mut params = TEMPLATES[class];
            for p in params.iter_mut() {
                p.0 += 0.1 * cfg.jitter * std.sample(&mut rng);
                p.1 *= (1.0 + cfg.jitter * std.sample(&mut rng)).max(0.3);
                p.2 *= 1.0 + cfg.jitter * std.sample(&mut rng);
            }
            let wander = 0.05 * cfg.jitter * std.sample(&mut rng);
            let f = waveform(&params, cfg.width);
            let raw: Vec<f64> = (0..cfg.width)
                .map(|j| {
                    f(j) + wander * (j as f64 / cfg.width as f64) + cfg.noise * std.sample(&mut rng)
                })
                .collect();
            out.push(BeatRecord::clean(normalize(&raw), class, format!("synth-{class}-{i}")));
        }
    }
    Ok(out)
}
