//! Similarity identities and a counting oracle for per-class metrics.

#![allow(dead_code)]

use ecg_robust::train::{classification_metrics, confusion_matrix, mse_metric, ssim_1d, xcorr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const IDENTITY_TOL: f64 = 1e-12;
pub const COUNT_TOL: f64 = 1e-12;
pub const RANDOM_SETS: usize = 100;

#[derive(Debug, Default)]
pub struct MetricReport {
    pub signals: usize,
    pub label_sets: usize,
    pub failures: Vec<String>,
}

impl MetricReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.label_sets >= RANDOM_SETS && self.signals > 0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn identities(r: &mut MetricReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..50 {
        let n = rng.random_range(15..400);
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let s = ssim_1d(&x, &x).unwrap();
        let c = xcorr(&x, &x).unwrap();
        let m = mse_metric(&x, &x).unwrap();
        if (s - 1.0).abs() > IDENTITY_TOL || (c - 1.0).abs() > IDENTITY_TOL || m != 0.0 {
            r.failures.push(format!("self-similarity of length {n}: ssim {s}, xcorr {c}, mse {m}"));
        }

        let noisy = |sigma: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
            x.iter()
                .map(|v| {
                    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.random();
                    v + sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect()
        };
        let small = noisy(0.01, &mut rng);
        let large = noisy(0.1, &mut rng);
        let (ss, sl) = (ssim_1d(&x, &small).unwrap(), ssim_1d(&x, &large).unwrap());
        if !(sl < ss) {
            r.failures.push(format!("ssim not monotone in noise: {sl} !< {ss}"));
        }
        for v in [ss, sl, xcorr(&x, &large).unwrap()] {
            if !(-1.0..=1.0).contains(&v) {
                r.failures.push(format!("similarity {v} out of range"));
            }
        }
        r.signals += 1;
    }
    if mse_metric(&[0.0; 280], &[1.0; 280]).unwrap() != 1.0 {
        r.failures.push("mse of zeros against ones is not 1".into());
    }
}

fn counting_oracle(r: &mut MetricReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for set in 0..RANDOM_SETS {
        let k = rng.random_range(2..7);
        let n = rng.random_range(1..300);
        let skill = rng.random::<f64>();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.random::<f64>() < skill { t } else { rng.random_range(0..k) })
            .collect();

        let cm = confusion_matrix(&truth, &pred, k).unwrap();
        for (a, row) in cm.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                let direct = truth.iter().zip(&pred).filter(|&(&t, &p)| t == a && p == b).count();
                if v != direct {
                    r.failures.push(format!("set {set}: confusion[{a}][{b}] = {v}, counted {direct}"));
                }
            }
        }
        let m = classification_metrics(&cm).unwrap();
        let hits = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
        if m.total != n || (m.accuracy - hits as f64 / n as f64).abs() > COUNT_TOL {
            r.failures.push(format!("set {set}: accuracy {} over {}, counted {hits}/{n}", m.accuracy, m.total));
        }
        for c in 0..k {
            let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
            for (&t, &p) in truth.iter().zip(&pred) {
                match (t == c, p == c) {
                    (true, true) => tp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => tn += 1,
                    (false, true) => fp += 1,
                }
            }
            let (sens, spec) = (ratio(tp, tp + fn_), ratio(tn, tn + fp));
            if (m.sensitivity[c] - sens).abs() > COUNT_TOL || (m.specificity[c] - spec).abs() > COUNT_TOL {
                r.failures.push(format!(
                    "set {set} class {c}: sens {} spec {}, counted {sens} {spec}",
                    m.sensitivity[c], m.specificity[c]
                ));
            }
        }
        r.label_sets += 1;
    }
}

pub fn run() -> MetricReport {
    let mut r = MetricReport::default();
    identities(&mut r);
    counting_oracle(&mut r);
    r
}
