//! Closed-form loss values, tape/plain agreement and default weights.

#![allow(dead_code)]

use ecg_robust::autodiff::{AdamConfig, Tape, Tensor};
use ecg_robust::objectives::{
    composite, loss_adv_d, loss_adv_g, loss_ary, loss_atk, loss_mse, tape_adv, tape_ary, tape_atk,
    LossComponents, LossWeights, Role,
};
use ecg_robust::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EXAMPLE_TOL: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct ObjectiveReport {
    pub examples: usize,
    pub failures: Vec<String>,
}

impl ObjectiveReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.examples > 0
    }

    fn close(&mut self, name: &str, got: f64, want: f64) {
        self.examples += 1;
        if !((got - want).abs() <= EXAMPLE_TOL) {
            self.failures.push(format!("{name}: got {got}, want {want}"));
        }
    }

    fn exact<T: PartialEq + std::fmt::Debug>(&mut self, name: &str, got: T, want: T) {
        self.examples += 1;
        if got != want {
            self.failures.push(format!("{name}: got {got:?}, want {want:?}"));
        }
    }
}

fn closed_forms(r: &mut ObjectiveReport) {
    let k = [1.0, 1.05];
    r.close("atk perfect", loss_atk(&[1.0, 0.0], 0, k).unwrap(), 0.0);
    r.close("atk uniform attacked", loss_atk(&[0.5, 0.5], 1, k).unwrap(), 1.05 * 2f64.ln());
    r.close("atk uniform attacked (digits)", loss_atk(&[0.5, 0.5], 1, k).unwrap(), 0.727_804_539_587_942_6);
    r.close("ary perfect", loss_ary(&[0.0, 0.0, 1.0, 0.0], 2).unwrap(), 0.0);
    r.close("ary uniform of 4", loss_ary(&[0.25; 4], 3).unwrap(), 4f64.ln());
    r.close(
        "ary permutation of non-targets",
        loss_ary(&[0.1, 0.6, 0.3], 1).unwrap(),
        loss_ary(&[0.3, 0.6, 0.1], 1).unwrap(),
    );
    r.close("mse identical", loss_mse(&[0.3; 280], &[0.3; 280]).unwrap(), 0.0);
    r.close("mse zeros vs ones", loss_mse(&[0.0; 280], &[1.0; 280]).unwrap(), 1.0);
    r.close("adv_d on targets", loss_adv_d(1.0, -1.0), 0.0);
    r.close("adv_d at zero", loss_adv_d(0.0, 0.0), 2.0);
    r.close("adv_g on target", loss_adv_g(1.0), 0.0);
    r.close("adv_g at fake target", loss_adv_g(-1.0), 4.0);
    r.examples += 1;
    if loss_atk(&[0.5, 0.5], 2, k).is_ok() || loss_ary(&[1.0], 1).is_ok() {
        r.failures.push("out-of-range targets accepted".into());
    }

    // The κ = [1, 1] attack loss is the unweighted cross-entropy bit for bit.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let p = rng.random::<f64>();
        let t = rng.random_range(0..2);
        let probs = [p, 1.0 - p];
        r.exact("atk unit kappa", loss_atk(&probs, t, [1.0, 1.0]).unwrap().to_bits(), loss_ary(&probs, t).unwrap().to_bits());
    }

    // Summation oracle for random pairs.
    for _ in 0..20 {
        let n = rng.random_range(1..300);
        let a: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let mut acc = 0.0;
        for i in 0..n {
            let d = a[i] - b[i];
            acc += d * d;
        }
        r.close("mse summation oracle", loss_mse(&a, &b).unwrap(), acc / n as f64);
    }
}

fn tape_gradients(r: &mut ObjectiveReport) {
    let mut tape = Tape::new();
    let real = tape.variable(Tensor::from_vec(vec![0.0]));
    let fake = tape.variable(Tensor::from_vec(vec![0.0]));
    let lr = tape_adv(&mut tape, real, 1.0).unwrap();
    let lf = tape_adv(&mut tape, fake, -1.0).unwrap();
    let l = tape.add(lr, lf).unwrap();
    r.close("tape adv_d at zero", tape.value(l).data()[0], loss_adv_d(0.0, 0.0));
    tape.backward(l).unwrap();
    r.close("d adv_d / d d_real at zero", tape.grad_or_zeros(real)[0], -2.0);
    r.close("d adv_d / d d_fake at zero", tape.grad_or_zeros(fake)[0], 2.0);
}

/// Batched tape losses equal the mean of the per-record plain forms, and
/// reordering a batch leaves them unchanged.
fn tape_matches_plain(r: &mut ObjectiveReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let k = LossWeights::default().kappa;
    for _ in 0..20 {
        let b = rng.random_range(1..16);
        let classes = rng.random_range(2..6);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for _ in 0..b {
            let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            rows.push(raw.iter().map(|v| v / s).collect());
        }
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
        let tags: Vec<usize> = (0..b).map(|_| rng.random_range(0..2)).collect();
        let atk_rows: Vec<[f64; 2]> = (0..b)
            .map(|_| {
                let p = rng.random_range(0.01..0.99);
                [p, 1.0 - p]
            })
            .collect();

        let eval = |rows: &[Vec<f64>], labels: &[usize], atk_rows: &[[f64; 2]], tags: &[usize]| {
            let mut tape = Tape::new();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let p = tape.constant(Tensor::new(vec![rows.len(), classes], flat).unwrap());
            let aflat: Vec<f64> = atk_rows.iter().flatten().copied().collect();
            let a = tape.constant(Tensor::new(vec![atk_rows.len(), 2], aflat).unwrap());
            let ary = tape_ary(&mut tape, p, labels).unwrap();
            let atk = tape_atk(&mut tape, a, tags, k).unwrap();
            (tape.value(ary).data()[0], tape.value(atk).data()[0])
        };
        let (ary, atk) = eval(&rows, &labels, &atk_rows, &tags);
        let want_ary = (0..b).map(|i| loss_ary(&rows[i], labels[i]).unwrap()).sum::<f64>() / b as f64;
        let want_atk = (0..b).map(|i| loss_atk(&atk_rows[i], tags[i], k).unwrap()).sum::<f64>() / b as f64;
        r.close("tape ary mean", ary, want_ary);
        r.close("tape atk mean", atk, want_atk);

        let rev = |v: &[usize]| v.iter().rev().copied().collect::<Vec<_>>();
        let rows_r: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
        let atk_r: Vec<[f64; 2]> = atk_rows.iter().rev().copied().collect();
        let (ary2, atk2) = eval(&rows_r, &rev(&labels), &atk_r, &rev(&tags));
        r.close("ary batch order", ary2, ary);
        r.close("atk batch order", atk2, atk);
    }
}

fn composition(r: &mut ObjectiveReport) {
    let w = LossWeights::default();
    let c = LossComponents {
        adv_d: 0.5,
        adv_g: 0.25,
        atk: 0.1,
        ary: 0.2,
        mse: 0.04,
    };
    r.close("discriminator composite", composite(&c, &w, Role::Discriminator, false), 0.5 + 10.0 * 0.1 + 10.0 * 0.2);
    r.close("generator composite", composite(&c, &w, Role::Generator, false), 0.25 + 0.04);
    r.close("generator composite with feedback", composite(&c, &w, Role::Generator, true), 0.25 + 0.04 + 1.0 + 2.0);
    r.close("all zero", composite(&LossComponents::default(), &w, Role::Discriminator, false), 0.0);
    let mut w2 = w.clone();
    w2.lambda_ary *= 2.0;
    let delta = composite(&c, &w2, Role::Discriminator, false) - composite(&c, &w, Role::Discriminator, false);
    r.close("doubling lambda_ary doubles its term", delta, w.lambda_ary * c.ary);
}

fn defaults(r: &mut ObjectiveReport) {
    let w = LossWeights::default();
    r.exact("lambda_mse", w.lambda_mse, 1.0);
    r.exact("lambda_atk", w.lambda_atk, 10.0);
    r.exact("lambda_ary", w.lambda_ary, 10.0);
    r.exact("kappa", w.kappa, [1.0, 1.05]);
    let a = AdamConfig::default();
    r.exact("adam", (a.learning_rate, a.beta1, a.beta2), (1e-4, 0.5, 0.999));
    let t = TrainConfig::default();
    r.exact("batch size", t.batch_size, 128);
    r.exact("train adam", t.adam, a);
    r.exact("train weights", t.weights, w);
}

pub fn run() -> ObjectiveReport {
    let mut r = ObjectiveReport::default();
    closed_forms(&mut r);
    tape_gradients(&mut r);
    tape_matches_plain(&mut r);
    composition(&mut r);
    defaults(&mut r);
    r
}
