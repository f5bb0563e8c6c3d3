//! Budget, range and identity invariants of all six attacks.

#![allow(dead_code)]

use ecg_robust::attacks::{
    bim, boundary_attack, cw_linf, fgsm, hop_skip_jump, linf_dist, pgd, AttackKind, AttackOutcome,
    BlackBoxSettings, DecisionModel, GradientModel, LinearSoftmax, LINF_TOLERANCE,
};
use ecg_robust::autodiff::Tape;
use ecg_robust::models::{signal_batch, Discriminator, DiscriminatorConfig, Mode, Network};
use ecg_robust::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WHITE_BOX_INPUTS: usize = 1000;
pub const BLACK_BOX_INPUTS: usize = 40;

#[derive(Debug, Default)]
pub struct AttackReport {
    pub white_box_checked: Vec<(AttackKind, usize)>,
    pub black_box_confirmed: usize,
    pub black_box_explicit_failures: usize,
    pub failures: Vec<String>,
}

impl AttackReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
            && self.white_box_checked.len() == 4
            && self.white_box_checked.iter().all(|&(_, n)| n >= WHITE_BOX_INPUTS)
            && self.black_box_confirmed > 0
            && self.black_box_explicit_failures > 0
    }
}

fn toy(rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> LinearSoftmax {
    let w = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let b = (0..classes).map(|_| rng.random_range(-0.2..0.2)).collect();
    LinearSoftmax::new(w, b).unwrap()
}

/// Mostly interior points with a share of samples pinned to 0 or 1.
fn input(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| match rng.random_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random::<f64>(),
        })
        .collect()
}

fn run_white<M: GradientModel + ?Sized>(
    kind: AttackKind,
    m: &M,
    xs: &[Vec<f64>],
    ys: &[usize],
    eps: f64,
    iters: usize,
    seed: u64,
) -> ecg_robust::Result<Vec<AttackOutcome>> {
    let alpha = eps / 4.0;
    match kind {
        AttackKind::Fgsm => fgsm(m, xs, ys, eps),
        AttackKind::Bim => bim(m, xs, ys, eps, alpha, iters),
        AttackKind::Pgd => pgd(m, xs, ys, eps, alpha, iters, seed),
        AttackKind::Cw => cw_linf(m, xs, ys, eps, alpha, 0.0, iters),
        _ => unreachable!("decision-based kinds are not run here"),
    }
}

fn check_white<M: GradientModel + ?Sized>(
    kind: AttackKind,
    m: &M,
    xs: &[Vec<f64>],
    ys: &[usize],
    eps: f64,
    iters: usize,
    seed: u64,
    r: &mut AttackReport,
) -> usize {
    let out = match run_white(kind, m, xs, ys, eps, iters, seed) {
        Ok(o) => o,
        Err(e) => {
            r.failures.push(format!("{kind}: {e}"));
            return 0;
        }
    };
    let zero = match run_white(kind, m, xs, ys, 0.0, iters, seed) {
        Ok(o) => o,
        Err(e) => {
            r.failures.push(format!("{kind} eps=0: {e}"));
            return 0;
        }
    };
    for ((o, z), x) in out.iter().zip(&zero).zip(xs) {
        let d = linf_dist(&o.adversarial, x);
        if d > eps + LINF_TOLERANCE {
            r.failures.push(format!("{kind}: linf {d} exceeds eps {eps}"));
        }
        if o.adversarial.iter().any(|v| !(0.0..=1.0).contains(v)) {
            r.failures.push(format!("{kind}: sample outside [0, 1]"));
        }
        if z.adversarial != *x {
            r.failures.push(format!("{kind}: eps=0 changed the input"));
        }
    }
    xs.len()
}

fn white_box(r: &mut AttackReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [AttackKind::Fgsm, AttackKind::Bim, AttackKind::Pgd, AttackKind::Cw] {
        let mut n = 0;
        let mut round = 0u64;
        while n < WHITE_BOX_INPUTS {
            let dim = rng.random_range(2..40);
            let classes = rng.random_range(2..6);
            let m = toy(&mut rng, dim, classes);
            let xs: Vec<Vec<f64>> = (0..50).map(|_| input(&mut rng, dim)).collect();
            let ys: Vec<usize> = (0..50).map(|_| rng.random_range(0..classes)).collect();
            let eps = rng.random_range(0.001..0.3);
            let iters = rng.random_range(1..12);
            n += check_white(kind, &m, &xs, &ys, eps, iters, round, r);
            round += 1;
        }
        r.white_box_checked.push((kind, n));
    }
}

/// The same invariants against a small convolutional discriminator, whose
/// parameters must be untouched afterwards.
fn white_box_network(r: &mut AttackReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = DiscriminatorConfig {
        classes: 3,
        width: 32,
        channels: [3, 4, 6],
    };
    let mut d = Discriminator::new(cfg, 5).unwrap();
    let warm: Vec<Vec<f64>> = (0..16).map(|_| input(&mut rng, 32)).collect();
    let warm_refs: Vec<&[f64]> = warm.iter().map(Vec::as_slice).collect();
    let mut tape = Tape::new();
    let x = tape.constant(signal_batch(&warm_refs, 32).unwrap());
    let pass = d.forward(&mut tape, x, &[0; 16], Mode::Train, false).unwrap();
    d.absorb_stats(pass.stat_updates);
    let before = d.params().fingerprint();
    let xs: Vec<Vec<f64>> = (0..40).map(|_| input(&mut rng, 32)).collect();
    let ys: Vec<usize> = (0..40).map(|i| i % 3).collect();
    for kind in [AttackKind::Fgsm, AttackKind::Bim, AttackKind::Pgd, AttackKind::Cw] {
        check_white(kind, &d, &xs, &ys, 0.05, 5, 9, r);
    }
    for kind in [AttackKind::Dbb, AttackKind::Hsj] {
        let s = BlackBoxSettings {
            iterations: 5,
            query_budget: 400,
            batch_queries: 10,
            seed: 1,
        };
        let y = d.predict(&[&xs[0]]).unwrap()[0];
        let res = if kind == AttackKind::Dbb {
            boundary_attack(&d, &xs[0], y, &s, 0)
        } else {
            hop_skip_jump(&d, &xs[0], y, &s, 0)
        };
        check_black(kind, &d, &xs[0], y, &s, res, r);
    }
    if d.params().fingerprint() != before {
        r.failures.push("attacks changed the discriminator parameters".into());
    }
}

fn check_black<M: DecisionModel + ?Sized>(
    kind: AttackKind,
    m: &M,
    x: &[f64],
    y: usize,
    s: &BlackBoxSettings,
    res: ecg_robust::Result<AttackOutcome>,
    r: &mut AttackReport,
) {
    match res {
        Ok(o) => {
            if !o.success {
                r.failures.push(format!("{kind}: returned an unconfirmed outcome"));
            }
            if m.decide(&[&o.adversarial]).unwrap()[0] == y {
                r.failures.push(format!("{kind}: result is not adversarial"));
            }
            if o.adversarial.iter().any(|v| !(0.0..=1.0).contains(v)) {
                r.failures.push(format!("{kind}: sample outside [0, 1]"));
            }
            if o.queries > s.query_budget {
                r.failures.push(format!("{kind}: {} queries over budget {}", o.queries, s.query_budget));
            }
            if o.trace.windows(2).any(|w| w[1] > w[0]) {
                r.failures.push(format!("{kind}: best-distance trace increases"));
            }
            if let Some(&last) = o.trace.last() {
                let d = ecg_robust::attacks::l2_dist(&o.adversarial, x);
                if (d - last).abs() > 1e-12 {
                    r.failures.push(format!("{kind}: trace end {last} differs from result distance {d}"));
                }
            }
            r.black_box_confirmed += 1;
        }
        Err(Error::AttackFailed(_)) => r.black_box_explicit_failures += 1,
        Err(e) => r.failures.push(format!("{kind}: {e}")),
    }
}

fn black_box(r: &mut AttackReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in [AttackKind::Dbb, AttackKind::Hsj] {
        for i in 0..BLACK_BOX_INPUTS {
            let dim = rng.random_range(4..24);
            let classes = rng.random_range(2..4);
            let m = toy(&mut rng, dim, classes);
            let x = input(&mut rng, dim);
            let y = m.decide(&[&x]).unwrap()[0];
            let s = BlackBoxSettings {
                iterations: if kind == AttackKind::Dbb { 200 } else { 10 },
                query_budget: 2000,
                batch_queries: 20,
                seed: i as u64,
            };
            let res = if kind == AttackKind::Dbb {
                boundary_attack(&m, &x, y, &s, i as u64)
            } else {
                hop_skip_jump(&m, &x, y, &s, i as u64)
            };
            check_black(kind, &m, &x, y, &s, res, r);
        }
        // One class dominating the whole unit box leaves nothing to find.
        let m = LinearSoftmax::new(vec![vec![0.0; 6], vec![0.0; 6]], vec![10.0, 0.0]).unwrap();
        let s = BlackBoxSettings {
            iterations: 10,
            query_budget: 1000,
            batch_queries: 10,
            seed: 0,
        };
        let x = vec![0.5; 6];
        let res = if kind == AttackKind::Dbb {
            boundary_attack(&m, &x, 0, &s, 0)
        } else {
            hop_skip_jump(&m, &x, 0, &s, 0)
        };
        match res {
            Err(Error::AttackFailed(_)) => r.black_box_explicit_failures += 1,
            other => r.failures.push(format!("{kind}: expected explicit failure, got {other:?}")),
        }
    }
}

pub fn run() -> AttackReport {
    let mut r = AttackReport::default();
    white_box(&mut r);
    white_box_network(&mut r);
    black_box(&mut r);
    r
}
