//! Windowing, stratified splitting, folds and SMOTE balancing.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ecg_robust::data::{
    class_counts, extract_beats, make_folds, prepare, smote, split_dataset, synth_corpus, window_beat,
    BeatRecord, LabelScheme, PrepareConfig, SynthConfig, WINDOW,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONVEX_TOL: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct DataReport {
    pub windows_checked: usize,
    pub smote_checked: usize,
    pub splits_checked: usize,
    pub failures: Vec<String>,
}

impl DataReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.windows_checked > 0 && self.smote_checked > 0 && self.splits_checked > 0
    }
}

/// Brute-force search for a segment between two parents containing `s`.
fn on_some_segment(s: &[f64], parents: &[&BeatRecord]) -> bool {
    for a in parents {
        for b in parents {
            let pa = &a.samples;
            let pb = &b.samples;
            let Some(k) = (0..s.len()).max_by(|&i, &j| (pb[i] - pa[i]).abs().total_cmp(&(pb[j] - pa[j]).abs())) else {
                continue;
            };
            let span = pb[k] - pa[k];
            let u = if span == 0.0 { 0.0 } else { (s[k] - pa[k]) / span };
            if !(-CONVEX_TOL..=1.0 + CONVEX_TOL).contains(&u) {
                continue;
            }
            if (0..s.len()).all(|i| (pa[i] + u * (pb[i] - pa[i]) - s[i]).abs() <= CONVEX_TOL) {
                return true;
            }
        }
    }
    false
}

fn windows(r: &mut DataReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let len = rng.random_range(1..2000);
        let raw: Vec<f64> = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let at = rng.random_range(0..len);
        let w = window_beat(&raw, at, WINDOW);
        if w.len() != WINDOW {
            r.failures.push(format!("window of length {} at {at} in {len}", w.len()));
        }
        if raw.get(at) != w.get(WINDOW / 2) {
            r.failures.push(format!("window at {at} is not centred on the peak"));
        }
        r.windows_checked += 1;
    }
    let raw: Vec<f64> = (0..3000).map(|i| ((i % 300) as f64 - 150.0).abs().recip().min(1.0)).collect();
    let ann: Vec<(usize, String)> = (0..10).map(|i| (150 + 300 * i, "V".to_string())).collect();
    match extract_beats(&raw, &ann, LabelScheme::Mitbih4, WINDOW, "rec") {
        Ok(beats) => {
            if beats.len() != ann.len() {
                r.failures.push(format!("extracted {} of {} beats", beats.len(), ann.len()));
            }
            for b in &beats {
                if b.samples.len() != WINDOW || !b.in_unit_range() {
                    r.failures.push("extracted beat is not a normalized 280-sample window".into());
                }
                r.windows_checked += 1;
            }
        }
        Err(e) => r.failures.push(format!("extract_beats: {e}")),
    }
    let corpus = synth_corpus(&SynthConfig::default(), 3).unwrap();
    if corpus.iter().any(|b| b.samples.len() != WINDOW) {
        r.failures.push("synthetic beat width differs from 280".into());
    }
    r.windows_checked += corpus.len();
}

fn smote_direct(r: &mut DataReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for round in 0..20 {
        let n = rng.random_range(2..12);
        let dim = rng.random_range(1..20);
        let minority: Vec<BeatRecord> = (0..n)
            .map(|i| BeatRecord::clean((0..dim).map(|_| rng.random()).collect(), 2, format!("m{i}")))
            .collect();
        let target = n + rng.random_range(0..30);
        let k = rng.random_range(1..6);
        let out = smote(&minority, target, k, &mut rng).unwrap();
        if out.len() + n != target {
            r.failures.push(format!("round {round}: {} + {n} != target {target}", out.len()));
        }
        let parents: Vec<&BeatRecord> = minority.iter().collect();
        for s in &out {
            if s.label != 2 || !on_some_segment(&s.samples, &parents) {
                r.failures.push(format!("round {round}: synthetic record off every parent segment"));
            }
            r.smote_checked += 1;
        }
    }
}

fn ids(rs: &[BeatRecord]) -> BTreeSet<&str> {
    rs.iter().map(|r| r.source_id.as_str()).collect()
}

fn splits(r: &mut DataReport) {
    for seed in 0..5u64 {
        let corpus = synth_corpus(&SynthConfig { per_class: 30 + 7 * seed as usize, width: 40, ..SynthConfig::default() }, seed).unwrap();
        let s = split_dataset(&corpus, 0.8, seed).unwrap();
        let (tr, te) = (ids(&s.train), ids(&s.test));
        if !tr.is_disjoint(&te) || tr.len() + te.len() != corpus.len() || tr.len() != s.train.len() {
            r.failures.push(format!("seed {seed}: split is not a partition"));
        }
        let all = class_counts(&corpus, 4);
        let train = class_counts(&s.train, 4);
        for c in 0..4 {
            let want = (0.8 * all[c] as f64).round() as usize;
            if train[c] != want {
                r.failures.push(format!("seed {seed}: class {c} has {} train records, want {want}", train[c]));
            }
        }

        let k = 5;
        let folds = make_folds(&s.train, k, seed).unwrap();
        let mut per: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (i, &f) in folds.iter().enumerate() {
            if f >= k {
                r.failures.push(format!("seed {seed}: fold index {f} out of range"));
            }
            *per.entry((s.train[i].label, f)).or_default() += 1;
        }
        if folds.len() != s.train.len() {
            r.failures.push(format!("seed {seed}: fold table does not cover train"));
        }
        for c in 0..4 {
            let sizes: Vec<usize> = (0..k).map(|f| per.get(&(c, f)).copied().unwrap_or(0)).collect();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            if hi - lo > 1 || *lo == 0 {
                r.failures.push(format!("seed {seed}: class {c} fold sizes {sizes:?}"));
            }
        }
        r.splits_checked += 1;
    }
}

/// Balanced preparation: exact targets, convex synthetic records built
/// from train parents only, and a test part identical to the plain split.
fn prepared(r: &mut DataReport) {
    let mut corpus = synth_corpus(&SynthConfig { per_class: 60, width: 48, ..SynthConfig::default() }, 4).unwrap();
    let mut seen = [0usize; 4];
    corpus.retain(|b| {
        seen[b.label] += 1;
        b.label == 0 || seen[b.label] <= 15
    });
    let cfg = PrepareConfig {
        smote_targets: vec![0, 48, 40, 44],
        folds: Some(4),
        ..PrepareConfig::default()
    };
    let p = prepare(&corpus, 4, &cfg, 8).unwrap();
    let plain = split_dataset(&corpus, cfg.train_ratio, 8).unwrap();
    if p.split.test != plain.test {
        r.failures.push("balancing changed the test partition".into());
    }
    let counts = class_counts(&p.split.train, 4);
    let want = [p.train_counts_before_smote[0], 48, 40, 44];
    if counts != want {
        r.failures.push(format!("balanced train counts {counts:?}, want {want:?}"));
    }
    let test_ids = ids(&p.split.test);
    for c in 1..4 {
        let parents: Vec<&BeatRecord> = plain.train.iter().filter(|b| b.label == c).collect();
        let originals = ids(&plain.train);
        for s in p.split.train.iter().filter(|b| b.label == c && !originals.contains(b.source_id.as_str())) {
            if !on_some_segment(&s.samples, &parents) {
                r.failures.push(format!("{} is not a convex mix of train records", s.source_id));
            }
            if test_ids.contains(s.source_id.as_str()) {
                r.failures.push(format!("{} appears in test", s.source_id));
            }
            r.smote_checked += 1;
        }
    }
    let folds = p.split.folds.as_ref().map(Vec::len);
    if folds != Some(p.split.train.len()) {
        r.failures.push("balanced train set lacks a full fold table".into());
    }
    r.splits_checked += 1;
}

pub fn run() -> DataReport {
    let mut r = DataReport::default();
    windows(&mut r);
    smote_direct(&mut r);
    splits(&mut r);
    prepared(&mut r);
    r
}
