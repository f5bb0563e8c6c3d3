use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{make_folds, smote, split_dataset, BeatRecord, DatasetSplit, SMOTE_K};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub train_ratio: f64,
    /// Post-balancing train count per class; 0 leaves a class as is.
    pub smote_targets: Vec<usize>,
    pub smote_k: usize,
    /// Optional per-class cap applied before splitting.
    pub class_cap: Option<usize>,
    pub folds: Option<usize>,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            train_ratio: 0.8,
            smote_targets: Vec::new(),
            smote_k: SMOTE_K,
            class_cap: None,
            folds: None,
        }
    }
}

impl PrepareConfig {
    /// Four-class arrhythmia recipe: S, V and F balanced to 10000 each.
    pub fn mitbih() -> Self {
        PrepareConfig {
            smote_targets: vec![0, 10_000, 10_000, 10_000],
            folds: Some(5),
            ..PrepareConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub split: DatasetSplit,
    pub train_counts_before_smote: Vec<usize>,
    pub smote_added: Vec<usize>,
}

pub fn class_counts(records: &[BeatRecord], classes: usize) -> Vec<usize> {
    let mut c = vec![0; classes];
    for r in records {
        if r.label < classes {
            c[r.label] += 1;
        }
    }
    c
}

/// Keeps at most `cap` randomly chosen records per class, preserving order.
pub fn cap_per_class(records: &[BeatRecord], cap: usize, seed: u64) -> Vec<BeatRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = records.iter().map(|r| r.label + 1).max().unwrap_or(0);
    let mut keep = vec![false; records.len()];
    for class in 0..classes {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == class).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(cap) {
            keep[i] = true;
        }
    }
    records
        .iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then(|| r.clone()))
        .collect()
}

/// Cap, split, balance the train part with SMOTE and assign folds. The test
/// part is never passed to SMOTE.
pub fn prepare(
    records: &[BeatRecord],
    classes: usize,
    cfg: &PrepareConfig,
    seed: u64,
) -> Result<Prepared> {
    if !cfg.smote_targets.is_empty() && cfg.smote_targets.len() != classes {
        return Err(Error::invalid(format!(
            "{} SMOTE targets for {classes} classes",
            cfg.smote_targets.len()
        )));
    }
    if let Some(r) = records.iter().find(|r| r.label >= classes) {
        return Err(Error::data(format!("record {} has label {}", r.source_id, r.label)));
    }
    let capped;
    let records = match cfg.class_cap {
        Some(cap) => {
            capped = cap_per_class(records, cap, seed ^ 0x5eed_0001);
            &capped
        }
        None => records,
    };
    let mut split = split_dataset(records, cfg.train_ratio, seed)?;
    let test_before = split.test.len();
    let before = class_counts(&split.train, classes);
    let mut added = vec![0; classes];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    for (class, &target) in cfg.smote_targets.iter().enumerate() {
        if target == 0 || target <= before[class] {
            continue;
        }
        let minority: Vec<BeatRecord> = split.train.iter().filter(|r| r.label == class).cloned().collect();
        let synth = smote(&minority, target, cfg.smote_k, &mut rng)?;
        added[class] = synth.len();
        split.train.extend(synth);
    }
    assert_eq!(split.test.len(), test_before, "test partition changed during balancing");
    if let Some(k) = cfg.folds {
        split.folds = Some(make_folds(&split.train, k, seed ^ 0x5eed_0003)?);
    }
    Ok(Prepared {
        split,
        train_counts_before_smote: before,
        smote_added: added,
    })
}
