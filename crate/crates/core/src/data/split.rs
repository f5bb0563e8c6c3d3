use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BeatRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<BeatRecord>,
    pub test: Vec<BeatRecord>,
    /// Fold index per train record, when folds were assigned.
    pub folds: Option<Vec<usize>>,
}

fn by_class(records: &[BeatRecord]) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        m.entry(r.label).or_default().push(i);
    }
    m
}

/// Stratified shuffle split: each class contributes `round(ratio * n)`
/// records to train, kept within `1..n`.
pub fn split_dataset(records: &[BeatRecord], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, mut idx) in by_class(records) {
        if idx.len() < 2 {
            return Err(Error::data(format!("class {class} has fewer than 2 records")));
        }
        idx.shuffle(&mut rng);
        let n_train = ((ratio * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        test_idx.extend_from_slice(&idx[n_train..]);
        idx.truncate(n_train);
        train_idx.extend(idx);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(DatasetSplit {
        train: train_idx.iter().map(|&i| records[i].clone()).collect(),
        test: test_idx.iter().map(|&i| records[i].clone()).collect(),
        folds: None,
    })
}

/// Stratified assignment of each record to one of `k` folds; per-class fold
/// sizes differ by at most one.
pub fn make_folds(records: &[BeatRecord], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; records.len()];
    for (class, mut idx) in by_class(records) {
        if idx.len() < k {
            return Err(Error::data(format!(
                "class {class} has {} records, fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    Ok(folds)
}
