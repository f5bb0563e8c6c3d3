use serde::{Deserialize, Serialize};

use super::pretrain::{class_accuracy, pretrain_undefended, PretrainConfig};
use crate::data::{make_folds, BeatRecord};
use crate::error::{Error, Result};
use crate::models::Discriminator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome<M> {
    pub best: M,
    pub best_fold: usize,
    /// Held-out score per fold, in fold order.
    pub scores: Vec<f64>,
}

/// Trains one model per fold on the other folds, scores it on the held-out
/// fold and keeps the best (lowest fold on ties).
///
/// `folds[i]` is the fold of item `i`; `train` and `score` receive item
/// indices.
pub fn cross_validate<M, T, S>(folds: &[usize], k: usize, mut train: T, mut score: S) -> Result<CvOutcome<M>>
where
    T: FnMut(usize, &[usize]) -> Result<M>,
    S: FnMut(&M, &[usize]) -> Result<f64>,
{
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut best: Option<(usize, M)> = None;
    let mut scores = Vec::with_capacity(k);
    for f in 0..k {
        let (held, rest): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] == f);
        if held.is_empty() || rest.is_empty() {
            return Err(Error::data(format!("fold {f} is empty or covers everything")));
        }
        let model = train(f, &rest)?;
        let s = score(&model, &held)?;
        if !s.is_finite() {
            return Err(Error::NonFinite("fold score"));
        }
        if best.is_none() || scores.iter().all(|&prev| s > prev) {
            best = Some((f, model));
        }
        scores.push(s);
    }
    let (best_fold, best) = best.expect("k >= 2 folds scored");
    Ok(CvOutcome {
        best,
        best_fold,
        scores,
    })
}

fn pick(records: &[BeatRecord], idx: &[usize]) -> Vec<BeatRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

/// Fold-selected undefended classifier, scored by held-out class accuracy.
pub fn cross_validate_undefended(
    records: &[BeatRecord],
    cfg: &PretrainConfig,
    k: usize,
) -> Result<CvOutcome<Discriminator>> {
    let folds = make_folds(records, k, cfg.seed)?;
    cross_validate(
        &folds,
        k,
        |_, idx| Ok(pretrain_undefended(&pick(records, idx), cfg)?.model),
        |m, idx| class_accuracy(m, &pick(records, idx)),
    )
}
