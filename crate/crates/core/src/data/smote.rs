use rand::Rng;

use super::{AttackTag, BeatRecord};
use crate::error::{Error, Result};

/// Default neighbour count.
pub const SMOTE_K: usize = 5;

/// `x + u (nn - x)`.
pub fn smote_interpolate(x: &[f64], nn: &[f64], u: f64) -> Vec<f64> {
    x.iter().zip(nn).map(|(a, b)| a + u * (b - a)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Synthesizes `target_count - minority.len()` records by interpolating a
/// uniformly chosen record toward one of its `k` nearest neighbours.
/// Returns only the new records.
pub fn smote<R: Rng>(
    minority: &[BeatRecord],
    target_count: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<BeatRecord>> {
    if minority.len() < 2 {
        return Err(Error::data(format!(
            "SMOTE needs at least 2 minority records, got {}",
            minority.len()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("SMOTE neighbour count must be >= 1"));
    }
    let need = target_count.saturating_sub(minority.len());
    if need == 0 {
        return Ok(Vec::new());
    }
    let k = k.min(minority.len() - 1);
    let neighbours: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| {
            let mut d: Vec<(f64, usize)> = minority
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, r)| (sq_dist(&minority[i].samples, &r.samples), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(need);
    for n in 0..need {
        let i = rng.random_range(0..minority.len());
        let j = neighbours[i][rng.random_range(0..k)];
        let u: f64 = rng.random();
        let base = &minority[i];
        out.push(BeatRecord {
            samples: smote_interpolate(&base.samples, &minority[j].samples, u),
            label: base.label,
            attack: AttackTag::Clean,
            source_id: format!("smote{n}:{}+{}", base.source_id, minority[j].source_id),
        });
    }
    Ok(out)
}
