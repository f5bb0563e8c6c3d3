use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{classification_metrics, confusion_matrix, mse_metric, nrmse, ssim_1d, xcorr, ClassMetrics};
use crate::attacks::GradientModel;
use crate::data::{gen_noise, samples_of, AttackTag, BeatRecord, NOISE_SIGMA};
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator, Mode};

/// Anything mapping `(signal, label, noise)` batches to signals.
pub trait SignalGenerator {
    fn generate_batch(
        &self,
        signals: &[&[f64]],
        labels: &[usize],
        noise: &[&[f64]],
    ) -> Result<Vec<Vec<f64>>>;
}

impl SignalGenerator for Generator {
    fn generate_batch(
        &self,
        signals: &[&[f64]],
        labels: &[usize],
        noise: &[&[f64]],
    ) -> Result<Vec<Vec<f64>>> {
        self.generate(signals, labels, noise, Mode::Infer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    pub attack: AttackTag,
    pub metrics: ClassMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub classes: usize,
    /// One row per attack tag present, in tag order.
    pub rows: Vec<TagMetrics>,
}

impl ClassifierReport {
    pub fn get(&self, tag: AttackTag) -> Option<&ClassMetrics> {
        self.rows.iter().find(|r| r.attack == tag).map(|r| &r.metrics)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub attack: AttackTag,
    pub records: usize,
    pub mse: f64,
    pub ssim: f64,
    pub xcorr: f64,
    pub nrmse: f64,
}

fn tags_present(records: &[BeatRecord]) -> Vec<AttackTag> {
    AttackTag::ALL
        .into_iter()
        .filter(|t| records.iter().any(|r| r.attack == *t))
        .collect()
}

/// Class-head confusion per attack tag.
pub fn evaluate_classifier<M: GradientModel + ?Sized>(
    model: &M,
    records: &[BeatRecord],
) -> Result<ClassifierReport> {
    if records.is_empty() {
        return Err(Error::data("no records to evaluate"));
    }
    let k = model.classes();
    let mut predicted = Vec::with_capacity(records.len());
    for chunk in records.chunks(256) {
        predicted.extend(model.predict(&samples_of(chunk))?);
    }
    let rows = tags_present(records)
        .into_iter()
        .map(|tag| {
            let (truth, pred): (Vec<usize>, Vec<usize>) = records
                .iter()
                .zip(&predicted)
                .filter(|(r, _)| r.attack == tag)
                .map(|(r, &p)| (r.label, p))
                .unzip();
            Ok(TagMetrics {
                attack: tag,
                metrics: classification_metrics(&confusion_matrix(&truth, &pred, k)?)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ClassifierReport { classes: k, rows })
}

/// Attack-head metrics over clean (0) versus attacked (1).
pub fn evaluate_detector(model: &Discriminator, records: &[BeatRecord]) -> Result<ClassMetrics> {
    if records.is_empty() {
        return Err(Error::data("no records to evaluate"));
    }
    let predicted = model.detect(&samples_of(records))?;
    let truth: Vec<usize> = records.iter().map(|r| r.attack.target()).collect();
    classification_metrics(&confusion_matrix(&truth, &predicted, 2)?)
}

/// Index of the clean reference of every record in an attacked-set layout:
/// a block of clean records followed by equally long blocks of attacked
/// copies in the same order.
pub fn reference_indices(records: &[BeatRecord]) -> Result<Vec<usize>> {
    let n = records.iter().take_while(|r| r.attack == AttackTag::Clean).count();
    if n == 0 {
        return Err(Error::data("record set does not start with clean records"));
    }
    if records.len() % n != 0 {
        return Err(Error::data(format!(
            "{} records do not form blocks of {n} clean records",
            records.len()
        )));
    }
    for (b, block) in records.chunks(n).enumerate().skip(1) {
        let tag = block[0].attack;
        for (i, r) in block.iter().enumerate() {
            if r.attack != tag || r.attack == AttackTag::Clean || r.label != records[i].label {
                return Err(Error::data(format!(
                    "record {} breaks the layout of attacked block {b}",
                    r.source_id
                )));
            }
        }
    }
    Ok((0..records.len()).map(|i| i % n).collect())
}

/// Clean reference signals for an attacked-set layout.
pub fn clean_references(records: &[BeatRecord]) -> Result<Vec<&[f64]>> {
    Ok(reference_indices(records)?
        .into_iter()
        .map(|i| records[i].samples.as_slice())
        .collect())
}

/// Generator outputs scored against the clean references, averaged per tag.
/// Record `i` draws its noise from stream `i` of `seed`.
pub fn evaluate_generator<G: SignalGenerator + ?Sized>(
    generator: &G,
    records: &[BeatRecord],
    references: &[&[f64]],
    seed: u64,
) -> Result<Vec<SimilarityRow>> {
    if records.is_empty() || references.len() != records.len() {
        return Err(Error::shape(format!(
            "{} references for {} records",
            references.len(),
            records.len()
        )));
    }
    let noise: Vec<Vec<f64>> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            gen_noise(r.samples.len(), NOISE_SIGMA, &mut rng)
        })
        .collect();
    let mut outputs = Vec::with_capacity(records.len());
    for (chunk, z) in records.chunks(256).zip(noise.chunks(256)) {
        let labels: Vec<usize> = chunk.iter().map(|r| r.label).collect();
        let z: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
        outputs.extend(generator.generate_batch(&samples_of(chunk), &labels, &z)?);
    }
    tags_present(records)
        .into_iter()
        .map(|tag| {
            let mut sums = [0.0; 4];
            let mut count = 0;
            for ((r, out), reference) in records.iter().zip(&outputs).zip(references) {
                if r.attack != tag {
                    continue;
                }
                sums[0] += mse_metric(out, reference)?;
                sums[1] += ssim_1d(out, reference)?;
                sums[2] += xcorr(out, reference)?;
                sums[3] += nrmse(out, reference)?;
                count += 1;
            }
            let c = count as f64;
            Ok(SimilarityRow {
                attack: tag,
                records: count,
                mse: sums[0] / c,
                ssim: sums[1] / c,
                xcorr: sums[2] / c,
                nrmse: sums[3] / c,
            })
        })
        .collect()
}
