//! Training loops, fold-based model selection, and classification and
//! similarity evaluation.

mod cv;
mod eval;
mod gan;
mod metrics;
mod pretrain;
mod report;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cv::{cross_validate, cross_validate_undefended, CvOutcome};
pub use eval::{
    clean_references, evaluate_classifier, evaluate_detector, evaluate_generator, reference_indices,
    ClassifierReport, SignalGenerator, SimilarityRow, TagMetrics,
};
pub use gan::{train_gan, EpochRecord, GanOutcome, Paired, ValidationScores};
pub use metrics::{
    classification_metrics, confusion_matrix, mse_metric, nrmse, ssim_1d, xcorr, ClassMetrics,
    SSIM_SIGMA, SSIM_WINDOW,
};
pub use pretrain::{pretrain_undefended, PretrainConfig, PretrainEpoch, PretrainOutcome};
pub use report::{classification_csv, similarity_csv, MetricsReport};

use crate::autodiff::AdamConfig;
use crate::data::BeatRecord;
use crate::error::{Error, Result};
use crate::models::{DiscriminatorConfig, GeneratorConfig};
use crate::objectives::LossWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub folds: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Route class and attack losses of generated signals into the
    /// generator through the frozen discriminator.
    pub feedback: bool,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            adam: AdamConfig::default(),
            folds: 5,
            seed: 0,
            weights: LossWeights::default(),
            feedback: false,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Default configuration at desk scale: 15 epochs.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 15,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be >= 1"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("cross-validation needs at least 2 folds"));
        }
        self.weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.classes != self.discriminator.classes
            || self.generator.width != self.discriminator.width
        {
            return Err(Error::invalid("generator and discriminator disagree on classes or width"));
        }
        Ok(())
    }
}

/// Shuffled index batches for one epoch.
pub(crate) fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

pub(crate) fn check_records(records: &[BeatRecord], classes: usize, width: usize) -> Result<()> {
    if records.is_empty() {
        return Err(Error::data("no training records"));
    }
    for r in records {
        if r.samples.len() != width || r.label >= classes {
            return Err(Error::data(format!(
                "record {} does not fit {classes} classes of width {width}",
                r.source_id
            )));
        }
    }
    Ok(())
}

/// Wraps a failing step into a divergence report naming the batch.
pub(crate) fn diverged(epoch: usize, batch: usize, ids: &[&str], cause: Error) -> Error {
    let shown: Vec<&str> = ids.iter().take(8).copied().collect();
    Error::Diverged {
        epoch,
        batch,
        detail: format!(
            "{cause}; batch of {} records starting {:?}",
            ids.len(),
            shown
        ),
    }
}
