use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_records, diverged, epoch_batches, TrainConfig};
use crate::autodiff::{AdamState, Tape, Tensor};
use crate::data::{gen_noise, AttackTag, BeatRecord, NOISE_SIGMA};
use crate::error::{Error, Result};
use crate::models::{signal_batch, Discriminator, Generator, Mode, Network};
use crate::objectives::{
    discriminator_objective, tape_adv, tape_ary, tape_atk, DiscriminatorHeads, LossComponents,
    LossLogEntry,
};

/// Scores of both networks on held-out records after an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationScores {
    pub class_accuracy: f64,
    pub attack_accuracy: f64,
    pub generator_mse: f64,
    /// Adversarial plus weighted MSE term.
    pub generator_loss: f64,
    pub discriminator_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch means of the logged components.
    pub train: LossComponents,
    pub validation: Option<ValidationScores>,
}

#[derive(Clone, Debug)]
pub struct GanOutcome {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub epochs: Vec<EpochRecord>,
    pub log: Vec<LossLogEntry>,
}

/// A record set with the clean reference signal of every record.
#[derive(Clone, Copy)]
pub struct Paired<'a> {
    pub records: &'a [BeatRecord],
    pub references: &'a [&'a [f64]],
}

impl Paired<'_> {
    fn check(&self, classes: usize, width: usize) -> Result<()> {
        check_records(self.records, classes, width)?;
        if self.references.len() != self.records.len() {
            return Err(Error::shape(format!(
                "{} references for {} records",
                self.references.len(),
                self.records.len()
            )));
        }
        if self.references.iter().any(|r| r.len() != width) {
            return Err(Error::shape(format!("references must have width {width}")));
        }
        Ok(())
    }
}

fn noise_batch(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| gen_noise(width, NOISE_SIGMA, rng)).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    signal_batch(&refs, width)
}

struct Batch<'a> {
    signals: Vec<&'a [f64]>,
    references: Vec<&'a [f64]>,
    labels: Vec<usize>,
    tags: Vec<usize>,
}

impl<'a> Batch<'a> {
    fn new(data: Paired<'a>, idx: &[usize]) -> Self {
        Batch {
            signals: idx.iter().map(|&i| data.records[i].samples.as_slice()).collect(),
            references: idx.iter().map(|&i| data.references[i]).collect(),
            labels: idx.iter().map(|&i| data.records[i].label).collect(),
            tags: idx.iter().map(|&i| data.records[i].attack.target()).collect(),
        }
    }
}

struct Trainer<'c> {
    cfg: &'c TrainConfig,
    g: Generator,
    d: Discriminator,
    g_adam: AdamState,
    d_adam: AdamState,
}

impl Trainer<'_> {
    fn d_step(&mut self, signals: Tensor, b: &Batch<'_>, adv_target: f64) -> Result<LossComponents> {
        let mut tape = Tape::new();
        let x = tape.constant(signals);
        let pass = self.d.forward(&mut tape, x, &b.labels, Mode::Train, true)?;
        let heads = DiscriminatorHeads {
            adv: pass.adv,
            attack_probs: pass.attack_probs,
            class_probs: pass.class_probs,
            adv_target,
            attack_targets: &b.tags,
            labels: &b.labels,
        };
        let (loss, c) = discriminator_objective(&mut tape, &heads, &self.cfg.weights)?;
        tape.backward(loss)?;
        self.d_adam.step(self.d.params_mut(), &pass.bound.grads(&tape))?;
        self.d.absorb_stats(pass.stat_updates);
        Ok(c)
    }

    /// Real step, fake step, then the generator step against the updated
    /// discriminator with its parameters frozen.
    fn step(&mut self, b: &Batch<'_>, noise: Tensor) -> Result<LossComponents> {
        let cfg = self.cfg;
        let (width, w) = (cfg.generator.width, &cfg.weights);
        let real = self.d_step(signal_batch(&b.signals, width)?, b, 1.0)?;

        let mut tape = Tape::new();
        let s = tape.constant(signal_batch(&b.signals, width)?);
        let z = tape.constant(noise);
        let gp = self.g.forward(&mut tape, s, &b.labels, z, Mode::Train, true)?;
        let fake = self.d_step(tape.value(gp.output).clone(), b, -1.0)?;

        let dp = self.d.forward(&mut tape, gp.output, &b.labels, Mode::Train, false)?;
        let adv = tape_adv(&mut tape, dp.adv, 1.0)?;
        let reference = tape.constant(signal_batch(&b.references, width)?);
        let mse = tape.mse(gp.output, reference)?;
        let mse_w = tape.scale(mse, w.lambda_mse)?;
        let mut loss = tape.add(adv, mse_w)?;
        if cfg.feedback {
            let atk = tape_atk(&mut tape, dp.attack_probs, &b.tags, w.kappa)?;
            let ary = tape_ary(&mut tape, dp.class_probs, &b.labels)?;
            let atk_w = tape.scale(atk, w.lambda_atk)?;
            let ary_w = tape.scale(ary, w.lambda_ary)?;
            loss = tape.add(loss, atk_w)?;
            loss = tape.add(loss, ary_w)?;
        }
        tape.backward(loss)?;
        self.g_adam.step(self.g.params_mut(), &gp.bound.grads(&tape))?;
        self.g.absorb_stats(gp.stat_updates);

        Ok(LossComponents {
            adv_d: real.adv_d + fake.adv_d,
            adv_g: tape.value(adv).data()[0],
            atk: 0.5 * (real.atk + fake.atk),
            ary: 0.5 * (real.ary + fake.ary),
            mse: tape.value(mse).data()[0],
        })
    }

    fn validate(&self, data: Paired<'_>) -> Result<ValidationScores> {
        let width = self.cfg.generator.width;
        let w = &self.cfg.weights;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5eed_0001);
        let mut sums = [0.0; 5];
        let n = data.records.len();
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(256) {
            let b = Batch::new(data, chunk);
            let m = chunk.len() as f64;
            let mut tape = Tape::new();
            let s = tape.constant(signal_batch(&b.signals, width)?);
            let z = tape.constant(noise_batch(&mut rng, chunk.len(), width)?);
            let gp = self.g.forward(&mut tape, s, &b.labels, z, Mode::Infer, false)?;
            let reference = tape.constant(signal_batch(&b.references, width)?);
            let mse = tape.mse(gp.output, reference)?;
            let fake = self.d.forward(&mut tape, gp.output, &b.labels, Mode::Infer, false)?;
            let adv_g = tape_adv(&mut tape, fake.adv, 1.0)?;
            let adv_f = tape_adv(&mut tape, fake.adv, -1.0)?;
            let real = self.d.forward(&mut tape, s, &b.labels, Mode::Infer, false)?;
            let heads = DiscriminatorHeads {
                adv: real.adv,
                attack_probs: real.attack_probs,
                class_probs: real.class_probs,
                adv_target: 1.0,
                attack_targets: &b.tags,
                labels: &b.labels,
            };
            let (d_loss, _) = discriminator_objective(&mut tape, &heads, w)?;
            let k = self.d.classes();
            let cls = tape.value(real.class_probs).data();
            let atk = tape.value(real.attack_probs).data();
            for (r, (&y, &t)) in b.labels.iter().zip(&b.tags).enumerate() {
                sums[0] += f64::from(crate::models::argmax(&cls[r * k..(r + 1) * k]) == y);
                sums[1] += f64::from(crate::models::argmax(&atk[2 * r..2 * r + 2]) == t);
            }
            let v = |x| tape.value(x).data()[0];
            sums[2] += m * v(mse);
            sums[3] += m * (v(adv_g) + w.lambda_mse * v(mse));
            sums[4] += m * (v(d_loss) + v(adv_f));
        }
        let n = n as f64;
        Ok(ValidationScores {
            class_accuracy: sums[0] / n,
            attack_accuracy: sums[1] / n,
            generator_mse: sums[2] / n,
            generator_loss: sums[3] / n,
            discriminator_loss: sums[4] / n,
        })
    }
}

/// Adversarial training of the generator and the three-headed
/// discriminator on a mixed clean/attacked set.
///
/// `init` seeds the discriminator (for instance with the undefended
/// classifier); otherwise it is freshly initialised.
pub fn train_gan(
    train: Paired<'_>,
    validation: Option<Paired<'_>>,
    cfg: &TrainConfig,
    init: Option<&Discriminator>,
) -> Result<GanOutcome> {
    cfg.validate()?;
    let (classes, width) = (cfg.generator.classes, cfg.generator.width);
    train.check(classes, width)?;
    if let Some(v) = validation {
        v.check(classes, width)?;
    }
    if !train.records.iter().any(|r| r.attack == AttackTag::Clean) {
        return Err(Error::data("training set has no clean records"));
    }
    let g = Generator::new(cfg.generator.clone(), cfg.seed)?;
    let d = match init {
        Some(d) if d.config() != &cfg.discriminator => {
            return Err(Error::invalid("initial discriminator does not match the configuration"))
        }
        Some(d) => d.clone(),
        None => Discriminator::new(cfg.discriminator.clone(), cfg.seed.wrapping_add(1))?,
    };
    let mut t = Trainer {
        g_adam: AdamState::new(g.params(), cfg.adam),
        d_adam: AdamState::new(d.params(), cfg.adam),
        cfg,
        g,
        d,
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut log = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(train.records.len(), cfg.batch_size, cfg.seed, epoch);
        let mut mean = LossComponents::default();
        for (bi, idx) in batches.iter().enumerate() {
            let b = Batch::new(train, idx);
            let result = noise_batch(&mut noise_rng, idx.len(), width).and_then(|z| t.step(&b, z));
            let entry = result.and_then(|c| {
                let e = LossLogEntry::new(log.len() as u64, &c);
                if e.is_finite() {
                    Ok((c, e))
                } else {
                    Err(Error::NonFinite("logged loss"))
                }
            });
            let (c, e) = entry.map_err(|err| {
                let ids: Vec<&str> = idx.iter().map(|&i| train.records[i].source_id.as_str()).collect();
                diverged(epoch, bi, &ids, err)
            })?;
            log.push(e);
            let k = batches.len() as f64;
            mean.adv_d += c.adv_d / k;
            mean.adv_g += c.adv_g / k;
            mean.atk += c.atk / k;
            mean.ary += c.ary / k;
            mean.mse += c.mse / k;
        }
        let validation = validation.map(|v| t.validate(v)).transpose()?;
        epochs.push(EpochRecord {
            epoch,
            train: mean,
            validation,
        });
    }
    Ok(GanOutcome {
        generator: t.g,
        discriminator: t.d,
        epochs,
        log,
    })
}
