use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{DownsampleBlock, RegularBlock};
use super::layers::{apply_stat_updates, Dense, Forward, LayerInfo, Mode, NetBuilder};
use super::{one_hot, signal_batch, Network};
use crate::autodiff::{Bound, ChannelStats, ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub classes: usize,
    pub width: usize,
    pub channels: [usize; 3],
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            classes: 4,
            width: 280,
            channels: [16, 32, 128],
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("discriminator needs at least two classes"));
        }
        if self.width < 8 {
            return Err(Error::invalid("discriminator width must be at least 8"));
        }
        if self.channels.contains(&0) {
            return Err(Error::invalid("discriminator channel widths must be >= 1"));
        }
        Ok(())
    }

    /// Trunk output length after three halvings.
    pub fn trunk_len(&self) -> usize {
        (0..3).fold(self.width, |l, _| l.div_ceil(2))
    }
}

#[derive(Clone, Debug)]
struct Layout {
    trunk: Vec<(RegularBlock, DownsampleBlock)>,
    adv_head: Dense,
    attack_head: Dense,
    class_head: Dense,
}

/// Shared convolutional trunk with three heads: a linear adversarial score
/// conditioned on the label, an attacked/clean softmax and a class softmax.
///
/// Only the adversarial head sees the label; the two classification heads
/// depend on the signal alone.
#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    layout: Layout,
    params: ParamSet,
    stats: Vec<Option<ChannelStats>>,
}

/// Tape handles of one discriminator pass.
pub struct DiscriminatorPass {
    /// `[B, 1]` raw adversarial score.
    pub adv: Var,
    /// `[B, 2]`, index 1 means attacked.
    pub attack_probs: Var,
    /// `[B, k]`.
    pub class_logits: Var,
    pub class_probs: Var,
    pub bound: Bound,
    pub stat_updates: Vec<(usize, ChannelStats)>,
}

/// Per-record head values.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorOutput {
    pub adv_score: f64,
    pub attack_probs: Vec<f64>,
    pub class_probs: Vec<f64>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = NetBuilder::new(&mut rng);
        let mut trunk = Vec::new();
        let mut prev = 1;
        for (i, &w) in config.channels.iter().enumerate() {
            let reg = RegularBlock::new(&mut b, &format!("d.stage{}.regular", i + 1), prev, w);
            let down = DownsampleBlock::new(&mut b, &format!("d.stage{}.down", i + 1), w, w);
            trunk.push((reg, down));
            prev = w;
        }
        let features = prev * config.trunk_len();
        let adv_head = b.dense("d.head.adv", features + config.classes, 1);
        let attack_head = b.dense("d.head.attack", features, 2);
        let class_head = b.dense("d.head.class", features, config.classes);
        let slots = b.norm_slots;
        Ok(Discriminator {
            config,
            layout: Layout {
                trunk,
                adv_head,
                attack_head,
                class_head,
            },
            params: b.params,
            stats: vec![None; slots],
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// Records a forward pass over a `[B, 1, width]` signal batch.
    pub fn forward(
        &self,
        tape: &mut Tape,
        signal: Var,
        labels: &[usize],
        mode: Mode,
        trainable: bool,
    ) -> Result<DiscriminatorPass> {
        let batch = labels.len();
        if tape.shape(signal) != [batch, 1, self.config.width] {
            return Err(Error::shape(format!(
                "discriminator input must be [{batch}, 1, {}], got {:?}",
                self.config.width,
                tape.shape(signal)
            )));
        }
        let onehot = tape.constant(one_hot(labels, self.config.classes)?);
        let mut f = Forward::new(tape, &self.params, &self.stats, mode, trainable);
        let mut h = signal;
        for (reg, down) in &self.layout.trunk {
            h = reg.forward(&mut f, h)?;
            h = down.forward(&mut f, h)?;
        }
        let n = f.tape.value(h).len() / batch;
        let flat = f.tape.reshape(h, vec![batch, n])?;
        let adv_in = f.tape.concat(&[flat, onehot], 1)?;
        let adv = self.layout.adv_head.forward(&mut f, adv_in)?;
        let attack_logits = self.layout.attack_head.forward(&mut f, flat)?;
        let attack_probs = f.tape.softmax(attack_logits)?;
        let class_logits = self.layout.class_head.forward(&mut f, flat)?;
        let class_probs = f.tape.softmax(class_logits)?;
        let (bound, stat_updates) = f.finish();
        Ok(DiscriminatorPass {
            adv,
            attack_probs,
            class_logits,
            class_probs,
            bound,
            stat_updates,
        })
    }

    pub fn absorb_stats(&mut self, updates: Vec<(usize, ChannelStats)>) {
        apply_stat_updates(&mut self.stats, updates);
    }

    /// Evaluates all heads for a batch of signals.
    pub fn evaluate(
        &self,
        signals: &[&[f64]],
        labels: &[usize],
        mode: Mode,
    ) -> Result<Vec<DiscriminatorOutput>> {
        let mut tape = Tape::new();
        let x = tape.constant(signal_batch(signals, self.config.width)?);
        let pass = self.forward(&mut tape, x, labels, mode, false)?;
        let k = self.config.classes;
        let adv = tape.value(pass.adv).data();
        let atk = tape.value(pass.attack_probs).data();
        let cls = tape.value(pass.class_probs).data();
        Ok((0..labels.len())
            .map(|i| DiscriminatorOutput {
                adv_score: adv[i],
                attack_probs: atk[2 * i..2 * i + 2].to_vec(),
                class_probs: cls[k * i..k * (i + 1)].to_vec(),
            })
            .collect())
    }

    /// Class logits for a batch in inference mode. The label input only
    /// feeds the adversarial head, so a placeholder is used.
    pub fn class_logits(&self, signals: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let x = tape.constant(signal_batch(signals, self.config.width)?);
        let labels = vec![0; signals.len()];
        let pass = self.forward(&mut tape, x, &labels, Mode::Infer, false)?;
        Ok(tape
            .value(pass.class_logits)
            .data()
            .chunks(self.config.classes)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Argmax of the class head, chunked to bound memory.
    pub fn predict(&self, signals: &[&[f64]]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(signals.len());
        for chunk in signals.chunks(256) {
            for logits in self.class_logits(chunk)? {
                out.push(argmax(&logits));
            }
        }
        Ok(out)
    }

    /// Argmax of the attack head (1 = attacked).
    pub fn detect(&self, signals: &[&[f64]]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(signals.len());
        for chunk in signals.chunks(256) {
            let labels = vec![0; chunk.len()];
            for o in self.evaluate(chunk, &labels, Mode::Infer)? {
                out.push(argmax(&o.attack_probs));
            }
        }
        Ok(out)
    }

    pub fn describe(&self) -> Vec<LayerInfo> {
        let p = &self.params;
        let mut len = self.config.width;
        let mut out = Vec::new();
        for (reg, down) in &self.layout.trunk {
            out.push(reg.conv.info("regular", len, p));
            let info = down.conv.info("downsample", len, p);
            len = info.out_len;
            out.push(info);
        }
        out.push(self.layout.adv_head.info("adv_head"));
        out.push(self.layout.attack_head.info("attack_head"));
        out.push(self.layout.class_head.info("class_head"));
        out
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Network for Discriminator {
    const KIND: &'static str = "discriminator";
    type Config = DiscriminatorConfig;

    fn build(config: DiscriminatorConfig) -> Result<Self> {
        Discriminator::new(config, 0)
    }
    fn net_config(&self) -> &DiscriminatorConfig {
        &self.config
    }
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
    fn running_stats(&self) -> &[Option<ChannelStats>] {
        &self.stats
    }
    fn running_stats_mut(&mut self) -> &mut Vec<Option<ChannelStats>> {
        &mut self.stats
    }
}
