use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{DownsampleBlock, ResidualBlock, SdaBlock, UpsampleBlock};
use super::layers::{apply_stat_updates, Conv, Forward, LayerInfo, Mode, NetBuilder};
use super::{label_channels, signal_batch, Network};
use crate::autodiff::{Bound, ChannelStats, ConvGeom, ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub classes: usize,
    pub width: usize,
    /// Encoder widths; the decoder mirrors them.
    pub channels: [usize; 3],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            classes: 4,
            width: 280,
            channels: [32, 64, 128],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("generator needs at least two classes"));
        }
        if self.width == 0 || self.width % 8 != 0 {
            return Err(Error::invalid(format!(
                "generator width must be a positive multiple of 8, got {}",
                self.width
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::invalid("generator channel widths must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Layout {
    input: Conv,
    encoder: Vec<(ResidualBlock, DownsampleBlock)>,
    decoder: Vec<(UpsampleBlock, SdaBlock)>,
    output: Conv,
}

/// Class-conditioned encoder/decoder mapping `(signal, label, noise)` to a
/// signal of the same width in `(0, 1)`.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    layout: Layout,
    params: ParamSet,
    stats: Vec<Option<ChannelStats>>,
}

/// Tape handles of one generator pass.
pub struct GeneratorPass {
    pub output: Var,
    pub bound: Bound,
    pub stat_updates: Vec<(usize, ChannelStats)>,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = NetBuilder::new(&mut rng);
        let [w1, w2, w3] = config.channels;
        let input = b.conv("g.input", config.classes + 2, w1, 3, ConvGeom::new(1, 1, 1), true);
        let widths = [w1, w2, w3];
        let mut encoder = Vec::new();
        let mut prev = w1;
        for (i, &w) in widths.iter().enumerate() {
            let res = ResidualBlock::new(&mut b, &format!("g.enc{}.res", i + 1), prev, w);
            let down = DownsampleBlock::new(&mut b, &format!("g.enc{}.down", i + 1), w, w);
            encoder.push((res, down));
            prev = w;
        }
        // Decoder stage i upsamples to the length of encoder stage 3 - i and
        // bridges that stage's residual output through an SDA block.
        let dec_widths = [w3, w2, w1];
        let mut decoder = Vec::new();
        for (i, &w) in dec_widths.iter().enumerate() {
            let up = UpsampleBlock::new(&mut b, &format!("g.dec{}.up", i + 1), prev, w);
            let enc_w = widths[2 - i];
            let sda = SdaBlock::new(&mut b, &format!("g.dec{}.sda", i + 1), enc_w, w);
            decoder.push((up, sda));
            prev = w;
        }
        let output = b.conv("g.output", w1, 1, 3, ConvGeom::new(1, 1, 1), true);
        let slots = b.norm_slots;
        Ok(Generator {
            config,
            layout: Layout {
                input,
                encoder,
                decoder,
                output,
            },
            params: b.params,
            stats: vec![None; slots],
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Records a forward pass. `signal` and `noise` are `[B, 1, width]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        signal: Var,
        labels: &[usize],
        noise: Var,
        mode: Mode,
        trainable: bool,
    ) -> Result<GeneratorPass> {
        let width = self.config.width;
        let batch = labels.len();
        for (name, v) in [("signal", signal), ("noise", noise)] {
            if tape.shape(v) != [batch, 1, width] {
                return Err(Error::shape(format!(
                    "generator {name} must be [{batch}, 1, {width}], got {:?}",
                    tape.shape(v)
                )));
            }
        }
        let cond = tape.constant(label_channels(labels, self.config.classes, width)?);
        let mut f = Forward::new(tape, &self.params, &self.stats, mode, trainable);
        let x = f.tape.concat(&[signal, cond, noise], 1)?;
        let mut h = self.layout.input.forward(&mut f, x)?;
        let mut skips = Vec::with_capacity(3);
        for (res, down) in &self.layout.encoder {
            let r = res.forward(&mut f, h)?;
            skips.push(r);
            h = down.forward(&mut f, r)?;
        }
        for ((up, sda), enc) in self.layout.decoder.iter().zip(skips.iter().rev()) {
            let u = up.forward(&mut f, h)?;
            h = sda.forward(&mut f, *enc, u)?;
        }
        let logits = self.layout.output.forward(&mut f, h)?;
        let output = f.tape.sigmoid(logits)?;
        let (bound, stat_updates) = f.finish();
        Ok(GeneratorPass {
            output,
            bound,
            stat_updates,
        })
    }

    pub fn absorb_stats(&mut self, updates: Vec<(usize, ChannelStats)>) {
        apply_stat_updates(&mut self.stats, updates);
    }

    /// Convenience batch generation without gradients.
    pub fn generate(
        &self,
        signals: &[&[f64]],
        labels: &[usize],
        noise: &[&[f64]],
        mode: Mode,
    ) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let s = tape.constant(signal_batch(signals, self.config.width)?);
        let z = tape.constant(signal_batch(noise, self.config.width)?);
        let pass = self.forward(&mut tape, s, labels, z, mode, false)?;
        Ok(tape
            .value(pass.output)
            .data()
            .chunks(self.config.width)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Layer table with input/output lengths for a full-width input.
    pub fn describe(&self) -> Vec<LayerInfo> {
        let p = &self.params;
        let mut len = self.config.width;
        let mut out = vec![self.layout.input.info("input", len, p)];
        let mut enc_lens = Vec::new();
        for (res, down) in &self.layout.encoder {
            res.describe(len, p, &mut out);
            enc_lens.push(len);
            let info = down.conv.info("downsample", len, p);
            len = info.out_len;
            out.push(info);
        }
        for ((up, sda), enc_len) in self.layout.decoder.iter().zip(enc_lens.iter().rev()) {
            let info = up.describe(len, p);
            len = info.out_len;
            out.push(info);
            out.push(sda.conv.info("sda", *enc_len, p));
        }
        out.push(self.layout.output.info("output", len, p));
        out
    }
}

impl Network for Generator {
    const KIND: &'static str = "generator";
    type Config = GeneratorConfig;

    fn build(config: GeneratorConfig) -> Result<Self> {
        Generator::new(config, 0)
    }
    fn net_config(&self) -> &GeneratorConfig {
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
