//! Parameterized layers and the per-pass forward context shared by both
//! networks.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::Serialize;

use crate::autodiff::{Bound, ChannelStats, ConvGeom, NormMode, ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Leaky-ReLU negative slope used by every block.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Exponential moving-average weight kept on the old running statistic.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Batch statistics; running statistics are refreshed.
    Train,
    /// Stored running statistics; nothing is mutated.
    Infer,
}

/// One row of a network's layer table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub params: usize,
}

/// Forward-pass state: the tape, bound parameters, and pending running-stat
/// updates produced in training mode.
pub struct Forward<'a> {
    pub tape: &'a mut Tape,
    bound: Bound,
    stats: &'a [Option<ChannelStats>],
    mode: Mode,
    updates: Vec<(usize, ChannelStats)>,
}

impl<'a> Forward<'a> {
    pub fn new(
        tape: &'a mut Tape,
        params: &ParamSet,
        stats: &'a [Option<ChannelStats>],
        mode: Mode,
        trainable: bool,
    ) -> Self {
        let bound = params.bind(tape, trainable);
        Forward {
            tape,
            bound,
            stats,
            mode,
            updates: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.bound.var(id)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn finish(self) -> (Bound, Vec<(usize, ChannelStats)>) {
        (self.bound, self.updates)
    }
}

/// Folds batch statistics into running statistics.
pub fn apply_stat_updates(
    stats: &mut [Option<ChannelStats>],
    updates: Vec<(usize, ChannelStats)>,
) {
    for (idx, batch) in updates {
        stats[idx] = Some(match stats[idx].take() {
            None => batch,
            Some(old) => ChannelStats {
                mean: ema(&old.mean, &batch.mean),
                var: ema(&old.var, &batch.var),
            },
        });
    }
}

fn ema(old: &[f64], new: &[f64]) -> Vec<f64> {
    old.iter()
        .zip(new)
        .map(|(o, n)| BN_MOMENTUM * o + (1.0 - BN_MOMENTUM) * n)
        .collect()
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub geom: ConvGeom,
}

impl Conv {
    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (w, b) = (f.param(self.weight), self.bias.map(|b| f.param(b)));
        f.tape.conv1d(x, w, b, self.geom)
    }

    pub fn info(&self, kind: &'static str, in_len: usize, params: &ParamSet) -> LayerInfo {
        let out_len = self.geom.output_len(in_len, self.kernel).unwrap_or(0);
        LayerInfo {
            name: self.name.clone(),
            kind,
            in_channels: self.c_in,
            out_channels: self.c_out,
            kernel: self.kernel,
            stride: self.geom.stride,
            dilation: self.geom.dilation,
            in_len,
            out_len,
            params: params.get(self.weight).len() + self.bias.map_or(0, |b| params.get(b).len()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TConv {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub crop: usize,
}

impl TConv {
    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (w, b) = (f.param(self.weight), self.bias.map(|b| f.param(b)));
        f.tape.tconv1d(x, w, b, self.stride, self.crop)
    }

    pub fn output_len(&self, in_len: usize) -> usize {
        ((in_len - 1) * self.stride + self.kernel).saturating_sub(2 * self.crop)
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub slot: usize,
}

impl Norm {
    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (g, b) = (f.param(self.gamma), f.param(self.beta));
        match f.mode {
            Mode::Train => {
                let (y, stats) = f.tape.batch_norm(x, g, b, NormMode::Batch)?;
                if let Some(s) = stats {
                    f.updates.push((self.slot, s));
                }
                Ok(y)
            }
            Mode::Infer => {
                let stats = f.stats[self.slot]
                    .as_ref()
                    .ok_or(Error::MissingRunningStats(self.slot))?;
                Ok(f.tape.batch_norm(x, g, b, NormMode::Running(stats))?.0)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (w, b) = (f.param(self.weight), f.param(self.bias));
        f.tape.dense(x, w, Some(b))
    }

    pub fn info(&self, kind: &'static str) -> LayerInfo {
        LayerInfo {
            name: self.name.clone(),
            kind,
            in_channels: self.n_in,
            out_channels: self.n_out,
            kernel: 1,
            stride: 1,
            dilation: 1,
            in_len: 1,
            out_len: 1,
            params: self.n_in * self.n_out + self.n_out,
        }
    }
}

/// Allocates parameters with Kaiming-uniform weights (leaky-ReLU gain),
/// zero biases, unit scales.
pub struct NetBuilder<'r, R: Rng> {
    pub params: ParamSet,
    pub norm_slots: usize,
    rng: &'r mut R,
}

impl<'r, R: Rng> NetBuilder<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        NetBuilder {
            params: ParamSet::new(),
            norm_slots: 0,
            rng,
        }
    }

    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64)).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(self.rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("consistent shape")
    }

    pub fn conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Conv {
        let w = self.uniform(&[c_out, c_in, kernel], c_in * kernel);
        let weight = self.params.push(format!("{name}.weight"), w);
        let bias = bias.then(|| self.params.push(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Conv {
            name: name.to_string(),
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            geom,
        }
    }

    pub fn tconv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        crop: usize,
    ) -> TConv {
        // Each output position sees about kernel / stride taps per input channel.
        let fan_in = (c_in * kernel).div_ceil(stride);
        let w = self.uniform(&[c_in, c_out, kernel], fan_in);
        let weight = self.params.push(format!("{name}.weight"), w);
        let bias = Some(self.params.push(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        TConv {
            name: name.to_string(),
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            crop,
        }
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> Norm {
        let gamma = self
            .params
            .push(format!("{name}.gamma"), Tensor::full(&[channels], 1.0));
        let beta = self.params.push(format!("{name}.beta"), Tensor::zeros(&[channels]));
        let slot = self.norm_slots;
        self.norm_slots += 1;
        Norm { gamma, beta, slot }
    }

    pub fn dense(&mut self, name: &str, n_in: usize, n_out: usize) -> Dense {
        let w = self.uniform(&[n_out, n_in], n_in);
        let weight = self.params.push(format!("{name}.weight"), w);
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[n_out]));
        Dense {
            name: name.to_string(),
            weight,
            bias,
            n_in,
            n_out,
        }
    }
}
