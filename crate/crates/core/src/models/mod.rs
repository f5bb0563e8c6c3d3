//! Generator, discriminator, their building blocks and checkpoints.

pub mod blocks;
mod discriminator;
mod generator;
pub mod layers;

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use discriminator::{argmax, Discriminator, DiscriminatorConfig, DiscriminatorOutput, DiscriminatorPass};
pub use generator::{Generator, GeneratorConfig, GeneratorPass};
pub use layers::{LayerInfo, Mode};

use crate::autodiff::{ChannelStats, ParamSet, Tensor, TensorEntry};
use crate::error::{Error, Result};

/// Current checkpoint container version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Common surface for checkpointing a network.
pub trait Network: Sized {
    const KIND: &'static str;
    type Config: Serialize + DeserializeOwned + Clone;

    fn build(config: Self::Config) -> Result<Self>;
    fn net_config(&self) -> &Self::Config;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn running_stats(&self) -> &[Option<ChannelStats>];
    fn running_stats_mut(&mut self) -> &mut Vec<Option<ChannelStats>>;

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let running_stats = self
            .running_stats()
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (format!("bn{i:03}"), s.clone().into())))
            .collect();
        Ok(Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model: Self::KIND.to_string(),
            config: serde_json::to_value(self.net_config())?,
            params: self.params().to_entries(),
            running_stats,
        })
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ck.format_version
            )));
        }
        if ck.model != Self::KIND {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {}, expected a {}",
                ck.model,
                Self::KIND
            )));
        }
        let config: Self::Config = serde_json::from_value(ck.config.clone())?;
        let mut net = Self::build(config)?;
        net.params_mut().load_entries(&ck.params)?;
        let slots = net.running_stats().len();
        let stats = net.running_stats_mut();
        for (key, entry) in &ck.running_stats {
            let idx: usize = key
                .strip_prefix("bn")
                .and_then(|s| s.parse().ok())
                .filter(|&i| i < slots)
                .ok_or_else(|| Error::Checkpoint(format!("bad running-stat key {key}")))?;
            stats[idx] = Some(entry.clone().into());
        }
        Ok(net)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint()?)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

/// JSON checkpoint: parameter name to shape and values, plus batch-norm
/// running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: String,
    pub config: serde_json::Value,
    pub params: BTreeMap<String, TensorEntry>,
    pub running_stats: BTreeMap<String, StatsEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsEntry {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl From<ChannelStats> for StatsEntry {
    fn from(s: ChannelStats) -> Self {
        StatsEntry {
            mean: s.mean,
            var: s.var,
        }
    }
}

impl From<StatsEntry> for ChannelStats {
    fn from(s: StatsEntry) -> Self {
        ChannelStats {
            mean: s.mean,
            var: s.var,
        }
    }
}

/// `[B, k]` one-hot rows.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len().max(1), classes], data)
        .map_err(|_| Error::invalid("empty label batch"))
}

/// `[B, k, width]` constant channels broadcasting each one-hot label.
pub fn label_channels(labels: &[usize], classes: usize, width: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes * width];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
        }
        let start = (i * classes + l) * width;
        data[start..start + width].fill(1.0);
    }
    Tensor::new(vec![labels.len(), classes, width], data)
        .map_err(|_| Error::invalid("empty label batch"))
}

/// Stacks equal-length signals into a `[B, 1, width]` tensor.
pub fn signal_batch(signals: &[&[f64]], width: usize) -> Result<Tensor> {
    if signals.is_empty() {
        return Err(Error::invalid("empty signal batch"));
    }
    let mut data = Vec::with_capacity(signals.len() * width);
    for s in signals {
        if s.len() != width {
            return Err(Error::shape(format!(
                "signal of length {} where {width} was expected",
                s.len()
            )));
        }
        data.extend_from_slice(s);
    }
    Tensor::new(vec![signals.len(), 1, width], data)
}
