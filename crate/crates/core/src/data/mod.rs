//! Beat records, label schemes, preprocessing, class balancing, splits,
//! noise vectors, a synthetic corpus and CSV exchange.

mod csv_io;
mod noise;
mod prepare;
mod preprocess;
mod smote;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use csv_io::{load_csv, read_csv, save_csv, write_csv};
pub use noise::{gaussian_kernel, gaussian_smooth, gen_noise, NOISE_SIGMA};
pub use prepare::{cap_per_class, class_counts, prepare, PrepareConfig, Prepared};
pub use preprocess::{extract_beats, locate_r_peaks, normalize, window_beat, REFRACTORY_GAP};
pub use smote::{smote, smote_interpolate, SMOTE_K};
pub use split::{make_folds, split_dataset, DatasetSplit};
pub use synth::{synth_corpus, SynthConfig};

use crate::error::{Error, Result};

/// Default beat window centred on the R-peak.
pub const WINDOW: usize = 280;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackTag {
    Clean,
    Fgsm,
    Bim,
    Pgd,
    Cw,
    Dbb,
    Hsj,
}

impl AttackTag {
    pub const ALL: [AttackTag; 7] = [
        AttackTag::Clean,
        AttackTag::Fgsm,
        AttackTag::Bim,
        AttackTag::Pgd,
        AttackTag::Cw,
        AttackTag::Dbb,
        AttackTag::Hsj,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackTag::Clean => "clean",
            AttackTag::Fgsm => "fgsm",
            AttackTag::Bim => "bim",
            AttackTag::Pgd => "pgd",
            AttackTag::Cw => "cw",
            AttackTag::Dbb => "dbb",
            AttackTag::Hsj => "hsj",
        }
    }

    pub fn is_attacked(self) -> bool {
        self != AttackTag::Clean
    }

    /// Attack-head target index.
    pub fn target(self) -> usize {
        usize::from(self.is_attacked())
    }
}

impl fmt::Display for AttackTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::data(format!("unknown attack tag {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelScheme {
    /// N, S, V, F beat groups.
    Mitbih4,
    /// NORM and MI.
    Ptb2,
}

impl LabelScheme {
    pub fn classes(self) -> usize {
        self.names().len()
    }

    pub fn names(self) -> &'static [&'static str] {
        match self {
            LabelScheme::Mitbih4 => &["N", "S", "V", "F"],
            LabelScheme::Ptb2 => &["NORM", "MI"],
        }
    }

    pub fn name(self, class: usize) -> &'static str {
        self.names()[class]
    }

    /// Class index of a CSV label token.
    pub fn parse_label(self, token: &str) -> Result<usize> {
        self.names()
            .iter()
            .position(|n| *n == token)
            .ok_or_else(|| Error::data(format!("unknown label {token:?} for {self:?}")))
    }

    /// Class of a source beat-annotation symbol; `None` for symbols outside
    /// the grouping.
    pub fn from_symbol(self, symbol: &str) -> Option<usize> {
        match self {
            LabelScheme::Mitbih4 => match symbol {
                "N" | "L" | "R" | "e" | "j" => Some(0),
                "A" | "a" | "S" | "J" => Some(1),
                "V" | "E" => Some(2),
                "F" => Some(3),
                _ => None,
            },
            LabelScheme::Ptb2 => self.parse_label(symbol).ok(),
        }
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mitbih" | "mitbih-4" | "mitbih4" => Ok(LabelScheme::Mitbih4),
            "ptb" | "ptb-2" | "ptb2" => Ok(LabelScheme::Ptb2),
            _ => Err(Error::invalid(format!("unknown label scheme {s:?}"))),
        }
    }
}

/// One windowed, normalized beat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeatRecord {
    pub samples: Vec<f64>,
    pub label: usize,
    pub attack: AttackTag,
    pub source_id: String,
}

impl BeatRecord {
    pub fn clean(samples: Vec<f64>, label: usize, source_id: impl Into<String>) -> Self {
        BeatRecord {
            samples,
            label,
            attack: AttackTag::Clean,
            source_id: source_id.into(),
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.samples.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

pub fn samples_of(records: &[BeatRecord]) -> Vec<&[f64]> {
    records.iter().map(|r| r.samples.as_slice()).collect()
}

pub fn labels_of(records: &[BeatRecord]) -> Vec<usize> {
    records.iter().map(|r| r.label).collect()
}
