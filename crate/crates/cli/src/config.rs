//! Pipeline configuration: built-in defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use ecg_robust::attacks::{AttackConfig, AttackKind};
use ecg_robust::autodiff::AdamConfig;
use ecg_robust::data::{LabelScheme, PrepareConfig, SynthConfig, SMOTE_K, WINDOW};
use ecg_robust::models::{DiscriminatorConfig, GeneratorConfig};
use ecg_robust::objectives::LossWeights;
use ecg_robust::train::{PretrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// File name of the resolved configuration written into every output
/// directory.
pub const RESOLVED_CONFIG: &str = "config.toml";

pub const SYNTHETIC: &str = "synthetic";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub attacks: AttackSection,
    pub train: TrainSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out: PathBuf::from("run"),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            pretrain: PretrainSection::default(),
            attacks: AttackSection::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// `synthetic` or the path of a beat CSV.
    pub source: String,
    pub scheme: LabelScheme,
    pub width: usize,
    /// Synthetic corpus only.
    pub per_class: usize,
    pub noise: f64,
    pub jitter: f64,
    pub train_ratio: f64,
    /// Empty, or one post-balancing train count per class (0 = untouched).
    pub smote_targets: Vec<usize>,
    pub smote_k: usize,
    pub class_cap: Option<usize>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        DatasetSection {
            source: SYNTHETIC.into(),
            scheme: LabelScheme::Mitbih4,
            width: WINDOW,
            per_class: s.per_class,
            noise: s.noise,
            jitter: s.jitter,
            train_ratio: 0.8,
            smote_targets: Vec::new(),
            smote_k: SMOTE_K,
            class_cap: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub generator_channels: [usize; 3],
    pub discriminator_channels: [usize; 3],
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            generator_channels: GeneratorConfig::default().channels,
            discriminator_channels: DiscriminatorConfig::default().channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub validation_fraction: f64,
    /// Fold-selected pre-training when >= 2.
    pub folds: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        PretrainSection {
            epochs: p.epochs,
            batch_size: p.batch_size,
            learning_rate: p.adam.learning_rate,
            beta1: p.adam.beta1,
            validation_fraction: p.validation_fraction,
            folds: 0,
        }
    }
}

/// Per-kind settings; unset fields keep the attack's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackOverride {
    pub epsilon: Option<f64>,
    pub step_alpha: Option<f64>,
    pub iterations: Option<usize>,
    pub query_budget: Option<usize>,
    pub batch_queries: Option<usize>,
    pub confidence: Option<f64>,
    pub clip_to_epsilon: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub kinds: Vec<AttackKind>,
    pub fgsm: AttackOverride,
    pub bim: AttackOverride,
    pub pgd: AttackOverride,
    pub cw: AttackOverride,
    pub dbb: AttackOverride,
    pub hsj: AttackOverride,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            kinds: AttackKind::ALL.to_vec(),
            fgsm: AttackOverride::default(),
            bim: AttackOverride::default(),
            pgd: AttackOverride::default(),
            cw: AttackOverride::default(),
            dbb: AttackOverride::default(),
            hsj: AttackOverride::default(),
        }
    }
}

impl AttackSection {
    fn get(&self, kind: AttackKind) -> &AttackOverride {
        match kind {
            AttackKind::Fgsm => &self.fgsm,
            AttackKind::Bim => &self.bim,
            AttackKind::Pgd => &self.pgd,
            AttackKind::Cw => &self.cw,
            AttackKind::Dbb => &self.dbb,
            AttackKind::Hsj => &self.hsj,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub feedback: bool,
    /// Start the discriminator from the undefended classifier.
    pub init_from_pretrained: bool,
    /// Share of clean train records (with their attacked copies) held out
    /// for per-epoch validation when cross-validation is off.
    pub validation_fraction: f64,
    pub cross_validate: bool,
    pub folds: usize,
    pub lambda_mse: f64,
    pub lambda_atk: f64,
    pub lambda_ary: f64,
    pub kappa: [f64; 2],
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::desk();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.adam.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            feedback: t.feedback,
            init_from_pretrained: true,
            validation_fraction: 0.1,
            cross_validate: false,
            folds: t.folds,
            lambda_mse: t.weights.lambda_mse,
            lambda_atk: t.weights.lambda_atk,
            lambda_ary: t.weights.lambda_ary,
            kappa: t.weights.kappa,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub attack_kinds: Option<Vec<AttackKind>>,
    pub epochs: Option<usize>,
    pub dataset: Option<String>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Defaults, then `file`, then `overrides`, validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        if let Some(k) = &overrides.attack_kinds {
            cfg.attacks.kinds = k.clone();
        }
        if let Some(e) = overrides.epochs {
            cfg.train.epochs = e;
        }
        if let Some(d) = &overrides.dataset {
            cfg.dataset.source = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn classes(&self) -> usize {
        self.dataset.scheme.classes()
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset.source == SYNTHETIC
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            classes: self.classes(),
            per_class: self.dataset.per_class,
            width: self.dataset.width,
            noise: self.dataset.noise,
            jitter: self.dataset.jitter,
        }
    }

    pub fn prepare_config(&self) -> PrepareConfig {
        PrepareConfig {
            train_ratio: self.dataset.train_ratio,
            smote_targets: self.dataset.smote_targets.clone(),
            smote_k: self.dataset.smote_k,
            class_cap: self.dataset.class_cap,
            folds: None,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            classes: self.classes(),
            width: self.dataset.width,
            channels: self.model.discriminator_channels,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            classes: self.classes(),
            width: self.dataset.width,
            channels: self.model.generator_channels,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            epochs: p.epochs,
            batch_size: p.batch_size,
            adam: AdamConfig {
                learning_rate: p.learning_rate,
                beta1: p.beta1,
                ..PretrainConfig::default().adam
            },
            validation_fraction: p.validation_fraction,
            seed: self.seed,
            discriminator: self.discriminator_config(),
        }
    }

    pub fn attack_configs(&self) -> Vec<AttackConfig> {
        self.attacks
            .kinds
            .iter()
            .map(|&kind| {
                let o = self.attacks.get(kind);
                let mut c = AttackConfig::new(kind);
                if let Some(e) = o.epsilon {
                    c = c.with_epsilon(e);
                }
                if let Some(a) = o.step_alpha {
                    c.step_alpha = a;
                }
                if let Some(n) = o.iterations {
                    c.iterations = n;
                }
                if let Some(q) = o.query_budget {
                    c.query_budget = q;
                }
                if let Some(b) = o.batch_queries {
                    c.batch_queries = b;
                }
                if let Some(k) = o.confidence {
                    c.confidence = k;
                }
                if let Some(clip) = o.clip_to_epsilon {
                    c.clip_to_epsilon = clip;
                }
                c.seed = self.seed;
                c
            })
            .collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                ..AdamConfig::default()
            },
            folds: t.folds,
            seed: self.seed,
            weights: LossWeights {
                lambda_mse: t.lambda_mse,
                lambda_atk: t.lambda_atk,
                lambda_ary: t.lambda_ary,
                kappa: t.kappa,
            },
            feedback: t.feedback,
            generator: self.generator_config(),
            discriminator: self.discriminator_config(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: ecg_robust::Error| CliError::Config(e.to_string());
        if !self.is_synthetic() && !Path::new(&self.dataset.source).is_file() {
            return Err(CliError::Config(format!("dataset {} does not exist", self.dataset.source)));
        }
        let d = &self.dataset;
        if !(d.train_ratio > 0.0 && d.train_ratio < 1.0) {
            return Err(CliError::Config(format!("train_ratio must be in (0, 1), got {}", d.train_ratio)));
        }
        if !d.smote_targets.is_empty() && d.smote_targets.len() != self.classes() {
            return Err(CliError::Config(format!(
                "{} SMOTE targets for {} classes",
                d.smote_targets.len(),
                self.classes()
            )));
        }
        if self.attacks.kinds.is_empty() {
            return Err(CliError::Config("at least one attack kind is required".into()));
        }
        let mut seen = self.attacks.kinds.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.attacks.kinds.len() {
            return Err(CliError::Config("attack kinds must not repeat".into()));
        }
        for c in self.attack_configs() {
            c.validate().map_err(bad)?;
        }
        self.pretrain_config().validate().map_err(bad)?;
        if self.pretrain.folds == 1 {
            return Err(CliError::Config("pretrain folds must be 0 (off) or >= 2".into()));
        }
        self.train_config().validate().map_err(bad)?;
        let v = self.train.validation_fraction;
        if !(0.0..1.0).contains(&v) {
            return Err(CliError::Config(format!("train validation_fraction must be in [0, 1), got {v}")));
        }
        Ok(())
    }
}

pub fn parse_kinds(s: &str) -> Result<Vec<AttackKind>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<AttackKind>().map_err(|e| CliError::Config(e.to_string())))
        .collect()
}
