//! White-box (FGSM, BIM, PGD, CW-L∞) and decision-based (boundary,
//! HopSkipJump) attacks against frozen classifiers, plus attacked-dataset
//! construction.

mod blackbox;
mod dataset;
mod models;
mod toy;
mod whitebox;

use serde::{Deserialize, Serialize};

pub use blackbox::{boundary_attack, hop_skip_jump, BlackBoxSettings};
pub use dataset::{build_attacked_dataset, AttackManifest, AttackSummary};
pub use toy::LinearSoftmax;
pub use whitebox::{bim, cw_linf, fgsm, pgd};

use crate::data::AttackTag;
use crate::error::{Error, Result};

/// Slack on L∞ budget checks.
pub const LINF_TOLERANCE: f64 = 1e-9;

/// Classifier exposing input gradients. Batches are independent: the
/// gradient for row `i` depends only on row `i`.
pub trait GradientModel {
    fn classes(&self) -> usize;

    fn logits(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>>;

    /// Gradient of the per-record cross-entropy of the softmax output.
    fn loss_grad(&self, xs: &[&[f64]], labels: &[usize]) -> Result<Vec<Vec<f64>>>;

    /// Per-record `max(z_y - max_{j != y} z_j, -floor)` and its gradient.
    fn margin_grad(
        &self,
        xs: &[&[f64]],
        labels: &[usize],
        floor: f64,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)>;

    fn predict(&self, xs: &[&[f64]]) -> Result<Vec<usize>> {
        Ok(self
            .logits(xs)?
            .iter()
            .map(|z| crate::models::argmax(z))
            .collect())
    }
}

/// Classifier exposing only its decision.
pub trait DecisionModel {
    fn decide(&self, xs: &[&[f64]]) -> Result<Vec<usize>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
    Pgd,
    Cw,
    Dbb,
    Hsj,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::Fgsm,
        AttackKind::Bim,
        AttackKind::Pgd,
        AttackKind::Cw,
        AttackKind::Dbb,
        AttackKind::Hsj,
    ];

    pub fn tag(self) -> AttackTag {
        match self {
            AttackKind::Fgsm => AttackTag::Fgsm,
            AttackKind::Bim => AttackTag::Bim,
            AttackKind::Pgd => AttackTag::Pgd,
            AttackKind::Cw => AttackTag::Cw,
            AttackKind::Dbb => AttackTag::Dbb,
            AttackKind::Hsj => AttackTag::Hsj,
        }
    }

    pub fn is_white_box(self) -> bool {
        !matches!(self, AttackKind::Dbb | AttackKind::Hsj)
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.tag().as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown attack kind {s:?}")))
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag().as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L∞ budget. Decision-based results are clipped to it only when
    /// `clip_to_epsilon` is set.
    pub epsilon: f64,
    pub step_alpha: f64,
    pub iterations: usize,
    pub query_budget: usize,
    /// CW confidence `k`.
    pub confidence: f64,
    /// Gradient-estimation probes per HopSkipJump iteration.
    pub batch_queries: usize,
    pub clip_to_epsilon: bool,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        let eps = if kind == AttackKind::Cw { 0.1 } else { 0.01 };
        let (iterations, query_budget) = match kind {
            AttackKind::Fgsm => (1, 0),
            AttackKind::Dbb => (1000, 2500),
            AttackKind::Hsj => (30, 5000),
            _ => (10, 0),
        };
        AttackConfig {
            kind,
            epsilon: eps,
            step_alpha: eps / 4.0,
            iterations,
            query_budget,
            confidence: 0.0,
            batch_queries: 100,
            clip_to_epsilon: kind == AttackKind::Dbb,
            seed: 0,
        }
    }

    /// Sets ε and rescales the step to ε/4.
    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = eps;
        self.step_alpha = eps / 4.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("attack iterations must be >= 1"));
        }
        if matches!(self.kind, AttackKind::Bim | AttackKind::Pgd | AttackKind::Cw)
            && !(self.step_alpha >= 0.0 && self.step_alpha <= self.epsilon + LINF_TOLERANCE)
        {
            return Err(Error::invalid(format!(
                "step {} must lie in [0, epsilon = {}]",
                self.step_alpha, self.epsilon
            )));
        }
        if self.kind == AttackKind::Hsj && self.batch_queries < 2 {
            return Err(Error::invalid("HopSkipJump needs at least 2 probes per iteration"));
        }
        Ok(())
    }
}

/// Result of attacking one record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub adversarial: Vec<f64>,
    /// The model's decision differs from the true label.
    pub success: bool,
    /// Gradient evaluations (white-box) or decision queries (black-box).
    pub queries: usize,
    pub linf: f64,
    pub l2: f64,
    /// Best adversarial L2 distance after each iteration (decision-based
    /// attacks only).
    pub trace: Vec<f64>,
}

impl AttackOutcome {
    pub(crate) fn new(x: &[f64], adversarial: Vec<f64>, success: bool, queries: usize) -> Self {
        AttackOutcome {
            linf: linf_dist(x, &adversarial),
            l2: l2_dist(x, &adversarial),
            adversarial,
            success,
            queries,
            trace: Vec::new(),
        }
    }
}

pub fn linf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Projects onto the intersection of the ε-ball around `x` and `[0, 1]`.
pub fn project(x: &[f64], candidate: &mut [f64], eps: f64) {
    for (c, &o) in candidate.iter_mut().zip(x) {
        *c = c.clamp(o - eps, o + eps).clamp(0.0, 1.0);
    }
}

pub(crate) fn check_batch(xs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<()> {
    if xs.len() != labels.len() {
        return Err(Error::shape(format!("{} inputs but {} labels", xs.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
    }
    for x in xs {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attack input"));
        }
    }
    Ok(())
}

pub(crate) fn as_refs(xs: &[Vec<f64>]) -> Vec<&[f64]> {
    xs.iter().map(Vec::as_slice).collect()
}
