//! Loss terms for the three discriminator heads and the generator, and
//! their weighted composition.
//!
//! Each term has a pure per-record form over plain slices and a batched
//! tape form used by training. Batch reduction is always the mean.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, PROB_FLOOR};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_mse: f64,
    pub lambda_atk: f64,
    pub lambda_ary: f64,
    /// Attack-head class weights, `[clean, attacked]`.
    pub kappa: [f64; 2],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mse: 1.0,
            lambda_atk: 10.0,
            lambda_ary: 10.0,
            kappa: [1.0, 1.05],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_mse, self.lambda_atk, self.lambda_ary, self.kappa[0], self.kappa[1]];
        if all.iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err(Error::invalid(format!("loss weights must be positive and finite: {self:?}")))
        }
    }
}

/// Which network an objective is formed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
}

/// Component values of one step; unused terms stay zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv_d: f64,
    pub adv_g: f64,
    pub atk: f64,
    pub ary: f64,
    pub mse: f64,
}

fn check_probs(probs: &[f64], target: usize) -> Result<()> {
    if target >= probs.len() {
        return Err(Error::invalid(format!(
            "target {target} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(())
}

fn clamped_ln(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0).ln()
}

/// Class-weighted cross-entropy of the attack head for a hard target.
pub fn loss_atk(probs: &[f64], target: usize, kappa: [f64; 2]) -> Result<f64> {
    if probs.len() != 2 {
        return Err(Error::shape(format!("attack head has 2 outputs, got {}", probs.len())));
    }
    check_probs(probs, target)?;
    Ok(-kappa[target] * clamped_ln(probs[target]))
}

/// Cross-entropy of the class head for a hard target.
pub fn loss_ary(probs: &[f64], target: usize) -> Result<f64> {
    check_probs(probs, target)?;
    Ok(-clamped_ln(probs[target]))
}

/// Mean squared difference between a generated signal and its clean
/// reference.
pub fn loss_mse(generated: &[f64], reference: &[f64]) -> Result<f64> {
    if generated.len() != reference.len() || generated.is_empty() {
        return Err(Error::shape(format!(
            "mse over lengths {} and {}",
            generated.len(),
            reference.len()
        )));
    }
    let s: f64 = generated.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(s / generated.len() as f64)
}

/// Least-squares discriminator loss with real target +1 and fake target -1.
pub fn loss_adv_d(d_real: f64, d_fake: f64) -> f64 {
    (d_real - 1.0).powi(2) + (d_fake + 1.0).powi(2)
}

/// Least-squares generator loss pulling fakes to the real target.
pub fn loss_adv_g(d_fake: f64) -> f64 {
    (d_fake - 1.0).powi(2)
}

/// Weighted objective for one role. The generator objective adds the
/// classification terms only when `feedback` is set.
pub fn composite(c: &LossComponents, w: &LossWeights, role: Role, feedback: bool) -> f64 {
    match role {
        Role::Discriminator => c.adv_d + w.lambda_atk * c.atk + w.lambda_ary * c.ary,
        Role::Generator => {
            let base = c.adv_g + w.lambda_mse * c.mse;
            if feedback {
                base + w.lambda_atk * c.atk + w.lambda_ary * c.ary
            } else {
                base
            }
        }
    }
}

/// Batch mean of `(score - target)^2` on the tape.
pub fn tape_adv(tape: &mut Tape, scores: Var, target: f64) -> Result<Var> {
    let shifted = tape.add_scalar(scores, -target)?;
    let sq = tape.square(shifted)?;
    tape.mean(sq)
}

/// Batch mean of the attack-head loss; `tags[r]` is 1 for attacked records.
pub fn tape_atk(tape: &mut Tape, probs: Var, tags: &[usize], kappa: [f64; 2]) -> Result<Var> {
    if let Some(t) = tags.iter().find(|&&t| t > 1) {
        return Err(Error::invalid(format!("attack target {t} is not 0 or 1")));
    }
    let weights: Vec<f64> = tags.iter().map(|&t| kappa[t]).collect();
    tape.nll(probs, tags, &weights)
}

/// Batch mean of the class-head loss.
pub fn tape_ary(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    tape.nll(probs, labels, &vec![1.0; labels.len()])
}

/// Discriminator heads feeding one half of a step.
pub struct DiscriminatorHeads<'a> {
    pub adv: Var,
    pub attack_probs: Var,
    pub class_probs: Var,
    pub adv_target: f64,
    pub attack_targets: &'a [usize],
    pub labels: &'a [usize],
}

/// Records the discriminator objective for a real or fake batch and returns
/// it with its component values.
pub fn discriminator_objective(
    tape: &mut Tape,
    heads: &DiscriminatorHeads<'_>,
    w: &LossWeights,
) -> Result<(Var, LossComponents)> {
    let adv = tape_adv(tape, heads.adv, heads.adv_target)?;
    let atk = tape_atk(tape, heads.attack_probs, heads.attack_targets, w.kappa)?;
    let ary = tape_ary(tape, heads.class_probs, heads.labels)?;
    let atk_w = tape.scale(atk, w.lambda_atk)?;
    let ary_w = tape.scale(ary, w.lambda_ary)?;
    let heads_sum = tape.add(atk_w, ary_w)?;
    let total = tape.add(adv, heads_sum)?;
    let c = LossComponents {
        adv_d: scalar(tape, adv),
        atk: scalar(tape, atk),
        ary: scalar(tape, ary),
        ..LossComponents::default()
    };
    Ok((total, c))
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0]
}

/// One JSON-lines record of per-step loss values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossLogEntry {
    pub step: u64,
    pub l_adv_d: f64,
    pub l_adv_g: f64,
    pub l_atk: f64,
    pub l_ary: f64,
    pub l_mse: f64,
}

impl LossLogEntry {
    pub fn new(step: u64, c: &LossComponents) -> Self {
        LossLogEntry {
            step,
            l_adv_d: c.adv_d,
            l_adv_g: c.adv_g,
            l_atk: c.atk,
            l_ary: c.ary,
            l_mse: c.mse,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_adv_d, self.l_adv_g, self.l_atk, self.l_ary, self.l_mse]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}
