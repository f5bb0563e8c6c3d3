use serde::{Deserialize, Serialize};

use super::{
    bim, boundary_attack, cw_linf, fgsm, hop_skip_jump, pgd, project, AttackConfig,
    AttackKind, AttackOutcome, BlackBoxSettings, DecisionModel, GradientModel,
};
use crate::data::{AttackTag, BeatRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub kind: AttackKind,
    pub config: AttackConfig,
    pub records: usize,
    pub success_rate: f64,
    pub mean_linf: f64,
    pub mean_l2: f64,
    pub mean_queries: f64,
    /// Decision-based runs that found no starting adversarial; those
    /// records keep their clean samples.
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackManifest {
    pub clean_records: usize,
    pub kinds: Vec<AttackSummary>,
}

fn run_kind<M: GradientModel + DecisionModel + ?Sized>(
    model: &M,
    xs: &[Vec<f64>],
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<(Vec<AttackOutcome>, usize)> {
    cfg.validate()?;
    let (eps, alpha, n) = (cfg.epsilon, cfg.step_alpha, cfg.iterations);
    let outcomes = match cfg.kind {
        AttackKind::Fgsm => fgsm(model, xs, labels, eps)?,
        AttackKind::Bim => bim(model, xs, labels, eps, alpha, n)?,
        AttackKind::Pgd => pgd(model, xs, labels, eps, alpha, n, cfg.seed)?,
        AttackKind::Cw => cw_linf(model, xs, labels, eps, alpha, cfg.confidence, n)?,
        AttackKind::Dbb | AttackKind::Hsj => {
            let settings = BlackBoxSettings::from(cfg);
            let mut failures = 0;
            let mut out = Vec::with_capacity(xs.len());
            for (i, (x, &y)) in xs.iter().zip(labels).enumerate() {
                let r = if cfg.kind == AttackKind::Dbb {
                    boundary_attack(model, x, y, &settings, i as u64)
                } else {
                    hop_skip_jump(model, x, y, &settings, i as u64)
                };
                let mut o = match r {
                    Ok(o) => o,
                    Err(Error::AttackFailed(_)) => {
                        failures += 1;
                        AttackOutcome::new(x, x.clone(), false, settings.query_budget)
                    }
                    Err(e) => return Err(e),
                };
                if cfg.clip_to_epsilon && o.success {
                    let mut a = std::mem::take(&mut o.adversarial);
                    project(x, &mut a, eps);
                    let still = model.decide(&[a.as_slice()])?[0] != y;
                    let mut clipped = AttackOutcome::new(x, a, still, o.queries + 1);
                    clipped.trace = o.trace;
                    o = clipped;
                }
                out.push(o);
            }
            return Ok((out, failures));
        }
    };
    Ok((outcomes, 0))
}

/// Clean records followed by one attacked copy of every record per config,
/// in config order. Attacked copies keep label and record order and carry
/// the attack's tag.
pub fn build_attacked_dataset<M: GradientModel + DecisionModel + ?Sized>(
    model: &M,
    records: &[BeatRecord],
    configs: &[AttackConfig],
) -> Result<(Vec<BeatRecord>, AttackManifest)> {
    if let Some(r) = records.iter().find(|r| r.attack != AttackTag::Clean) {
        return Err(Error::invalid(format!("record {} is already attacked", r.source_id)));
    }
    let xs: Vec<Vec<f64>> = records.iter().map(|r| r.samples.clone()).collect();
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let mut out = records.to_vec();
    let mut kinds = Vec::with_capacity(configs.len());
    for cfg in configs {
        let (outcomes, failures) = if records.is_empty() {
            (Vec::new(), 0)
        } else {
            run_kind(model, &xs, &labels, cfg)?
        };
        let n = outcomes.len().max(1) as f64;
        kinds.push(AttackSummary {
            kind: cfg.kind,
            config: cfg.clone(),
            records: outcomes.len(),
            success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n,
            mean_linf: outcomes.iter().map(|o| o.linf).sum::<f64>() / n,
            mean_l2: outcomes.iter().map(|o| o.l2).sum::<f64>() / n,
            mean_queries: outcomes.iter().map(|o| o.queries as f64).sum::<f64>() / n,
            failures,
        });
        for (r, o) in records.iter().zip(outcomes) {
            if o.adversarial.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("{} produced samples outside [0, 1]", cfg.kind)));
            }
            out.push(BeatRecord {
                samples: o.adversarial,
                label: r.label,
                attack: cfg.kind.tag(),
                source_id: format!("{}#{}", r.source_id, cfg.kind),
            });
        }
    }
    Ok((
        out,
        AttackManifest {
            clean_records: records.len(),
            kinds,
        },
    ))
}
