use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{l2_dist, AttackConfig, AttackOutcome, DecisionModel};
use crate::error::{Error, Result};

/// Uniform-noise draws tried when looking for a starting adversarial.
pub const INIT_TRIES: usize = 200;

/// Interpolation tolerance of boundary binary searches.
pub const BINARY_TOLERANCE: f64 = 1e-3;

const INIT_BATCH: usize = 20;
const ADAPT_EVERY: usize = 10;
const STEP_HALVINGS: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxSettings {
    pub iterations: usize,
    pub query_budget: usize,
    pub batch_queries: usize,
    pub seed: u64,
}

impl From<&AttackConfig> for BlackBoxSettings {
    fn from(c: &AttackConfig) -> Self {
        BlackBoxSettings {
            iterations: c.iterations,
            query_budget: c.query_budget,
            batch_queries: c.batch_queries,
            seed: c.seed,
        }
    }
}

/// Decision access with a hard query budget.
struct Oracle<'m, M: ?Sized> {
    model: &'m M,
    label: usize,
    used: usize,
    budget: usize,
}

impl<M: DecisionModel + ?Sized> Oracle<'_, M> {
    fn remaining(&self) -> usize {
        self.budget - self.used
    }

    /// `None` when the batch would exceed the budget.
    fn adversarial(&mut self, xs: &[Vec<f64>]) -> Result<Option<Vec<bool>>> {
        if xs.len() > self.remaining() {
            return Ok(None);
        }
        self.used += xs.len();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let d = self.model.decide(&refs)?;
        Ok(Some(d.into_iter().map(|c| c != self.label).collect()))
    }

    fn one(&mut self, x: &[f64]) -> Result<Option<bool>> {
        Ok(self.adversarial(&[x.to_vec()])?.map(|v| v[0]))
    }
}

fn blend(x: &[f64], a: &[f64], t: f64) -> Vec<f64> {
    x.iter().zip(a).map(|(o, v)| o + t * (v - o)).collect()
}

fn clip01(v: &mut [f64]) {
    for x in v {
        *x = x.clamp(0.0, 1.0);
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Smallest known-adversarial blend of `x` toward `adv`.
fn boundary_search<M: DecisionModel + ?Sized>(
    oracle: &mut Oracle<'_, M>,
    x: &[f64],
    adv: &[f64],
) -> Result<Vec<f64>> {
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > BINARY_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        match oracle.one(&blend(x, adv, mid))? {
            Some(true) => hi = mid,
            Some(false) => lo = mid,
            None => break,
        }
    }
    Ok(blend(x, adv, hi))
}

fn initialize<M: DecisionModel + ?Sized>(
    oracle: &mut Oracle<'_, M>,
    x: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut tried = 0;
    while tried < INIT_TRIES {
        let n = INIT_BATCH.min(INIT_TRIES - tried);
        let cands: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..x.len()).map(|_| rng.random::<f64>()).collect())
            .collect();
        let Some(flags) = oracle.adversarial(&cands)? else {
            break;
        };
        tried += n;
        if let Some(i) = flags.iter().position(|&f| f) {
            return boundary_search(oracle, x, &cands[i]);
        }
    }
    Err(Error::AttackFailed(format!(
        "no adversarial starting point among {tried} uniform draws"
    )))
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shared preamble: an already misclassified input is its own adversarial.
fn start<M: DecisionModel + ?Sized>(
    oracle: &mut Oracle<'_, M>,
    x: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<f64>>> {
    match oracle.one(x)? {
        Some(true) => Ok(None),
        Some(false) => Ok(Some(initialize(oracle, x, rng)?)),
        None => Err(Error::AttackFailed("query budget is zero".into())),
    }
}

fn validate(x: &[f64], s: &BlackBoxSettings) -> Result<()> {
    if x.is_empty() || x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("decision-based attacks need a non-empty input in [0, 1]"));
    }
    if s.iterations == 0 {
        return Err(Error::invalid("attack iterations must be >= 1"));
    }
    Ok(())
}

/// Boundary attack: random walk along the sphere around `x` combined with a
/// contraction toward `x`, accepting only adversarial proposals that do not
/// move away from `x`. Step scales adapt every ten iterations toward a 50%
/// acceptance rate. Each iteration issues two queries.
pub fn boundary_attack<M: DecisionModel + ?Sized>(
    model: &M,
    x: &[f64],
    label: usize,
    settings: &BlackBoxSettings,
    stream: u64,
) -> Result<AttackOutcome> {
    validate(x, settings)?;
    let mut rng = rng_for(settings.seed, stream);
    let mut oracle = Oracle {
        model,
        label,
        used: 0,
        budget: settings.query_budget,
    };
    let Some(mut adv) = start(&mut oracle, x, &mut rng)? else {
        return Ok(AttackOutcome::new(x, x.to_vec(), true, oracle.used));
    };
    let mut dist = l2_dist(&adv, x);
    let mut trace = Vec::with_capacity(settings.iterations);
    let (mut spherical, mut source) = (0.01, 0.01);
    let (mut orth_hits, mut cand_hits, mut window) = (0, 0, 0);
    for _ in 0..settings.iterations {
        if oracle.remaining() < 2 || dist == 0.0 {
            break;
        }
        let diff: Vec<f64> = adv.iter().zip(x).map(|(a, o)| a - o).collect();
        let mut eta = gaussian(&mut rng, x.len());
        let along = eta.iter().zip(&diff).map(|(e, d)| e * d).sum::<f64>() / (dist * dist);
        for (e, d) in eta.iter_mut().zip(&diff) {
            *e -= along * d;
        }
        let scale = spherical * dist / norm(&eta).max(f64::MIN_POSITIVE);
        let mut orth: Vec<f64> = adv.iter().zip(&eta).map(|(a, e)| a + scale * e).collect();
        let r = l2_dist(&orth, x);
        for (p, o) in orth.iter_mut().zip(x) {
            *p = o + (*p - o) * dist / r;
        }
        clip01(&mut orth);
        let mut cand: Vec<f64> = orth.iter().zip(x).map(|(p, o)| p + source * (o - p)).collect();
        clip01(&mut cand);
        let Some(flags) = oracle.adversarial(&[orth, cand.clone()])? else {
            break;
        };
        window += 1;
        orth_hits += usize::from(flags[0]);
        cand_hits += usize::from(flags[1]);
        let d = l2_dist(&cand, x);
        if flags[1] && d <= dist {
            adv = cand;
            dist = d;
        }
        trace.push(dist);
        if window == ADAPT_EVERY {
            spherical *= if orth_hits * 2 > window { 1.5 } else { 0.5 };
            source *= if cand_hits * 2 > window { 1.5 } else { 0.5 };
            source = source.min(0.5);
            (orth_hits, cand_hits, window) = (0, 0, 0);
        }
    }
    let mut out = AttackOutcome::new(x, adv, true, oracle.used);
    out.trace = trace;
    Ok(out)
}

/// HopSkipJump: boundary binary search, Monte-Carlo estimate of the
/// boundary normal from `batch_queries` signed probes, and a geometric step
/// search starting at `dist / sqrt(t)`.
pub fn hop_skip_jump<M: DecisionModel + ?Sized>(
    model: &M,
    x: &[f64],
    label: usize,
    settings: &BlackBoxSettings,
    stream: u64,
) -> Result<AttackOutcome> {
    validate(x, settings)?;
    if settings.batch_queries < 2 {
        return Err(Error::invalid("HopSkipJump needs at least 2 probes per iteration"));
    }
    let mut rng = rng_for(settings.seed, stream);
    let mut oracle = Oracle {
        model,
        label,
        used: 0,
        budget: settings.query_budget,
    };
    let Some(mut adv) = start(&mut oracle, x, &mut rng)? else {
        return Ok(AttackOutcome::new(x, x.to_vec(), true, oracle.used));
    };
    let dim = x.len() as f64;
    let mut best = adv.clone();
    let mut best_dist = l2_dist(&best, x);
    let mut trace = Vec::with_capacity(settings.iterations);
    for t in 1..=settings.iterations {
        let bnd = boundary_search(&mut oracle, x, &adv)?;
        let dist = l2_dist(&bnd, x);
        if dist < best_dist {
            best_dist = dist;
            best = bnd.clone();
        }
        if dist == 0.0 {
            trace.push(best_dist);
            break;
        }
        let delta = if t == 1 { 0.1 } else { dist / dim };
        let probes: Vec<Vec<f64>> = (0..settings.batch_queries)
            .map(|_| {
                let u = gaussian(&mut rng, x.len());
                let n = norm(&u).max(f64::MIN_POSITIVE);
                u.into_iter().map(|v| v / n).collect()
            })
            .collect();
        let points: Vec<Vec<f64>> = probes
            .iter()
            .map(|u| {
                let mut p: Vec<f64> = bnd.iter().zip(u).map(|(b, v)| b + delta * v).collect();
                clip01(&mut p);
                p
            })
            .collect();
        let Some(flags) = oracle.adversarial(&points)? else {
            trace.push(best_dist);
            break;
        };
        let phi: Vec<f64> = flags.iter().map(|&f| if f { 1.0 } else { -1.0 }).collect();
        let mean = phi.iter().sum::<f64>() / phi.len() as f64;
        let centred = mean.abs() < 1.0;
        let mut grad = vec![0.0; x.len()];
        for (p, u) in phi.iter().zip(&probes) {
            let w = if centred { p - mean } else { *p };
            for (g, v) in grad.iter_mut().zip(u) {
                *g += w * v;
            }
        }
        let gn = norm(&grad);
        if gn == 0.0 {
            adv = bnd;
            trace.push(best_dist);
            continue;
        }
        grad.iter_mut().for_each(|g| *g /= gn);
        let mut xi = dist / (t as f64).sqrt();
        adv = bnd.clone();
        for _ in 0..STEP_HALVINGS {
            let mut cand: Vec<f64> = bnd.iter().zip(&grad).map(|(b, g)| b + xi * g).collect();
            clip01(&mut cand);
            match oracle.one(&cand)? {
                Some(true) => {
                    let d = l2_dist(&cand, x);
                    if d < best_dist {
                        best_dist = d;
                        best = cand.clone();
                    }
                    adv = cand;
                    break;
                }
                Some(false) => xi /= 2.0,
                None => break,
            }
        }
        trace.push(best_dist);
        if oracle.remaining() == 0 {
            break;
        }
    }
    let mut out = AttackOutcome::new(x, best, true, oracle.used);
    out.trace = trace;
    Ok(out)
}
