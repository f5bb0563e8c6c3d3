use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{as_refs, check_batch, project, AttackOutcome, GradientModel};
use crate::error::{Error, Result};

/// Records per model call.
const CHUNK: usize = 128;

/// Line-search halvings per CW iteration.
const CW_HALVINGS: usize = 5;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_finite(g: &[Vec<f64>]) -> Result<()> {
    if g.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attack gradient"));
    }
    Ok(())
}

fn check_eps(eps: f64, alpha: f64) -> Result<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be finite and >= 0, got {eps}")));
    }
    if !(alpha >= 0.0 && alpha <= eps + super::LINF_TOLERANCE) {
        return Err(Error::invalid(format!("step {alpha} must lie in [0, {eps}]")));
    }
    Ok(())
}

fn finish<M: GradientModel + ?Sized>(
    model: &M,
    xs: &[Vec<f64>],
    labels: &[usize],
    adv: Vec<Vec<f64>>,
    queries: usize,
) -> Result<Vec<AttackOutcome>> {
    let preds = model.predict(&as_refs(&adv))?;
    Ok(adv
        .into_iter()
        .zip(xs)
        .zip(labels.iter().zip(preds))
        .map(|((a, x), (&y, p))| AttackOutcome::new(x, a, p != y, queries))
        .collect())
}

/// Signed-gradient iterations from `start`, each projected back onto the
/// ε-ball and `[0, 1]`.
fn iterate<M: GradientModel + ?Sized>(
    model: &M,
    xs: &[Vec<f64>],
    labels: &[usize],
    mut cur: Vec<Vec<f64>>,
    eps: f64,
    alpha: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    for _ in 0..steps {
        let g = model.loss_grad(&as_refs(&cur), labels)?;
        check_finite(&g)?;
        for ((c, gi), x) in cur.iter_mut().zip(&g).zip(xs) {
            for (v, d) in c.iter_mut().zip(gi) {
                *v += alpha * sign(*d);
            }
            project(x, c, eps);
        }
    }
    Ok(cur)
}

/// `clip(x + ε sign(∇ L))`, one gradient per record.
pub fn fgsm<M: GradientModel + ?Sized>(
    model: &M,
    xs: &[Vec<f64>],
    labels: &[usize],
    eps: f64,
) -> Result<Vec<AttackOutcome>> {
    bim(model, xs, labels, eps, eps, 1)
}

/// `iterations` FGSM steps of size `alpha`, projected onto the ε-ball.
pub fn bim<M: GradientModel + ?Sized>(
    model: &M,
    xs: &[Vec<f64>],
    labels: &[usize],
    eps: f64,
    alpha: f64,
    iterations: usize,
) -> Result<Vec<AttackOutcome>> {
    check_batch(xs, labels, model.classes())?;
    check_eps(eps, alpha)?;
    let mut out = Vec::with_capacity(xs.len());
    for (xc, yc) in xs.chunks(CHUNK).zip(labels.chunks(CHUNK)) {
        let adv = iterate(model, xc, yc, xc.to_vec(), eps, alpha, iterations)?;
        out.extend(finish(model, xc, yc, adv, iterations)?);
    }
    Ok(out)
}

/// BIM from a uniform random start in the ε-ball. Record `i` draws its
/// start from stream `i` of the seeded generator.
pub fn pgd<M: GradientModel + ?Sized>(
    model: &M,
    xs: &[Vec<f64>],
    labels: &[usize],
    eps: f64,
    alpha: f64,
    iterations: usize,
    seed: u64,
) -> Result<Vec<AttackOutcome>> {
    check_batch(xs, labels, model.classes())?;
    check_eps(eps, alpha)?;
    let mut out = Vec::with_capacity(xs.len());
    for (c, (xc, yc)) in xs.chunks(CHUNK).zip(labels.chunks(CHUNK)).enumerate() {
        let start: Vec<Vec<f64>> = xc
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((c * CHUNK + i) as u64);
                let mut s: Vec<f64> = x
                    .iter()
                    .map(|v| if eps > 0.0 { v + rng.random_range(-eps..=eps) } else { *v })
                    .collect();
                project(x, &mut s, eps);
                s
            })
            .collect();
        let adv = iterate(model, xc, yc, start, eps, alpha, iterations)?;
        out.extend(finish(model, xc, yc, adv, iterations)?);
    }
    Ok(out)
}

fn margins(z: &[Vec<f64>], labels: &[usize], floor: f64) -> Vec<f64> {
    z.iter()
        .zip(labels)
        .map(|(row, &y)| {
            let other = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            (row[y] - other).max(-floor)
        })
        .collect()
}

/// Descent on the margin `max(z_y - max_{j != y} z_j, -k)` with signed
/// steps. Each iteration tries the step `alpha`, halving up to five times
/// until the margin decreases; records stop once the margin reaches `-k`.
pub fn cw_linf<M: GradientModel + ?Sized>(
    model: &M,
    xs: &[Vec<f64>],
    labels: &[usize],
    eps: f64,
    alpha: f64,
    confidence: f64,
    iterations: usize,
) -> Result<Vec<AttackOutcome>> {
    check_batch(xs, labels, model.classes())?;
    check_eps(eps, alpha)?;
    if !(confidence >= 0.0 && confidence.is_finite()) {
        return Err(Error::invalid(format!("confidence must be >= 0, got {confidence}")));
    }
    let mut out = Vec::with_capacity(xs.len());
    for (xc, yc) in xs.chunks(CHUNK).zip(labels.chunks(CHUNK)) {
        out.extend(cw_chunk(model, xc, yc, eps, alpha, confidence, iterations)?);
    }
    Ok(out)
}

fn cw_chunk<M: GradientModel + ?Sized>(
    model: &M,
    xs: &[Vec<f64>],
    labels: &[usize],
    eps: f64,
    alpha: f64,
    k: f64,
    iterations: usize,
) -> Result<Vec<AttackOutcome>> {
    let n = xs.len();
    let mut cur = xs.to_vec();
    let mut queries = vec![0usize; n];
    let mut done = vec![false; n];
    for _ in 0..iterations {
        let active: Vec<usize> = (0..n).filter(|&i| !done[i]).collect();
        if active.is_empty() {
            break;
        }
        let pts: Vec<Vec<f64>> = active.iter().map(|&i| cur[i].clone()).collect();
        let ys: Vec<usize> = active.iter().map(|&i| labels[i]).collect();
        let (f, g) = model.margin_grad(&as_refs(&pts), &ys, k)?;
        check_finite(&g)?;
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CW margin"));
        }
        let mut searching: Vec<(usize, f64, Vec<f64>)> = Vec::new();
        for (slot, &i) in active.iter().enumerate() {
            queries[i] += 1;
            if f[slot] <= -k {
                done[i] = true;
            } else {
                let dir: Vec<f64> = g[slot].iter().map(|&d| sign(d)).collect();
                searching.push((i, f[slot], dir));
            }
        }
        let mut step = alpha;
        for _ in 0..=CW_HALVINGS {
            if searching.is_empty() {
                break;
            }
            let cands: Vec<Vec<f64>> = searching
                .iter()
                .map(|(i, _, dir)| {
                    let mut c: Vec<f64> = cur[*i].iter().zip(dir).map(|(v, d)| v - step * d).collect();
                    project(&xs[*i], &mut c, eps);
                    c
                })
                .collect();
            let ys: Vec<usize> = searching.iter().map(|s| labels[s.0]).collect();
            let z = model.logits(&as_refs(&cands))?;
            let fc = margins(&z, &ys, k);
            let mut next = Vec::new();
            for ((entry, cand), fv) in searching.into_iter().zip(cands).zip(fc) {
                queries[entry.0] += 1;
                if fv < entry.1 {
                    cur[entry.0] = cand;
                    if fv <= -k {
                        done[entry.0] = true;
                    }
                } else {
                    next.push(entry);
                }
            }
            searching = next;
            step /= 2.0;
        }
    }
    let preds = model.predict(&as_refs(&cur))?;
    Ok(cur
        .into_iter()
        .enumerate()
        .map(|(i, a)| AttackOutcome::new(&xs[i], a, preds[i] != labels[i], queries[i]))
        .collect())
}
