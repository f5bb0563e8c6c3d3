//! Central-difference gradient checks for every differentiable op, every
//! block and both networks.

#![allow(dead_code)]

use std::time::{Duration, Instant};

use ecg_robust::autodiff::{ConvGeom, NormMode, ParamSet, Tape, Tensor, Var};
use ecg_robust::models::blocks::{DownsampleBlock, RegularBlock, ResidualBlock, SdaBlock, UpsampleBlock};
use ecg_robust::models::layers::{Forward, Mode, NetBuilder};
use ecg_robust::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Network};
use ecg_robust::objectives::{
    discriminator_objective, tape_adv, tape_ary, tape_atk, DiscriminatorHeads, LossWeights,
};
use ecg_robust::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Below this magnitude on both sides a component is compared absolutely.
pub const ABS_FLOOR: f64 = 1e-7;
pub const ABS_TOL: f64 = 1e-9;
/// Coordinates probed per input tensor.
pub const MAX_PROBES: usize = 48;

type Build = Box<dyn Fn(&mut Tape, &[Tensor]) -> Result<(Var, Vec<Var>)>>;

pub struct Case {
    pub name: String,
    inputs: Vec<Tensor>,
    build: Build,
}

#[derive(Debug, Default)]
pub struct SuiteReport {
    pub cases: usize,
    pub components: usize,
    pub max_rel: f64,
    pub failures: Vec<String>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.cases > 0
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform in `[-1, -0.05] U [0.05, 1]`, away from the leaky-ReLU kink.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn case(name: impl Into<String>, inputs: Vec<Tensor>, build: Build) -> Case {
    Case {
        name: name.into(),
        inputs,
        build,
    }
}

/// Plain ops whose inputs are all variables.
fn op_case<F>(name: impl Into<String>, inputs: Vec<Tensor>, f: F) -> Case
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
{
    case(
        name,
        inputs,
        Box::new(move |tape, ts| {
            let vars: Vec<Var> = ts.iter().map(|t| tape.variable(t.clone())).collect();
            Ok((f(tape, &vars)?, vars))
        }),
    )
}

fn projection(len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(len as u64 ^ 0x9e37);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Projects the output onto fixed random weights so every output entry
/// contributes to the scalar.
fn scalar_of(tape: &mut Tape, out: Var) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let r = projection(tape.value(out).len());
    let r = tape.constant(Tensor::new(shape, r)?);
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

fn loss_at(c: &Case, inputs: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let (out, _) = (c.build)(&mut tape, inputs)?;
    let s = scalar_of(&mut tape, out)?;
    Ok(tape.value(s).data()[0])
}

fn check_case(c: &Case, report: &mut SuiteReport) {
    let mut tape = Tape::new();
    let analytic = (|| -> Result<Vec<Vec<f64>>> {
        let (out, vars) = (c.build)(&mut tape, &c.inputs)?;
        let s = scalar_of(&mut tape, out)?;
        tape.backward(s)?;
        Ok(vars.iter().map(|&v| tape.grad_or_zeros(v)).collect())
    })();
    let analytic = match analytic {
        Ok(a) => a,
        Err(e) => {
            report.failures.push(format!("{}: {e}", c.name));
            return;
        }
    };
    report.cases += 1;
    for (ti, t) in c.inputs.iter().enumerate() {
        let n = t.len();
        let stride = n.div_ceil(MAX_PROBES).max(1);
        for j in (0..n).step_by(stride) {
            let mut plus = c.inputs.clone();
            plus[ti].data_mut()[j] += STEP;
            let mut minus = c.inputs.clone();
            minus[ti].data_mut()[j] -= STEP;
            let numeric = match (loss_at(c, &plus), loss_at(c, &minus)) {
                (Ok(p), Ok(m)) => (p - m) / (2.0 * STEP),
                (Err(e), _) | (_, Err(e)) => {
                    report.failures.push(format!("{}: {e}", c.name));
                    return;
                }
            };
            let a = analytic[ti][j];
            let scale = a.abs().max(numeric.abs());
            report.components += 1;
            let ok = if scale < ABS_FLOOR {
                (a - numeric).abs() < ABS_TOL
            } else {
                let rel = (a - numeric).abs() / scale;
                report.max_rel = report.max_rel.max(rel);
                rel < REL_TOL
            };
            if !ok {
                report.failures.push(format!(
                    "{} input {ti}[{j}]: analytic {a:e} numeric {numeric:e}",
                    c.name
                ));
            }
        }
    }
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut cases = Vec::new();
    let geoms = [
        (3, ConvGeom::new(1, 1, 1)),
        (3, ConvGeom::new(2, 1, 1)),
        (3, ConvGeom::new(1, 2, 2)),
        (2, ConvGeom::asymmetric(1, 2, 0, 2)),
        (4, ConvGeom::new(2, 1, 1)),
        (5, ConvGeom::new(3, 2, 0)),
    ];
    for (k, g) in geoms {
        let x = uniform(rng, &[2, 3, 11], -1.0, 1.0);
        let w = uniform(rng, &[4, 3, k], -1.0, 1.0);
        let b = uniform(rng, &[4], -1.0, 1.0);
        cases.push(op_case(format!("conv1d k{k} {g:?}"), vec![x, w, b], move |t, v| {
            t.conv1d(v[0], v[1], Some(v[2]), g)
        }));
    }
    for (k, s, crop) in [(4, 2, 1), (3, 1, 0), (4, 2, 0), (5, 3, 1)] {
        let x = uniform(rng, &[2, 3, 6], -1.0, 1.0);
        let w = uniform(rng, &[3, 2, k], -1.0, 1.0);
        let b = uniform(rng, &[2], -1.0, 1.0);
        cases.push(op_case(format!("tconv1d k{k} s{s} crop{crop}"), vec![x, w, b], move |t, v| {
            t.tconv1d(v[0], v[1], Some(v[2]), s, crop)
        }));
    }
    let x = uniform(rng, &[3, 2, 5], -1.0, 1.0);
    let g = uniform(rng, &[2], 0.5, 1.5);
    let b = uniform(rng, &[2], -0.5, 0.5);
    cases.push(op_case("batch_norm batch", vec![x.clone(), g.clone(), b.clone()], |t, v| {
        Ok(t.batch_norm(v[0], v[1], v[2], NormMode::Batch)?.0)
    }));
    let mut t0 = Tape::new();
    let xv = t0.constant(uniform(rng, &[4, 2, 5], -1.0, 1.0));
    let (gv, bv) = (t0.constant(g.clone()), t0.constant(b.clone()));
    let stats = t0.batch_norm(xv, gv, bv, NormMode::Batch).unwrap().1.unwrap();
    cases.push(op_case("batch_norm running", vec![x, g, b], move |t, v| {
        Ok(t.batch_norm(v[0], v[1], v[2], NormMode::Running(&stats))?.0)
    }));
    cases.push(op_case("leaky_relu", vec![off_zero(rng, &[2, 3, 4])], |t, v| t.leaky_relu(v[0], 0.2)));
    let x = uniform(rng, &[3, 5], -1.0, 1.0);
    let w = uniform(rng, &[4, 5], -1.0, 1.0);
    let b = uniform(rng, &[4], -1.0, 1.0);
    cases.push(op_case("dense", vec![x, w, b], |t, v| t.dense(v[0], v[1], Some(v[2]))));
    cases.push(op_case("softmax", vec![uniform(rng, &[3, 4], -2.0, 2.0)], |t, v| t.softmax(v[0])));
    cases.push(op_case("sigmoid", vec![uniform(rng, &[2, 1, 6], -3.0, 3.0)], |t, v| t.sigmoid(v[0])));
    for axis in 0..3 {
        let a = uniform(rng, &[2, 2, 3], -1.0, 1.0);
        let mut shape = vec![2, 2, 3];
        shape[axis] = 1;
        let b = uniform(rng, &shape, -1.0, 1.0);
        cases.push(op_case(format!("concat axis {axis}"), vec![a, b], move |t, v| t.concat(&[v[0], v[1]], axis)));
    }
    let pair = |rng: &mut ChaCha8Rng| vec![uniform(rng, &[2, 5], -1.0, 1.0), uniform(rng, &[2, 5], -1.0, 1.0)];
    cases.push(op_case("add", pair(rng), |t, v| t.add(v[0], v[1])));
    cases.push(op_case("sub", pair(rng), |t, v| t.sub(v[0], v[1])));
    cases.push(op_case("mul", pair(rng), |t, v| t.mul(v[0], v[1])));
    cases.push(op_case("mse", pair(rng), |t, v| t.mse(v[0], v[1])));
    let one = |rng: &mut ChaCha8Rng| vec![uniform(rng, &[2, 5], -1.0, 1.0)];
    cases.push(op_case("scale", one(rng), |t, v| t.scale(v[0], -1.7)));
    cases.push(op_case("add_scalar", one(rng), |t, v| t.add_scalar(v[0], 0.3)));
    cases.push(op_case("square", one(rng), |t, v| t.square(v[0])));
    cases.push(op_case("sum", one(rng), |t, v| t.sum(v[0])));
    cases.push(op_case("mean", one(rng), |t, v| t.mean(v[0])));
    cases.push(op_case("reshape", one(rng), |t, v| t.reshape(v[0], vec![5, 2])));
    cases.push(op_case("nll", vec![uniform(rng, &[3, 4], -2.0, 2.0)], |t, v| {
        let p = t.softmax(v[0])?;
        t.nll(p, &[0, 3, 1], &[1.0, 1.05, 2.0])
    }));
    let logits = Tensor::new(vec![3, 3], vec![0.9, 0.1, -0.4, 0.2, 1.1, -0.3, -0.5, 0.4, 0.0]).unwrap();
    cases.push(op_case("margin", vec![logits.clone()], |t, v| t.margin(v[0], &[0, 2, 1], -10.0)));
    cases.push(op_case("margin floored", vec![logits], |t, v| t.margin(v[0], &[0, 2, 1], -0.2)));
    cases
}

fn objective_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let w = LossWeights::default();
    vec![
        op_case("tape_adv", vec![uniform(rng, &[4, 1], -2.0, 2.0)], |t, v| tape_adv(t, v[0], -1.0)),
        op_case("tape_atk", vec![uniform(rng, &[4, 2], -2.0, 2.0)], move |t, v| {
            let p = t.softmax(v[0])?;
            tape_atk(t, p, &[0, 1, 1, 0], w.kappa)
        }),
        op_case("tape_ary", vec![uniform(rng, &[4, 3], -2.0, 2.0)], |t, v| {
            let p = t.softmax(v[0])?;
            tape_ary(t, p, &[2, 0, 1, 1])
        }),
        op_case(
            "discriminator_objective",
            vec![
                uniform(rng, &[3, 1], -2.0, 2.0),
                uniform(rng, &[3, 2], -2.0, 2.0),
                uniform(rng, &[3, 4], -2.0, 2.0),
            ],
            |t, v| {
                let attack_probs = t.softmax(v[1])?;
                let class_probs = t.softmax(v[2])?;
                let heads = DiscriminatorHeads {
                    adv: v[0],
                    attack_probs,
                    class_probs,
                    adv_target: 1.0,
                    attack_targets: &[1, 0, 1],
                    labels: &[3, 0, 2],
                };
                Ok(discriminator_objective(t, &heads, &LossWeights::default())?.0)
            },
        ),
    ]
}

/// Inputs are the signal followed by every parameter tensor.
fn block_case<F>(name: &str, params: ParamSet, slots: usize, x: Vec<Tensor>, f: F) -> Case
where
    F: Fn(&mut Forward<'_>, &[Var]) -> Result<Var> + 'static,
{
    let n_in = x.len();
    let mut inputs = x;
    inputs.extend(params.iter().map(|(_, _, t)| t.clone()));
    case(
        name,
        inputs,
        Box::new(move |tape, ts| {
            let mut p = params.clone();
            let ids: Vec<_> = p.iter().map(|(id, _, _)| id).collect();
            for (id, t) in ids.into_iter().zip(&ts[n_in..]) {
                *p.get_mut(id) = t.clone();
            }
            let stats = vec![None; slots];
            let xs: Vec<Var> = ts[..n_in].iter().map(|t| tape.variable(t.clone())).collect();
            let mut fw = Forward::new(tape, &p, &stats, Mode::Train, true);
            let y = f(&mut fw, &xs)?;
            let (bound, _) = fw.finish();
            let mut vars = xs;
            vars.extend_from_slice(bound.vars());
            Ok((y, vars))
        }),
    )
}

fn block_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut cases = Vec::new();
    macro_rules! single {
        ($name:expr, $ty:ident, $cin:expr, $cout:expr, $len:expr) => {{
            let mut init = ChaCha8Rng::seed_from_u64(7);
            let mut b = NetBuilder::new(&mut init);
            let block = $ty::new(&mut b, $name, $cin, $cout);
            let (params, slots) = (b.params, b.norm_slots);
            let x = uniform(rng, &[2, $cin, $len], -1.0, 1.0);
            cases.push(block_case($name, params, slots, vec![x], move |f, v| block.forward(f, v[0])));
        }};
    }
    single!("residual block", ResidualBlock, 2, 3, 8);
    single!("residual block same width", ResidualBlock, 3, 3, 8);
    single!("regular block", RegularBlock, 2, 3, 7);
    single!("downsample block", DownsampleBlock, 2, 3, 9);
    single!("upsample block", UpsampleBlock, 3, 2, 5);
    let mut init = ChaCha8Rng::seed_from_u64(7);
    let mut b = NetBuilder::new(&mut init);
    let sda = SdaBlock::new(&mut b, "sda block", 2, 3);
    let (params, slots) = (b.params, b.norm_slots);
    let enc = uniform(rng, &[2, 2, 8], -1.0, 1.0);
    let dec = uniform(rng, &[2, 3, 8], -1.0, 1.0);
    cases.push(block_case("sda block", params, slots, vec![enc, dec], move |f, v| sda.forward(f, v[0], v[1])));
    cases
}

fn network_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let gcfg = GeneratorConfig {
        classes: 3,
        width: 16,
        channels: [2, 3, 4],
    };
    let g = Generator::new(gcfg, 11).unwrap();
    let noise = uniform(rng, &[2, 1, 16], 0.0, 1.0);
    let signal = uniform(rng, &[2, 1, 16], 0.0, 1.0);
    let gp = g.params().clone();
    let g_inputs: Vec<Tensor> = std::iter::once(signal.clone()).chain(gp.iter().map(|(_, _, t)| t.clone())).collect();
    let generator = case(
        "generator",
        g_inputs,
        Box::new(move |tape, ts| {
            let mut net = g.clone();
            let ids: Vec<_> = net.params().iter().map(|(id, _, _)| id).collect();
            for (id, t) in ids.into_iter().zip(&ts[1..]) {
                *net.params_mut().get_mut(id) = t.clone();
            }
            let x = tape.variable(ts[0].clone());
            let z = tape.constant(noise.clone());
            let pass = net.forward(tape, x, &[0, 2], z, Mode::Train, true)?;
            let mut vars = vec![x];
            vars.extend_from_slice(pass.bound.vars());
            Ok((pass.output, vars))
        }),
    );

    let dcfg = DiscriminatorConfig {
        classes: 3,
        width: 16,
        channels: [2, 3, 4],
    };
    let mut d = Discriminator::new(dcfg, 12).unwrap();
    let warm = uniform(rng, &[4, 1, 16], 0.0, 1.0);
    let mut tape = Tape::new();
    let wv = tape.constant(warm);
    let pass = d.forward(&mut tape, wv, &[0, 1, 2, 0], Mode::Train, false).unwrap();
    d.absorb_stats(pass.stat_updates);
    let mut cases = vec![generator];
    for (name, mode) in [("discriminator train", Mode::Train), ("discriminator infer", Mode::Infer)] {
        let dn = d.clone();
        let inputs: Vec<Tensor> = std::iter::once(signal.clone())
            .chain(dn.params().iter().map(|(_, _, t)| t.clone()))
            .collect();
        cases.push(case(
            name,
            inputs,
            Box::new(move |tape, ts| {
                let mut net = dn.clone();
                let ids: Vec<_> = net.params().iter().map(|(id, _, _)| id).collect();
                for (id, t) in ids.into_iter().zip(&ts[1..]) {
                    *net.params_mut().get_mut(id) = t.clone();
                }
                let x = tape.variable(ts[0].clone());
                let p = net.forward(tape, x, &[1, 2], mode, true)?;
                let heads = tape.concat(&[p.adv, p.attack_probs, p.class_logits, p.class_probs], 1)?;
                let mut vars = vec![x];
                vars.extend_from_slice(p.bound.vars());
                Ok((heads, vars))
            }),
        ));
    }
    cases
}

pub fn all_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut cases = op_cases(&mut rng);
    cases.extend(objective_cases(&mut rng));
    cases.extend(block_cases(&mut rng));
    cases.extend(network_cases(&mut rng));
    cases
}

pub fn run() -> SuiteReport {
    let start = Instant::now();
    let mut report = SuiteReport::default();
    for c in all_cases() {
        check_case(&c, &mut report);
    }
    report.elapsed = start.elapsed();
    report
}
