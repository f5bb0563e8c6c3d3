//! Direct-loop oracles for conv1d / tconv1d and dot-product adjoint tests.

#![allow(dead_code)]

use ecg_robust::autodiff::{ConvGeom, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ORACLE_TOL: f64 = 1e-12;
pub const ADJOINT_TOL: f64 = 1e-10;

#[derive(Debug, Default)]
pub struct OracleReport {
    pub conv_cases: usize,
    pub tconv_cases: usize,
    pub adjoint_cases: usize,
    pub max_oracle_err: f64,
    pub max_adjoint_err: f64,
    pub failures: Vec<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.conv_cases + self.tconv_cases >= 200
    }
}

pub struct ConvCase {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
    pub geom: ConvGeom,
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn naive_conv(x: &[f64], w: &[f64], bias: &[f64], c: &ConvCase) -> (Vec<f64>, usize) {
    let g = c.geom;
    let span = g.dilation * (c.kernel - 1) + 1;
    let lo = (c.len + g.pad_left + g.pad_right - span) / g.stride + 1;
    let mut y = vec![0.0; c.batch * c.c_out * lo];
    for b in 0..c.batch {
        for o in 0..c.c_out {
            for i in 0..lo {
                let mut acc = bias[o];
                for ci in 0..c.c_in {
                    for k in 0..c.kernel {
                        let pos = (i * g.stride + k * g.dilation) as isize - g.pad_left as isize;
                        if pos >= 0 && (pos as usize) < c.len {
                            acc += w[(o * c.c_in + ci) * c.kernel + k] * x[(b * c.c_in + ci) * c.len + pos as usize];
                        }
                    }
                }
                y[(b * c.c_out + o) * lo + i] = acc;
            }
        }
    }
    (y, lo)
}

/// `w` is `[C_in, C_out, K]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_tconv(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    batch: usize,
    c_in: usize,
    c_out: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    crop: usize,
) -> (Vec<f64>, usize) {
    let full = (len - 1) * stride + kernel;
    let lo = full - 2 * crop;
    let mut y = vec![0.0; batch * c_out * lo];
    for b in 0..batch {
        for o in 0..c_out {
            for j in 0..lo {
                y[(b * c_out + o) * lo + j] = bias[o];
            }
            for ci in 0..c_in {
                for i in 0..len {
                    for k in 0..kernel {
                        let pos = (i * stride + k) as isize - crop as isize;
                        if pos >= 0 && (pos as usize) < lo {
                            y[(b * c_out + o) * lo + pos as usize] +=
                                x[(b * c_in + ci) * len + i] * w[(ci * c_out + o) * kernel + k];
                        }
                    }
                }
            }
        }
    }
    (y, lo)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn random_conv_case(rng: &mut ChaCha8Rng) -> ConvCase {
    loop {
        let kernel = rng.random_range(1..=5);
        let geom = ConvGeom::asymmetric(
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(0..=3),
            rng.random_range(0..=3),
        );
        let c = ConvCase {
            batch: rng.random_range(1..=3),
            c_in: rng.random_range(1..=4),
            c_out: rng.random_range(1..=4),
            len: rng.random_range(1..=24),
            kernel,
            geom,
        };
        if geom.output_len(c.len, kernel).is_some() {
            return c;
        }
    }
}

fn check_conv(rng: &mut ChaCha8Rng, r: &mut OracleReport) {
    let c = random_conv_case(rng);
    let x = rand_vec(rng, c.batch * c.c_in * c.len);
    let w = rand_vec(rng, c.c_out * c.c_in * c.kernel);
    let bias = rand_vec(rng, c.c_out);
    let (want, lo) = naive_conv(&x, &w, &bias, &c);
    let mut tape = Tape::new();
    let xv = tape.variable(Tensor::new(vec![c.batch, c.c_in, c.len], x.clone()).unwrap());
    let wv = tape.variable(Tensor::new(vec![c.c_out, c.c_in, c.kernel], w.clone()).unwrap());
    let bv = tape.constant(Tensor::from_vec(bias));
    let y = tape.conv1d(xv, wv, Some(bv), c.geom).unwrap();
    assert_eq!(tape.shape(y), [c.batch, c.c_out, lo]);
    let err = max_abs_diff(tape.value(y).data(), &want);
    r.max_oracle_err = r.max_oracle_err.max(err);
    if err > ORACLE_TOL {
        r.failures.push(format!("conv1d {:?} len {} k {}: err {err:e}", c.geom, c.len, c.kernel));
    }
    r.conv_cases += 1;

    let nobias = vec![0.0; c.c_out];
    let (y0, _) = naive_conv(&x, &w, &nobias, &c);
    let u = rand_vec(rng, y0.len());
    let mut tape = Tape::new();
    let xv = tape.variable(Tensor::new(vec![c.batch, c.c_in, c.len], x.clone()).unwrap());
    let wv = tape.variable(Tensor::new(vec![c.c_out, c.c_in, c.kernel], w.clone()).unwrap());
    let y = tape.conv1d(xv, wv, None, c.geom).unwrap();
    let uv = tape.constant(Tensor::new(vec![c.batch, c.c_out, lo], u.clone()).unwrap());
    let p = tape.mul(y, uv).unwrap();
    let s = tape.sum(p).unwrap();
    tape.backward(s).unwrap();
    let lhs = dot(&y0, &u);
    for (name, grad, primal) in [("x", tape.grad_or_zeros(xv), &x), ("w", tape.grad_or_zeros(wv), &w)] {
        let e = rel(lhs, dot(primal, &grad));
        r.max_adjoint_err = r.max_adjoint_err.max(e);
        if e > ADJOINT_TOL {
            r.failures.push(format!("conv1d adjoint in {name}: rel {e:e}"));
        }
    }
    r.adjoint_cases += 1;
}

fn check_tconv(rng: &mut ChaCha8Rng, r: &mut OracleReport) {
    let (batch, c_in, c_out) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4));
    let len = rng.random_range(1..=12);
    let kernel = rng.random_range(1..=5);
    let stride = rng.random_range(1..=3);
    let full = (len - 1) * stride + kernel;
    let crop = rng.random_range(0..=(full - 1) / 2);
    let x = rand_vec(rng, batch * c_in * len);
    let w = rand_vec(rng, c_in * c_out * kernel);
    let bias = rand_vec(rng, c_out);
    let (want, lo) = naive_tconv(&x, &w, &bias, batch, c_in, c_out, len, kernel, stride, crop);
    let mut tape = Tape::new();
    let xv = tape.variable(Tensor::new(vec![batch, c_in, len], x.clone()).unwrap());
    let wv = tape.variable(Tensor::new(vec![c_in, c_out, kernel], w.clone()).unwrap());
    let bv = tape.constant(Tensor::from_vec(bias));
    let y = tape.tconv1d(xv, wv, Some(bv), stride, crop).unwrap();
    assert_eq!(tape.shape(y), [batch, c_out, lo]);
    let err = max_abs_diff(tape.value(y).data(), &want);
    r.max_oracle_err = r.max_oracle_err.max(err);
    if err > ORACLE_TOL {
        r.failures.push(format!("tconv1d len {len} k {kernel} s {stride} crop {crop}: err {err:e}"));
    }
    r.tconv_cases += 1;

    let nobias = vec![0.0; c_out];
    let (y0, _) = naive_tconv(&x, &w, &nobias, batch, c_in, c_out, len, kernel, stride, crop);
    let u = rand_vec(rng, y0.len());
    let mut tape = Tape::new();
    let xv = tape.variable(Tensor::new(vec![batch, c_in, len], x.clone()).unwrap());
    let wv = tape.variable(Tensor::new(vec![c_in, c_out, kernel], w.clone()).unwrap());
    let y = tape.tconv1d(xv, wv, None, stride, crop).unwrap();
    let uv = tape.constant(Tensor::new(vec![batch, c_out, lo], u.clone()).unwrap());
    let p = tape.mul(y, uv).unwrap();
    let s = tape.sum(p).unwrap();
    tape.backward(s).unwrap();
    let lhs = dot(&y0, &u);
    for (name, grad, primal) in [("x", tape.grad_or_zeros(xv), &x), ("w", tape.grad_or_zeros(wv), &w)] {
        let e = rel(lhs, dot(primal, &grad));
        r.max_adjoint_err = r.max_adjoint_err.max(e);
        if e > ADJOINT_TOL {
            r.failures.push(format!("tconv1d adjoint in {name}: rel {e:e}"));
        }
    }
    r.adjoint_cases += 1;
}

/// `<conv(x), y> = <x, tconv(y)>` with the same weight buffer, when the
/// strided conv covers its input exactly.
fn check_cross_adjoint(rng: &mut ChaCha8Rng, r: &mut OracleReport) {
    let (batch, c_in, c_out) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4));
    let kernel = rng.random_range(1..=5);
    let stride = rng.random_range(1..=3);
    let lo = rng.random_range(1..=8);
    let len = (lo - 1) * stride + kernel;
    let x = rand_vec(rng, batch * c_in * len);
    let y = rand_vec(rng, batch * c_out * lo);
    let w = rand_vec(rng, c_out * c_in * kernel);
    let c = ConvCase {
        batch,
        c_in,
        c_out,
        len,
        kernel,
        geom: ConvGeom::new(stride, 1, 0),
    };
    let (cx, _) = naive_conv(&x, &w, &vec![0.0; c_out], &c);
    let mut tape = Tape::new();
    let yv = tape.constant(Tensor::new(vec![batch, c_out, lo], y.clone()).unwrap());
    let wv = tape.constant(Tensor::new(vec![c_out, c_in, kernel], w).unwrap());
    let ty = tape.tconv1d(yv, wv, None, stride, 0).unwrap();
    let e = rel(dot(&cx, &y), dot(&x, tape.value(ty).data()));
    r.max_adjoint_err = r.max_adjoint_err.max(e);
    if e > ADJOINT_TOL {
        r.failures.push(format!("conv/tconv cross adjoint: rel {e:e}"));
    }
    r.adjoint_cases += 1;
}

pub fn run(cases: usize) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut r = OracleReport::default();
    for _ in 0..cases {
        check_conv(&mut rng, &mut r);
        check_tconv(&mut rng, &mut r);
        check_cross_adjoint(&mut rng, &mut r);
    }
    r
}
