//! Recording tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and enough saved state to
//! run its vector-Jacobian product. Nodes are only ever appended, so recording
//! order is a topological order and `backward` is a single reverse sweep.

use super::conv::{self, ConvDims, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
        geom: ConvGeom,
    },
    TConv {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
        stride: usize,
        crop: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
        channels: usize,
        len: usize,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        n_in: usize,
        n_out: usize,
    },
    Softmax {
        x: Var,
        width: usize,
    },
    Sigmoid {
        x: Var,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    AddScalar {
        x: Var,
    },
    Square {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Nll {
        probs: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        width: usize,
    },
    Mse {
        a: Var,
        b: Var,
    },
    Margin {
        logits: Var,
        /// Per row: (true class, strongest other class) when the margin is
        /// above the floor, `None` when clamped.
        active: Vec<Option<(usize, usize)>>,
        width: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Batch-norm running statistics read or produced by [`Tape::batch_norm`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub enum NormMode<'a> {
    /// Normalize by batch statistics; the op returns them.
    Batch,
    /// Normalize by stored running statistics.
    Running(&'a ChannelStats),
}

/// Numerical constant added to the variance before the square root.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into `v` by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient of `v`, zeros if `v` was not reached.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        self.grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.value(v).len()])
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor,
        requires_grad: bool,
        op: Op,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        Ok(self.push(value, requires_grad, op))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Views a 2-D `[C, L]` or 3-D `[B, C, L]` value as batched `(B, C, L)`.
    fn bcl(&self, v: Var, what: &str) -> Result<(usize, usize, usize)> {
        match *self.shape(v) {
            [c, l] => Ok((1, c, l)),
            [b, c, l] => Ok((b, c, l)),
            ref s => Err(Error::shape(format!("{what} must be [C, L] or [B, C, L], got {s:?}"))),
        }
    }

    fn out_shape(&self, x: Var, c: usize, l: usize) -> Vec<usize> {
        match self.shape(x).len() {
            2 => vec![c, l],
            _ => vec![self.shape(x)[0], c, l],
        }
    }

    /// 1-D convolution. `x` is `[C_in, L]` or `[B, C_in, L]`, `w` is
    /// `[C_out, C_in, K]`, `b` is `[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (batch, c_in, len_in) = self.bcl(x, "conv1d input")?;
        let &[c_out, wc, kernel] = self.shape(w) else {
            return Err(Error::shape("conv1d weight must be [C_out, C_in, K]"));
        };
        if wc != c_in {
            return Err(Error::shape(format!(
                "conv1d weight expects {wc} input channels, input has {c_in}"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape("conv1d bias must be [C_out]"));
            }
        }
        if geom.stride == 0 || geom.dilation == 0 {
            return Err(Error::invalid("stride and dilation must be >= 1"));
        }
        let len_out = geom.output_len(len_in, kernel).ok_or_else(|| {
            Error::shape(format!(
                "conv1d output would be empty (L={len_in}, K={kernel}, {geom:?})"
            ))
        })?;
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            kernel,
            len_in,
            len_out,
        };
        let y = conv::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            dims,
            geom,
        );
        let shape = self.out_shape(x, c_out, len_out);
        let rg = self.any_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        self.push_checked(
            "conv1d",
            Tensor::new(shape, y)?,
            rg,
            Op::Conv {
                x,
                w,
                b,
                dims,
                geom,
            },
        )
    }

    /// Transposed 1-D convolution. `w` is `[C_in, C_out, K]`; output length is
    /// `(L - 1) * stride + K - 2 * crop`.
    pub fn tconv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        crop: usize,
    ) -> Result<Var> {
        let (batch, c_in, len_in) = self.bcl(x, "tconv1d input")?;
        let &[wc, c_out, kernel] = self.shape(w) else {
            return Err(Error::shape("tconv1d weight must be [C_in, C_out, K]"));
        };
        if wc != c_in {
            return Err(Error::shape(format!(
                "tconv1d weight expects {wc} input channels, input has {c_in}"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape("tconv1d bias must be [C_out]"));
            }
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        let full = (len_in - 1) * stride + kernel;
        if full <= 2 * crop {
            return Err(Error::shape("tconv1d crop removes the whole output"));
        }
        let len_out = full - 2 * crop;
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            kernel,
            len_in,
            len_out,
        };
        let y = conv::tconv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            dims,
            stride,
            crop,
        );
        let shape = self.out_shape(x, c_out, len_out);
        let rg = self.any_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        self.push_checked(
            "tconv1d",
            Tensor::new(shape, y)?,
            rg,
            Op::TConv {
                x,
                w,
                b,
                dims,
                stride,
                crop,
            },
        )
    }

    /// Per-channel batch normalization of a `[B, C, L]` (or `[C, L]`) value.
    /// In [`NormMode::Batch`] the returned statistics hold the batch mean and
    /// unbiased variance, for the caller to fold into its running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_>,
    ) -> Result<(Var, Option<ChannelStats>)> {
        let (batch, channels, len) = self.bcl(x, "batch_norm input")?;
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] {
            return Err(Error::shape("batch_norm scale/shift must be [C]"));
        }
        let n = batch * len;
        let xs = self.value(x).data();
        let (mean, var_biased, stats) = match mode {
            NormMode::Batch => {
                if n < 2 {
                    return Err(Error::invalid(
                        "batch_norm in training mode needs at least 2 values per channel",
                    ));
                }
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for (c, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
                    let mut s = 0.0;
                    for b in 0..batch {
                        let base = (b * channels + c) * len;
                        s += xs[base..base + len].iter().sum::<f64>();
                    }
                    *m = s / n as f64;
                    let mut ss = 0.0;
                    for b in 0..batch {
                        let base = (b * channels + c) * len;
                        ss += xs[base..base + len].iter().map(|v| (v - *m).powi(2)).sum::<f64>();
                    }
                    *v = ss / n as f64;
                }
                let unbiased = var.iter().map(|v| v * n as f64 / (n - 1) as f64).collect();
                let stats = ChannelStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            NormMode::Running(rs) => {
                if rs.mean.len() != channels || rs.var.len() != channels {
                    return Err(Error::shape("running statistics do not match channel count"));
                }
                (rs.mean.clone(), rs.var.clone(), None)
            }
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xs.len()];
        let mut y = vec![0.0; xs.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * len;
                for i in base..base + len {
                    let h = (xs[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    y[i] = g[c] * h + bt[c];
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.any_grad(&[x, gamma, beta]);
        let v = self.push_checked(
            "batch_norm",
            Tensor::new(shape, y)?,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: stats.is_some(),
                channels,
                len,
            },
        )?;
        Ok((v, stats))
    }

    /// `x` for `x >= 0`, `slope * x` otherwise.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let value = self.value(x);
        let y: Vec<f64> = value
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let t = Tensor::new(value.shape().to_vec(), y)?;
        let rg = self.requires_grad(x);
        self.push_checked("leaky_relu", t, rg, Op::LeakyRelu { x, slope })
    }

    /// `y = W x + b` for `x` of shape `[N]` or rows `[B, N]`; `W` is `[M, N]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, n_in, vector) = match *self.shape(x) {
            [n] => (1, n, true),
            [r, n] => (r, n, false),
            ref s => return Err(Error::shape(format!("dense input must be [N] or [B, N], got {s:?}"))),
        };
        let &[n_out, wn] = self.shape(w) else {
            return Err(Error::shape("dense weight must be [M, N]"));
        };
        if wn != n_in {
            return Err(Error::shape(format!(
                "dense weight expects {wn} inputs, got {n_in}"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [n_out] {
                return Err(Error::shape("dense bias must be [M]"));
            }
        }
        let mut y = vec![0.0; rows * n_out];
        conv::gemm(
            rows,
            n_in,
            n_out,
            self.value(x).data(),
            (n_in, 1),
            self.value(w).data(),
            (1, n_in),
            0.0,
            &mut y,
            (n_out, 1),
        );
        if let Some(b) = b {
            let bs = self.value(b).data();
            for row in y.chunks_mut(n_out) {
                row.iter_mut().zip(bs).for_each(|(v, bv)| *v += bv);
            }
        }
        let shape = if vector { vec![n_out] } else { vec![rows, n_out] };
        let rg = self.any_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        self.push_checked(
            "dense",
            Tensor::new(shape, y)?,
            rg,
            Op::Dense {
                x,
                w,
                b,
                rows,
                n_in,
                n_out,
            },
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x);
        let width = *value.shape().last().expect("non-empty shape");
        let mut y = value.data().to_vec();
        for row in y.chunks_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let t = Tensor::new(value.shape().to_vec(), y)?;
        let rg = self.requires_grad(x);
        self.push_checked("softmax", t, rg, Op::Softmax { x, width })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x);
        let y = value.data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::new(value.shape().to_vec(), y)?;
        let rg = self.requires_grad(x);
        self.push_checked("sigmoid", t, rg, Op::Sigmoid { x })
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != base.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i])
            {
                return Err(Error::shape(format!("concat of {base:?} with {s:?}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let chunks: Vec<usize> = inputs.iter().map(|v| self.shape(*v)[axis] * inner).collect();
        let mut y = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &ch) in inputs.iter().zip(&chunks) {
                y.extend_from_slice(&self.value(*v).data()[o * ch..(o + 1) * ch]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(inputs);
        self.push_checked(
            "concat",
            Tensor::new(shape, y)?,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                chunks,
            },
        )
    }

    fn same_shape(&self, a: Var, b: Var, name: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{name}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_op(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let y = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), y)?;
        let rg = self.any_grad(&[a, b]);
        self.push_checked(name, t, rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn map_op(&mut self, x: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(x);
        let y = value.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(value.shape().to_vec(), y)?;
        let rg = self.requires_grad(x);
        self.push_checked(name, t, rg, op)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.map_op(x, "scale", |v| v * factor, Op::Scale { x, factor })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map_op(x, "add_scalar", |v| v + c, Op::AddScalar { x })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.map_op(x, "square", |v| v * v, Op::Square { x })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.requires_grad(x);
        self.push_checked("sum", Tensor::scalar(s), rg, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.requires_grad(x);
        self.push_checked("mean", Tensor::scalar(m), rg, Op::Mean { x })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.requires_grad(x);
        self.push_checked("reshape", t, rg, Op::Reshape { x })
    }

    /// Weighted negative log-likelihood averaged over rows:
    /// `mean_r( -weights[r] * ln(max(probs[r, targets[r]], PROB_FLOOR)) )`.
    pub fn nll(&mut self, probs: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let value = self.value(probs);
        let width = *value.shape().last().expect("non-empty shape");
        let rows = value.len() / width;
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::shape(format!(
                "nll: {rows} rows but {} targets and {} weights",
                targets.len(),
                weights.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= width) {
            return Err(Error::invalid(format!("target {t} out of range for {width} classes")));
        }
        let p = value.data();
        let total: f64 = targets
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(r, (&t, &w))| -w * p[r * width + t].max(PROB_FLOOR).ln())
            .sum();
        let rg = self.requires_grad(probs);
        self.push_checked(
            "nll",
            Tensor::scalar(total / rows as f64),
            rg,
            Op::Nll {
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                width,
            },
        )
    }

    /// Mean squared difference of two equally shaped values.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let n = self.value(a).len();
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        let rg = self.any_grad(&[a, b]);
        self.push_checked("mse", Tensor::scalar(s / n as f64), rg, Op::Mse { a, b })
    }

    /// Per-row margin `max(z[y] - max_{j != y} z[j], -floor)` of a `[B, K]`
    /// logit matrix; returns a `[B]` vector.
    pub fn margin(&mut self, logits: Var, targets: &[usize], floor: f64) -> Result<Var> {
        let value = self.value(logits);
        let width = *value.shape().last().expect("non-empty shape");
        let rows = value.len() / width;
        if width < 2 {
            return Err(Error::invalid("margin needs at least two classes"));
        }
        if targets.len() != rows || targets.iter().any(|&t| t >= width) {
            return Err(Error::invalid("margin targets do not match logits"));
        }
        let z = value.data();
        let mut out = Vec::with_capacity(rows);
        let mut active = Vec::with_capacity(rows);
        for (r, &t) in targets.iter().enumerate() {
            let row = &z[r * width..(r + 1) * width];
            let (j, zj) = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != t)
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, (j, &v)| {
                    if v > acc.1 {
                        (j, v)
                    } else {
                        acc
                    }
                });
            let m = row[t] - zj;
            if m > -floor {
                out.push(m);
                active.push(Some((t, j)));
            } else {
                out.push(-floor);
                active.push(None);
            }
        }
        let rg = self.requires_grad(logits);
        self.push_checked(
            "margin",
            Tensor::from_vec(out),
            rg,
            Op::Margin {
                logits,
                active,
                width,
            },
        )
    }

    /// Reverse sweep from a scalar. Each tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::invalid("backward already run on this tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = node.grad.as_deref() else {
                continue;
            };
            propagate(before, node, g)?;
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn accumulate(nodes: &mut [Node], v: Var, g: &[f64]) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    match node.grad.as_mut() {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => node.grad = Some(g.to_vec()),
    }
}

fn accumulate_with(nodes: &mut [Node], v: Var, f: impl FnOnce(&[f64]) -> Vec<f64>) {
    if nodes[v.0].requires_grad {
        let g = f(nodes[v.0].value.data());
        accumulate(nodes, v, &g);
    }
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn propagate(nodes: &mut [Node], node: &Node, g: &[f64]) -> Result<()> {
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        &Op::Conv {
            x,
            w,
            b,
            dims,
            geom,
        } => {
            let want = (
                wants(nodes, x),
                wants(nodes, w),
                b.is_some_and(|b| wants(nodes, b)),
            );
            let (dx, dw, db) = conv::conv_backward(
                nodes[x.0].value.data(),
                nodes[w.0].value.data(),
                g,
                dims,
                geom,
                want,
            );
            if let Some(dx) = dx {
                accumulate(nodes, x, &dx);
            }
            if let Some(dw) = dw {
                accumulate(nodes, w, &dw);
            }
            if let (Some(b), Some(db)) = (b, db) {
                accumulate(nodes, b, &db);
            }
        }
        &Op::TConv {
            x,
            w,
            b,
            dims,
            stride,
            crop,
        } => {
            let want = (
                wants(nodes, x),
                wants(nodes, w),
                b.is_some_and(|b| wants(nodes, b)),
            );
            let (dx, dw, db) = conv::tconv_backward(
                nodes[x.0].value.data(),
                nodes[w.0].value.data(),
                g,
                dims,
                stride,
                crop,
                want,
            );
            if let Some(dx) = dx {
                accumulate(nodes, x, &dx);
            }
            if let Some(dw) = dw {
                accumulate(nodes, w, &dw);
            }
            if let (Some(b), Some(db)) = (b, db) {
                accumulate(nodes, b, &db);
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
            channels,
            len,
        } => {
            let (x, gamma, beta, channels, len) = (*x, *gamma, *beta, *channels, *len);
            let batch = xhat.len() / (channels * len);
            let n = (batch * len) as f64;
            let mut dgamma = vec![0.0; channels];
            let mut dbeta = vec![0.0; channels];
            for b in 0..batch {
                for c in 0..channels {
                    let base = (b * channels + c) * len;
                    for i in base..base + len {
                        dgamma[c] += g[i] * xhat[i];
                        dbeta[c] += g[i];
                    }
                }
            }
            if wants(nodes, x) {
                let gm = nodes[gamma.0].value.data();
                let mut dx = vec![0.0; g.len()];
                for c in 0..channels {
                    if *batch_stats {
                        // dxhat = g * gamma; sums of dxhat and dxhat*xhat are
                        // gamma * dbeta and gamma * dgamma.
                        let s1 = gm[c] * dbeta[c];
                        let s2 = gm[c] * dgamma[c];
                        for b in 0..batch {
                            let base = (b * channels + c) * len;
                            for i in base..base + len {
                                dx[i] = inv_std[c] / n * (n * g[i] * gm[c] - s1 - xhat[i] * s2);
                            }
                        }
                    } else {
                        for b in 0..batch {
                            let base = (b * channels + c) * len;
                            for i in base..base + len {
                                dx[i] = g[i] * gm[c] * inv_std[c];
                            }
                        }
                    }
                }
                accumulate(nodes, x, &dx);
            }
            accumulate(nodes, gamma, &dgamma);
            accumulate(nodes, beta, &dbeta);
        }
        &Op::LeakyRelu { x, slope } => accumulate_with(nodes, x, |xs| {
            xs.iter()
                .zip(g)
                .map(|(&v, &gv)| if v >= 0.0 { gv } else { slope * gv })
                .collect()
        }),
        &Op::Dense {
            x,
            w,
            b,
            rows,
            n_in,
            n_out,
        } => {
            if wants(nodes, x) {
                let mut dx = vec![0.0; rows * n_in];
                let ws = nodes[w.0].value.data();
                conv::gemm(rows, n_out, n_in, g, (n_out, 1), ws, (n_in, 1), 0.0, &mut dx, (n_in, 1));
                accumulate(nodes, x, &dx);
            }
            if wants(nodes, w) {
                let mut dw = vec![0.0; n_out * n_in];
                let xs = nodes[x.0].value.data();
                conv::gemm(n_out, rows, n_in, g, (1, n_out), xs, (n_in, 1), 0.0, &mut dw, (n_in, 1));
                accumulate(nodes, w, &dw);
            }
            if let Some(b) = b {
                if wants(nodes, b) {
                    let mut db = vec![0.0; n_out];
                    for r in 0..rows {
                        for m in 0..n_out {
                            db[m] += g[r * n_out + m];
                        }
                    }
                    accumulate(nodes, b, &db);
                }
            }
        }
        &Op::Softmax { x, width } => {
            if wants(nodes, x) {
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx
                    .chunks_mut(width)
                    .zip(y.chunks(width))
                    .zip(g.chunks(width))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                accumulate(nodes, x, &dx);
            }
        }
        &Op::Sigmoid { x } => {
            if wants(nodes, x) {
                let dx: Vec<f64> = y.iter().zip(g).map(|(s, gv)| gv * s * (1.0 - s)).collect();
                accumulate(nodes, x, &dx);
            }
        }
        Op::Concat {
            inputs,
            outer,
            chunks,
        } => {
            let row: usize = chunks.iter().sum();
            let mut start = 0;
            for (v, &ch) in inputs.iter().zip(chunks) {
                if wants(nodes, *v) {
                    let mut dv = Vec::with_capacity(outer * ch);
                    for o in 0..*outer {
                        dv.extend_from_slice(&g[o * row + start..o * row + start + ch]);
                    }
                    accumulate(nodes, *v, &dv);
                }
                start += ch;
            }
        }
        &Op::Add { a, b } => {
            accumulate(nodes, a, g);
            accumulate(nodes, b, g);
        }
        &Op::Sub { a, b } => {
            accumulate(nodes, a, g);
            accumulate_with(nodes, b, |_| g.iter().map(|v| -v).collect());
        }
        &Op::Mul { a, b } => {
            let bv = nodes[b.0].value.data().to_vec();
            accumulate_with(nodes, a, |_| g.iter().zip(&bv).map(|(x, y)| x * y).collect());
            let av = nodes[a.0].value.data().to_vec();
            accumulate_with(nodes, b, |_| g.iter().zip(&av).map(|(x, y)| x * y).collect());
        }
        &Op::Scale { x, factor } => {
            accumulate_with(nodes, x, |_| g.iter().map(|v| v * factor).collect())
        }
        &Op::AddScalar { x } | &Op::Reshape { x } => accumulate(nodes, x, g),
        &Op::Square { x } => accumulate_with(nodes, x, |xs| {
            xs.iter().zip(g).map(|(v, gv)| 2.0 * v * gv).collect()
        }),
        &Op::Sum { x } => accumulate_with(nodes, x, |xs| vec![g[0]; xs.len()]),
        &Op::Mean { x } => {
            accumulate_with(nodes, x, |xs| vec![g[0] / xs.len() as f64; xs.len()])
        }
        Op::Nll {
            probs,
            targets,
            weights,
            width,
        } => accumulate_with(nodes, *probs, |p| {
            let rows = targets.len() as f64;
            let mut d = vec![0.0; p.len()];
            for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                let pv = p[r * width + t];
                if pv > PROB_FLOOR {
                    d[r * width + t] = -g[0] * w / (pv * rows);
                }
            }
            d
        }),
        &Op::Mse { a, b } => {
            let n = node_len(nodes, a) as f64;
            let diff: Vec<f64> = nodes[a.0]
                .value
                .data()
                .iter()
                .zip(nodes[b.0].value.data())
                .map(|(x, y)| 2.0 * (x - y) / n * g[0])
                .collect();
            accumulate(nodes, a, &diff);
            accumulate_with(nodes, b, |_| diff.iter().map(|v| -v).collect());
        }
        Op::Margin {
            logits,
            active,
            width,
        } => accumulate_with(nodes, *logits, |z| {
            let mut d = vec![0.0; z.len()];
            for (r, a) in active.iter().enumerate() {
                if let Some((t, j)) = *a {
                    d[r * width + t] += g[r];
                    d[r * width + j] -= g[r];
                }
            }
            d
        }),
    }
    Ok(())
}

fn node_len(nodes: &[Node], v: Var) -> usize {
    nodes[v.0].value.len()
}
