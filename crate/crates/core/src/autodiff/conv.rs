//! Raw 1-D convolution kernels over batched `[B, C, L]` buffers.
//!
//! Both directions lower to GEMM over an im2col buffer, one batch element at
//! a time. The tape owns the bookkeeping; these only move numbers.

/// Stride, dilation and (possibly asymmetric) zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        ConvGeom {
            stride,
            dilation,
            pad_left: padding,
            pad_right: padding,
        }
    }

    pub fn asymmetric(stride: usize, dilation: usize, pad_left: usize, pad_right: usize) -> Self {
        ConvGeom {
            stride,
            dilation,
            pad_left,
            pad_right,
        }
    }

    /// Output length, or `None` when the padded input is shorter than the
    /// dilated kernel span.
    pub fn output_len(&self, len: usize, kernel: usize) -> Option<usize> {
        if self.stride == 0 || self.dilation == 0 || kernel == 0 {
            return None;
        }
        let span = self.dilation * (kernel - 1) + 1;
        let total = len + self.pad_left + self.pad_right;
        (total >= span).then(|| (total - span) / self.stride + 1)
    }
}

/// Range of `small` indices with `0 <= small * stride + offset < n_big`.
#[inline]
fn strided_range(n_small: usize, n_big: usize, stride: usize, offset: isize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    let top = n_big as isize - 1 - offset;
    let hi = if top < 0 {
        0
    } else {
        (top as usize / stride + 1).min(n_small)
    };
    (lo, hi.max(lo))
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub len_in: usize,
    pub len_out: usize,
}

type Grads = (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>);

fn bias_grad(dy: &[f64], batch: usize, c_out: usize, len: usize) -> Vec<f64> {
    let mut db = vec![0.0; c_out];
    for b in 0..batch {
        for (o, dbo) in db.iter_mut().enumerate() {
            let base = (b * c_out + o) * len;
            *dbo += dy[base..base + len].iter().sum::<f64>();
        }
    }
    db
}

/// `col[(c*K + k), i] = x[c, i*s + k*d - pad_left]`, zero outside the input.
fn im2col(x: &[f64], col: &mut [f64], dims: ConvDims, geom: ConvGeom) {
    let n = dims.len_out;
    for c in 0..dims.c_in {
        let xr = &x[c * dims.len_in..(c + 1) * dims.len_in];
        for k in 0..dims.kernel {
            let row = &mut col[(c * dims.kernel + k) * n..(c * dims.kernel + k + 1) * n];
            let off = (k * geom.dilation) as isize - geom.pad_left as isize;
            let (lo, hi) = strided_range(n, dims.len_in, geom.stride, off);
            row[..lo].fill(0.0);
            row[hi..].fill(0.0);
            let start = (lo as isize * geom.stride as isize + off) as usize;
            for (j, v) in row[lo..hi].iter_mut().enumerate() {
                *v = xr[start + j * geom.stride];
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` back into `dx`.
fn col2im(col: &[f64], dx: &mut [f64], dims: ConvDims, geom: ConvGeom) {
    let n = dims.len_out;
    for c in 0..dims.c_in {
        let xr = &mut dx[c * dims.len_in..(c + 1) * dims.len_in];
        for k in 0..dims.kernel {
            let row = &col[(c * dims.kernel + k) * n..(c * dims.kernel + k + 1) * n];
            let off = (k * geom.dilation) as isize - geom.pad_left as isize;
            let (lo, hi) = strided_range(n, dims.len_in, geom.stride, off);
            let start = (lo as isize * geom.stride as isize + off) as usize;
            for (j, v) in row[lo..hi].iter().enumerate() {
                xr[start + j * geom.stride] += v;
            }
        }
    }
}

/// `y[b,o,i] = bias[o] + sum_{c,k} w[o,c,k] * x[b,c,i*s + k*d - pad_left]`
pub(crate) fn conv_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    dims: ConvDims,
    geom: ConvGeom,
) -> Vec<f64> {
    let ck = dims.c_in * dims.kernel;
    let n = dims.len_out;
    let mut y = vec![0.0; dims.batch * dims.c_out * n];
    let mut col = vec![0.0; ck * n];
    for b in 0..dims.batch {
        let xb = &x[b * dims.c_in * dims.len_in..(b + 1) * dims.c_in * dims.len_in];
        im2col(xb, &mut col, dims, geom);
        let yb = &mut y[b * dims.c_out * n..(b + 1) * dims.c_out * n];
        gemm(dims.c_out, ck, n, w, (ck, 1), &col, (n, 1), 0.0, yb, (n, 1));
        if let Some(bias) = bias {
            for (row, &bv) in yb.chunks_mut(n).zip(bias) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    y
}

/// Gradients of [`conv_forward`] given the upstream gradient `dy`.
/// Returns `(dx, dw, dbias)`, each only when requested.
pub(crate) fn conv_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dims: ConvDims,
    geom: ConvGeom,
    want: (bool, bool, bool),
) -> Grads {
    let ck = dims.c_in * dims.kernel;
    let n = dims.len_out;
    let in_len = dims.c_in * dims.len_in;
    let mut dx = want.0.then(|| vec![0.0; x.len()]);
    let mut dw = want.1.then(|| vec![0.0; w.len()]);
    let db = want.2.then(|| bias_grad(dy, dims.batch, dims.c_out, n));
    let mut col = vec![0.0; ck * n];
    for b in 0..dims.batch {
        let dyb = &dy[b * dims.c_out * n..(b + 1) * dims.c_out * n];
        if let Some(dw) = dw.as_mut() {
            im2col(&x[b * in_len..(b + 1) * in_len], &mut col, dims, geom);
            gemm(dims.c_out, n, ck, dyb, (n, 1), &col, (1, n), 1.0, dw, (ck, 1));
        }
        if let Some(dx) = dx.as_mut() {
            gemm(ck, dims.c_out, n, w, (1, ck), dyb, (n, 1), 0.0, &mut col, (n, 1));
            col2im(&col, &mut dx[b * in_len..(b + 1) * in_len], dims, geom);
        }
    }
    (dx, dw, db)
}

/// Transposed convolution (scatter form):
/// `y[b,o,i*s + k - crop] += x[b,c,i] * w[c,o,k]`, plus bias.
pub(crate) fn tconv_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    dims: ConvDims,
    stride: usize,
    crop: usize,
) -> Vec<f64> {
    let ok = dims.c_out * dims.kernel;
    let (n_in, n_out) = (dims.len_in, dims.len_out);
    let mut y = vec![0.0; dims.batch * dims.c_out * n_out];
    let mut col = vec![0.0; ok * n_in];
    for b in 0..dims.batch {
        let xb = &x[b * dims.c_in * n_in..(b + 1) * dims.c_in * n_in];
        gemm(ok, dims.c_in, n_in, w, (1, ok), xb, (n_in, 1), 0.0, &mut col, (n_in, 1));
        let yb = &mut y[b * dims.c_out * n_out..(b + 1) * dims.c_out * n_out];
        for o in 0..dims.c_out {
            let yr = &mut yb[o * n_out..(o + 1) * n_out];
            if let Some(bias) = bias {
                yr.fill(bias[o]);
            }
            for k in 0..dims.kernel {
                let cr = &col[(o * dims.kernel + k) * n_in..(o * dims.kernel + k + 1) * n_in];
                let off = k as isize - crop as isize;
                let (lo, hi) = strided_range(n_in, n_out, stride, off);
                for i in lo..hi {
                    yr[(i as isize * stride as isize + off) as usize] += cr[i];
                }
            }
        }
    }
    y
}

pub(crate) fn tconv_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dims: ConvDims,
    stride: usize,
    crop: usize,
    want: (bool, bool, bool),
) -> Grads {
    let ok = dims.c_out * dims.kernel;
    let (n_in, n_out) = (dims.len_in, dims.len_out);
    let in_len = dims.c_in * n_in;
    let mut dx = want.0.then(|| vec![0.0; x.len()]);
    let mut dw = want.1.then(|| vec![0.0; w.len()]);
    let db = want.2.then(|| bias_grad(dy, dims.batch, dims.c_out, n_out));
    if dx.is_none() && dw.is_none() {
        return (dx, dw, db);
    }
    let mut col = vec![0.0; ok * n_in];
    for b in 0..dims.batch {
        let dyb = &dy[b * dims.c_out * n_out..(b + 1) * dims.c_out * n_out];
        for o in 0..dims.c_out {
            let dr = &dyb[o * n_out..(o + 1) * n_out];
            for k in 0..dims.kernel {
                let cr = &mut col[(o * dims.kernel + k) * n_in..(o * dims.kernel + k + 1) * n_in];
                let off = k as isize - crop as isize;
                let (lo, hi) = strided_range(n_in, n_out, stride, off);
                cr[..lo].fill(0.0);
                cr[hi..].fill(0.0);
                for i in lo..hi {
                    cr[i] = dr[(i as isize * stride as isize + off) as usize];
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            gemm(dims.c_in, ok, n_in, w, (ok, 1), &col, (n_in, 1), 0.0, dxb, (n_in, 1));
        }
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * in_len..(b + 1) * in_len];
            gemm(dims.c_in, n_in, ok, xb, (n_in, 1), &col, (1, n_in), 1.0, dw, (ok, 1));
        }
    }
    (dx, dw, db)
}

/// `c = a * b + beta * c` for `(m x k) * (k x n)` operands given as
/// `(row stride, column stride)` views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: output view out of bounds");
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(last(m, k, rsa, csa) < a.len(), "gemm: left operand out of bounds");
    assert!(last(k, n, rsb, csb) < b.len(), "gemm: right operand out of bounds");
    // SAFETY: the asserts above keep every strided access inside its slice,
    // and `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}
