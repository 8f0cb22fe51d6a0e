//! Pure tensor kernels. None of these count FLOPs; [`super::Ctx`] wraps them
//! with accounting for instrumented runs.

use rayon::prelude::*;

use super::{ExecMode, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

fn finish(op: &'static str, mut t: Tensor) -> Result<Tensor> {
    t.settle();
    t.check_finite(op)?;
    Ok(t)
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::dim(
            op,
            format!("expected a matrix, got shape {:?}", t.shape()),
        ));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// Matrix product in deterministic mode.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_with(a, b, ExecMode::Deterministic)
}

/// Matrix product `a · b`.
///
/// Deterministic mode accumulates every output element in increasing inner
/// index order on one thread, which reproduces a textbook triple loop bit for
/// bit. Performance mode splits rows across threads and uses two partial
/// accumulators per element.
pub fn matmul_with(a: &Tensor, b: &Tensor, mode: ExecMode) -> Result<Tensor> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::dim(
            "matmul",
            format!("inner extents differ: {:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    if a.dtype() != b.dtype() {
        return Err(Error::dim(
            "matmul",
            format!("dtype mismatch: {:?} x {:?}", a.dtype(), b.dtype()),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    match mode {
        ExecMode::Deterministic => {
            for (i, row) in out.chunks_mut(n).enumerate() {
                let arow = &ad[i * k..(i + 1) * k];
                for (p, &aip) in arow.iter().enumerate() {
                    let brow = &bd[p * n..(p + 1) * n];
                    for (c, &bv) in row.iter_mut().zip(brow) {
                        *c += aip * bv;
                    }
                }
            }
        }
        ExecMode::Performance => {
            let half = k / 2;
            out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                let arow = &ad[i * k..(i + 1) * k];
                let mut hi = vec![0.0; n];
                for (p, &aip) in arow.iter().enumerate() {
                    let brow = &bd[p * n..(p + 1) * n];
                    let acc = if p < half { &mut row[..] } else { &mut hi[..] };
                    for (c, &bv) in acc.iter_mut().zip(brow) {
                        *c += aip * bv;
                    }
                }
                for (c, h) in row.iter_mut().zip(hi) {
                    *c += h;
                }
            });
        }
    }
    finish("matmul", Tensor::from_parts(vec![m, n], a.dtype(), out))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(a: &Tensor) -> Result<Tensor> {
    let (_, n) = require_matrix("softmax_rows", a)?;
    a.check_finite("softmax_rows")?;
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    finish(
        "softmax_rows",
        Tensor::from_parts(a.shape().to_vec(), a.dtype(), out),
    )
}

/// Logistic function evaluated without overflow for either sign.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Result<Tensor> {
    map("sigmoid", a, sigmoid_scalar)
}

pub fn relu(a: &Tensor) -> Result<Tensor> {
    map("relu", a, |x| x.max(0.0))
}

pub fn negate(a: &Tensor) -> Result<Tensor> {
    map("negate", a, |x| -x)
}

pub fn scale(a: &Tensor, s: f64) -> Result<Tensor> {
    map("scale", a, |x| x * s)
}

fn map(op: &'static str, a: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    let out = a.data().iter().map(|&x| f(x)).collect();
    finish(op, Tensor::from_parts(a.shape().to_vec(), a.dtype(), out))
}

/// Elementwise binary op on identically shaped tensors.
pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "elementwise",
            format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let f: fn(f64, f64) -> f64 = match op {
        ElementwiseOp::Add => |x, y| x + y,
        ElementwiseOp::Sub => |x, y| x - y,
        ElementwiseOp::Mul => |x, y| x * y,
    };
    let out = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    finish(
        "elementwise",
        Tensor::from_parts(a.shape().to_vec(), a.dtype(), out),
    )
}

/// The one broadcast the crate allows: a length-`n` vector applied to every
/// row of an `m×n` matrix (bias addition, `v ⊙ c` across a batch of rows).
pub fn elementwise_rows(op: ElementwiseOp, a: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (_, n) = require_matrix("elementwise_rows", a)?;
    if v.numel() != n {
        return Err(Error::dim(
            "elementwise_rows",
            format!(
                "vector of length {} cannot broadcast over rows of {:?}",
                v.numel(),
                a.shape()
            ),
        ));
    }
    let vd = v.data();
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(n) {
        for (x, &y) in row.iter_mut().zip(vd) {
            *x = match op {
                ElementwiseOp::Add => *x + y,
                ElementwiseOp::Sub => *x - y,
                ElementwiseOp::Mul => *x * y,
            };
        }
    }
    finish(
        "elementwise_rows",
        Tensor::from_parts(a.shape().to_vec(), a.dtype(), out),
    )
}

/// Output extent of a valid (unpadded) convolution along one axis.
pub fn conv_out_len(n: usize, kernel: usize, stride: usize) -> Option<usize> {
    if n < kernel {
        None
    } else {
        Some((n - kernel) / stride + 1)
    }
}

fn conv_shapes(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<[usize; 8]> {
    if input.rank() != 3 || kernels.rank() != 4 {
        return Err(Error::dim(
            "conv2d",
            format!(
                "expected C×T×F input and O×C×kh×kw kernels, got {:?} and {:?}",
                input.shape(),
                kernels.shape()
            ),
        ));
    }
    let (cin, t, f) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (cout, kc, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    if kc != cin {
        return Err(Error::dim(
            "conv2d",
            format!("kernel expects {kc} input channels, input has {cin}"),
        ));
    }
    let (Some(to), Some(fo)) = (conv_out_len(t, kh, stride), conv_out_len(f, kw, stride)) else {
        return Err(Error::dim(
            "conv2d",
            format!("input {t}×{f} is smaller than the {kh}×{kw} kernel"),
        ));
    };
    Ok([cin, t, f, cout, kh, kw, to, fo])
}

/// Valid cross-correlation of a `C_in×T×F` input with `C_out×C_in×kh×kw`
/// kernels. With the 3×3 kernels and stride 2 used by the encoder, the output
/// is `C_out×⌊(T−1)/2⌋×⌊(F−1)/2⌋`.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
    let [cin, t, f, cout, kh, kw, to, fo] = conv_shapes(input, kernels, stride)?;
    let (x, w) = (input.data(), kernels.data());
    let mut out = vec![0.0; cout * to * fo];
    for o in 0..cout {
        for i in 0..to {
            for j in 0..fo {
                let mut acc = 0.0;
                for c in 0..cin {
                    for a in 0..kh {
                        let xrow = (c * t + i * stride + a) * f + j * stride;
                        let wrow = ((o * cin + c) * kh + a) * kw;
                        for b in 0..kw {
                            acc += w[wrow + b] * x[xrow + b];
                        }
                    }
                }
                out[(o * to + i) * fo + j] = acc;
            }
        }
    }
    finish(
        "conv2d",
        Tensor::from_parts(vec![cout, to, fo], input.dtype(), out),
    )
}

/// Gradients of `conv2d` with respect to its input and kernels.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let [cin, t, f, cout, kh, kw, to, fo] = conv_shapes(input, kernels, stride)?;
    if grad_out.shape() != [cout, to, fo] {
        return Err(Error::dim(
            "conv2d_backward",
            format!(
                "gradient shape {:?} does not match output {:?}",
                grad_out.shape(),
                [cout, to, fo]
            ),
        ));
    }
    let (x, w, g) = (input.data(), kernels.data(), grad_out.data());
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    for o in 0..cout {
        for i in 0..to {
            for j in 0..fo {
                let go = g[(o * to + i) * fo + j];
                for c in 0..cin {
                    for a in 0..kh {
                        let xrow = (c * t + i * stride + a) * f + j * stride;
                        let wrow = ((o * cin + c) * kh + a) * kw;
                        for b in 0..kw {
                            gw[wrow + b] += go * x[xrow + b];
                            gx[xrow + b] += go * w[wrow + b];
                        }
                    }
                }
            }
        }
    }
    Ok((
        finish(
            "conv2d_backward",
            Tensor::from_parts(input.shape().to_vec(), input.dtype(), gx),
        )?,
        finish(
            "conv2d_backward",
            Tensor::from_parts(kernels.shape().to_vec(), kernels.dtype(), gw),
        )?,
    ))
}
