//! SRU++: the SRU recurrence fed by a single-head self-attention block
//! instead of a plain linear projection.
//!
//! For an input `X` of shape `L×d` (optionally layer-normalized first):
//!
//! ```text
//! Q = Wq·Xᵀ          K = Wk·Q          V = Wv·Q
//! Aᵀ = softmax(QᵀK / √d′)·Vᵀ
//! Uᵀ = Wo·(Q + α·A)
//! ```
//!
//! `U` then drives the unchanged elementwise recurrence of [`crate::sru`].
//! There is no positional encoding and no mask; order information comes only
//! from the recurrence.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::sru::{
    recurrence, recurrence_backward, Direction, RecurrenceParams, RecurrenceTape, SruState,
};
use crate::tensor::ops::ElementwiseOp;
use crate::tensor::{Ctx, DType, SeededRng, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Feature-axis layer normalization applied to the attention input.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNormParams {
    pub fn new(width: usize) -> Self {
        LayerNormParams {
            gain: Tensor::ones(&[width]),
            bias: Tensor::zeros(&[width]),
        }
    }
}

impl Parameters for LayerNormParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "gain"), &self.gain);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "gain"), &mut self.gain);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(ctx: &Ctx, p: &LayerNormParams, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let (rows, n) = (x.rows(), x.cols());
    if p.gain.numel() != n {
        return Err(Error::dim(
            "layer_norm",
            format!(
                "normalizing width {} with parameters of width {n}",
                p.gain.numel()
            ),
        ));
    }
    let dt = x.dtype();
    let (g, b) = (p.gain.data(), p.bias.data());
    let mut x_hat = vec![0.0; rows * n];
    let mut y = vec![0.0; rows * n];
    let mut inv_std = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        for j in 0..n {
            let xh = dt.round((row[j] - mean) * inv);
            x_hat[i * n + j] = xh;
            y[i * n + j] = dt.round(xh * g[j] + b[j]);
        }
    }
    // Per element: mean sum, subtract, square, variance sum, scale, gain, bias.
    // Per row: epsilon add and reciprocal square root.
    ctx.tally((7 * rows * n + 2 * rows) as u64);
    let y = Tensor::from_parts(vec![rows, n], dt, y);
    y.check_finite("layer_norm")?;
    Ok((
        y,
        LayerNormCache {
            x_hat: Tensor::from_parts(vec![rows, n], dt, x_hat),
            inv_std,
        },
    ))
}

pub fn layer_norm_backward(
    p: &LayerNormParams,
    cache: &LayerNormCache,
    grad_y: &Tensor,
) -> (Tensor, LayerNormParams) {
    let (rows, n) = (grad_y.rows(), grad_y.cols());
    let g = p.gain.data();
    let xh = cache.x_hat.data();
    let gy = grad_y.data();
    let mut dx = vec![0.0; rows * n];
    let mut dg = vec![0.0; n];
    let mut db = vec![0.0; n];
    for i in 0..rows {
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for j in 0..n {
            let k = i * n + j;
            let d = gy[k] * g[j];
            mean_d += d;
            mean_dx += d * xh[k];
            dg[j] += gy[k] * xh[k];
            db[j] += gy[k];
        }
        mean_d /= n as f64;
        mean_dx /= n as f64;
        for j in 0..n {
            let k = i * n + j;
            dx[k] = cache.inv_std[i] * (gy[k] * g[j] - mean_d - xh[k] * mean_dx);
        }
    }
    let dt = grad_y.dtype();
    (
        Tensor::from_parts(vec![rows, n], dt, dx),
        LayerNormParams {
            gain: Tensor::from_parts(vec![n], dt, dg),
            bias: Tensor::from_parts(vec![n], dt, db),
        },
    )
}

/// Parameters of one SRU++ layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SruppParams {
    /// Pre-attention normalization; `None` runs the attention on raw `x`.
    pub norm: Option<LayerNormParams>,
    /// `d′ × d`
    pub wq: Tensor,
    /// `d′ × d′`
    pub wk: Tensor,
    /// `d′ × d′`
    pub wv: Tensor,
    /// `(3·hidden_total) × d′`
    pub wo: Tensor,
    /// Scalar residual weight on the attention branch, shape `[1]`.
    pub alpha: Tensor,
    pub forward: RecurrenceParams,
    /// Present for bidirectional layers; consumes the second half of `U`
    /// over the time-reversed sequence.
    pub backward: Option<RecurrenceParams>,
}

/// Everything the attention block computed for one sequence.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    /// Row-stochastic `L×L` matrix; row `i` is query position `i`.
    pub weights: Tensor,
    pub a: Tensor,
}

#[derive(Clone, Debug)]
pub struct SruppTape {
    pub x: Tensor,
    /// Input to the query projection (normalized `x`, or `x` itself).
    pub x_attn: Tensor,
    pub norm: Option<LayerNormCache>,
    pub attention: AttentionRecord,
    /// `Q + α·A`
    pub mixed: Tensor,
    pub forward: RecurrenceTape,
    pub backward: Option<RecurrenceTape>,
}

impl SruppParams {
    /// Projection matrices uniform in `±√(3/fan_in)`, `α = 0`, recurrence
    /// vectors zero, normalization gain one.
    pub fn new(
        d_in: usize,
        d_attn: usize,
        d_out: usize,
        direction: Direction,
        layer_norm: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if d_attn == 0 || d_in == 0 || d_out == 0 {
            return Err(Error::Config("SRU++ widths must be positive".into()));
        }
        let hidden = match direction {
            Direction::Unidirectional => d_out,
            Direction::Bidirectional => {
                if !d_out.is_multiple_of(2) {
                    return Err(Error::Config(format!(
                        "bidirectional SRU++ needs an even hidden size, got {d_out}"
                    )));
                }
                d_out / 2
            }
        };
        let lim = |fan_in: usize| (3.0 / fan_in as f64).sqrt();
        let wq = Tensor::uniform(&[d_attn, d_in], -lim(d_in), lim(d_in), rng);
        let wk = Tensor::uniform(&[d_attn, d_attn], -lim(d_attn), lim(d_attn), rng);
        let wv = Tensor::uniform(&[d_attn, d_attn], -lim(d_attn), lim(d_attn), rng);
        let wo = Tensor::uniform(&[3 * d_out, d_attn], -lim(d_attn), lim(d_attn), rng);
        let forward = RecurrenceParams::new(d_in, hidden, rng);
        let backward = (direction == Direction::Bidirectional)
            .then(|| RecurrenceParams::new(d_in, hidden, rng));
        Ok(SruppParams {
            norm: layer_norm.then(|| LayerNormParams::new(d_in)),
            wq,
            wk,
            wv,
            wo,
            alpha: Tensor::scalar(0.0),
            forward,
            backward,
        })
    }

    pub fn input_width(&self) -> usize {
        self.wq.shape()[1]
    }

    pub fn attn_width(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.wo.shape()[0] / 3
    }

    pub fn direction(&self) -> Direction {
        if self.backward.is_some() {
            Direction::Bidirectional
        } else {
            Direction::Unidirectional
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.data()[0]
    }

    pub fn to_dtype(&self, dtype: DType) -> Self {
        let mut p = self.clone();
        p.visit_mut("", &mut |_, t| *t = t.to_dtype(dtype));
        p
    }
}

impl Parameters for SruppParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        if let Some(n) = &self.norm {
            n.visit(&join(prefix, "norm"), f);
        }
        f(join(prefix, "wq"), &self.wq);
        f(join(prefix, "wk"), &self.wk);
        f(join(prefix, "wv"), &self.wv);
        f(join(prefix, "wo"), &self.wo);
        f(join(prefix, "alpha"), &self.alpha);
        self.forward.visit(&join(prefix, "fwd"), f);
        if let Some(b) = &self.backward {
            b.visit(&join(prefix, "bwd"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(n) = &mut self.norm {
            n.visit_mut(&join(prefix, "norm"), f);
        }
        f(join(prefix, "wq"), &mut self.wq);
        f(join(prefix, "wk"), &mut self.wk);
        f(join(prefix, "wv"), &mut self.wv);
        f(join(prefix, "wo"), &mut self.wo);
        f(join(prefix, "alpha"), &mut self.alpha);
        self.forward.visit_mut(&join(prefix, "fwd"), f);
        if let Some(b) = &mut self.backward {
            b.visit_mut(&join(prefix, "bwd"), f);
        }
    }
}

/// `Q = Wq·Xᵀ`, `K = Wk·Q`, `V = Wv·Q`, each `d′×L`. `x` here is the
/// attention input, i.e. already normalized if the layer normalizes.
pub fn attention_qkv(ctx: &Ctx, p: &SruppParams, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    if x.rank() != 2 || x.cols() != p.input_width() {
        return Err(Error::dim(
            "attention_qkv",
            format!("input must be L×{}, got {:?}", p.input_width(), x.shape()),
        ));
    }
    x.check_finite("attention_qkv")?;
    let q = ctx.matmul(&p.wq, &x.transpose())?;
    let k = ctx.matmul(&p.wk, &q)?;
    let v = ctx.matmul(&p.wv, &q)?;
    Ok((q, k, v))
}

/// `weights = softmax(QᵀK/√d′)` and `A = (weights·Vᵀ)ᵀ`.
pub fn attention_output(ctx: &Ctx, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    if q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(Error::dim(
            "attention_output",
            format!(
                "Q, K, V must share a d′×L shape, got {:?}, {:?}, {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            ),
        ));
    }
    let d_attn = q.rows();
    let logits = ctx.scale(
        &ctx.matmul(&q.transpose(), k)?,
        1.0 / (d_attn as f64).sqrt(),
    )?;
    logits.check_finite("attention_output")?;
    let weights = ctx.softmax_rows(&logits)?;
    let a_t = ctx.matmul(&weights, &v.transpose())?;
    Ok((a_t.transpose(), weights))
}

/// Attention-derived `U` (shape `L×3×hidden_total`) and the attention record.
pub fn project_u(
    ctx: &Ctx,
    p: &SruppParams,
    x_attn: &Tensor,
) -> Result<(Tensor, Tensor, AttentionRecord)> {
    let (q, k, v) = attention_qkv(ctx, p, x_attn)?;
    let (a, weights) = attention_output(ctx, &q, &k, &v)?;
    let mixed = ctx.elementwise(ElementwiseOp::Add, &q, &ctx.scale(&a, p.alpha())?)?;
    let u_t = ctx.matmul(&p.wo, &mixed)?;
    let u = u_t
        .transpose()
        .reshape(&[x_attn.rows(), 3, p.output_width()])?;
    Ok((
        u,
        mixed,
        AttentionRecord {
            q,
            k,
            v,
            weights,
            a,
        },
    ))
}

/// Columns `[offset, offset+width)` of each of the three `U` slices.
fn split_u(u: &Tensor, offset: usize, width: usize) -> Tensor {
    let (steps, total) = (u.shape()[0], u.shape()[2]);
    let mut out = Vec::with_capacity(steps * 3 * width);
    for t in 0..steps {
        for g in 0..3 {
            let base = (t * 3 + g) * total + offset;
            out.extend_from_slice(&u.data()[base..base + width]);
        }
    }
    Tensor::from_parts(vec![steps, 3, width], u.dtype(), out)
}

fn merge_u(dst: &mut [f64], part: &Tensor, offset: usize, total: usize) {
    let (steps, width) = (part.shape()[0], part.shape()[2]);
    for t in 0..steps {
        for g in 0..3 {
            let src = &part.data()[(t * 3 + g) * width..(t * 3 + g + 1) * width];
            let base = (t * 3 + g) * total + offset;
            dst[base..base + width].copy_from_slice(src);
        }
    }
}

impl SruppParams {
    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<(Tensor, SruppTape)> {
        if x.rank() != 2 || x.cols() != self.input_width() {
            return Err(Error::dim(
                "srupp_forward",
                format!(
                    "input must be L×{}, got {:?}",
                    self.input_width(),
                    x.shape()
                ),
            ));
        }
        let (x_attn, norm) = match &self.norm {
            Some(n) => {
                let (y, cache) = layer_norm(ctx, n, x)?;
                (y, Some(cache))
            }
            None => (x.clone(), None),
        };
        let (u, mixed, attention) = project_u(ctx, self, &x_attn)?;
        let hidden = self.forward.hidden();
        let (h, forward, backward) = match &self.backward {
            None => {
                let (h, tape) = recurrence(ctx, &self.forward, &u, x, &SruState::zeros(hidden))?;
                (h, tape, None)
            }
            Some(bp) => {
                let u_f = split_u(&u, 0, hidden);
                let u_b = split_u(&u, hidden, bp.hidden()).reverse_rows();
                let (h_f, t_f) = recurrence(ctx, &self.forward, &u_f, x, &SruState::zeros(hidden))?;
                let (h_b, t_b) = recurrence(
                    ctx,
                    bp,
                    &u_b,
                    &x.reverse_rows(),
                    &SruState::zeros(bp.hidden()),
                )?;
                (
                    Tensor::concat_cols(&h_f, &h_b.reverse_rows())?,
                    t_f,
                    Some(t_b),
                )
            }
        };
        Ok((
            h,
            SruppTape {
                x: x.clone(),
                x_attn,
                norm,
                attention,
                mixed,
                forward,
                backward,
            },
        ))
    }

    /// Exact gradients of a scalar loss given `grad_h = ∂loss/∂h`.
    pub fn backward(
        &self,
        ctx: &Ctx,
        tape: &SruppTape,
        grad_h: &Tensor,
    ) -> Result<(Tensor, SruppParams)> {
        let steps = tape.x.rows();
        let total = self.output_width();
        if grad_h.shape() != [steps, total] {
            return Err(Error::dim(
                "srupp_backward",
                format!("gradient must be {steps}×{total}, got {:?}", grad_h.shape()),
            ));
        }
        let hidden = self.forward.hidden();
        let mut du = vec![0.0; steps * 3 * total];
        let (mut grad_x, grad_fwd, grad_bwd) = match (&self.backward, &tape.backward) {
            (None, None) => {
                let (gu, gx, gr) = recurrence_backward(ctx, &self.forward, &tape.forward, grad_h)?;
                du.copy_from_slice(gu.data());
                (gx, gr, None)
            }
            (Some(bp), Some(tb)) => {
                let (gu_f, gx_f, gr_f) = recurrence_backward(
                    ctx,
                    &self.forward,
                    &tape.forward,
                    &grad_h.slice_cols(0, hidden),
                )?;
                let gh_b = grad_h.slice_cols(hidden, bp.hidden()).reverse_rows();
                let (gu_b, gx_b, gr_b) = recurrence_backward(ctx, bp, tb, &gh_b)?;
                merge_u(&mut du, &gu_f, 0, total);
                merge_u(&mut du, &gu_b.reverse_rows(), hidden, total);
                let mut gx = gx_f;
                gx.accumulate(&gx_b.reverse_rows());
                (gx, gr_f, Some(gr_b))
            }
            _ => {
                return Err(Error::dim(
                    "srupp_backward",
                    "tape direction does not match the layer",
                ))
            }
        };

        let rec = &tape.attention;
        let d_attn = self.attn_width();
        let du_t = Tensor::from_parts(vec![steps, 3 * total], grad_h.dtype(), du).transpose();
        let grad_wo = ctx.matmul(&du_t, &tape.mixed.transpose())?;
        let d_mixed = ctx.matmul(&self.wo.transpose(), &du_t)?;
        let grad_alpha: f64 = d_mixed
            .data()
            .iter()
            .zip(rec.a.data())
            .map(|(g, a)| g * a)
            .sum();

        let mut dq = d_mixed.clone();
        let da = crate::tensor::ops::scale(&d_mixed, self.alpha())?;
        let d_weights = ctx.matmul(&da.transpose(), &rec.v)?;
        let dv = ctx.matmul(&da, &rec.weights)?;
        let d_logits = softmax_rows_backward(&rec.weights, &d_weights);
        let d_logits = crate::tensor::ops::scale(&d_logits, 1.0 / (d_attn as f64).sqrt())?;
        dq.accumulate(&ctx.matmul(&rec.k, &d_logits.transpose())?);
        let dk = ctx.matmul(&rec.q, &d_logits)?;
        let grad_wk = ctx.matmul(&dk, &rec.q.transpose())?;
        let grad_wv = ctx.matmul(&dv, &rec.q.transpose())?;
        dq.accumulate(&ctx.matmul(&self.wk.transpose(), &dk)?);
        dq.accumulate(&ctx.matmul(&self.wv.transpose(), &dv)?);
        let grad_wq = ctx.matmul(&dq, &tape.x_attn)?;
        let dx_attn = ctx.matmul(&dq.transpose(), &self.wq)?;

        let grad_norm = match (&self.norm, &tape.norm) {
            (Some(n), Some(cache)) => {
                let (dx, gn) = layer_norm_backward(n, cache, &dx_attn);
                grad_x.accumulate(&dx);
                Some(gn)
            }
            (None, None) => {
                grad_x.accumulate(&dx_attn);
                None
            }
            _ => {
                return Err(Error::dim(
                    "srupp_backward",
                    "tape normalization does not match the layer",
                ))
            }
        };
        grad_x.check_finite("srupp_backward")?;

        let grads = SruppParams {
            norm: grad_norm,
            wq: grad_wq,
            wk: grad_wk,
            wv: grad_wv,
            wo: grad_wo,
            alpha: Tensor::new(&[1], self.alpha.dtype(), vec![grad_alpha])?,
            forward: grad_fwd,
            backward: grad_bwd,
        };
        Ok((grad_x, grads))
    }
}

/// Softmax Jacobian-vector product, row by row:
/// `ds[i,j] = p[i,j]·(dp[i,j] − Σ_k dp[i,k]·p[i,k])`.
pub fn softmax_rows_backward(p: &Tensor, dp: &Tensor) -> Tensor {
    let n = p.cols();
    let mut out = vec![0.0; p.numel()];
    for i in 0..p.rows() {
        let (pr, dr) = (p.row(i), dp.row(i));
        let dot: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for j in 0..n {
            out[i * n + j] = pr[j] * (dr[j] - dot);
        }
    }
    Tensor::from_parts(p.shape().to_vec(), p.dtype(), out)
}

/// The stored row-stochastic attention matrix of a forward call. With a
/// single head this is also the head average.
pub fn attention_weights(tape: &SruppTape) -> &Tensor {
    &tape.attention.weights
}

/// Renders a matrix as CSV, one row per line, 17 significant digits.
pub fn matrix_csv(m: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{v:.16e}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Parses CSV produced by [`matrix_csv`] (or any rectangular numeric CSV).
pub fn parse_matrix_csv(text: &str) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Config(format!("malformed matrix CSV: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        for field in &record {
            let v = field
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("line {line}: {e} in {field:?}")))?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Config("empty matrix".into()));
    }
    Tensor::from_vec(&[rows, data.len() / rows], data)
}
