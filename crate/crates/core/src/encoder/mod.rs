//! The SRU++ encoder: two strided 3×3 convolutions over the (time, feature)
//! plane, a linear map to the recurrence width `d`, a stack of SRU++ layers
//! and an optional output linear.

pub mod profile;

pub use profile::{flops_estimate, param_count, Component, ProfileReport, FLOP_CONVENTION};

use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::sru::Direction;
use crate::srupp::{SruppParams, SruppTape};
use crate::tensor::ops::{self, conv_out_len, ElementwiseOp};
use crate::tensor::{Ctx, DType, SeededRng, Tensor};

pub const CONV_KERNEL: usize = 3;
pub const CONV_STRIDE: usize = 2;
/// Shortest input either axis can have for two stride-2 3×3 convolutions.
pub const MIN_INPUT_LEN: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub feat_dim: usize,
    /// Recurrence hidden size `d` (split in half per direction when
    /// bidirectional).
    pub embed_dim: usize,
    /// Attention width `d′`.
    pub attn_dim: usize,
    pub num_layers: usize,
    pub output_dim: Option<usize>,
    pub bidirectional: bool,
    pub subsample_channels: usize,
    pub layer_norm: bool,
    pub dtype: DType,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            feat_dim: 8,
            embed_dim: 64,
            attn_dim: 16,
            num_layers: 2,
            output_dim: None,
            bidirectional: false,
            subsample_channels: 32,
            layer_norm: true,
            dtype: DType::F64,
        }
    }
}

/// Output extent of the two-stage subsampling along one axis.
pub fn subsampled_len(n: usize) -> Option<usize> {
    conv_out_len(n, CONV_KERNEL, CONV_STRIDE)
        .and_then(|m| conv_out_len(m, CONV_KERNEL, CONV_STRIDE))
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.feat_dim < MIN_INPUT_LEN {
            return fail(format!(
                "feat_dim must be at least {MIN_INPUT_LEN} for two 3×3 stride-2 convolutions, got {}",
                self.feat_dim
            ));
        }
        if self.embed_dim == 0
            || self.attn_dim == 0
            || self.num_layers == 0
            || self.subsample_channels == 0
        {
            return fail(
                "embed_dim, attn_dim, num_layers and subsample_channels must be positive".into(),
            );
        }
        if self.bidirectional && !self.embed_dim.is_multiple_of(2) {
            return fail(format!(
                "bidirectional encoders need an even embed_dim, got {}",
                self.embed_dim
            ));
        }
        if self.output_dim == Some(0) {
            return fail("output_dim must be positive when set".into());
        }
        Ok(())
    }

    pub fn direction(&self) -> Direction {
        if self.bidirectional {
            Direction::Bidirectional
        } else {
            Direction::Unidirectional
        }
    }

    pub fn output_width(&self) -> usize {
        self.output_dim.unwrap_or(self.embed_dim)
    }

    /// Feature extent after subsampling.
    pub fn subsampled_feat(&self) -> usize {
        subsampled_len(self.feat_dim).unwrap_or(0)
    }

    /// Width of the flattened convolution output feeding the input linear.
    pub fn conv_out_width(&self) -> usize {
        self.subsample_channels * self.subsampled_feat()
    }
}

/// Affine map `y = x·Wᵀ + b` applied to each row.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut SeededRng) -> Self {
        let a = (3.0 / d_in as f64).sqrt();
        Linear {
            weight: Tensor::uniform(&[d_out, d_in], -a, a, rng),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let y = ctx.matmul(x, &self.weight.transpose())?;
        ctx.elementwise_rows(ElementwiseOp::Add, &y, &self.bias)
    }

    /// Returns `(grad_x, grads)`.
    pub fn backward(&self, ctx: &Ctx, x: &Tensor, grad_y: &Tensor) -> Result<(Tensor, Linear)> {
        let grad_w = ctx.matmul(&grad_y.transpose(), x)?;
        let mut grad_b = vec![0.0; grad_y.cols()];
        for i in 0..grad_y.rows() {
            for (g, v) in grad_b.iter_mut().zip(grad_y.row(i)) {
                *g += v;
            }
        }
        let grad_x = ctx.matmul(grad_y, &self.weight)?;
        let bias = Tensor::new(&[grad_b.len()], grad_y.dtype(), grad_b)?;
        Ok((
            grad_x,
            Linear {
                weight: grad_w,
                bias,
            },
        ))
    }
}

impl Parameters for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// One 3×3 stride-2 convolution with per-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    /// `C_out × C_in × 3 × 3`
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Conv {
    pub fn new(c_in: usize, c_out: usize, rng: &mut SeededRng) -> Self {
        let fan_in = c_in * CONV_KERNEL * CONV_KERNEL;
        let a = (3.0 / fan_in as f64).sqrt();
        Conv {
            kernel: Tensor::uniform(&[c_out, c_in, CONV_KERNEL, CONV_KERNEL], -a, a, rng),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let mut y = ctx.conv2d(x, &self.kernel, CONV_STRIDE)?;
        let plane = y.shape()[1] * y.shape()[2];
        let bias = self.bias.data().to_vec();
        for (c, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v += bias[c]);
        }
        y.settle();
        ctx.tally(y.numel() as u64);
        Ok(y)
    }

    fn backward(&self, x: &Tensor, grad_y: &Tensor) -> Result<(Tensor, Conv)> {
        let (gx, gk) = ops::conv2d_backward(x, &self.kernel, CONV_STRIDE, grad_y)?;
        let plane = grad_y.shape()[1] * grad_y.shape()[2];
        let gb: Vec<f64> = grad_y
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum())
            .collect();
        let bias = Tensor::new(&[gb.len()], grad_y.dtype(), gb)?;
        Ok((gx, Conv { kernel: gk, bias }))
    }
}

impl Parameters for Conv {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "kernel"), &self.kernel);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "kernel"), &mut self.kernel);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub conv1: Conv,
    pub conv2: Conv,
    /// Flattened conv output → `d`.
    pub input: Linear,
    pub layers: Vec<SruppParams>,
    /// `d` → `output_dim`.
    pub output: Option<Linear>,
}

/// Forward intermediates of one encoder call.
#[derive(Clone, Debug)]
pub struct EncoderTape {
    pub conv1_in: Tensor,
    pub conv1_out: Tensor,
    pub conv2_out: Tensor,
    pub flat: Tensor,
    /// Input of each SRU++ layer, then the last layer's output.
    pub hidden: Vec<Tensor>,
    pub layers: Vec<SruppTape>,
}

impl Encoder {
    pub fn new(config: EncoderConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let c = config.subsample_channels;
        let conv1 = Conv::new(1, c, rng);
        let conv2 = Conv::new(c, c, rng);
        let input = Linear::new(config.conv_out_width(), config.embed_dim, rng);
        let layers = (0..config.num_layers)
            .map(|_| {
                SruppParams::new(
                    config.embed_dim,
                    config.attn_dim,
                    config.embed_dim,
                    config.direction(),
                    config.layer_norm,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let output = config
            .output_dim
            .map(|o| Linear::new(config.embed_dim, o, rng));
        let mut enc = Encoder {
            config,
            conv1,
            conv2,
            input,
            layers,
            output,
        };
        let dtype = enc.config.dtype;
        enc.visit_mut("", &mut |_, t| *t = t.to_dtype(dtype));
        Ok(enc)
    }

    /// An encoder with every parameter set to zero.
    pub fn zeroed(config: EncoderConfig) -> Result<Self> {
        Ok(Self::new(config, &mut SeededRng::new(0))?.zeros_like())
    }

    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        subsampled_len(input_len)
    }

    pub fn forward(&self, ctx: &Ctx, feats: &Tensor) -> Result<(Tensor, EncoderTape)> {
        let cfg = &self.config;
        if feats.rank() != 2 || feats.cols() != cfg.feat_dim {
            return Err(Error::dim(
                "encoder_forward",
                format!(
                    "features must be T×{}, got {:?}",
                    cfg.feat_dim,
                    feats.shape()
                ),
            ));
        }
        if feats.rows() < MIN_INPUT_LEN {
            return Err(Error::dim(
                "encoder_forward",
                format!(
                    "sequence of {} frames is too short, minimum T is {MIN_INPUT_LEN}",
                    feats.rows()
                ),
            ));
        }
        let conv1_in = feats
            .to_dtype(cfg.dtype)
            .reshape(&[1, feats.rows(), cfg.feat_dim])?;
        let conv1_out = ctx.relu(&self.conv1.forward(ctx, &conv1_in)?)?;
        let conv2_out = ctx.relu(&self.conv2.forward(ctx, &conv1_out)?)?;
        let flat = flatten_channels(&conv2_out);
        let mut h = self.input.forward(ctx, &flat)?;
        let mut hidden = Vec::with_capacity(self.layers.len() + 1);
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, tape) = layer.forward(ctx, &h)?;
            hidden.push(h);
            tapes.push(tape);
            h = next;
        }
        let out = match &self.output {
            Some(lin) => lin.forward(ctx, &h)?,
            None => h.clone(),
        };
        hidden.push(h);
        Ok((
            out,
            EncoderTape {
                conv1_in,
                conv1_out,
                conv2_out,
                flat,
                hidden,
                layers: tapes,
            },
        ))
    }

    /// Returns `(grad_feats, grads)` for upstream `grad_out = ∂loss/∂out`.
    pub fn backward(
        &self,
        ctx: &Ctx,
        tape: &EncoderTape,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Encoder)> {
        if tape.layers.len() != self.layers.len() || tape.hidden.len() != self.layers.len() + 1 {
            return Err(Error::dim(
                "encoder_backward",
                "tape does not match the encoder depth",
            ));
        }
        let last = &tape.hidden[self.layers.len()];
        if grad_out.rank() != 2
            || grad_out.rows() != last.rows()
            || grad_out.cols() != self.config.output_width()
        {
            return Err(Error::dim(
                "encoder_backward",
                format!(
                    "gradient must be {}×{}, got {:?}",
                    last.rows(),
                    self.config.output_width(),
                    grad_out.shape()
                ),
            ));
        }
        let (mut g, output) = match &self.output {
            Some(lin) => {
                let (gx, gl) = lin.backward(ctx, last, grad_out)?;
                (gx, Some(gl))
            }
            None => (grad_out.clone(), None),
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for (layer, t) in self.layers.iter().zip(&tape.layers).rev() {
            let (gx, gp) = layer.backward(ctx, t, &g)?;
            layers.push(gp);
            g = gx;
        }
        layers.reverse();
        let (g_flat, input) = self.input.backward(ctx, &tape.flat, &g)?;
        let g_conv2 = relu_backward(
            &tape.conv2_out,
            &unflatten_channels(&g_flat, tape.conv2_out.shape()),
        );
        let (g_conv1_out, conv2) = self.conv2.backward(&tape.conv1_out, &g_conv2)?;
        let g_conv1 = relu_backward(&tape.conv1_out, &g_conv1_out);
        let (g_in, conv1) = self.conv1.backward(&tape.conv1_in, &g_conv1)?;
        let grad_feats = g_in.reshape(&[tape.conv1_in.shape()[1], tape.conv1_in.shape()[2]])?;
        let grads = Encoder {
            config: self.config.clone(),
            conv1,
            conv2,
            input,
            layers,
            output,
        };
        Ok((grad_feats, grads))
    }

    /// Attention matrices of every layer for the last forward call.
    pub fn attention_maps<'t>(&self, tape: &'t EncoderTape) -> Vec<&'t Tensor> {
        tape.layers
            .iter()
            .map(crate::srupp::attention_weights)
            .collect()
    }
}

/// `C×T×F` → `T×(C·F)` with column index `c·F + f`.
fn flatten_channels(x: &Tensor) -> Tensor {
    let (c, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = vec![0.0; c * t * f];
    for ci in 0..c {
        for ti in 0..t {
            for fi in 0..f {
                out[ti * c * f + ci * f + fi] = x.data()[(ci * t + ti) * f + fi];
            }
        }
    }
    Tensor::from_parts(vec![t, c * f], x.dtype(), out)
}

fn unflatten_channels(g: &Tensor, shape: &[usize]) -> Tensor {
    let (c, t, f) = (shape[0], shape[1], shape[2]);
    let mut out = vec![0.0; c * t * f];
    for ci in 0..c {
        for ti in 0..t {
            for fi in 0..f {
                out[(ci * t + ti) * f + fi] = g.data()[ti * c * f + ci * f + fi];
            }
        }
    }
    Tensor::from_parts(shape.to_vec(), g.dtype(), out)
}

/// Passes gradient where the rectifier output was positive.
fn relu_backward(out: &Tensor, grad: &Tensor) -> Tensor {
    let data = out
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_parts(out.shape().to_vec(), grad.dtype(), data)
}

impl Parameters for Encoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.input.visit(&join(prefix, "input"), f);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer.{i}")), f);
        }
        if let Some(o) = &self.output {
            o.visit(&join(prefix, "output"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.input.visit_mut(&join(prefix, "input"), f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer.{i}")), f);
        }
        if let Some(o) = &mut self.output {
            o.visit_mut(&join(prefix, "output"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(bidirectional: bool, output_dim: Option<usize>) -> EncoderConfig {
        EncoderConfig {
            feat_dim: 8,
            embed_dim: 8,
            attn_dim: 4,
            num_layers: 2,
            output_dim,
            bidirectional,
            subsample_channels: 3,
            layer_norm: true,
            dtype: DType::F64,
        }
    }

    #[test]
    fn shape_chain_from_convolutions() {
        let enc = Encoder::new(tiny(false, Some(5)), &mut SeededRng::new(0)).unwrap();
        let feats = Tensor::uniform(&[16, 8], -1.0, 1.0, &mut SeededRng::new(1));
        let (out, tape) = enc.forward(&Ctx::deterministic(), &feats).unwrap();
        // conv chain: 16 → 7 → 3 along time, 8 → 3 → 1 along features
        assert_eq!(tape.conv1_out.shape(), &[3, 7, 3]);
        assert_eq!(tape.conv2_out.shape(), &[3, 3, 1]);
        assert_eq!(out.shape(), &[3, 5]);
        assert_eq!(subsampled_len(16), Some(3));
    }

    #[test]
    fn zero_encoder_gives_zero_output() {
        let enc = Encoder::zeroed(tiny(true, Some(6))).unwrap();
        let feats = Tensor::uniform(&[20, 8], -1.0, 1.0, &mut SeededRng::new(2));
        let (out, _) = enc.forward(&Ctx::deterministic(), &feats).unwrap();
        assert_eq!(out.shape(), &[4, 6]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_input_names_minimum() {
        let enc = Encoder::new(tiny(false, None), &mut SeededRng::new(0)).unwrap();
        let err = enc
            .forward(&Ctx::deterministic(), &Tensor::zeros(&[6, 8]))
            .unwrap_err();
        assert!(err.to_string().contains("minimum T is 7"), "{err}");
    }

    #[test]
    fn deterministic_forward() {
        let cfg = tiny(true, None);
        let a = Encoder::new(cfg.clone(), &mut SeededRng::new(4)).unwrap();
        let b = Encoder::new(cfg, &mut SeededRng::new(4)).unwrap();
        let feats = Tensor::uniform(&[13, 8], -1.0, 1.0, &mut SeededRng::new(5));
        let (oa, _) = a.forward(&Ctx::deterministic(), &feats).unwrap();
        let (ob, _) = b.forward(&Ctx::deterministic(), &feats).unwrap();
        assert!(oa.bits_eq(&ob));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = tiny(true, None);
        c.embed_dim = 7;
        assert!(c.validate().is_err());
        let mut c = tiny(false, None);
        c.feat_dim = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let x = Tensor::uniform(&[3, 4, 2], -1.0, 1.0, &mut SeededRng::new(6));
        assert!(unflatten_channels(&flatten_channels(&x), x.shape()).bits_eq(&x));
    }
}
