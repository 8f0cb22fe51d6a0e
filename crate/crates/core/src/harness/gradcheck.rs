//! Central finite-difference checks of the hand-derived backward passes.

use crate::encoder::{Encoder, EncoderConfig, EncoderTape};
use crate::error::Result;
use crate::params::Parameters;
use crate::sru::{Direction, SruLayer, SruLayerTape};
use crate::srupp::{SruppParams, SruppTape};
use crate::tensor::{Ctx, DType, SeededRng, Tensor};

pub const FD_STEP: f64 = 1e-5;
/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// A model with a tape-based forward and an exact backward.
pub trait Differentiable: Parameters {
    type Tape;
    fn run_forward(&self, ctx: &Ctx, x: &Tensor) -> Result<(Tensor, Self::Tape)>;
    fn run_backward(
        &self,
        ctx: &Ctx,
        tape: &Self::Tape,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Self)>;
}

impl Differentiable for SruLayer {
    type Tape = SruLayerTape;
    fn run_forward(&self, ctx: &Ctx, x: &Tensor) -> Result<(Tensor, Self::Tape)> {
        self.forward(ctx, x)
    }
    fn run_backward(&self, ctx: &Ctx, tape: &Self::Tape, g: &Tensor) -> Result<(Tensor, Self)> {
        self.backward(ctx, tape, g)
    }
}

impl Differentiable for SruppParams {
    type Tape = SruppTape;
    fn run_forward(&self, ctx: &Ctx, x: &Tensor) -> Result<(Tensor, Self::Tape)> {
        self.forward(ctx, x)
    }
    fn run_backward(&self, ctx: &Ctx, tape: &Self::Tape, g: &Tensor) -> Result<(Tensor, Self)> {
        self.backward(ctx, tape, g)
    }
}

impl Differentiable for Encoder {
    type Tape = EncoderTape;
    fn run_forward(&self, ctx: &Ctx, x: &Tensor) -> Result<(Tensor, Self::Tape)> {
        self.forward(ctx, x)
    }
    fn run_backward(&self, ctx: &Ctx, tape: &Self::Tape, g: &Tensor) -> Result<(Tensor, Self)> {
        self.backward(ctx, tape, g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Sru,
    Srupp,
    Encoder,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sru => "sru",
            ModelKind::Srupp => "srupp",
            ModelKind::Encoder => "encoder",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sru" => Some(ModelKind::Sru),
            "srupp" => Some(ModelKind::Srupp),
            "encoder" => Some(ModelKind::Encoder),
            _ => None,
        }
    }
}

/// A deliberate backward-pass defect, used to prove the checker catches one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negates every `alpha` gradient.
    FlipAlphaGradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Largest [`rel_err_floored`] over all checked scalars.
    pub max_rel_err: f64,
    /// Largest [`rel_err`], ignoring the finite-difference resolution.
    pub raw_max_rel_err: f64,
    /// Absolute resolution of the central differences for this instance.
    pub resolution: f64,
    /// Name of the tensor holding the worst entry (`input` for the input).
    pub worst_param: String,
    pub worst_index: usize,
    /// Scalars compared.
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= GRADCHECK_TOLERANCE
    }
}

/// `|a − b| / max(1e-8, |a| + |b|)`
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floored(analytic, numeric, 1e-8)
}

/// `|a − b| / max(floor, |a| + |b|)`
pub fn rel_err_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Roundoff bound of a central difference of a loss whose terms sum to
/// `scale` in magnitude: `10·ε·scale / h`. Gradients below this cannot be
/// resolved at step [`FD_STEP`].
pub fn fd_resolution(scale: f64) -> f64 {
    10.0 * f64::EPSILON * scale / FD_STEP
}

fn weighted_sum(out: &Tensor, weights: &Tensor) -> f64 {
    out.data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum()
}

fn poke<M: Parameters>(model: &mut M, tensor: usize, entry: usize, delta: f64) {
    let mut i = 0;
    model.visit_mut("", &mut |_, t| {
        if i == tensor {
            t.data_mut()[entry] += delta;
        }
        i += 1;
    });
}

fn set_entry<M: Parameters>(model: &mut M, tensor: usize, entry: usize, value: f64) {
    let mut i = 0;
    model.visit_mut("", &mut |_, t| {
        if i == tensor {
            t.data_mut()[entry] = value;
        }
        i += 1;
    });
}

/// Compares the analytic gradient of `loss = Σ out ⊙ weights` against
/// central differences for every parameter scalar and every input entry.
pub fn check_model<M: Differentiable>(
    model: &M,
    x: &Tensor,
    weights: &Tensor,
    fault: Fault,
) -> Result<GradcheckReport> {
    let ctx = Ctx::deterministic();
    let (out, tape) = model.run_forward(&ctx, x)?;
    assert_eq!(
        out.shape(),
        weights.shape(),
        "loss weights must match the model output"
    );
    let (grad_x, mut grads) = model.run_backward(&ctx, &tape, weights)?;
    if fault == Fault::FlipAlphaGradient {
        grads.visit_mut("", &mut |name, t| {
            if name.ends_with("alpha") {
                t.data_mut().iter_mut().for_each(|v| *v = -*v);
            }
        });
    }

    let loss_of = |m: &M, x: &Tensor| -> Result<f64> {
        let (out, _) = m.run_forward(&ctx, x)?;
        Ok(weighted_sum(&out, weights))
    };

    let scale: f64 = out
        .data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| (a * b).abs())
        .sum();
    let resolution = fd_resolution(scale);
    // An entry within resolution of its estimate scores at most the tolerance.
    let floor = (resolution / GRADCHECK_TOLERANCE).max(1e-8);
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        raw_max_rel_err: 0.0,
        resolution,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let mut record = |name: &str, idx: usize, analytic: f64, numeric: f64| {
        let e = rel_err_floored(analytic, numeric, floor);
        report.raw_max_rel_err = report.raw_max_rel_err.max(rel_err(analytic, numeric));
        report.checked += 1;
        if e > report.max_rel_err || report.worst_param.is_empty() {
            report.max_rel_err = e;
            report.worst_param = name.to_string();
            report.worst_index = idx;
        }
    };

    let named: Vec<(String, Vec<f64>)> = grads
        .named("")
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();
    let mut probe = model.clone();
    for (ti, (name, analytic)) in named.iter().enumerate() {
        for (e, &a) in analytic.iter().enumerate() {
            let original = {
                let mut v = 0.0;
                let mut i = 0;
                probe.visit("", &mut |_, t| {
                    if i == ti {
                        v = t.data()[e];
                    }
                    i += 1;
                });
                v
            };
            poke(&mut probe, ti, e, FD_STEP);
            let plus = loss_of(&probe, x)?;
            set_entry(&mut probe, ti, e, original - FD_STEP);
            let minus = loss_of(&probe, x)?;
            set_entry(&mut probe, ti, e, original);
            record(name, e, a, (plus - minus) / (2.0 * FD_STEP));
        }
    }

    let mut xp = x.clone();
    for e in 0..x.numel() {
        let original = xp.data()[e];
        xp.data_mut()[e] = original + FD_STEP;
        let plus = loss_of(model, &xp)?;
        xp.data_mut()[e] = original - FD_STEP;
        let minus = loss_of(model, &xp)?;
        xp.data_mut()[e] = original;
        record(
            "input",
            e,
            grad_x.data()[e],
            (plus - minus) / (2.0 * FD_STEP),
        );
    }
    Ok(report)
}

/// Redraws every parameter: matrices at their initialisation scale
/// `±√(3/fan_in)`, vectors and scalars in `±1`. Wider draws saturate the
/// gates, where both gradients shrink below the finite-difference noise.
fn randomize<M: Parameters>(model: &mut M, rng: &mut SeededRng) {
    model.visit_mut("", &mut |_, t| {
        let bound = if t.rank() >= 2 {
            (3.0 / t.cols() as f64).sqrt()
        } else {
            1.0
        };
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.uniform(-bound, bound));
        t.settle();
    });
}

/// Shape of a gradcheck instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceShape {
    pub steps: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub d_attn: usize,
    pub bidirectional: bool,
    pub layer_norm: bool,
}

impl InstanceShape {
    /// Small random shape drawn from `rng`.
    pub fn random(rng: &mut SeededRng) -> Self {
        let bidirectional = rng.below(2) == 1;
        let d_out = if bidirectional {
            2 * (1 + rng.below(3))
        } else {
            1 + rng.below(5)
        };
        InstanceShape {
            steps: 1 + rng.below(6),
            d_in: 1 + rng.below(5),
            d_out,
            d_attn: 1 + rng.below(3),
            bidirectional,
            layer_norm: rng.below(2) == 1,
        }
    }

    fn direction(&self) -> Direction {
        if self.bidirectional {
            Direction::Bidirectional
        } else {
            Direction::Unidirectional
        }
    }
}

/// Builds a fully randomized SRU layer, input and loss weights.
pub fn sru_instance(
    shape: &InstanceShape,
    rng: &mut SeededRng,
) -> Result<(SruLayer, Tensor, Tensor)> {
    let mut layer = SruLayer::new(shape.d_in, shape.d_out, shape.direction(), rng)?;
    randomize(&mut layer, rng);
    let x = Tensor::uniform(&[shape.steps, shape.d_in], -1.0, 1.0, rng);
    let w = Tensor::uniform(&[shape.steps, shape.d_out], -1.0, 1.0, rng);
    Ok((layer, x, w))
}

pub fn srupp_instance(
    shape: &InstanceShape,
    rng: &mut SeededRng,
) -> Result<(SruppParams, Tensor, Tensor)> {
    // The layer-norm path needs at least two features to be non-degenerate.
    let d_in = if shape.layer_norm {
        shape.d_in.max(2)
    } else {
        shape.d_in
    };
    let mut layer = SruppParams::new(
        d_in,
        shape.d_attn,
        shape.d_out,
        shape.direction(),
        shape.layer_norm,
        rng,
    )?;
    randomize(&mut layer, rng);
    let x = Tensor::uniform(&[shape.steps, d_in], -1.0, 1.0, rng);
    let w = Tensor::uniform(&[shape.steps, shape.d_out], -1.0, 1.0, rng);
    Ok((layer, x, w))
}

pub fn encoder_instance(
    cfg: &EncoderConfig,
    input_len: usize,
    rng: &mut SeededRng,
) -> Result<(Encoder, Tensor, Tensor)> {
    let mut enc = Encoder::new(
        EncoderConfig {
            dtype: DType::F64,
            ..cfg.clone()
        },
        rng,
    )?;
    randomize(&mut enc, rng);
    let x = Tensor::uniform(&[input_len, cfg.feat_dim], -1.0, 1.0, rng);
    let out_len = enc
        .output_len(input_len)
        .expect("input length validated by the encoder");
    let w = Tensor::uniform(&[out_len, cfg.output_width()], -1.0, 1.0, rng);
    Ok((enc, x, w))
}

/// Tiny encoder used for end-to-end checks.
pub fn tiny_encoder_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        feat_dim: 8,
        embed_dim: 8,
        attn_dim: 4,
        num_layers: 2,
        output_dim: if seed % 3 == 2 { Some(3) } else { None },
        bidirectional: seed % 2 == 1,
        subsample_channels: 3,
        layer_norm: true,
        dtype: DType::F64,
    }
}

pub const TINY_ENCODER_LEN: usize = 12;

/// Randomized small-instance check of one model family.
pub fn gradcheck(kind: ModelKind, seed: u64) -> Result<GradcheckReport> {
    gradcheck_with_fault(kind, seed, Fault::None)
}

pub fn gradcheck_with_fault(kind: ModelKind, seed: u64, fault: Fault) -> Result<GradcheckReport> {
    let mut rng = SeededRng::new(seed);
    match kind {
        ModelKind::Sru => {
            let (m, x, w) = sru_instance(&InstanceShape::random(&mut rng), &mut rng)?;
            check_model(&m, &x, &w, fault)
        }
        ModelKind::Srupp => {
            let (m, x, w) = srupp_instance(&InstanceShape::random(&mut rng), &mut rng)?;
            check_model(&m, &x, &w, fault)
        }
        ModelKind::Encoder => {
            let (m, x, w) =
                encoder_instance(&tiny_encoder_config(seed), TINY_ENCODER_LEN, &mut rng)?;
            check_model(&m, &x, &w, fault)
        }
    }
}

/// Check sized from an encoder configuration: layer checks use
/// `embed_dim`-wide layers over `steps` frames; the encoder check runs the
/// configured architecture on `input_len` frames.
pub fn gradcheck_config(
    kind: ModelKind,
    cfg: &EncoderConfig,
    seed: u64,
    steps: usize,
    input_len: usize,
) -> Result<GradcheckReport> {
    cfg.validate()?;
    let mut rng = SeededRng::new(seed);
    let shape = InstanceShape {
        steps,
        d_in: cfg.embed_dim,
        d_out: cfg.embed_dim,
        d_attn: cfg.attn_dim,
        bidirectional: cfg.bidirectional,
        layer_norm: cfg.layer_norm,
    };
    match kind {
        ModelKind::Sru => {
            let (m, x, w) = sru_instance(&shape, &mut rng)?;
            check_model(&m, &x, &w, Fault::None)
        }
        ModelKind::Srupp => {
            let (m, x, w) = srupp_instance(&shape, &mut rng)?;
            check_model(&m, &x, &w, Fault::None)
        }
        ModelKind::Encoder => {
            let (m, x, w) = encoder_instance(cfg, input_len, &mut rng)?;
            check_model(&m, &x, &w, Fault::None)
        }
    }
}
