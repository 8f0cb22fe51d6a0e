//! Closed-form parameter and forward-FLOP accounting for [`super::Encoder`].
//!
//! Every formula here mirrors what the instrumented forward pass executes
//! under the convention in [`crate::tensor::Ctx`], so an analytic report and
//! an instrumented run of the same configuration agree exactly.

use std::fmt::Write as _;

use super::{subsampled_len, EncoderConfig, CONV_KERNEL, MIN_INPUT_LEN};
use crate::error::{Error, Result};

pub const FLOP_CONVENTION: &str = "multiply-accumulate = 2 FLOPs; elementwise primitive (add, mul, scale, \
relu, sigmoid) = 1 FLOP per element; softmax = 5 FLOPs per element; layer norm = 7 per element + 2 per row; \
recurrence = 16 FLOPs per step per hidden unit";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileReport {
    pub components: Vec<Component>,
    /// Input frames the FLOPs refer to; `None` for parameter-only reports.
    pub input_len: Option<usize>,
    /// Frames after subsampling.
    pub subsampled_len: Option<usize>,
    pub convention: String,
    pub assumptions: Vec<String>,
}

impl ProfileReport {
    pub fn total_params(&self) -> u64 {
        self.components.iter().map(|c| c.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.components.iter().map(|c| c.flops).sum()
    }

    pub fn gflops(&self) -> f64 {
        self.total_flops() as f64 / 1e9
    }

    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }

    /// Sum over the stacked-layer components (names starting `srupp.`).
    pub fn layer_subtotal(&self) -> (u64, u64) {
        self.components
            .iter()
            .filter(|c| c.name.starts_with("srupp."))
            .fold((0, 0), |(p, f), c| (p + c.params, f + c.flops))
    }

    pub fn render_text(&self) -> String {
        let width = self
            .components
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(5)
            .max(9);
        let mut s = String::new();
        writeln!(
            s,
            "{:<width$}  {:>14}  {:>18}",
            "component", "params", "flops"
        )
        .unwrap();
        for c in &self.components {
            writeln!(s, "{:<width$}  {:>14}  {:>18}", c.name, c.params, c.flops).unwrap();
        }
        writeln!(
            s,
            "{:<width$}  {:>14}  {:>18}",
            "total",
            self.total_params(),
            self.total_flops()
        )
        .unwrap();
        writeln!(
            s,
            "params: {:.3} M   GFlops: {:.3}",
            self.total_params() as f64 / 1e6,
            self.gflops()
        )
        .unwrap();
        if let (Some(l), Some(lp)) = (self.input_len, self.subsampled_len) {
            writeln!(s, "input length: {l} frames -> {lp} after subsampling").unwrap();
        }
        writeln!(s, "convention: {}", self.convention).unwrap();
        for a in &self.assumptions {
            writeln!(s, "assumption: {a}").unwrap();
        }
        s
    }

    pub fn render_csv(&self) -> String {
        let mut s = String::from("component,params,flops\n");
        for c in &self.components {
            writeln!(s, "{},{},{}", c.name, c.params, c.flops).unwrap();
        }
        writeln!(s, "total,{},{}", self.total_params(), self.total_flops()).unwrap();
        s
    }
}

fn assumptions(cfg: &EncoderConfig) -> Vec<String> {
    vec![
        format!("num_layers = {} (SRU++ layer count)", cfg.num_layers),
        format!(
            "subsampling = 2 conv stages, {CONV_KERNEL}x{CONV_KERNEL} kernel, stride 2 (4x in time), {} channels",
            cfg.subsample_channels
        ),
        format!(
            "direction = {}, layer_norm = {}, output_dim = {}",
            if cfg.bidirectional { "bidirectional" } else { "unidirectional" },
            cfg.layer_norm,
            cfg.output_dim.map_or("none".to_string(), |o| o.to_string())
        ),
        "encoder only; no decoder or CTC head".to_string(),
    ]
}

struct Shapes {
    t1: u64,
    f1: u64,
    t2: u64,
    f2: u64,
}

fn components(cfg: &EncoderConfig, shapes: Option<&Shapes>) -> Vec<Component> {
    let c = cfg.subsample_channels as u64;
    let k2 = (CONV_KERNEL * CONV_KERNEL) as u64;
    let d = cfg.embed_dim as u64;
    let da = cfg.attn_dim as u64;
    let n = cfg.num_layers as u64;
    let f2 = subsampled_len(cfg.feat_dim).unwrap_or(0) as u64;
    let dirs: u64 = if cfg.bidirectional { 2 } else { 1 };
    let hidden = d / dirs;
    let zero = Shapes {
        t1: 0,
        f1: 0,
        t2: 0,
        f2: 0,
    };
    let s = shapes.unwrap_or(&zero);
    let l = s.t2;
    let comp = |name: &str, params: u64, flops: u64| Component {
        name: name.to_string(),
        params,
        flops,
    };

    let mut out = vec![
        // conv taps + bias add + rectifier
        comp(
            "conv1",
            c * k2 + c,
            2 * c * s.t1 * s.f1 * k2 + 2 * c * s.t1 * s.f1,
        ),
        comp(
            "conv2",
            c * c * k2 + c,
            2 * c * s.t2 * s.f2 * c * k2 + 2 * c * s.t2 * s.f2,
        ),
        comp("input_linear", d * c * f2 + d, 2 * l * c * f2 * d + l * d),
    ];
    if cfg.layer_norm {
        out.push(comp("srupp.norm", n * 2 * d, n * (7 * l * d + 2 * l)));
    }
    out.extend([
        comp("srupp.query", n * da * d, n * 2 * da * d * l),
        comp("srupp.key_value", n * 2 * da * da, n * 2 * 2 * da * da * l),
        comp("srupp.attn_scores", 0, n * 2 * l * l * da),
        // 1/√d′ scaling + softmax
        comp("srupp.attn_softmax", 0, n * 6 * l * l),
        comp("srupp.attn_values", 0, n * 2 * l * l * da),
        // α·A and Q + α·A
        comp("srupp.residual", n, n * 2 * da * l),
        comp("srupp.out_proj", n * 3 * d * da, n * 2 * 3 * d * da * l),
        comp("srupp.recurrence", n * 4 * d, n * 16 * l * d),
    ]);
    if hidden != d {
        out.push(comp(
            "srupp.highway",
            n * dirs * hidden * d,
            n * dirs * 2 * l * d * hidden,
        ));
    }
    if let Some(o) = cfg.output_dim {
        let o = o as u64;
        out.push(comp("output_linear", o * d + o, 2 * l * d * o + l * o));
    }
    out
}

/// Closed-form parameter counts per component.
pub fn param_count(cfg: &EncoderConfig) -> ProfileReport {
    let mut components = components(cfg, None);
    components.iter_mut().for_each(|c| c.flops = 0);
    ProfileReport {
        components,
        input_len: None,
        subsampled_len: None,
        convention: FLOP_CONVENTION.to_string(),
        assumptions: assumptions(cfg),
    }
}

/// Closed-form parameter counts and forward FLOPs for an input of
/// `input_len` frames.
pub fn flops_estimate(cfg: &EncoderConfig, input_len: usize) -> Result<ProfileReport> {
    cfg.validate()?;
    if input_len < MIN_INPUT_LEN {
        return Err(Error::Config(format!(
            "sequence length {input_len} is below the minimum of {MIN_INPUT_LEN}"
        )));
    }
    let one = |n: usize| super::conv_out_len(n, CONV_KERNEL, super::CONV_STRIDE).unwrap() as u64;
    let t1 = one(input_len);
    let f1 = one(cfg.feat_dim);
    let shapes = Shapes {
        t1,
        f1,
        t2: one(t1 as usize),
        f2: one(f1 as usize),
    };
    Ok(ProfileReport {
        components: components(cfg, Some(&shapes)),
        input_len: Some(input_len),
        subsampled_len: Some(shapes.t2 as usize),
        convention: FLOP_CONVENTION.to_string(),
        assumptions: assumptions(cfg),
    })
}
