//! Simple recurrent unit.
//!
//! One direction computes, for each step `t` and hidden unit `j`,
//!
//! ```text
//! f[t] = σ(U[t,0] + v_f ⊙ c[t−1] + b_f)
//! r[t] = σ(U[t,1] + v_r ⊙ c[t−1] + b_r)
//! c[t] = f[t] ⊙ c[t−1] + (1 − f[t]) ⊙ U[t,2]
//! h[t] = r[t] ⊙ c[t] + (1 − r[t]) ⊙ x̃[t]
//! ```
//!
//! where `U` comes from a single fused projection of the input and `x̃` is the
//! highway input: `x` itself when its width equals the hidden width, otherwise
//! a learned linear projection of `x`. Only `c` carries state across time, so
//! every hidden unit runs an independent scalar recurrence.

use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::tensor::ops::sigmoid_scalar;
use crate::tensor::{Ctx, DType, SeededRng, Tensor};

/// Elementwise parameters of one recurrence direction.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrenceParams {
    pub v_forget: Tensor,
    pub v_reset: Tensor,
    pub b_forget: Tensor,
    pub b_reset: Tensor,
    /// `hidden × d_in` projection for the highway term, present only when the
    /// input width differs from the hidden width.
    pub highway: Option<Tensor>,
}

impl RecurrenceParams {
    pub fn new(d_in: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let highway = (d_in != hidden).then(|| {
            let a = (3.0 / d_in as f64).sqrt();
            Tensor::uniform(&[hidden, d_in], -a, a, rng)
        });
        RecurrenceParams {
            v_forget: Tensor::zeros(&[hidden]),
            v_reset: Tensor::zeros(&[hidden]),
            b_forget: Tensor::zeros(&[hidden]),
            b_reset: Tensor::zeros(&[hidden]),
            highway,
        }
    }

    pub fn hidden(&self) -> usize {
        self.v_forget.numel()
    }

    /// Width of the input this direction's highway term accepts.
    pub fn input_width(&self) -> usize {
        self.highway
            .as_ref()
            .map_or(self.hidden(), |p| p.shape()[1])
    }

    pub fn to_dtype(&self, dtype: DType) -> Self {
        let mut p = self.clone();
        p.visit_mut("", &mut |_, t| *t = t.to_dtype(dtype));
        p
    }
}

impl Parameters for RecurrenceParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "v_f"), &self.v_forget);
        f(join(prefix, "v_r"), &self.v_reset);
        f(join(prefix, "b_f"), &self.b_forget);
        f(join(prefix, "b_r"), &self.b_reset);
        if let Some(p) = &self.highway {
            f(join(prefix, "highway"), p);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "v_f"), &mut self.v_forget);
        f(join(prefix, "v_r"), &mut self.v_reset);
        f(join(prefix, "b_f"), &mut self.b_forget);
        f(join(prefix, "b_r"), &mut self.b_reset);
        if let Some(p) = &mut self.highway {
            f(join(prefix, "highway"), p);
        }
    }
}

/// Parameters of one SRU direction: the stacked `[W; W′; W″]` block plus the
/// elementwise recurrence parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SruParams {
    /// `(3·hidden) × d_in`; rows `[0,h)` feed the forget gate, `[h,2h)` the
    /// reset gate and `[2h,3h)` the candidate.
    pub w: Tensor,
    pub rec: RecurrenceParams,
}

impl SruParams {
    /// Matrices uniform in `±√(3/d_in)`, vectors zero.
    pub fn new(d_in: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let a = (3.0 / d_in as f64).sqrt();
        let w = Tensor::uniform(&[3 * hidden, d_in], -a, a, rng);
        SruParams {
            w,
            rec: RecurrenceParams::new(d_in, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.rec.hidden()
    }

    pub fn input_width(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        if self.w.rank() != 2 || self.w.shape()[0] != 3 * h {
            return Err(Error::Config(format!(
                "stacked projection must have 3·{h} rows, has shape {:?}",
                self.w.shape()
            )));
        }
        for t in [&self.rec.v_reset, &self.rec.b_forget, &self.rec.b_reset] {
            if t.numel() != h {
                return Err(Error::Config(format!(
                    "recurrence vector of length {} for hidden {h}",
                    t.numel()
                )));
            }
        }
        if self.rec.input_width() != self.input_width() {
            return Err(Error::Config(format!(
                "highway expects width {} but the projection takes {}",
                self.rec.input_width(),
                self.input_width()
            )));
        }
        Ok(())
    }
}

impl Parameters for SruParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "w"), &self.w);
        self.rec.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w"), &mut self.w);
        self.rec.visit_mut(prefix, f);
    }
}

/// Internal memory `c` of one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct SruState {
    pub c: Tensor,
}

impl SruState {
    pub fn zeros(hidden: usize) -> Self {
        SruState {
            c: Tensor::zeros(&[hidden]),
        }
    }
}

/// Forward intermediates of one recurrence pass.
#[derive(Clone, Debug)]
pub struct RecurrenceTape {
    pub x: Tensor,
    /// Highway input actually mixed into `h` (projected when widths differ).
    pub x_highway: Tensor,
    pub u: Tensor,
    /// `L × hidden`, row `t` is `f[t]`.
    pub f: Vec<f64>,
    pub r: Vec<f64>,
    /// `(L+1) × hidden`, row 0 is `c[0]`.
    pub c: Vec<f64>,
}

impl RecurrenceTape {
    pub fn steps(&self) -> usize {
        self.x.rows()
    }
}

/// Forward intermediates of one SRU direction.
#[derive(Clone, Debug)]
pub struct SruTape {
    pub x: Tensor,
    pub rec: RecurrenceTape,
}

fn check_u(op: &'static str, u: &Tensor, steps: usize, hidden: usize) -> Result<()> {
    if u.rank() != 3 || u.shape() != [steps, 3, hidden] {
        return Err(Error::dim(
            op,
            format!("U must be {steps}×3×{hidden}, got {:?}", u.shape()),
        ));
    }
    Ok(())
}

fn check_input(op: &'static str, x: &Tensor, width: usize) -> Result<()> {
    if x.rank() != 2 || x.cols() != width {
        return Err(Error::dim(
            op,
            format!("input must be L×{width}, got {:?}", x.shape()),
        ));
    }
    x.check_finite(op)
}

/// Fused projection `U = ([W; W′; W″] · Xᵀ)ᵀ` reshaped to `L×3×hidden`.
pub fn project_u(ctx: &Ctx, params: &SruParams, x: &Tensor) -> Result<Tensor> {
    check_input("sru_project_u", x, params.input_width())?;
    let ut = ctx.matmul(&params.w, &x.transpose())?;
    ut.transpose().reshape(&[x.rows(), 3, params.hidden()])
}

/// The highway input `x̃`: `x` itself or its learned projection.
fn highway_input(ctx: &Ctx, rec: &RecurrenceParams, x: &Tensor) -> Result<Tensor> {
    match &rec.highway {
        Some(p) => ctx.matmul(x, &p.transpose()),
        None => Ok(x.clone()),
    }
}

/// Runs the elementwise recurrence in time order.
///
/// `x` is the layer input (width `d_in`), used only for the highway term.
/// Hidden units are independent; only the time loop is sequential.
pub fn recurrence(
    ctx: &Ctx,
    rec: &RecurrenceParams,
    u: &Tensor,
    x: &Tensor,
    c0: &SruState,
) -> Result<(Tensor, RecurrenceTape)> {
    let hidden = rec.hidden();
    let steps = x.rows();
    check_input("sru_recurrence", x, rec.input_width())?;
    check_u("sru_recurrence", u, steps, hidden)?;
    if c0.c.numel() != hidden {
        return Err(Error::dim(
            "sru_recurrence",
            format!(
                "initial state has {} entries, hidden is {hidden}",
                c0.c.numel()
            ),
        ));
    }
    let dt = u.dtype();
    let xh = highway_input(ctx, rec, x)?;
    let (ud, xd) = (u.data(), xh.data());
    let (vf, vr) = (rec.v_forget.data(), rec.v_reset.data());
    let (bf, br) = (rec.b_forget.data(), rec.b_reset.data());

    let mut f = vec![0.0; steps * hidden];
    let mut r = vec![0.0; steps * hidden];
    let mut c = vec![0.0; (steps + 1) * hidden];
    let mut h = vec![0.0; steps * hidden];
    c[..hidden].copy_from_slice(c0.c.data());

    for t in 0..steps {
        let urow = &ud[t * 3 * hidden..(t + 1) * 3 * hidden];
        for j in 0..hidden {
            let prev = c[t * hidden + j];
            let ft = dt.round(sigmoid_scalar(urow[j] + vf[j] * prev + bf[j]));
            let rt = dt.round(sigmoid_scalar(urow[hidden + j] + vr[j] * prev + br[j]));
            let ct = dt.round(ft * prev + (1.0 - ft) * urow[2 * hidden + j]);
            let ht = dt.round(rt * ct + (1.0 - rt) * xd[t * hidden + j]);
            if !ct.is_finite() || !ht.is_finite() {
                return Err(Error::numeric(
                    "sru_recurrence",
                    format!("non-finite state at step {t}, dimension {j} (c = {ct}, h = {ht})"),
                ));
            }
            f[t * hidden + j] = ft;
            r[t * hidden + j] = rt;
            c[(t + 1) * hidden + j] = ct;
            h[t * hidden + j] = ht;
        }
        // 4 primitives for each of f, r, c and h.
        ctx.tally(16 * hidden as u64);
    }

    let h = Tensor::from_parts(vec![steps, hidden], dt, h);
    let tape = RecurrenceTape {
        x: x.clone(),
        x_highway: xh,
        u: u.clone(),
        f,
        r,
        c,
    };
    Ok((h, tape))
}

/// Direct scalar transcription of the recurrence, one step and one hidden
/// unit at a time. Ground truth for equivalence tests.
pub fn recurrence_oracle(
    rec: &RecurrenceParams,
    u: &Tensor,
    x: &Tensor,
    c0: &SruState,
) -> Result<Tensor> {
    let hidden = rec.hidden();
    let steps = x.rows();
    check_input("sru_recurrence_oracle", x, rec.input_width())?;
    check_u("sru_recurrence_oracle", u, steps, hidden)?;
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut h = Tensor::zeros(&[steps, hidden]);
    let mut c: Vec<f64> = c0.c.data().to_vec();
    for t in 0..steps {
        for j in 0..hidden {
            let xt = match &rec.highway {
                Some(p) => {
                    let mut s = 0.0;
                    for k in 0..x.cols() {
                        s += p.at(&[j, k]) * x.at(&[t, k]);
                    }
                    s
                }
                None => x.at(&[t, j]),
            };
            let f = sig(u.at(&[t, 0, j]) + rec.v_forget.at(&[j]) * c[j] + rec.b_forget.at(&[j]));
            let r = sig(u.at(&[t, 1, j]) + rec.v_reset.at(&[j]) * c[j] + rec.b_reset.at(&[j]));
            c[j] = f * c[j] + (1.0 - f) * u.at(&[t, 2, j]);
            let ht = r * c[j] + (1.0 - r) * xt;
            if !ht.is_finite() {
                return Err(Error::numeric(
                    "sru_recurrence_oracle",
                    format!("non-finite state at step {t}, dimension {j}"),
                ));
            }
            h.set(&[t, j], ht);
        }
    }
    Ok(h)
}

/// Reverse-time pass through the recurrence.
///
/// Returns `(grad_u, grad_x, grad_params)` where `grad_x` covers only the
/// highway path.
pub fn recurrence_backward(
    ctx: &Ctx,
    rec: &RecurrenceParams,
    tape: &RecurrenceTape,
    grad_h: &Tensor,
) -> Result<(Tensor, Tensor, RecurrenceParams)> {
    let hidden = rec.hidden();
    let steps = tape.steps();
    if grad_h.shape() != [steps, hidden] {
        return Err(Error::dim(
            "sru_backward",
            format!(
                "gradient must be {steps}×{hidden}, got {:?}",
                grad_h.shape()
            ),
        ));
    }
    let (ud, xd, gd) = (tape.u.data(), tape.x_highway.data(), grad_h.data());
    let (vf, vr) = (rec.v_forget.data(), rec.v_reset.data());
    let mut du = vec![0.0; steps * 3 * hidden];
    let mut dxh = vec![0.0; steps * hidden];
    let mut dvf = vec![0.0; hidden];
    let mut dvr = vec![0.0; hidden];
    let mut dbf = vec![0.0; hidden];
    let mut dbr = vec![0.0; hidden];

    for j in 0..hidden {
        let mut dc_next = 0.0;
        for t in (0..steps).rev() {
            let i = t * hidden + j;
            let prev = tape.c[i];
            let ct = tape.c[i + hidden];
            let (ft, rt) = (tape.f[i], tape.r[i]);
            let cand = ud[t * 3 * hidden + 2 * hidden + j];
            let gh = gd[i];

            let dr = gh * (ct - xd[i]);
            dxh[i] = gh * (1.0 - rt);
            let dc = gh * rt + dc_next;
            let dar = dr * rt * (1.0 - rt);
            let df = dc * (prev - cand);
            let daf = df * ft * (1.0 - ft);

            let urow = t * 3 * hidden;
            du[urow + j] = daf;
            du[urow + hidden + j] = dar;
            du[urow + 2 * hidden + j] = dc * (1.0 - ft);
            dbf[j] += daf;
            dbr[j] += dar;
            dvf[j] += daf * prev;
            dvr[j] += dar * prev;
            dc_next = dc * ft + daf * vf[j] + dar * vr[j];
        }
    }

    let dt = tape.u.dtype();
    let dxh = Tensor::from_parts(vec![steps, hidden], dt, dxh);
    let (grad_x, grad_highway) = match &rec.highway {
        Some(p) => (
            ctx.matmul(&dxh, p)?,
            Some(ctx.matmul(&dxh.transpose(), &tape.x)?),
        ),
        None => (dxh, None),
    };
    let vec_t = |v: Vec<f64>| Tensor::from_parts(vec![hidden], dt, v);
    let grads = RecurrenceParams {
        v_forget: vec_t(dvf),
        v_reset: vec_t(dvr),
        b_forget: vec_t(dbf),
        b_reset: vec_t(dbr),
        highway: grad_highway,
    };
    let grad_u = Tensor::from_parts(vec![steps, 3, hidden], dt, du);
    grad_u.check_finite("sru_backward")?;
    Ok((grad_u, grad_x, grads))
}

/// One direction: fused projection followed by the recurrence from `c[0] = 0`.
pub fn direction_forward(ctx: &Ctx, params: &SruParams, x: &Tensor) -> Result<(Tensor, SruTape)> {
    let u = project_u(ctx, params, x)?;
    let (h, rec) = recurrence(ctx, &params.rec, &u, x, &SruState::zeros(params.hidden()))?;
    Ok((h, SruTape { x: x.clone(), rec }))
}

/// Gradients of one direction with respect to its input and parameters.
pub fn direction_backward(
    ctx: &Ctx,
    params: &SruParams,
    tape: &SruTape,
    grad_h: &Tensor,
) -> Result<(Tensor, SruParams)> {
    let (grad_u, grad_x_highway, grad_rec) =
        recurrence_backward(ctx, &params.rec, &tape.rec, grad_h)?;
    let steps = tape.x.rows();
    let gu = grad_u.reshape(&[steps, 3 * params.hidden()])?;
    let grad_w = ctx.matmul(&gu.transpose(), &tape.x)?;
    let mut grad_x = ctx.matmul(&gu, &params.w)?;
    grad_x.accumulate(&grad_x_highway);
    Ok((
        grad_x,
        SruParams {
            w: grad_w,
            rec: grad_rec,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Direction {
    #[default]
    Unidirectional,
    Bidirectional,
}

/// A full SRU layer: one direction, or two independent ones whose outputs
/// are concatenated along the feature axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SruLayer {
    pub forward: SruParams,
    /// Runs over the time-reversed input; its output is reversed back.
    pub backward: Option<SruParams>,
}

/// Tape of an [`SruLayer`] forward call.
#[derive(Clone, Debug)]
pub struct SruLayerTape {
    pub forward: SruTape,
    pub backward: Option<SruTape>,
}

impl SruLayer {
    /// A layer producing `d_out` features. Bidirectional layers split `d_out`
    /// evenly between the two directions.
    pub fn new(
        d_in: usize,
        d_out: usize,
        direction: Direction,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        match direction {
            Direction::Unidirectional => Ok(SruLayer {
                forward: SruParams::new(d_in, d_out, rng),
                backward: None,
            }),
            Direction::Bidirectional => {
                if !d_out.is_multiple_of(2) {
                    return Err(Error::Config(format!(
                        "bidirectional SRU needs an even hidden size, got {d_out}"
                    )));
                }
                let forward = SruParams::new(d_in, d_out / 2, rng);
                let backward = SruParams::new(d_in, d_out / 2, rng);
                Ok(SruLayer {
                    forward,
                    backward: Some(backward),
                })
            }
        }
    }

    pub fn direction(&self) -> Direction {
        if self.backward.is_some() {
            Direction::Bidirectional
        } else {
            Direction::Unidirectional
        }
    }

    pub fn output_width(&self) -> usize {
        self.forward.hidden() + self.backward.as_ref().map_or(0, SruParams::hidden)
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<(Tensor, SruLayerTape)> {
        let (h_fwd, t_fwd) = direction_forward(ctx, &self.forward, x)?;
        match &self.backward {
            None => Ok((
                h_fwd,
                SruLayerTape {
                    forward: t_fwd,
                    backward: None,
                },
            )),
            Some(p) => {
                let (h_rev, t_bwd) = direction_forward(ctx, p, &x.reverse_rows())?;
                let h = Tensor::concat_cols(&h_fwd, &h_rev.reverse_rows())?;
                Ok((
                    h,
                    SruLayerTape {
                        forward: t_fwd,
                        backward: Some(t_bwd),
                    },
                ))
            }
        }
    }

    pub fn backward(
        &self,
        ctx: &Ctx,
        tape: &SruLayerTape,
        grad_h: &Tensor,
    ) -> Result<(Tensor, SruLayer)> {
        if grad_h.rank() != 2 || grad_h.cols() != self.output_width() {
            return Err(Error::dim(
                "sru_backward",
                format!(
                    "gradient must have {} columns, got {:?}",
                    self.output_width(),
                    grad_h.shape()
                ),
            ));
        }
        let hf = self.forward.hidden();
        match (&self.backward, &tape.backward) {
            (None, None) => {
                let (gx, gp) = direction_backward(ctx, &self.forward, &tape.forward, grad_h)?;
                Ok((
                    gx,
                    SruLayer {
                        forward: gp,
                        backward: None,
                    },
                ))
            }
            (Some(p), Some(tb)) => {
                let (mut gx, gf) = direction_backward(
                    ctx,
                    &self.forward,
                    &tape.forward,
                    &grad_h.slice_cols(0, hf),
                )?;
                let g_rev = grad_h.slice_cols(hf, p.hidden()).reverse_rows();
                let (gx_rev, gb) = direction_backward(ctx, p, tb, &g_rev)?;
                gx.accumulate(&gx_rev.reverse_rows());
                Ok((
                    gx,
                    SruLayer {
                        forward: gf,
                        backward: Some(gb),
                    },
                ))
            }
            _ => Err(Error::dim(
                "sru_backward",
                "tape direction does not match the layer",
            )),
        }
    }

    pub fn to_dtype(&self, dtype: DType) -> Self {
        let mut l = self.clone();
        l.visit_mut("", &mut |_, t| *t = t.to_dtype(dtype));
        l
    }
}

impl Parameters for SruLayer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.forward.visit(&join(prefix, "fwd"), f);
        if let Some(p) = &self.backward {
            p.visit(&join(prefix, "bwd"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.forward.visit_mut(&join(prefix, "fwd"), f);
        if let Some(p) = &mut self.backward {
            p.visit_mut(&join(prefix, "bwd"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_t(shape: &[usize], rng: &mut SeededRng) -> Tensor {
        Tensor::uniform(shape, -1.0, 1.0, rng)
    }

    fn random_rec(d_in: usize, hidden: usize, rng: &mut SeededRng) -> RecurrenceParams {
        let mut p = RecurrenceParams::new(d_in, hidden, rng);
        p.visit_mut("", &mut |_, t| *t = rand_t(t.shape(), rng));
        p
    }

    #[test]
    fn zero_weights_give_zero_u() {
        let ctx = Ctx::deterministic();
        let mut rng = SeededRng::new(0);
        let mut p = SruParams::new(3, 2, &mut rng);
        p.w = Tensor::zeros(&[6, 3]);
        let u = project_u(&ctx, &p, &rand_t(&[4, 3], &mut rng)).unwrap();
        assert_eq!(u.shape(), &[4, 3, 2]);
        assert!(u.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_projection_case() {
        let ctx = Ctx::deterministic();
        let p = SruParams {
            w: Tensor::ones(&[3, 1]),
            rec: RecurrenceParams::new(1, 1, &mut SeededRng::new(0)),
        };
        let x = Tensor::from_vec(&[2, 1], vec![2.0, 3.0]).unwrap();
        let u = project_u(&ctx, &p, &x).unwrap();
        assert_eq!(u.data(), &[2., 2., 2., 3., 3., 3.]);
    }

    #[test]
    fn fused_projection_equals_three_matmuls() {
        let ctx = Ctx::deterministic();
        let mut rng = SeededRng::new(5);
        let p = SruParams::new(2, 2, &mut rng);
        let x = rand_t(&[3, 2], &mut rng);
        let u = project_u(&ctx, &p, &x).unwrap();
        for g in 0..3 {
            let wg = p.w.slice_rows(2 * g, 2);
            let part = crate::tensor::ops::matmul(&wg, &x.transpose())
                .unwrap()
                .transpose();
            for t in 0..3 {
                for j in 0..2 {
                    assert_eq!(u.at(&[t, g, j]).to_bits(), part.at(&[t, j]).to_bits());
                }
            }
        }
    }

    #[test]
    fn zero_parameter_recurrence() {
        let ctx = Ctx::deterministic();
        let mut rng = SeededRng::new(1);
        let rec = RecurrenceParams::new(3, 3, &mut rng);
        let x = rand_t(&[5, 3], &mut rng);
        let u = Tensor::zeros(&[5, 3, 3]);
        let (h, tape) = recurrence(&ctx, &rec, &u, &x, &SruState::zeros(3)).unwrap();
        assert!(tape.f.iter().chain(&tape.r).all(|&g| g == 0.5));
        assert!(tape.c.iter().all(|&c| c == 0.0));
        for (hv, xv) in h.data().iter().zip(x.data()) {
            assert_eq!(*hv, 0.5 * xv);
        }
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let ctx = Ctx::deterministic();
        let mut rng = SeededRng::new(2);
        let mut rec = RecurrenceParams::new(2, 2, &mut rng);
        rec.b_forget = Tensor::full(&[2], 20.0);
        // Each step leaks (1 − σ(20)) ≈ 2e-9 of |U − c| into the memory.
        let u = rand_t(&[3, 3, 2], &mut rng);
        let x = rand_t(&[3, 2], &mut rng);
        let c0 = SruState {
            c: Tensor::from_vec(&[2], vec![0.7, -1.3]).unwrap(),
        };
        let (_, tape) = recurrence(&ctx, &rec, &u, &x, &c0).unwrap();
        let reach = u
            .data()
            .iter()
            .chain(c0.c.data())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let v_max = rec
            .v_forget
            .data()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        // The gate argument is at least 20 − |U| − |v_f|·|c|.
        let leak = 1.0 - crate::tensor::ops::sigmoid_scalar(20.0 - reach - v_max * (reach + 1.0));
        for t in 1..=3 {
            for j in 0..2 {
                let drift = (tape.c[t * 2 + j] - c0.c.data()[j]).abs();
                assert!(
                    drift <= t as f64 * leak * 2.0 * reach * (1.0 + 1e-9),
                    "{drift}"
                );
                assert!(drift < 1e-7);
            }
        }
    }

    #[test]
    fn oracle_matches_hand_computation() {
        // L = 2, d = 1, every quantity written out by hand.
        let rec = RecurrenceParams {
            v_forget: Tensor::scalar(0.5),
            v_reset: Tensor::scalar(-0.25),
            b_forget: Tensor::scalar(0.1),
            b_reset: Tensor::scalar(-0.2),
            highway: None,
        };
        let u = Tensor::from_vec(&[2, 3, 1], vec![0.3, -0.4, 1.5, -0.6, 0.8, -2.0]).unwrap();
        let x = Tensor::from_vec(&[2, 1], vec![0.9, -0.7]).unwrap();
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let f1 = s(0.3 + 0.1);
        let r1 = s(-0.4 - 0.2);
        let c1 = (1.0 - f1) * 1.5;
        let h1 = r1 * c1 + (1.0 - r1) * 0.9;
        let f2 = s(-0.6 + 0.5 * c1 + 0.1);
        let r2 = s(0.8 - 0.25 * c1 - 0.2);
        let c2 = f2 * c1 + (1.0 - f2) * -2.0;
        let h2 = r2 * c2 + (1.0 - r2) * -0.7;
        let h = recurrence_oracle(&rec, &u, &x, &SruState::zeros(1)).unwrap();
        assert!((h.data()[0] - h1).abs() < 1e-15);
        assert!((h.data()[1] - h2).abs() < 1e-15);
        let (hb, _) = recurrence(&Ctx::deterministic(), &rec, &u, &x, &SruState::zeros(1)).unwrap();
        assert!(hb.max_abs_diff(&h) <= 1e-12);
    }

    #[test]
    fn batched_matches_oracle_with_highway() {
        let ctx = Ctx::deterministic();
        let mut rng = SeededRng::new(9);
        let rec = random_rec(4, 3, &mut rng);
        assert!(rec.highway.is_some());
        let u = rand_t(&[5, 3, 3], &mut rng);
        let x = rand_t(&[5, 4], &mut rng);
        let c0 = SruState {
            c: rand_t(&[3], &mut rng),
        };
        let (h, _) = recurrence(&ctx, &rec, &u, &x, &c0).unwrap();
        let o = recurrence_oracle(&rec, &u, &x, &c0).unwrap();
        assert!(h.max_abs_diff(&o) <= 1e-12);
    }

    #[test]
    fn non_finite_reports_step_and_dimension() {
        let ctx = Ctx::deterministic();
        let rec = RecurrenceParams::new(2, 2, &mut SeededRng::new(3));
        // Finite inputs keep every state a convex combination, so poison U directly.
        let mut u = Tensor::zeros(&[3, 3, 2]);
        u.data_mut()[6 + 2 * 2 + 1] = f64::NAN;
        let x = Tensor::zeros(&[3, 2]);
        match recurrence(&ctx, &rec, &u, &x, &SruState::zeros(2)) {
            Err(Error::Numeric { detail, .. }) => {
                assert!(
                    detail.contains("step 1") && detail.contains("dimension 1"),
                    "{detail}"
                )
            }
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let ctx = Ctx::deterministic();
        let mut rng = SeededRng::new(4);
        let layer = SruLayer::new(3, 4, Direction::Bidirectional, &mut rng).unwrap();
        let x = rand_t(&[5, 3], &mut rng);
        let (h, tape) = layer.forward(&ctx, &x).unwrap();
        let (gx, gp) = layer.backward(&ctx, &tape, &h.zeros_like()).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gp.all_zero());
    }

    #[test]
    fn odd_bidirectional_width_rejected() {
        let err =
            SruLayer::new(3, 5, Direction::Bidirectional, &mut SeededRng::new(0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn parameter_names() {
        let layer = SruLayer::new(3, 4, Direction::Bidirectional, &mut SeededRng::new(0)).unwrap();
        let names: Vec<String> = layer.named("sru.0").into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "sru.0.fwd.w");
        assert!(names.contains(&"sru.0.bwd.highway".to_string()));
        assert!(names.contains(&"sru.0.fwd.v_r".to_string()));
    }
}
