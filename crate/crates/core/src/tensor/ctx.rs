use std::cell::Cell;

use super::ops::{self, ElementwiseOp};
use super::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Fixed summation order, single-threaded reductions.
    #[default]
    Deterministic,
    /// Row-parallel matmul with reordered partial sums.
    Performance,
}

/// Per-call execution context: reduction mode plus an instrumented FLOP
/// counter.
///
/// Counting convention, applied by each wrapper below from the shapes it
/// actually executes:
/// - matmul `m×k · k×n`: one multiply-accumulate per term, 2 FLOPs each.
/// - conv2d: 2 FLOPs per kernel tap per output element.
/// - every elementwise primitive (add, sub, mul, scale, relu, sigmoid, exp):
///   1 FLOP per element.
/// - softmax: 5 FLOPs per element (max, subtract, exp, sum, divide).
///
/// Layers that run fused loops (the recurrence, layer norm) report their own
/// primitive counts through [`Ctx::tally`].
#[derive(Debug, Default)]
pub struct Ctx {
    mode: ExecMode,
    flops: Cell<u64>,
}

impl Ctx {
    pub fn new(mode: ExecMode) -> Self {
        Ctx {
            mode,
            flops: Cell::new(0),
        }
    }

    pub fn deterministic() -> Self {
        Self::new(ExecMode::Deterministic)
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    pub fn reset_flops(&self) {
        self.flops.set(0);
    }

    pub fn tally(&self, n: u64) {
        self.flops.set(self.flops.get() + n);
    }

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out = ops::matmul_with(a, b, self.mode)?;
        self.tally(2 * (a.shape()[0] * a.shape()[1] * b.shape()[1]) as u64);
        Ok(out)
    }

    pub fn softmax_rows(&self, a: &Tensor) -> Result<Tensor> {
        let out = ops::softmax_rows(a)?;
        self.tally(5 * a.numel() as u64);
        Ok(out)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Result<Tensor> {
        let out = ops::sigmoid(a)?;
        self.tally(a.numel() as u64);
        Ok(out)
    }

    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        let out = ops::relu(a)?;
        self.tally(a.numel() as u64);
        Ok(out)
    }

    pub fn scale(&self, a: &Tensor, s: f64) -> Result<Tensor> {
        let out = ops::scale(a, s)?;
        self.tally(a.numel() as u64);
        Ok(out)
    }

    pub fn elementwise(&self, op: ElementwiseOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out = ops::elementwise(op, a, b)?;
        self.tally(a.numel() as u64);
        Ok(out)
    }

    pub fn elementwise_rows(&self, op: ElementwiseOp, a: &Tensor, v: &Tensor) -> Result<Tensor> {
        let out = ops::elementwise_rows(op, a, v)?;
        self.tally(a.numel() as u64);
        Ok(out)
    }

    pub fn conv2d(&self, input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
        let out = ops::conv2d(input, kernels, stride)?;
        let taps: usize = kernels.shape()[1..].iter().product();
        self.tally(2 * (out.numel() * taps) as u64);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accumulate_per_context() {
        let ctx = Ctx::deterministic();
        let a = Tensor::ones(&[2, 3]);
        let b = Tensor::ones(&[3, 4]);
        ctx.matmul(&a, &b).unwrap();
        assert_eq!(ctx.flops(), 48);
        ctx.softmax_rows(&a).unwrap();
        assert_eq!(ctx.flops(), 48 + 30);
        let other = Ctx::deterministic();
        assert_eq!(other.flops(), 0);
        ctx.conv2d(&Tensor::ones(&[1, 7, 7]), &Tensor::ones(&[2, 1, 3, 3]), 2)
            .unwrap();
        assert_eq!(ctx.flops(), 78 + 2 * 18 * 9);
    }
}
