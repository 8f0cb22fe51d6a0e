//! Dense row-major tensors, the deterministic kernels built on them, and the
//! seeded generator used for every random draw in the crate.

mod ctx;
pub mod ops;
mod rng;
pub mod serialize;

pub use ctx::{Ctx, ExecMode};
pub use ops::ElementwiseOp;
pub use rng::SeededRng;

use crate::error::{Error, Result};

/// Storage precision of a tensor.
///
/// Values are always held as `f64`; a `F32` tensor keeps every stored value
/// exactly representable in single precision by rounding after each
/// operation, so serialization of either dtype is lossless.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    pub fn code(self) -> u64 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_in_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            DType::F32 => x as f32 as f64,
            DType::F64 => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], dtype: DType, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim(
                "tensor",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!(
                    "shape {shape:?} holds {numel} values but {} were given",
                    data.len()
                ),
            ));
        }
        let mut data = data;
        if dtype == DType::F32 {
            data.iter_mut().for_each(|v| *v = dtype.round(*v));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            dtype,
            data,
        };
        t.check_finite("tensor")?;
        Ok(t)
    }

    /// 64-bit tensor from row-major values.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::new(shape, DType::F64, data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "extents must be positive"
        );
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            dtype: DType::F64,
            data: vec![value; numel],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[1], value)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, dtype: DType, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, dtype, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for parameter updates. Values written here are rounded
    /// to the tensor dtype by [`Tensor::settle`].
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Re-applies dtype rounding after direct writes through `data_mut`.
    pub fn settle(&mut self) {
        if self.dtype == DType::F32 {
            let dt = self.dtype;
            self.data.iter_mut().for_each(|v| *v = dt.round(*v));
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor (or the leading extent of any tensor).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor; for higher ranks the product of the
    /// trailing extents.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = self.dtype.round(value);
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            assert!(i < n, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * n + i;
        }
        off
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.contains(&0) {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype: self.dtype,
            data: self.data.clone(),
        })
    }

    pub fn to_dtype(&self, dtype: DType) -> Self {
        let mut t = Tensor {
            shape: self.shape.clone(),
            dtype,
            data: self.data.clone(),
        };
        t.settle();
        t
    }

    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data: vec![0.0; self.numel()],
        }
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                op,
                format!(
                    "non-finite value {} at flat index {i} of {:?}",
                    self.data[i], self.shape
                ),
            ));
        }
        Ok(())
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Self {
        assert_eq!(
            self.rank(),
            2,
            "transpose needs a matrix, got {:?}",
            self.shape
        );
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor {
            shape: vec![n, m],
            dtype: self.dtype,
            data: out,
        }
    }

    /// Reverses the order of the leading axis (time reversal of a sequence).
    pub fn reverse_rows(&self) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(self.numel());
        for i in (0..self.rows()).rev() {
            data.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Tensor {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data,
        }
    }

    /// Concatenates two matrices with equal row counts along the column axis.
    pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Self> {
        if a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() {
            return Err(Error::dim(
                "concat_cols",
                format!("cannot concatenate {:?} and {:?}", a.shape, b.shape),
            ));
        }
        let (ca, cb) = (a.cols(), b.cols());
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for i in 0..a.rows() {
            data.extend_from_slice(&a.data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&b.data[i * cb..(i + 1) * cb]);
        }
        Ok(Tensor {
            shape: vec![a.rows(), ca + cb],
            dtype: a.dtype,
            data,
        })
    }

    /// Columns `[start, start + width)` of a matrix.
    pub fn slice_cols(&self, start: usize, width: usize) -> Self {
        assert_eq!(self.rank(), 2);
        let c = self.cols();
        assert!(start + width <= c, "column slice out of range");
        let mut data = Vec::with_capacity(self.rows() * width);
        for i in 0..self.rows() {
            data.extend_from_slice(&self.data[i * c + start..i * c + start + width]);
        }
        Tensor {
            shape: vec![self.rows(), width],
            dtype: self.dtype,
            data,
        }
    }

    /// Rows `[start, start + count)` along the leading axis.
    pub fn slice_rows(&self, start: usize, count: usize) -> Self {
        let c = self.cols();
        assert!(start + count <= self.rows(), "row slice out of range");
        let mut shape = self.shape.clone();
        shape[0] = count;
        Tensor {
            shape,
            dtype: self.dtype,
            data: self.data[start * c..(start + count) * c].to_vec(),
        }
    }

    /// In-place `self += other` for equally shaped tensors (gradient accumulation).
    pub fn accumulate(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "accumulate shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        self.settle();
    }

    /// Bitwise equality of shape, dtype and every stored value.
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.dtype == other.dtype
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Tensor of uniform draws in `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "extents must be positive"
        );
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.uniform(lo, hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            dtype: DType::F64,
            data,
        }
    }
}
