use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major batch of feature vectors: one example per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim(format!("matrix must be at least 1x1, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Copies the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_parts(idx.len(), self.cols, data)
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// Batch of multi-channel sequences, laid out `[batch][channel][time]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqBatch {
    batch: usize,
    channels: usize,
    len: usize,
    data: Vec<f64>,
}

impl SeqBatch {
    pub fn new(batch: usize, channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if batch == 0 || channels == 0 || len == 0 {
            return Err(Error::dim(format!(
                "sequence batch dims must be positive, got {batch}x{channels}x{len}"
            )));
        }
        if data.len() != batch * channels * len {
            return Err(Error::dim(format!(
                "{batch}x{channels}x{len} batch needs {} values, got {}",
                batch * channels * len,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in sequence batch".into()));
        }
        Ok(Self {
            batch,
            channels,
            len,
            data,
        })
    }

    pub(crate) fn from_parts(batch: usize, channels: usize, len: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(batch * channels * len, data.len());
        Self {
            batch,
            channels,
            len,
            data,
        }
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, t: usize) -> f64 {
        self.data[(b * self.channels + c) * self.len + t]
    }

    /// One example's `[channel][time]` block.
    #[inline]
    pub fn example(&self, b: usize) -> &[f64] {
        let n = self.channels * self.len;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Activations flowing between layers.
#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    Flat(Matrix),
    Seq(SeqBatch),
}

impl Tensor {
    pub fn batch(&self) -> usize {
        match self {
            Tensor::Flat(m) => m.rows(),
            Tensor::Seq(s) => s.batch(),
        }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            Tensor::Flat(m) => m.data(),
            Tensor::Seq(s) => s.data(),
        }
    }

    pub(crate) fn same_shape_with(&self, data: Vec<f64>) -> Tensor {
        match self {
            Tensor::Flat(m) => Tensor::Flat(Matrix::from_parts(m.rows(), m.cols(), data)),
            Tensor::Seq(s) => Tensor::Seq(SeqBatch::from_parts(s.batch(), s.channels(), s.len(), data)),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Tensor::Flat(m) => format!("({}, {})", m.rows(), m.cols()),
            Tensor::Seq(s) => format!("({}, {}, {})", s.batch(), s.channels(), s.len()),
        }
    }

    pub(crate) fn into_flat(self, what: &str) -> Result<Matrix> {
        match self {
            Tensor::Flat(m) => Ok(m),
            Tensor::Seq(s) => Err(Error::dim(format!(
                "{what} expects a flat batch, got sequences {}x{}x{}",
                s.batch(),
                s.channels(),
                s.len()
            ))),
        }
    }

    pub(crate) fn as_flat(&self, what: &str) -> Result<&Matrix> {
        match self {
            Tensor::Flat(m) => Ok(m),
            Tensor::Seq(_) => Err(Error::dim(format!("{what} expects a flat batch"))),
        }
    }

    pub(crate) fn as_seq(&self, what: &str) -> Result<&SeqBatch> {
        match self {
            Tensor::Seq(s) => Ok(s),
            Tensor::Flat(_) => Err(Error::dim(format!("{what} expects a sequence batch"))),
        }
    }
}

impl From<Matrix> for Tensor {
    fn from(m: Matrix) -> Self {
        Tensor::Flat(m)
    }
}

impl From<SeqBatch> for Tensor {
    fn from(s: SeqBatch) -> Self {
        Tensor::Seq(s)
    }
}
