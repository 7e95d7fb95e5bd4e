//! Dense third-order tensors stored as a stack of frontal slices.
//!
//! A [`Tensor3`] of shape `m × n × N` holds `N` matrices of size `m × n` in
//! one contiguous buffer. Slices are stored one after another (the slice index
//! varies slowest) and each slice is column-major, so a slice can be borrowed
//! as an `nalgebra` view without copying.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense column-major `f64` matrix used throughout the crate.
pub type Matrix = DMatrix<f64>;

/// Mode of a mode-n product. Only the two spatial modes are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `t ×₁ U`: every slice is premultiplied, `U · X_i`.
    First,
    /// `t ×₂ U`: every slice is postmultiplied by the transpose, `X_i · Uᵀ`.
    Second,
}

impl TryFrom<u8> for Mode {
    type Error = Error;

    fn try_from(mode: u8) -> Result<Self> {
        match mode {
            1 => Ok(Mode::First),
            2 => Ok(Mode::Second),
            other => Err(Error::InvalidArgument(format!(
                "mode must be 1 or 2, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    rows: usize,
    cols: usize,
    depth: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    /// All-zero tensor.
    ///
    /// # Panics
    ///
    /// Panics if any dimension is zero.
    pub fn zeros(rows: usize, cols: usize, depth: usize) -> Self {
        assert!(
            rows > 0 && cols > 0 && depth > 0,
            "tensor dimensions must be positive, got {rows}x{cols}x{depth}"
        );
        Tensor3 {
            rows,
            cols,
            depth,
            data: vec![0.0; rows * cols * depth],
        }
    }

    /// Wraps a slice-major, column-major-within-slice buffer.
    pub fn from_vec(rows: usize, cols: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || depth == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {rows}x{cols}x{depth}"
            )));
        }
        if data.len() != rows * cols * depth {
            return Err(Error::DimensionMismatch(format!(
                "buffer of length {} for a {rows}x{cols}x{depth} tensor",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Tensor3 {
            rows,
            cols,
            depth,
            data,
        })
    }

    /// Stacks equally-sized matrices as frontal slices.
    pub fn from_slices(slices: &[Matrix]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidArgument("no slices given".into()))?;
        let (rows, cols) = first.shape();
        let mut data = Vec::with_capacity(rows * cols * slices.len());
        for (i, s) in slices.iter().enumerate() {
            if s.shape() != (rows, cols) {
                return Err(Error::DimensionMismatch(format!(
                    "slice {i} is {}x{}, expected {rows}x{cols}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            data.extend_from_slice(s.as_slice());
        }
        Tensor3::from_vec(rows, cols, slices.len(), data)
    }

    /// Builds a tensor from `f(i, j, k)` where `k` is the slice index.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        depth: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Tensor3::zeros(rows, cols, depth);
        for k in 0..depth {
            for j in 0..cols {
                for i in 0..rows {
                    let idx = t.index(i, j, k);
                    t.data[idx] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `(rows, cols, depth)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.depth)
    }

    /// Raw buffer in storage order.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        k * self.rows * self.cols + j * self.rows + i
    }

    /// Element `(i, j)` of slice `k`.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        assert!(i < self.rows && j < self.cols && k < self.depth);
        self.data[self.index(i, j, k)]
    }

    fn slice_len(&self) -> usize {
        self.rows * self.cols
    }

    /// Borrowed view of slice `k`.
    ///
    /// # Panics
    ///
    /// Panics if `k >= depth`; use [`Tensor3::frontal_slice`] for a checked copy.
    pub fn slice(&self, k: usize) -> DMatrixView<'_, f64> {
        assert!(k < self.depth, "slice {k} out of range for depth {}", self.depth);
        let len = self.slice_len();
        DMatrixView::from_slice(&self.data[k * len..(k + 1) * len], self.rows, self.cols)
    }

    /// Mutable view of slice `k`; writes go straight into the tensor.
    pub fn slice_mut(&mut self, k: usize) -> Result<DMatrixViewMut<'_, f64>> {
        if k >= self.depth {
            return Err(Error::IndexOutOfRange {
                index: k,
                depth: self.depth,
            });
        }
        let len = self.slice_len();
        let (rows, cols) = (self.rows, self.cols);
        Ok(DMatrixViewMut::from_slice(
            &mut self.data[k * len..(k + 1) * len],
            rows,
            cols,
        ))
    }

    /// Owned copy of slice `k`.
    pub fn frontal_slice(&self, k: usize) -> Result<Matrix> {
        if k >= self.depth {
            return Err(Error::IndexOutOfRange {
                index: k,
                depth: self.depth,
            });
        }
        Ok(self.slice(k).into_owned())
    }

    /// Overwrites slice `k` with `value`.
    pub fn set_slice(&mut self, k: usize, value: &Matrix) -> Result<()> {
        if value.shape() != (self.rows, self.cols) {
            return Err(Error::DimensionMismatch(format!(
                "cannot store a {}x{} matrix in a {}x{} slice",
                value.nrows(),
                value.ncols(),
                self.rows,
                self.cols
            )));
        }
        self.slice_mut(k)?.copy_from(value);
        Ok(())
    }

    /// Iterates over borrowed slice views in index order.
    pub fn slices(&self) -> impl ExactSizeIterator<Item = DMatrixView<'_, f64>> + '_ {
        (0..self.depth).map(move |k| self.slice(k))
    }

    /// Owned copies of every slice.
    pub fn to_slices(&self) -> Vec<Matrix> {
        self.slices().map(|s| s.into_owned()).collect()
    }

    /// Applies `f` to every slice in parallel and stacks the results.
    ///
    /// Each output slice depends only on its own input, so the result does not
    /// depend on scheduling.
    pub fn map_slices<F>(&self, f: F) -> Result<Tensor3>
    where
        F: Fn(usize, DMatrixView<'_, f64>) -> Matrix + Sync + Send,
    {
        let out: Vec<Matrix> = (0..self.depth)
            .into_par_iter()
            .map(|k| f(k, self.slice(k)))
            .collect();
        Tensor3::from_slices(&out)
    }

    /// Elementwise map over the whole buffer.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            rows: self.rows,
            cols: self.cols,
            depth: self.depth,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two tensors of identical shape.
    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        self.check_same_shape(other)?;
        Ok(Tensor3 {
            rows: self.rows,
            cols: self.cols,
            depth: self.depth,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Tensor3) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, factor: f64) -> Tensor3 {
        self.map(|v| v * factor)
    }

    /// Frobenius norm of the whole tensor.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius norm of each slice, in slice order.
    pub fn slice_norms(&self) -> Vec<f64> {
        self.slices().map(|s| s.norm()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mode-n product along mode 1 or 2.
    ///
    /// For `Mode::First`, `u` must have `rows` columns and every slice becomes
    /// `u · X_i`. For `Mode::Second`, `u` must have `cols` columns and every
    /// slice becomes `X_i · uᵀ`. Hence `(t ×₁ A ×₂ B)_i = A X_i Bᵀ`.
    pub fn mode_product(&self, u: &Matrix, mode: Mode) -> Result<Tensor3> {
        let expected = match mode {
            Mode::First => self.rows,
            Mode::Second => self.cols,
        };
        if u.ncols() != expected {
            return Err(Error::DimensionMismatch(format!(
                "mode-{} product needs a matrix with {expected} columns, got {}x{}",
                if mode == Mode::First { 1 } else { 2 },
                u.nrows(),
                u.ncols()
            )));
        }
        match mode {
            Mode::First => self.map_slices(|_, x| u * x),
            Mode::Second => self.map_slices(|_, x| x * u.transpose()),
        }
    }
}

impl std::ops::Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;

    fn index(&self, (i, j, k): (usize, usize, usize)) -> &f64 {
        assert!(i < self.rows && j < self.cols && k < self.depth);
        &self.data[Tensor3::index(self, i, j, k)]
    }
}

/// Low-rank part of the model: `L_i = A R_i Bᵀ` for every core slice.
pub fn reconstruct(core: &Tensor3, a: &Matrix, b: &Matrix) -> Result<Tensor3> {
    let r = core.rows();
    if core.cols() != r {
        return Err(Error::DimensionMismatch(format!(
            "core slices must be square, got {}x{}",
            core.rows(),
            core.cols()
        )));
    }
    if a.ncols() != r || b.ncols() != r {
        return Err(Error::DimensionMismatch(format!(
            "bases must have {r} columns, got A {}x{} and B {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let bt = b.transpose();
    core.map_slices(|_, rk| a * rk * &bt)
}
