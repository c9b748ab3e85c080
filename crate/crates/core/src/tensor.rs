//! Dense row-major storage for conv weights, activations and matrices.

use crate::error::{Error, Result};
use crate::linalg::Scalar;

/// Rank-4 array in row-major `(d0, d1, d2, d3)` order.
///
/// For conv weights the axes are `(out_ch, in_ch, kh, kw)`; for image
/// batches they are `(batch, channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!("zero dimension in {dims:?}")));
        }
        let len = dims.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        Self::new(dims, vec![T::zero(); dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn out_ch(&self) -> usize {
        self.dims[0]
    }

    pub fn in_ch(&self) -> usize {
        self.dims[1]
    }

    pub fn kh(&self) -> usize {
        self.dims[2]
    }

    pub fn kw(&self) -> usize {
        self.dims[3]
    }

    /// Elements per outer slice (`in_ch · kh · kw` for weights).
    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Drops the outer slices listed in `idx` (sorted, strictly increasing).
    pub fn remove_out_channels(&self, idx: &[usize]) -> Result<Self> {
        check_indices(idx, self.dims[0])?;
        let step = self.slice_len();
        let mut data = Vec::with_capacity(self.data.len() - idx.len() * step);
        for (o, chunk) in self.data.chunks(step).enumerate() {
            if idx.binary_search(&o).is_err() {
                data.extend_from_slice(chunk);
            }
        }
        let dims = [self.dims[0] - idx.len(), self.dims[1], self.dims[2], self.dims[3]];
        Self::new(dims, data)
    }

    /// Drops the second-axis slices listed in `idx` from every outer slice.
    pub fn remove_in_channels(&self, idx: &[usize]) -> Result<Self> {
        check_indices(idx, self.dims[1])?;
        let plane = self.dims[2] * self.dims[3];
        let data: Vec<T> = self
            .data
            .chunks(plane)
            .enumerate()
            .filter(|(p, _)| idx.binary_search(&(p % self.dims[1])).is_err())
            .flat_map(|(_, c)| c.iter().copied())
            .collect();
        let dims = [self.dims[0], self.dims[1] - idx.len(), self.dims[2], self.dims[3]];
        Self::new(dims, data)
    }
}

/// Row-major 2-D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    left: cols,
                    right: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Removes the rows in `idx`; survivors keep their relative order.
    pub fn remove_rows(&self, idx: &[usize]) -> Result<Self> {
        check_indices(idx, self.rows)?;
        let mut data = Vec::with_capacity((self.rows - idx.len()) * self.cols);
        for i in 0..self.rows {
            if idx.binary_search(&i).is_err() {
                data.extend_from_slice(self.row(i));
            }
        }
        Self::new(self.rows - idx.len(), self.cols, data)
    }

    /// Removes the columns in `idx`; survivors keep their relative order.
    pub fn remove_cols(&self, idx: &[usize]) -> Result<Self> {
        check_indices(idx, self.cols)?;
        let keep: Vec<usize> = (0..self.cols).filter(|c| idx.binary_search(c).is_err()).collect();
        let mut data = Vec::with_capacity(self.rows * keep.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(keep.iter().map(|&c| row[c]));
        }
        Self::new(self.rows, keep.len(), data)
    }
}

/// Index set must be strictly increasing and below `len`.
pub(crate) fn check_indices(idx: &[usize], len: usize) -> Result<()> {
    if idx.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnsortedIndices);
    }
    match idx.last() {
        Some(&last) if last >= len => Err(Error::IndexOutOfRange { index: last, len }),
        _ => Ok(()),
    }
}

/// The flattened filters of one conv layer, one row per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSet<T = f32> {
    vectors: Matrix<T>,
}

impl<T: Scalar> FilterSet<T> {
    pub fn from_matrix(vectors: Matrix<T>) -> Result<Self> {
        if vectors.rows() == 0 || vectors.cols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "filter set must be non-empty, got {}x{}",
                vectors.rows(),
                vectors.cols()
            )));
        }
        Ok(FilterSet { vectors })
    }

    pub fn n(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix<T> {
        &self.vectors
    }

    pub fn filter(&self, i: usize) -> &[T] {
        self.vectors.row(i)
    }
}

pub fn flatten_filters<T: Scalar>(w: &Tensor4<T>) -> FilterSet<T> {
    // Row-major (out, in, kh, kw) already stores each filter contiguously.
    let vectors = Matrix {
        rows: w.out_ch(),
        cols: w.slice_len(),
        data: w.data().to_vec(),
    };
    FilterSet { vectors }
}

pub fn unflatten_filters<T: Scalar>(fs: &FilterSet<T>, dims: [usize; 4]) -> Result<Tensor4<T>> {
    if fs.n() != dims[0] || fs.dim() != dims[1] * dims[2] * dims[3] {
        return Err(Error::ShapeMismatch(format!(
            "filter set {}x{} does not fit dims {dims:?}",
            fs.n(),
            fs.dim()
        )));
    }
    Tensor4::new(dims, fs.vectors.data().to_vec())
}
