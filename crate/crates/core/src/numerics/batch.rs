use super::{Matrix, Real};
use crate::error::{dim_err, Result};

/// A `(batch, len, dim)` tensor stored row-major, one token vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch<T = f64> {
    batch: usize,
    len: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> SequenceBatch<T> {
    pub fn zeros(batch: usize, len: usize, dim: usize) -> Self {
        Self {
            batch,
            len,
            dim,
            data: vec![T::zero(); batch * len * dim],
        }
    }

    pub fn from_vec(batch: usize, len: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * len * dim {
            return dim_err(format!(
                "{} values cannot fill a ({batch}, {len}, {dim}) batch",
                data.len()
            ));
        }
        Ok(Self {
            batch,
            len,
            dim,
            data,
        })
    }

    /// Reinterprets a `(batch·len) × dim` matrix.
    pub fn from_matrix(m: Matrix<T>, batch: usize, len: usize) -> Result<Self> {
        if m.rows() != batch * len {
            return dim_err(format!(
                "{} rows cannot be split into {batch} sequences of length {len}",
                m.rows()
            ));
        }
        let dim = m.cols();
        Self::from_vec(batch, len, dim, m.into_vec())
    }

    /// Flattens into a `(batch·len) × dim` matrix.
    pub fn into_matrix(self) -> Matrix<T> {
        Matrix::from_vec(self.batch * self.len, self.dim, self.data)
            .expect("sequence batch invariant")
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        self.clone().into_matrix()
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
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
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.len, self.dim)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn token(&self, b: usize, i: usize) -> &[T] {
        let start = (b * self.len + i) * self.dim;
        &self.data[start..start + self.dim]
    }

    #[inline]
    pub fn token_mut(&mut self, b: usize, i: usize) -> &mut [T] {
        let start = (b * self.len + i) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// The `len × dim` slab of one sequence.
    pub fn sequence(&self, b: usize) -> &[T] {
        let n = self.len * self.dim;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sequence_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.len * self.dim;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn frobenius_norm(&self) -> T {
        super::l2_norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            batch: self.batch,
            len: self.len,
            dim: self.dim,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}
