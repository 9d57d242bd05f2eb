//! Dense row-major feature matrix.

use crate::{Error, Result};

/// A dense `n_rows x n_dims` matrix of f64 values, row-major.
///
/// Rows are feature vectors. Shape is validated on construction: both
/// dimensions must be at least 1 and every value must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_dims: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds a matrix from a flat row-major buffer.
    ///
    /// # Examples
    ///
    /// ```
    /// use embed_eval::FeatureMatrix;
    /// let m = FeatureMatrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    /// assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
    /// ```
    pub fn from_vec(n_rows: usize, n_dims: usize, data: Vec<f64>) -> Result<Self> {
        if n_rows == 0 {
            return Err(Error::Invalid("n_rows must be >= 1".into()));
        }
        if n_dims == 0 {
            return Err(Error::Invalid("n_dims must be >= 1".into()));
        }
        if data.len() != n_rows * n_dims {
            return Err(Error::Invalid(format!(
                "buffer has {} values, expected {} ({} rows x {} dims)",
                data.len(),
                n_rows * n_dims,
                n_rows,
                n_dims
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite value {} at flat index {} (row {}, dim {})",
                data[pos],
                pos,
                pos / n_dims,
                pos % n_dims
            )));
        }
        Ok(FeatureMatrix {
            n_rows,
            n_dims,
            data,
        })
    }

    /// Builds a matrix from per-row slices; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid("n_rows must be >= 1".into()));
        }
        let n_dims = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_dims {
                return Err(Error::Invalid(format!(
                    "row {} has {} dims, expected {}",
                    i,
                    r.len(),
                    n_dims
                )));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * n_dims);
        for r in rows {
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), n_dims, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    /// Row `i` as a slice. Panics if `i >= n_rows`.
    pub fn row(&self, i: usize) -> &[f64] {
        assert!(
            i < self.n_rows,
            "row index {} out of range {}",
            i,
            self.n_rows
        );
        &self.data[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n_dims)
    }

    /// Flat row-major view of the underlying buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copies the listed rows (in the order given) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Invalid("row selection must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * self.n_dims);
        for &i in indices {
            if i >= self.n_rows {
                return Err(Error::Invalid(format!(
                    "row index {} out of range {}",
                    i, self.n_rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix::from_vec(indices.len(), self.n_dims, data)
    }
}
