//! Dense row-major matrices of `f64`, sized for this model (a few dozen
//! columns, up to a couple of million rows).

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row count above which matmul parallelizes over rows. Each output row is
/// still computed sequentially, so results are bit-identical either way.
const PAR_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be >= 1");
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        m.values.fill(value);
        m
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "value length must be rows*cols");
        assert!(rows >= 1 && cols >= 1);
        Matrix { rows, cols, values }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            values.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Matrix {
        let values = self.values.iter().map(|&v| f(v)).collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values,
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if !self.same_shape(other) {
            return Err(Error::shape(format!(
                "elementwise op requires equal shapes, got {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            values,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn add_assign_scaled(&mut self, other: &Matrix, c: f64) {
        assert!(self.same_shape(other), "add_assign_scaled shape mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul inner dimensions disagree: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (r, s, t) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(r, t);
        let mul_row = |i: usize, out_row: &mut [f64]| {
            let a_row = &self.values[i * s..(i + 1) * s];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.values[k * t..(k + 1) * t];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if r >= PAR_ROWS {
            out.values
                .par_chunks_mut(t)
                .enumerate()
                .for_each(|(i, row)| mul_row(i, row));
        } else {
            for i in 0..r {
                mul_row(i, &mut out.values[i * t..(i + 1) * t]);
            }
        }
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_nt inner dimensions disagree: {}x{} * ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (r, s, t) = (self.rows, self.cols, other.rows);
        let mut out = Matrix::zeros(r, t);
        let mul_row = |i: usize, out_row: &mut [f64]| {
            let a_row = &self.values[i * s..(i + 1) * s];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &other.values[j * s..(j + 1) * s];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        };
        if r >= PAR_ROWS {
            out.values
                .par_chunks_mut(t)
                .enumerate()
                .for_each(|(i, row)| mul_row(i, row));
        } else {
            for i in 0..r {
                mul_row(i, &mut out.values[i * t..(i + 1) * t]);
            }
        }
        Ok(out)
    }

    /// `self^T * other`. Sequential accumulation over rows keeps the
    /// reduction order fixed.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "matmul_tn inner dimensions disagree: ({}x{})^T * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (s, t) = (self.cols, other.cols);
        let mut out = Matrix::zeros(s, t);
        for i in 0..self.rows {
            let a_row = &self.values[i * s..(i + 1) * s];
            let b_row = &other.values[i * t..(i + 1) * t];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.values[k * t..(k + 1) * t];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Column sums as a 1xC row vector.
    pub fn col_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for i in 0..self.rows {
            for (o, &v) in out.values.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    /// Column means as a 1xC row vector.
    pub fn col_means(&self) -> Matrix {
        self.col_sums().scale(1.0 / self.rows as f64)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Stack `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "vstack column counts disagree: {} vs {}",
                self.cols, other.cols
            )));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let out = Matrix::identity(2).matmul(&a).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn matmul_projector() {
        let p = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let b = Matrix::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let out = p.matmul(&b).unwrap();
        assert_eq!(out, Matrix::from_rows(&[&[5.0, 6.0], &[0.0, 0.0]]));
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "message was: {msg}");
    }

    #[test]
    fn transpose_round_trip() {
        let a = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 3.0], &[2.0, 0.0]]);
        let b = Matrix::from_rows(&[&[4.0, 1.0], &[-1.0, 2.0], &[0.0, 1.0]]);
        let nt = a.matmul_nt(&b).unwrap();
        let plain = a.matmul(&b.transpose()).unwrap();
        assert_eq!(nt, plain);
        let tn = a.matmul_tn(&b).unwrap();
        let plain = a.transpose().matmul(&b).unwrap();
        assert_eq!(tn, plain);
    }

    #[test]
    fn col_means_simple() {
        let a = Matrix::from_rows(&[&[0.0, 2.0], &[2.0, 4.0]]);
        assert_eq!(a.col_means(), Matrix::from_rows(&[&[1.0, 3.0]]));
    }
}
