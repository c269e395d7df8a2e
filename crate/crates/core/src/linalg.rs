//! Minimal dense vector/matrix helpers shared by the pure and taped code paths.

use crate::error::{HsrError, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(HsrError::Usage(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `M x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `Mᵀ x` restricted to rows `row_off .. row_off + x.len()`.
    ///
    /// With `M` of shape `2d×d` and `x = [a, b]`, `Mᵀ x` equals
    /// `tr_matvec_block(0, a) + tr_matvec_block(d, b)`.
    pub fn tr_matvec_block(&self, row_off: usize, x: &[f64]) -> Vec<f64> {
        debug_assert!(row_off + x.len() <= self.rows);
        let mut out = vec![0.0; self.cols];
        for (k, &xk) in x.iter().enumerate() {
            let row = &self.data[(row_off + k) * self.cols..(row_off + k + 1) * self.cols];
            for (o, &m) in out.iter_mut().zip(row) {
                *o += m * xk;
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    sq_norm(a).sqrt()
}

pub fn scaled(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|x| x * k).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `a += k * b`
pub fn axpy(a: &mut [f64], k: f64, b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += k * y;
    }
}
