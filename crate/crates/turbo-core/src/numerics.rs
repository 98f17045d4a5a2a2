//! Dense row-major matrices and the small set of kernels the runtime needs:
//! matrix products, numerically stable row softmax with an optional
//! log-space column bias, and clamped cosine similarity.
//!
//! Runtime paths compute in `f32`; reductions that feed similarity decisions
//! accumulate in `f64` before rounding so results are stable across
//! summation-equivalent call sites. Every public operation either returns
//! finite values or fails with [`Error::NonFinite`].

use crate::error::{Error, Result};

/// Row-major dense matrix of `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Fails if the buffer length does
    /// not equal `rows * cols` or if any value is non-finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix construction saw {v} in a {rows}x{cols} buffer"
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Square identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Convenience constructor from explicit rows; all rows must have equal
    /// length.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged row lengths".to_string()));
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Element-wise sum; used for residual connections.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "add of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix::new(self.rows, self.cols, data)
    }
}

fn check_finite(m: Matrix, op: &str) -> Result<Matrix> {
    if m.data.iter().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(Error::NonFinite(format!("{op} produced a non-finite value")))
    }
}

/// Dense product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul of {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let bc = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * bc..(i + 1) * bc];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * bc..(k + 1) * bc];
            for j in 0..bc {
                orow[j] += aik * brow[j];
            }
        }
    }
    check_finite(out, "matmul")
}

/// Dense product against a transposed right operand, `a * b^T`.
///
/// Both operands are walked row-wise, which is the cache-friendly layout for
/// attention scores (`q * k^T`).
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::Shape(format!(
            "matmul_nt of {}x{} and ({}x{})^T",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.rows..(i + 1) * b.rows];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = b.row(j);
            let mut acc = 0.0f32;
            for k in 0..a.cols {
                acc += arow[k] * brow[k];
            }
            *o = acc;
        }
    }
    check_finite(out, "matmul_nt")
}

/// Row-wise softmax with an optional positive per-column bias applied in log
/// space: logits become `m[i][j] + ln(bias[j])` before normalization, which
/// is how duplicate-count weighting enters attention.
///
/// Rows are stabilized by max subtraction; every output row sums to 1 within
/// 1e-6.
pub fn row_softmax(m: &Matrix, bias: Option<&[f32]>) -> Result<Matrix> {
    if let Some(b) = bias {
        if b.len() != m.cols {
            return Err(Error::Shape(format!(
                "softmax bias length {} against {} columns",
                b.len(),
                m.cols
            )));
        }
        if let Some(v) = b.iter().find(|v| **v <= 0.0 || !v.is_finite()) {
            return Err(Error::Domain(format!(
                "softmax bias entries must be positive and finite, saw {v}"
            )));
        }
    }
    let log_bias: Option<Vec<f32>> = bias.map(|b| b.iter().map(|v| v.ln()).collect());
    let mut out = Matrix::zeros(m.rows, m.cols);
    let mut logits = vec![0.0f32; m.cols];
    for i in 0..m.rows {
        let row = m.row(i);
        match &log_bias {
            Some(lb) => {
                for j in 0..m.cols {
                    logits[j] = row[j] + lb[j];
                }
            }
            None => logits.copy_from_slice(row),
        }
        let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0f32;
        let orow = out.row_mut(i);
        for j in 0..m.cols {
            let e = (logits[j] - max).exp();
            orow[j] = e;
            sum += e;
        }
        for v in orow.iter_mut() {
            *v /= sum;
        }
    }
    check_finite(out, "row_softmax")
}

/// Cosine similarity of two equal-length vectors, clamped to `[-1, 1]`.
///
/// Accumulates in `f64` and rounds once at the end so independent callers
/// computing the same pair agree bit-for-bit. Returns 0 when either vector
/// has zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len(), "cosine_similarity operand lengths differ");
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        let (x, y) = (a[i] as f64, b[i] as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) as f32
}
