use std::cell::Cell;
use std::fmt;
use std::ops::Index;

use crate::error::{LormaError, Result};

/// Dense row-major matrix of `f64`.
///
/// Dimensions are always positive and every entry is finite: constructors
/// reject non-finite input and arithmetic that overflows returns
/// [`LormaError::NonFinite`].
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Opt-in operation counter threaded through instrumented kernels.
///
/// `flops` counts a multiply and an add separately (a matmul of
/// `m×n` by `n×p` costs `2mnp`); `multiply_adds` counts one per fused
/// multiply-add and one per elementwise update.
#[derive(Debug, Default)]
pub struct FlopCounter {
    flops: Cell<u64>,
    multiply_adds: Cell<u64>,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    pub fn multiply_adds(&self) -> u64 {
        self.multiply_adds.get()
    }

    pub fn reset(&self) {
        self.flops.set(0);
        self.multiply_adds.set(0);
    }

    pub(crate) fn record_matmul(&self, m: usize, n: usize, p: usize) {
        let mnp = (m * n * p) as u64;
        self.flops.set(self.flops.get() + 2 * mnp);
        self.multiply_adds.set(self.multiply_adds.get() + mnp);
    }

    pub(crate) fn record_elementwise(&self, count: usize) {
        self.flops.set(self.flops.get() + count as u64);
        self.multiply_adds.set(self.multiply_adds.get() + count as u64);
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LormaError::NonFinite { op })
    }
}

impl Matrix {
    /// Build from row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LormaError::shape(
                "Matrix::new",
                format!("dimensions must be positive, got {rows}x{cols}"),
            ));
        }
        if data.len() != rows * cols {
            return Err(LormaError::shape(
                "Matrix::new",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        check_finite("Matrix::new", &data)?;
        Ok(Self { rows, cols, data })
    }

    /// Build from nested rows; all rows must share one length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * m);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != m {
                return Err(LormaError::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} entries, expected {m}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::new(n, m, data)
    }

    /// # Panics
    /// If either dimension is zero or `f` yields a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                assert!(v.is_finite(), "non-finite entry at ({i},{j})");
                data.push(v);
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_fn(rows, cols, |_, _| value)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 })
    }

    /// `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// New matrix made of the listed columns, in order.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self.get(i, idx[j]))
    }

    /// Leading `n` columns.
    pub fn leading_columns(&self, n: usize) -> Self {
        assert!(n <= self.cols);
        Self::from_fn(self.rows, n, |i, j| self.get(i, j))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        check_finite("map", &data)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        self.matmul_with(rhs, None)
    }

    /// Matrix product, recording `2·m·n·p` flops on `counter` when given.
    pub fn matmul_with(&self, rhs: &Matrix, counter: Option<&FlopCounter>) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(LormaError::shape(
                "matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, rhs.rows, rhs.cols
                ),
            ));
        }
        let (m, n, p) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let out_row = &mut out[i * p..(i + 1) * p];
            for l in 0..n {
                let a = self.data[i * n + l];
                let rhs_row = &rhs.data[l * p..(l + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        if let Some(c) = counter {
            c.record_matmul(m, n, p);
        }
        check_finite("matmul", &out)?;
        Ok(Matrix {
            rows: m,
            cols: p,
            data: out,
        })
    }

    fn zip_with(
        &self,
        rhs: &Matrix,
        op: &'static str,
        counter: Option<&FlopCounter>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(LormaError::shape(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, rhs.rows, rhs.cols
                ),
            ));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        if let Some(c) = counter {
            c.record_elementwise(data.len());
        }
        check_finite(op, &data)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", None, |a, b| a + b)
    }

    pub fn add_with(&self, rhs: &Matrix, counter: Option<&FlopCounter>) -> Result<Matrix> {
        self.zip_with(rhs, "add", counter, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", None, |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "hadamard", None, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Result<Matrix> {
        self.scale_with(s, None)
    }

    pub fn scale_with(&self, s: f64, counter: Option<&FlopCounter>) -> Result<Matrix> {
        if let Some(c) = counter {
            c.record_elementwise(self.data.len());
        }
        self.map(|v| s * v)
    }

    /// `self + s·I`; square only.
    pub fn add_scaled_identity(&self, s: f64) -> Result<Matrix> {
        if !self.is_square() {
            return Err(LormaError::shape(
                "add_scaled_identity",
                format!("{}x{} is not square", self.rows, self.cols),
            ));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + i] += s;
        }
        check_finite("add_scaled_identity", &out.data)?;
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        // Scaled accumulation avoids overflow for large entries.
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let ss: f64 = self.data.iter().map(|v| (v / scale) * (v / scale)).sum();
        scale * ss.sqrt()
    }

    /// Frobenius inner product `⟨self, rhs⟩`.
    pub fn frobenius_dot(&self, rhs: &Matrix) -> Result<f64> {
        if self.shape() != rhs.shape() {
            return Err(LormaError::shape(
                "frobenius_dot",
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, rhs.rows, rhs.cols
                ),
            ));
        }
        Ok(self.data.iter().zip(&rhs.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, rhs: &Matrix) -> Result<f64> {
        Ok(self.sub(rhs)?.max_abs())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}
