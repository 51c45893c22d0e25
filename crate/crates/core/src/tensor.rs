//! Dense row-major `f64` tensors of rank 0, 1 or 2.

use serde::{Deserialize, Serialize};

use crate::error::AutodiffError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AutodiffError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(AutodiffError::Shape {
                    op: "from_rows",
                    detail: format!("ragged rows: expected {cols} columns, got {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count of a matrix (1 for vectors and scalars).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Column count of a matrix (length for vectors, 1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Gathers the given rows of a matrix into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![indices.len(), c],
            data,
        }
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() != 2 || p.cols() != cols {
                return Err(AutodiffError::Shape {
                    op: "vstack",
                    detail: format!("expected [_, {cols}], got {:?}", p.shape()),
                });
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Tensor::matrix(rows, cols, data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `c = op(a) * op(b)` for rank-2 tensors, where `op` optionally transposes.
pub(crate) fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor, AutodiffError> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(AutodiffError::Shape {
            op: "matmul",
            detail: format!("operands must be matrices, got {:?} and {:?}", a.shape(), b.shape()),
        });
    }
    let (ar, ac) = (a.shape[0], a.shape[1]);
    let (br, bc) = (b.shape[0], b.shape[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(AutodiffError::Shape {
            op: "matmul",
            detail: format!(
                "inner dimensions differ: {:?}{} x {:?}{}",
                a.shape(),
                if ta { "^T" } else { "" },
                b.shape(),
                if tb { "^T" } else { "" }
            ),
        });
    }
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        // Strides in elements for the logical (possibly transposed) operands.
        let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
        // SAFETY: pointers cover `m*k`, `k*n` and `m*n` elements with the
        // strides computed above; `out` is exclusively borrowed.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}
