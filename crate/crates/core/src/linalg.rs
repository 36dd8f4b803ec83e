//! Dense `f64` vectors and row-major matrices.
//!
//! Operations allocate fresh outputs; nothing here mutates its inputs except
//! the explicitly named `*_accumulate` helpers used by backpropagation.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        self.check_len("dot", other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, op: &'static str, other: &Vector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape(
                op,
                format!("vector[{}]", self.len()),
                format!("vector[{}]", other.len()),
            ));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "matrix[{}x{}]", self.rows, self.cols)
    }
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

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape(
                "from_rows",
                format!("row of length {cols}"),
                format!("row of length {}", bad.len()),
            ));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("matrix[{rows}x{cols}]"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Matrix { rows, cols, data }
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · v`.
    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::shape("matvec", self, format!("vector[{}]", v.len())));
        }
        let out = (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(v.as_slice())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect::<Vec<f64>>();
        Ok(Vector(out))
    }

    /// `selfᵀ · v`.
    pub fn matvec_transpose(&self, v: &Vector) -> Result<Vector> {
        if self.rows != v.len() {
            return Err(Error::shape(
                "matvec_transpose",
                self,
                format!("vector[{}]", v.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        Ok(Vector(out))
    }

    /// `self += u ⊗ v` (outer product).
    pub fn outer_accumulate(&mut self, u: &Vector, v: &Vector) -> Result<()> {
        if self.rows != u.len() || self.cols != v.len() {
            return Err(Error::shape(
                "outer_accumulate",
                &*self,
                format!("vector[{}] x vector[{}]", u.len(), v.len()),
            ));
        }
        for (r, &ur) in u.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (m, &vc) in row.iter_mut().zip(v.as_slice()) {
                *m += ur * vc;
            }
        }
        Ok(())
    }
}

/// `a ++ b`.
pub fn concat(a: &Vector, b: &Vector) -> Vector {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a.as_slice());
    out.extend_from_slice(b.as_slice());
    Vector(out)
}

pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    m.matvec(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Pointwise `a op b` for equal-length vectors.
pub fn elementwise(op: BinaryOp, a: &Vector, b: &Vector) -> Result<Vector> {
    a.check_len("elementwise", b)?;
    let f = match op {
        BinaryOp::Add => |x: f64, y: f64| x + y,
        BinaryOp::Sub => |x: f64, y: f64| x - y,
        BinaryOp::Mul => |x: f64, y: f64| x * y,
    };
    Ok(Vector(
        a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
    ))
}

pub fn add(a: &Vector, b: &Vector) -> Result<Vector> {
    elementwise(BinaryOp::Add, a, b)
}

pub fn sub(a: &Vector, b: &Vector) -> Result<Vector> {
    elementwise(BinaryOp::Sub, a, b)
}

/// Hadamard product.
pub fn mul(a: &Vector, b: &Vector) -> Result<Vector> {
    elementwise(BinaryOp::Mul, a, b)
}

pub fn scale(a: &Vector, s: f64) -> Vector {
    a.map(|v| v * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from(xs)
    }

    #[test]
    fn matvec_examples() {
        assert_eq!(
            Matrix::identity(3).matvec(&v(&[1.0, 2.0, 3.0])).unwrap(),
            v(&[1.0, 2.0, 3.0])
        );
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(m.matvec(&v(&[1.0, 1.0])).unwrap(), v(&[3.0, 7.0]));
        assert_eq!(
            Matrix::zeros(2, 2).matvec(&v(&[5.0, 5.0])).unwrap(),
            v(&[0.0, 0.0])
        );
    }

    #[test]
    fn matvec_mismatch_names_both_shapes() {
        let err = Matrix::zeros(2, 3).matvec(&v(&[1.0, 2.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matrix[2x3]") && msg.contains("vector[2]"), "{msg}");
    }

    #[test]
    fn concat_examples() {
        assert_eq!(concat(&v(&[]), &v(&[1.0])), v(&[1.0]));
        assert_eq!(concat(&v(&[1.0, 2.0]), &v(&[3.0])), v(&[1.0, 2.0, 3.0]));
        assert_eq!(concat(&Vector::zeros(32), &Vector::zeros(4)).len(), 36);
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(add(&v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(), v(&[4.0, 6.0]));
        assert_eq!(mul(&v(&[1.0, 2.0]), &v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(scale(&v(&[1.0, 2.0]), 0.5), v(&[0.5, 1.0]));
        assert!(sub(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn transpose_and_outer() {
        let m = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(
            m.matvec_transpose(&v(&[1.0, -1.0])).unwrap(),
            v(&[-3.0, -3.0, -3.0])
        );
        let mut acc = Matrix::zeros(2, 3);
        acc.outer_accumulate(&v(&[1.0, 2.0]), &v(&[1.0, 0.0, -1.0]))
            .unwrap();
        assert_eq!(acc.as_slice(), &[1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
    }

    proptest! {
        #[test]
        fn identity_is_exact(xs in prop::collection::vec(-1e6f64..1e6, 1..20)) {
            let x = Vector::from(xs);
            prop_assert_eq!(Matrix::identity(x.len()).matvec(&x).unwrap(), x);
        }

        #[test]
        fn matvec_distributes(
            rows in 1usize..6,
            data in prop::collection::vec(-10.0f64..10.0, 36),
            a in prop::collection::vec(-10.0f64..10.0, 6),
            b in prop::collection::vec(-10.0f64..10.0, 6),
        ) {
            let m = Matrix::from_vec(rows, 6, data[..rows * 6].to_vec()).unwrap();
            let (a, b) = (Vector::from(a), Vector::from(b));
            let lhs = m.matvec(&add(&a, &b).unwrap()).unwrap();
            let rhs = add(&m.matvec(&a).unwrap(), &m.matvec(&b).unwrap()).unwrap();
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                // relative to the magnitude of the summed terms
                let scale = m.as_slice().iter().map(|x| x.abs()).sum::<f64>() * 20.0 + 1.0;
                prop_assert!((l - r).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn concat_length_adds(a in prop::collection::vec(any::<f64>(), 0..10),
                              b in prop::collection::vec(any::<f64>(), 0..10)) {
            let (la, lb) = (a.len(), b.len());
            prop_assert_eq!(concat(&Vector::from(a), &Vector::from(b)).len(), la + lb);
        }
    }
}
