use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ShapeError;

/// Dense row-major array of `f64`.
///
/// Scalars are stored with shape `[1]`; every dimension is positive.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}

/// Elementwise and axis-wise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    /// Softmax over the last axis.
    Softmax,
    /// Log-sum-exp over the last axis; the last axis is reduced away.
    LogSumExp,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log-sum-exp of a slice; `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_into(xs: &[f64], out: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, x) in out.iter_mut().zip(xs) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl Tensor {
    /// Builds a tensor, checking that `shape` matches the number of values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ShapeError> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != data.len() {
            return Err(ShapeError {
                op: "new",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        assert!(numel > 0, "tensor dimensions must be positive: {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("vector must be nonempty")
    }

    /// Row-major matrix from nested rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ShapeError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(ShapeError {
                op: "from_rows",
                left: vec![cols],
                right: vec![bad.len()],
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows and columns when viewed as a matrix: the last axis is the column
    /// axis, all leading axes are flattened into rows.
    pub fn matrix_dims(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("shape is nonempty");
        (self.data.len() / cols, cols)
    }

    pub fn rows(&self) -> usize {
        self.matrix_dims().0
    }

    pub fn cols(&self) -> usize {
        self.matrix_dims().1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, ShapeError> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(ShapeError {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<(), ShapeError> {
        if self.shape != other.shape {
            return Err(ShapeError {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, ShapeError> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(ShapeError {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(&self.data, &other.data, &mut out, m, k, n);
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Tensor {
        let (m, n) = self.matrix_dims();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor {
            shape: vec![n, m],
            data: out,
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, ShapeError> {
        self.same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, ShapeError> {
        self.same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, ShapeError> {
        self.same_shape(other, "mul")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|x| x * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Applies an activation. Softmax keeps the shape; log-sum-exp reduces
    /// the last axis (a 1-D input becomes a scalar).
    pub fn activate(&self, kind: Activation) -> Tensor {
        match kind {
            Activation::Relu => self.map(|x| x.max(0.0)),
            Activation::Tanh => self.map(f64::tanh),
            Activation::Sigmoid => self.map(sigmoid),
            Activation::Softmax => {
                let (rows, cols) = self.matrix_dims();
                let mut out = vec![0.0; self.data.len()];
                for r in 0..rows {
                    softmax_into(
                        &self.data[r * cols..(r + 1) * cols],
                        &mut out[r * cols..(r + 1) * cols],
                    );
                }
                Tensor {
                    shape: self.shape.clone(),
                    data: out,
                }
            }
            Activation::LogSumExp => {
                let (rows, cols) = self.matrix_dims();
                let data: Vec<f64> = (0..rows)
                    .map(|r| logsumexp(&self.data[r * cols..(r + 1) * cols]))
                    .collect();
                let mut shape = self.shape[..self.shape.len() - 1].to_vec();
                if shape.is_empty() {
                    shape.push(1);
                }
                Tensor { shape, data }
            }
        }
    }

    /// Concatenates 2-D tensors along columns.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor, ShapeError> {
        let rows = parts[0].rows();
        if let Some(bad) = parts.iter().find(|p| p.rows() != rows) {
            return Err(ShapeError {
                op: "concat_cols",
                left: parts[0].shape.clone(),
                right: bad.shape.clone(),
            });
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    /// Concatenates 2-D tensors along rows.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor, ShapeError> {
        let cols = parts[0].cols();
        if let Some(bad) = parts.iter().find(|p| p.cols() != cols) {
            return Err(ShapeError {
                op: "concat_rows",
                left: parts[0].shape.clone(),
                right: bad.shape.clone(),
            });
        }
        let data: Vec<f64> = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Tensor {
            shape: vec![data.len() / cols, cols],
            data,
        })
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`.
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let b = m(&[&[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(Tensor::identity(2).matmul(&b).unwrap(), b);
    }

    #[test]
    fn row_times_column() {
        let out = m(&[&[1.0, 2.0]]).matmul(&m(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.item(), 11.0);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::zeros(&[2, 3]).matmul(&Tensor::zeros(&[4, 2])).unwrap_err();
        assert_eq!(err.left, vec![2, 3]);
        assert_eq!(err.right, vec![4, 2]);
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn activation_examples() {
        let relu = Tensor::vector(vec![-1.0, 0.0, 2.0]).activate(Activation::Relu);
        assert_eq!(relu.data(), &[0.0, 0.0, 2.0]);
        let sm = Tensor::vector(vec![0.0, 0.0]).activate(Activation::Softmax);
        assert_eq!(sm.data(), &[0.5, 0.5]);
        let l2 = 2f64.ln();
        let lse = Tensor::vector(vec![l2, l2]).activate(Activation::LogSumExp);
        assert!((lse.item() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = m(&[&[1.0, 0.5, -1.0], &[2.0, 1.0, 0.0]]);
        let mut out = vec![0.0; 4];
        matmul_bt_acc(a.data(), b.data(), &mut out, 2, 3, 2);
        assert_eq!(out, a.matmul(&b.transpose()).unwrap().into_data());
        let mut out = vec![0.0; 9];
        matmul_at_acc(a.data(), b.data(), &mut out, 2, 3, 3);
        assert_eq!(out, a.transpose().matmul(&b).unwrap().into_data());
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
            prop::collection::vec(-5.0..5.0f64, rows * cols)
                .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
        }

        proptest! {
            #[test]
            fn softmax_rows_sum_to_one(t in (1..6usize, 1..7usize).prop_flat_map(|(r, c)| matrix(r, c))) {
                let s = t.activate(Activation::Softmax);
                for r in 0..s.rows() {
                    prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }

            #[test]
            fn logsumexp_dominates_the_max(xs in prop::collection::vec(-800.0..800.0f64, 1..10)) {
                let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let l = logsumexp(&xs);
                prop_assert!(l >= max);
                prop_assert!(l <= max + (xs.len() as f64).ln() + 1e-12);
            }

            #[test]
            fn matmul_is_associative(
                (a, b, c) in (1..5usize, 1..5usize, 1..5usize, 1..5usize)
                    .prop_flat_map(|(m, k, l, n)| (matrix(m, k), matrix(k, l), matrix(l, n)))
            ) {
                let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
                let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
                let scale = left.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
                prop_assert!(left.max_abs_diff(&right) / scale < 1e-9);
            }
        }
    }
}
