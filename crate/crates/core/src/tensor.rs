//! Dense row-major `f64` tensors and the raw kernels shared by the autograd
//! graph.
//!
//! Gradients and the `requires_grad` flag live on graph variables
//! ([`crate::autograd::Var`]); a bare [`Tensor`] is only a value.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(&[rows.len(), cols], data)
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

    /// Size of the trailing dimension (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of trailing-dimension slices.
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.cols()).unwrap_or(0)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

pub(crate) fn expect_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Shape {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![0, 0],
        }),
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = expect_matrix("matmul", a)?;
    let (k2, n) = expect_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(&[m, n], out)
}

/// Softmax of one slice in place. A slice that is entirely `-inf` (fully
/// masked) becomes all zeros.
pub(crate) fn softmax_slice(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        xs.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Softmax along `axis`, using max-subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::Contract(alloc::format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let mut buf = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = x.data[base + j * inner];
            }
            softmax_slice(&mut buf);
            for (j, b) in buf.iter().enumerate() {
                out.data[base + j * inner] = *b;
            }
        }
    }
    Ok(out)
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Row statistics `(mean, 1/sqrt(var + eps))` with population variance.
pub(crate) fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / libm::sqrt(var + eps))
}

/// Normalizes each trailing-dimension slice to zero mean and unit variance,
/// then applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &[f64], bias: &[f64]) -> Result<Tensor> {
    let d = x.cols();
    if d < 2 || gain.len() != d || bias.len() != d {
        return Err(Error::Shape {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: vec![gain.len(), bias.len()],
        });
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let (mean, rstd) = row_stats(x.row(r), LAYER_NORM_EPS);
        let orow = &mut out.data[r * d..(r + 1) * d];
        for j in 0..d {
            orow[j] = (orow[j] - mean) * rstd * gain[j] + bias[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_identity_and_hand_sum() {
        let i2 = Tensor::eye(2);
        assert_eq!(matmul(&i2, &i2).unwrap(), i2);
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[&[1.0], &[1.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = alloc::format!("{}", matmul(&a, &b).unwrap_err());
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::new(&[3], vec![0.0; 3]).unwrap(), 0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&Tensor::new(&[2], vec![1000.0, 1000.0]).unwrap(), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        // e^x / sum e^x at x = 1,2,3, evaluated independently.
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let want = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        let s = softmax(&Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap(), 0).unwrap();
        for (a, b) in s.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_along_leading_axis() {
        let x = Tensor::from_rows(&[&[1.0, 5.0], &[1.0, 5.0]]).unwrap();
        let s = softmax(&x, 0).unwrap();
        for v in s.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let g = [1.0, 1.0, 1.0];
        let b = [0.0; 3];
        let c = Tensor::from_rows(&[&[4.0, 4.0, 4.0]]).unwrap();
        assert!(layer_norm(&c, &g, &b).unwrap().data().iter().all(|v| *v == 0.0));

        // [1,3]: mean 2, population variance 1, so (x - 2) / sqrt(1 + 1e-6).
        let x = Tensor::from_rows(&[&[1.0, 3.0]]).unwrap();
        let y = layer_norm(&x, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let s = 1.0 / (1.0f64 + 1e-6).sqrt();
        assert!((y.data()[0] + s).abs() < 1e-15);
        assert!((y.data()[1] - s).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_rejects_width_one() {
        let x = Tensor::from_rows(&[&[1.0]]).unwrap();
        assert!(layer_norm(&x, &[1.0], &[0.0]).is_err());
    }
}
