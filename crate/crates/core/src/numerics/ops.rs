//! Layer primitives and their exact gradients.
//!
//! Slice kernels take row-major buffers; backward kernels *accumulate* into
//! their gradient outputs so callers can sum contributions from several uses
//! of one parameter.

use super::Tensor;
use crate::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorise without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Logistic function without overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `y[r] = W x[r] + b` for every row `r`; `W` is `out_dim x in_dim`.
pub fn affine_rows(x: &[f64], in_dim: usize, w: &[f64], out_dim: usize, b: Option<&[f64]>, y: &mut [f64]) {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    let rows = if in_dim == 0 { y.len() / out_dim.max(1) } else { x.len() / in_dim };
    debug_assert_eq!(y.len(), rows * out_dim);
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let yr = &mut y[r * out_dim..(r + 1) * out_dim];
        for (o, yo) in yr.iter_mut().enumerate() {
            let bias = b.map_or(0.0, |b| b[o]);
            *yo = dot(&w[o * in_dim..(o + 1) * in_dim], xr) + bias;
        }
    }
}

/// Accumulates the gradients of [`affine_rows`] given `gy`.
pub fn affine_rows_backward(
    x: &[f64],
    in_dim: usize,
    w: &[f64],
    out_dim: usize,
    gy: &[f64],
    mut gx: Option<&mut [f64]>,
    gw: &mut [f64],
    mut gb: Option<&mut [f64]>,
) {
    let rows = gy.len() / out_dim.max(1);
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let gyr = &gy[r * out_dim..(r + 1) * out_dim];
        for (o, &g) in gyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, xr, &mut gw[o * in_dim..(o + 1) * in_dim]);
            if let Some(gx) = gx.as_deref_mut() {
                axpy(g, &w[o * in_dim..(o + 1) * in_dim], &mut gx[r * in_dim..(r + 1) * in_dim]);
            }
            if let Some(gb) = gb.as_deref_mut() {
                gb[o] += g;
            }
        }
    }
}

/// Max-shifted softmax of one row.
pub fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Accumulates `gx += y * (gy - <y, gy>)` for one softmax row.
pub fn softmax_row_backward(y: &[f64], gy: &[f64], gx: &mut [f64]) {
    let s = dot(y, gy);
    for ((g, &yi), &gyi) in gx.iter_mut().zip(y).zip(gy) {
        *g += yi * (gyi - s);
    }
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub x: Tensor,
    pub w: Tensor,
    pub b: Option<Tensor>,
}

fn affine_shapes(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize, usize)> {
    let (rows, in_dim) = x.as_matrix()?;
    let (out_dim, w_in) = match w.shape() {
        [o, i] => (*o, *i),
        s => return Err(Error::shape(format!("weight must be a matrix, got {s:?}"))),
    };
    if w_in != in_dim {
        return Err(Error::shape(format!("input width {in_dim} vs weight {out_dim}x{w_in}")));
    }
    if let Some(b) = b {
        if b.len() != out_dim {
            return Err(Error::shape(format!("bias length {} vs output width {out_dim}", b.len())));
        }
    }
    Ok((rows, in_dim, out_dim))
}

/// `y = x Wᵀ + b`. A vector input yields a vector output.
pub fn affine(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (rows, in_dim, out_dim) = affine_shapes(x, w, b)?;
    let mut y = vec![0.0; rows * out_dim];
    affine_rows(x.data(), in_dim, w.data(), out_dim, b.map(Tensor::data), &mut y);
    if x.shape().len() == 1 {
        Ok(Tensor::vector(y))
    } else {
        Tensor::matrix(rows, out_dim, y)
    }
}

pub fn affine_backward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, grad_out: &Tensor) -> Result<AffineGrads> {
    let (rows, in_dim, out_dim) = affine_shapes(x, w, b)?;
    if grad_out.len() != rows * out_dim {
        return Err(Error::shape("gradient does not match affine output"));
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = b.map(|b| Tensor::zeros(b.shape()));
    affine_rows_backward(
        x.data(),
        in_dim,
        w.data(),
        out_dim,
        grad_out.data(),
        Some(gx.data_mut()),
        gw.data_mut(),
        gb.as_mut().map(Tensor::data_mut),
    );
    Ok(AffineGrads { x: gx, w: gw, b: gb })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Cos,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => relu(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Cos => x.cos(),
        }
    }

    /// Derivative at input `x` given the forward output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Cos => -x.sin(),
        }
    }

    pub fn apply(self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = self.eval(*v));
        y
    }

    pub fn backward(self, x: &Tensor, y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        if x.shape() != grad_out.shape() || x.shape() != y.shape() {
            return Err(Error::shape("activation gradient shape mismatch"));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .zip(grad_out.data())
            .map(|((&xi, &yi), &g)| g * self.derivative(xi, yi))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Softmax over each row of a matrix (or over a vector).
pub fn row_softmax(x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.as_matrix()?;
    let mut y = Tensor::zeros(x.shape());
    for r in 0..rows {
        softmax_row(&x.data()[r * cols..(r + 1) * cols], &mut y.data_mut()[r * cols..(r + 1) * cols]);
    }
    Ok(y)
}

/// Gradient w.r.t. the softmax input given the softmax output `y`.
pub fn row_softmax_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (rows, cols) = y.as_matrix()?;
    if grad_out.shape() != y.shape() {
        return Err(Error::shape("softmax gradient shape mismatch"));
    }
    let mut gx = Tensor::zeros(y.shape());
    for r in 0..rows {
        let s = r * cols..(r + 1) * cols;
        softmax_row_backward(&y.data()[s.clone()], &grad_out.data()[s.clone()], &mut gx.data_mut()[s]);
    }
    Ok(gx)
}
