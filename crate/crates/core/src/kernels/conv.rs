//! Causal dilated 1-D convolution over the time axis.
//!
//! Weights are laid out `[width, in, out]`. Tap `i` reads the input
//! `(width - 1 - i) * dilation` steps in the past, so the last tap sees the
//! current position. Positions before the start of the sequence read zeros.
//! The kernel is lowered to one GEMM over an im2col buffer.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    /// `[batch * len, width * in]` unfolded input.
    cols: Vec<T>,
    batch: usize,
    len: usize,
    k_in: usize,
    dilation: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

fn check_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    dilation: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    if dilation < 1 {
        return Err(Error::invalid("dilation must be at least 1"));
    }
    let &[batch, len, k_in] = x.shape() else {
        return Err(Error::shape(format!("conv input must be [batch, len, channels], got {:?}", x.shape())));
    };
    let &[width, w_in, k_out] = w.shape() else {
        return Err(Error::shape(format!("conv weight must be [width, in, out], got {:?}", w.shape())));
    };
    if width < 1 || w_in != k_in {
        return Err(Error::shape(format!("conv weight {:?} does not accept {k_in} input channels", w.shape())));
    }
    if b.shape() != [k_out] {
        return Err(Error::shape(format!("conv bias {:?} does not match {k_out} outputs", b.shape())));
    }
    Ok((batch, len, k_in, width, k_out))
}

fn im2col<T: Scalar>(x: &[T], batch: usize, len: usize, k_in: usize, width: usize, dilation: usize) -> Vec<T> {
    let row = width * k_in;
    let mut cols = vec![T::zero(); batch * len * row];
    for b in 0..batch {
        for p in 0..len {
            let dst = &mut cols[(b * len + p) * row..(b * len + p + 1) * row];
            for tap in 0..width {
                let back = (width - 1 - tap) * dilation;
                if back > p {
                    continue;
                }
                let src = (b * len + p - back) * k_in;
                dst[tap * k_in..(tap + 1) * k_in].copy_from_slice(&x[src..src + k_in]);
            }
        }
    }
    cols
}

pub fn causal_dilated_conv1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    dilation: usize,
) -> Result<Tensor<T>> {
    conv_forward_cached(x, w, b, dilation).map(|(y, _)| y)
}

/// Forward pass that also returns what the backward pass needs.
pub fn conv_forward_cached<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    dilation: usize,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let (batch, len, k_in, width, k_out) = check_shapes(x, w, b, dilation)?;
    let cols = im2col(x.data(), batch, len, k_in, width, dilation);
    let rows = batch * len;
    let mut out = Vec::with_capacity(rows * k_out);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    T::gemm(rows, width * k_in, k_out, &cols, false, w.data(), false, T::one(), &mut out);
    let y = Tensor::from_vec(&[batch, len, k_out], out)?;
    Ok((y, ConvCache { cols, batch, len, k_in, dilation }))
}

pub fn causal_dilated_conv1d_backward<T: Scalar>(
    cache: &ConvCache<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let &[width, k_in, k_out] = w.shape() else {
        return Err(Error::shape("conv weight must be rank 3"));
    };
    let (batch, len) = (cache.batch, cache.len);
    if k_in != cache.k_in || dy.shape() != [batch, len, k_out] {
        return Err(Error::shape(format!("conv upstream grad {:?} does not match cache", dy.shape())));
    }
    let rows = batch * len;
    let row = width * k_in;

    let mut dw = vec![T::zero(); row * k_out];
    T::gemm(row, rows, k_out, &cache.cols, true, dy.data(), false, T::zero(), &mut dw);

    let mut db = vec![T::zero(); k_out];
    for r in dy.data().chunks_exact(k_out) {
        for (acc, &g) in db.iter_mut().zip(r) {
            *acc = *acc + g;
        }
    }

    let mut dcols = vec![T::zero(); rows * row];
    T::gemm(rows, k_out, row, dy.data(), false, w.data(), true, T::zero(), &mut dcols);

    // col2im: fold each tap's gradient back onto the input position it read.
    let mut dx = vec![T::zero(); rows * k_in];
    for b in 0..batch {
        for p in 0..len {
            let src = &dcols[(b * len + p) * row..(b * len + p + 1) * row];
            for tap in 0..width {
                let back = (width - 1 - tap) * cache.dilation;
                if back > p {
                    continue;
                }
                let dst = (b * len + p - back) * k_in;
                for (d, &s) in dx[dst..dst + k_in].iter_mut().zip(&src[tap * k_in..(tap + 1) * k_in]) {
                    *d = *d + s;
                }
            }
        }
    }

    Ok(ConvGrads {
        dx: Tensor::from_vec(&[batch, len, k_in], dx)?,
        dw: Tensor::from_vec(&[width, k_in, k_out], dw)?,
        db: Tensor::from_vec(&[k_out], db)?,
    })
}
