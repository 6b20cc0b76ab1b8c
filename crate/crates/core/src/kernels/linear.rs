use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

fn dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let &[k, n] = w.shape() else {
        return Err(Error::shape(format!("projection must be rank 2, got {:?}", w.shape())));
    };
    if x.last_dim() != k {
        return Err(Error::shape(format!("projection {:?} cannot take {} channels", w.shape(), x.last_dim())));
    }
    Ok((x.len() / k, k, n))
}

/// `x @ w + b` applied to every row of `x`; output keeps `x`'s leading axes.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, k, n) = dims(x, w)?;
    if b.shape() != [n] {
        return Err(Error::shape(format!("bias {:?} does not match {n} outputs", b.shape())));
    }
    let mut out = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    T::gemm(rows, k, n, x.data(), false, w.data(), false, T::one(), &mut out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = n;
    Tensor::from_vec(&shape, out)
}

pub fn linear_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<LinearGrads<T>> {
    let (rows, k, n) = dims(x, w)?;
    if dy.len() != rows * n || dy.last_dim() != n {
        return Err(Error::shape(format!("upstream grad {:?} does not match projection output", dy.shape())));
    }
    let mut dx = vec![T::zero(); rows * k];
    T::gemm(rows, n, k, dy.data(), false, w.data(), true, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); k * n];
    T::gemm(k, rows, n, x.data(), true, dy.data(), false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); n];
    for r in dy.data().chunks_exact(n) {
        for (acc, &g) in db.iter_mut().zip(r) {
            *acc = *acc + g;
        }
    }
    Ok(LinearGrads {
        dx: Tensor::from_vec(x.shape(), dx)?,
        dw: Tensor::from_vec(&[k, n], dw)?,
        db: Tensor::from_vec(&[n], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projects_each_row() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, 2.0, 0.0, 1.0, -1.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.5, 0.0, 0.0]).unwrap();
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3]);
        assert_eq!(y.data(), &[1.5, 2.0, 0.0, 3.5, 4.0, 2.0]);
    }

    #[test]
    fn backward_shapes_and_bias() {
        let x = Tensor::<f64>::full(&[4, 3], 1.0);
        let w = Tensor::full(&[3, 2], 0.5);
        let dy = Tensor::full(&[4, 2], 1.0);
        let g = linear_backward(&x, &w, &dy).unwrap();
        assert_eq!(g.db.data(), &[4.0, 4.0]);
        assert_eq!(g.dw.data(), &[4.0; 6]);
        assert_eq!(g.dx.data(), &[1.0; 12]);
    }
}
