use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `dy` where `x > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    x.check_same_shape(dy)?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// `alpha * f + x`. With `alpha == 0` the result equals `x` bit for bit.
pub fn scaled_residual_add<T: Scalar>(x: &Tensor<T>, f: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
    x.check_same_shape(f)?;
    let data = x.data().iter().zip(f.data()).map(|(&xv, &fv)| alpha * fv + xv).collect();
    Tensor::from_vec(x.shape(), data)
}

#[derive(Debug, Clone)]
pub struct ResidualGrads<T> {
    pub dx: Tensor<T>,
    pub df: Tensor<T>,
    pub dalpha: T,
}

pub fn scaled_residual_backward<T: Scalar>(f: &Tensor<T>, alpha: T, dy: &Tensor<T>) -> Result<ResidualGrads<T>> {
    f.check_same_shape(dy)?;
    let dalpha = f.data().iter().zip(dy.data()).fold(T::zero(), |a, (&fv, &g)| a + fv * g);
    Ok(ResidualGrads { dx: dy.clone(), df: dy.map(|g| alpha * g), dalpha })
}
