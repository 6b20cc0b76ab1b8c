use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Variance floor used by every layer norm in the model.
pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
    k: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    layer_norm_cached(x, gamma, beta, eps).map(|(y, _)| y)
}

/// Normalizes each position over the channel (last) axis.
pub fn layer_norm_cached<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let k = x.last_dim();
    if k == 0 || gamma.shape() != [k] || beta.shape() != [k] {
        return Err(Error::shape(format!(
            "layer norm over {k} channels got gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let rows = x.len() / k;
    let kf = T::from_f64(k as f64);
    let eps = T::from_f64(eps);
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut rstd = Vec::with_capacity(rows);
    for row in x.data().chunks_exact(k) {
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / kf;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / kf;
        let r = T::one() / (var + eps).sqrt();
        rstd.push(r);
        for ((&v, &g), &b) in row.iter().zip(gamma.data()).zip(beta.data()) {
            let h = (v - mean) * r;
            xhat.push(h);
            y.push(h * g + b);
        }
    }
    Ok((Tensor::from_vec(x.shape(), y)?, LayerNormCache { xhat, rstd, k }))
}

pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<LayerNormGrads<T>> {
    let k = cache.k;
    if dy.len() != cache.xhat.len() || gamma.shape() != [k] {
        return Err(Error::shape("layer norm upstream grad does not match cache"));
    }
    let kf = T::from_f64(k as f64);
    let mut dx = Vec::with_capacity(dy.len());
    let mut dgamma = vec![T::zero(); k];
    let mut dbeta = vec![T::zero(); k];
    let mut dxhat = vec![T::zero(); k];
    for ((g_row, h_row), &r) in dy.data().chunks_exact(k).zip(cache.xhat.chunks_exact(k)).zip(&cache.rstd) {
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_h = T::zero();
        for c in 0..k {
            dgamma[c] = dgamma[c] + g_row[c] * h_row[c];
            dbeta[c] = dbeta[c] + g_row[c];
            dxhat[c] = g_row[c] * gamma.data()[c];
            sum_dxhat = sum_dxhat + dxhat[c];
            sum_dxhat_h = sum_dxhat_h + dxhat[c] * h_row[c];
        }
        let mean_d = sum_dxhat / kf;
        let mean_dh = sum_dxhat_h / kf;
        for c in 0..k {
            dx.push(r * (dxhat[c] - mean_d - h_row[c] * mean_dh));
        }
    }
    Ok(LayerNormGrads {
        dx: Tensor::from_vec(dy.shape(), dx)?,
        dgamma: Tensor::from_vec(&[k], dgamma)?,
        dbeta: Tensor::from_vec(&[k], dbeta)?,
    })
}
