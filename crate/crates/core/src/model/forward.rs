use crate::error::{Error, Result};
use crate::kernels::{
    causal_dilated_conv1d_backward, conv_forward_cached, embedding_backward, embedding_lookup, layer_norm_backward,
    layer_norm_cached, linear, linear_backward, relu, relu_backward, scaled_residual_add, scaled_residual_backward,
    ConvCache, LayerNormCache, LN_EPS,
};
use crate::tensor::{IdTensor, Scalar, Tensor};

use super::{BlockParams, ModelParams, ParamGrads};

struct BlockCache<T> {
    conv1: ConvCache<T>,
    ln1: LayerNormCache<T>,
    ln1_out: Tensor<T>,
    conv2: ConvCache<T>,
    ln2: LayerNormCache<T>,
    /// Residual branch output `F(h)`.
    branch: Tensor<T>,
}

struct ForwardCache<T> {
    ids: IdTensor,
    blocks: Vec<BlockCache<T>>,
    top: Tensor<T>,
}

/// Output of a forward pass.
pub struct ForwardPass<T> {
    /// `[batch, len, vocab + 1]`
    pub logits: Tensor<T>,
    /// Per-block outputs `H_1..H_L`, kept only on request.
    pub hidden: Option<Vec<Tensor<T>>>,
    cache: Option<ForwardCache<T>>,
}

fn block_forward<T: Scalar>(
    block: &BlockParams<T>,
    h: &Tensor<T>,
    keep_cache: bool,
) -> Result<(Tensor<T>, Option<BlockCache<T>>)> {
    let (c1, conv1) = conv_forward_cached(h, &block.conv1_w, &block.conv1_b, block.dilation)?;
    let (n1, ln1) = layer_norm_cached(&c1, &block.ln1_gamma, &block.ln1_beta, LN_EPS)?;
    let a1 = relu(&n1);
    let (c2, conv2) = conv_forward_cached(&a1, &block.conv2_w, &block.conv2_b, 2 * block.dilation)?;
    let (n2, ln2) = layer_norm_cached(&c2, &block.ln2_gamma, &block.ln2_beta, LN_EPS)?;
    let branch = relu(&n2);
    let out = scaled_residual_add(h, &branch, block.alpha())?;
    let cache = keep_cache.then_some(BlockCache { conv1, ln1, ln1_out: n1, conv2, ln2, branch });
    Ok((out, cache))
}

fn check_ids<T: Scalar>(params: &ModelParams<T>, ids: &IdTensor) -> Result<()> {
    if ids.batch() == 0 || ids.is_empty() {
        return Err(Error::shape("empty id batch"));
    }
    if params.blocks.len() != params.config.num_blocks {
        return Err(Error::shape("block list disagrees with config"));
    }
    Ok(())
}

/// Top activations, per-block outputs if requested, per-block caches.
type RunOutput<T> = (Tensor<T>, Option<Vec<Tensor<T>>>, Vec<BlockCache<T>>);

fn run<T: Scalar>(
    params: &ModelParams<T>,
    ids: &IdTensor,
    keep_hidden: bool,
    keep_cache: bool,
) -> Result<RunOutput<T>> {
    check_ids(params, ids)?;
    let mut h = embedding_lookup(&params.embedding, ids)?;
    let mut hidden = keep_hidden.then(Vec::new);
    let mut caches = Vec::new();
    for block in &params.blocks {
        let (out, cache) = block_forward(block, &h, keep_cache)?;
        caches.extend(cache);
        if let Some(hs) = hidden.as_mut() {
            hs.push(out.clone());
        }
        h = out;
    }
    Ok((h, hidden, caches))
}

/// Top-block hidden states `[batch, len, k]` without the softmax projection.
pub fn encode<T: Scalar>(params: &ModelParams<T>, ids: &IdTensor) -> Result<Tensor<T>> {
    run(params, ids, false, false).map(|(h, _, _)| h)
}

pub fn forward<T: Scalar>(params: &ModelParams<T>, ids: &IdTensor, keep_hidden: bool) -> Result<ForwardPass<T>> {
    let (top, hidden, _) = run(params, ids, keep_hidden, false)?;
    let logits = linear(&top, &params.softmax_w, &params.softmax_b)?;
    Ok(ForwardPass { logits, hidden, cache: None })
}

/// Forward pass that keeps everything [`backward`] needs.
pub fn forward_train<T: Scalar>(params: &ModelParams<T>, ids: &IdTensor) -> Result<ForwardPass<T>> {
    let (top, _, blocks) = run(params, ids, false, true)?;
    let logits = linear(&top, &params.softmax_w, &params.softmax_b)?;
    Ok(ForwardPass { logits, hidden: None, cache: Some(ForwardCache { ids: ids.clone(), blocks, top }) })
}

pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    pass: &ForwardPass<T>,
    grad_logits: &Tensor<T>,
) -> Result<ParamGrads<T>> {
    let cache = pass.cache.as_ref().ok_or(Error::MissingCache)?;
    pass.logits.check_same_shape(grad_logits)?;
    if cache.blocks.len() != params.blocks.len() {
        return Err(Error::shape("cache was produced by a model of different depth"));
    }
    let mut grads = params.zeros_like();

    let head = linear_backward(&cache.top, &params.softmax_w, grad_logits)?;
    grads.softmax_w = head.dw;
    grads.softmax_b = head.db;
    let mut dh = head.dx;

    for ((block, bc), g) in params.blocks.iter().zip(&cache.blocks).zip(grads.blocks.iter_mut()).rev() {
        let res = scaled_residual_backward(&bc.branch, block.alpha(), &dh)?;
        g.alpha = Tensor::scalar(res.dalpha);

        let d_n2 = relu_backward(&bc.branch, &res.df)?;
        let ln2 = layer_norm_backward(&bc.ln2, &block.ln2_gamma, &d_n2)?;
        let conv2 = causal_dilated_conv1d_backward(&bc.conv2, &block.conv2_w, &ln2.dx)?;
        let d_n1 = relu_backward(&bc.ln1_out, &conv2.dx)?;
        let ln1 = layer_norm_backward(&bc.ln1, &block.ln1_gamma, &d_n1)?;
        let conv1 = causal_dilated_conv1d_backward(&bc.conv1, &block.conv1_w, &ln1.dx)?;

        g.ln2_gamma = ln2.dgamma;
        g.ln2_beta = ln2.dbeta;
        g.conv2_w = conv2.dw;
        g.conv2_b = conv2.db;
        g.ln1_gamma = ln1.dgamma;
        g.ln1_beta = ln1.dbeta;
        g.conv1_w = conv1.dw;
        g.conv1_b = conv1.db;

        dh = res.dx;
        dh.add_assign(&conv1.dx)?;
    }

    embedding_backward(&dh, &cache.ids, &mut grads.embedding)?;
    Ok(grads)
}
