//! The dilated-convolution next-item model: an embedding table, a stack of
//! residual blocks, and a softmax projection over the item vocabulary.

mod forward;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use forward::{backward, encode, forward, forward_train, ForwardPass};

/// Standard deviation of the embedding and softmax tables at init.
pub const TABLE_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of real items; ids run `1..=vocab_size`, `0` is padding.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub max_len: usize,
    /// Dilation pattern, cycled when there are more blocks than entries.
    pub base_dilations: Vec<usize>,
    pub num_blocks: usize,
    pub kernel_width: usize,
    /// Size of the softmax output space when it differs from the input
    /// vocabulary, as after attaching a head for a different item catalog.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_vocab: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: 64,
            max_len: 20,
            base_dilations: vec![1, 2, 4, 8],
            num_blocks: 4,
            kernel_width: 3,
            output_vocab: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if self.output_vocab == Some(0) {
            return bad("output_vocab must be positive when set");
        }
        if self.embed_dim == 0 || self.max_len == 0 || self.kernel_width == 0 {
            return bad("embed_dim, max_len and kernel_width must be positive");
        }
        if self.num_blocks == 0 {
            return bad("num_blocks must be at least 1");
        }
        if self.base_dilations.is_empty() || self.base_dilations.contains(&0) {
            return bad("base_dilations must be a non-empty list of positive ints");
        }
        Ok(())
    }

    /// Dilation of block `i` under the cyclic pattern.
    pub fn dilation_for(&self, i: usize) -> usize {
        self.base_dilations[i % self.base_dilations.len()]
    }

    /// Rows of the embedding table, padding included.
    pub fn input_rows(&self) -> usize {
        self.vocab_size + 1
    }

    /// Width of the softmax output, padding included.
    pub fn classes(&self) -> usize {
        self.output_vocab.unwrap_or(self.vocab_size) + 1
    }

    /// Parameters held by one residual block.
    pub fn block_param_count(&self) -> usize {
        let k = self.embed_dim;
        2 * (self.kernel_width * k * k + k) + 4 * k + 1
    }
}

/// One residual block: `alpha * relu(ln2(conv2(relu(ln1(conv1(h)))))) + h`.
///
/// `conv1` runs at `dilation`, `conv2` at twice that.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub conv1_w: Tensor<T>,
    pub conv1_b: Tensor<T>,
    pub ln1_gamma: Tensor<T>,
    pub ln1_beta: Tensor<T>,
    pub conv2_w: Tensor<T>,
    pub conv2_b: Tensor<T>,
    pub ln2_gamma: Tensor<T>,
    pub ln2_beta: Tensor<T>,
    pub alpha: Tensor<T>,
    pub dilation: usize,
}

pub const BLOCK_FIELDS: [&str; 9] = [
    "conv1.w", "conv1.b", "ln1.gamma", "ln1.beta", "conv2.w", "conv2.b", "ln2.gamma", "ln2.beta", "alpha",
];

impl<T: Scalar> BlockParams<T> {
    pub fn init(config: &ModelConfig, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = config.embed_dim;
        let kw = config.kernel_width;
        let std = (1.0 / (kw * k) as f64).sqrt();
        BlockParams {
            conv1_w: normal(&[kw, k, k], std, rng),
            conv1_b: Tensor::zeros(&[k]),
            ln1_gamma: Tensor::full(&[k], T::one()),
            ln1_beta: Tensor::zeros(&[k]),
            conv2_w: normal(&[kw, k, k], std, rng),
            conv2_b: Tensor::zeros(&[k]),
            ln2_gamma: Tensor::full(&[k], T::one()),
            ln2_beta: Tensor::zeros(&[k]),
            alpha: Tensor::zeros(&[1]),
            dilation,
        }
    }

    pub fn alpha(&self) -> T {
        self.alpha.data()[0]
    }

    pub fn tensors(&self) -> [&Tensor<T>; 9] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.conv2_w,
            &self.conv2_b,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.alpha,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 9] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.alpha,
        ]
    }

    /// Same tensors, all zero, same dilation.
    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor<T>| Tensor::zeros(t.shape());
        BlockParams {
            conv1_w: z(&self.conv1_w),
            conv1_b: z(&self.conv1_b),
            ln1_gamma: z(&self.ln1_gamma),
            ln1_beta: z(&self.ln1_beta),
            conv2_w: z(&self.conv2_w),
            conv2_b: z(&self.conv2_b),
            ln2_gamma: z(&self.ln2_gamma),
            ln2_beta: z(&self.ln2_beta),
            alpha: z(&self.alpha),
            dilation: self.dilation,
        }
    }

    fn cast<U: Scalar>(&self) -> BlockParams<U> {
        BlockParams {
            conv1_w: self.conv1_w.cast(),
            conv1_b: self.conv1_b.cast(),
            ln1_gamma: self.ln1_gamma.cast(),
            ln1_beta: self.ln1_beta.cast(),
            conv2_w: self.conv2_w.cast(),
            conv2_b: self.conv2_b.cast(),
            ln2_gamma: self.ln2_gamma.cast(),
            ln2_beta: self.ln2_beta.cast(),
            alpha: self.alpha.cast(),
            dilation: self.dilation,
        }
    }

    /// True when every tensor and the dilation match exactly, bit for bit.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dilation == other.dilation && self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.bit_eq(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    /// `[vocab_size + 1, k]`; row 0 is the padding embedding.
    pub embedding: Tensor<T>,
    pub blocks: Vec<BlockParams<T>>,
    /// `[k, vocab + 1]`
    pub softmax_w: Tensor<T>,
    pub softmax_b: Tensor<T>,
}

/// Gradients mirror the parameter structure one-to-one.
pub type ParamGrads<T> = ModelParams<T>;

fn normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("std is positive");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Fresh parameters: every block starts as the identity (`alpha = 0`).
pub fn init_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.embed_dim;
    let classes = config.classes();
    let embedding = normal(&[config.input_rows(), k], TABLE_INIT_STD, &mut rng);
    let blocks = (0..config.num_blocks)
        .map(|i| BlockParams::init(config, config.dilation_for(i), &mut rng))
        .collect();
    let softmax_w = normal(&[k, classes], TABLE_INIT_STD, &mut rng);
    Ok(ModelParams { config: config.clone(), embedding, blocks, softmax_w, softmax_b: Tensor::zeros(&[classes]) })
}

impl<T: Scalar> ModelParams<T> {
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dilation).collect()
    }

    /// Canonical tensor names in checkpoint order.
    pub fn tensor_names(&self) -> Vec<String> {
        self.named_tensors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (i, block) in self.blocks.iter().enumerate() {
            for (field, t) in BLOCK_FIELDS.iter().zip(block.tensors()) {
                out.push((format!("block{i}.{field}"), t));
            }
        }
        out.push(("softmax.w".to_string(), &self.softmax_w));
        out.push(("softmax.b".to_string(), &self.softmax_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embedding];
        for block in &mut self.blocks {
            out.extend(block.tensors_mut());
        }
        out.push(&mut self.softmax_w);
        out.push(&mut self.softmax_b);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn block_params(&self) -> usize {
        self.blocks.iter().flat_map(|b| b.tensors()).map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config.clone(),
            embedding: Tensor::zeros(self.embedding.shape()),
            blocks: self.blocks.iter().map(BlockParams::zeros_like).collect(),
            softmax_w: Tensor::zeros(self.softmax_w.shape()),
            softmax_b: Tensor::zeros(self.softmax_b.shape()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            embedding: self.embedding.cast(),
            blocks: self.blocks.iter().map(BlockParams::cast).collect(),
            softmax_w: self.softmax_w.cast(),
            softmax_b: self.softmax_b.cast(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Checks every tensor against the shapes implied by `config`.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        let (k, classes, kw) = (c.embed_dim, c.classes(), c.kernel_width);
        let expect = |name: &str, t: &Tensor<T>, shape: &[usize]| {
            if t.shape() != shape {
                Err(Error::shape(format!("{name}: expected {shape:?}, got {:?}", t.shape())))
            } else {
                Ok(())
            }
        };
        if self.blocks.len() != c.num_blocks {
            return Err(Error::shape(format!(
                "config says {} blocks, params hold {}",
                c.num_blocks,
                self.blocks.len()
            )));
        }
        expect("embedding", &self.embedding, &[c.input_rows(), k])?;
        expect("softmax.w", &self.softmax_w, &[k, classes])?;
        expect("softmax.b", &self.softmax_b, &[classes])?;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.dilation == 0 {
                return Err(Error::shape(format!("block{i}: dilation must be positive")));
            }
            let shapes: [&[usize]; 9] = [&[kw, k, k], &[k], &[k], &[k], &[kw, k, k], &[k], &[k], &[k], &[1]];
            for ((field, t), shape) in BLOCK_FIELDS.iter().zip(b.tensors()).zip(shapes) {
                expect(&format!("block{i}.{field}"), t, shape)?;
            }
        }
        Ok(())
    }
}
