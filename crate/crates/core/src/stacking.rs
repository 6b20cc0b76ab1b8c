//! Depth-growth transforms that warm-start a deeper model from a trained one.
//!
//! Adjacent stacking turns blocks `[B1, B2]` into `[B1, B1, B2, B2]`; cross
//! stacking turns them into `[B1, B2, B1, B2]`. Embedding and softmax tables
//! are always carried over verbatim. `RandomTop` and `EmbedOnly` are the
//! ablation baselines that transfer less.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockParams, ModelParams};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StackMode {
    Adjacent,
    Cross,
    /// Bottom blocks copied, new top blocks freshly initialized.
    RandomTop,
    /// Only embedding and softmax transferred; every block fresh.
    EmbedOnly,
}

impl FromStr for StackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacent" => Ok(StackMode::Adjacent),
            "cross" => Ok(StackMode::Cross),
            "random-top" | "random_top" => Ok(StackMode::RandomTop),
            "embed-only" | "embed_only" => Ok(StackMode::EmbedOnly),
            _ => Err(Error::invalid(format!("unknown stacking mode {s:?}"))),
        }
    }
}

impl fmt::Display for StackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StackMode::Adjacent => "adjacent",
            StackMode::Cross => "cross",
            StackMode::RandomTop => "random-top",
            StackMode::EmbedOnly => "embed-only",
        })
    }
}

/// What dilation a block has after stacking.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DilationPolicy {
    /// A copied block keeps its source block's dilation.
    #[default]
    KeepWithBlock,
    /// Every block is reassigned the cyclic base pattern for its position.
    Canonical,
}

/// One growth step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackPlan {
    pub mode: StackMode,
    pub added_blocks: usize,
    /// Seed for freshly initialized blocks.
    pub seed: u64,
    pub dilations: DilationPolicy,
}

impl StackPlan {
    /// The plan that doubles a model of `depth` blocks.
    pub fn doubling(mode: StackMode, depth: usize, seed: u64) -> Self {
        StackPlan { mode, added_blocks: depth, seed, dilations: DilationPolicy::default() }
    }
}

fn rebuild<T: Scalar>(src: &ModelParams<T>, blocks: Vec<BlockParams<T>>) -> ModelParams<T> {
    let mut config = src.config.clone();
    config.num_blocks = blocks.len();
    ModelParams {
        config,
        embedding: src.embedding.clone(),
        blocks,
        softmax_w: src.softmax_w.clone(),
        softmax_b: src.softmax_b.clone(),
    }
}

/// `[B1, B1, B2, B2, ..., BL, BL]`
pub fn adjacent_stack<T: Scalar>(src: &ModelParams<T>) -> ModelParams<T> {
    let blocks = src.blocks.iter().flat_map(|b| [b.clone(), b.clone()]).collect();
    rebuild(src, blocks)
}

/// `[B1, ..., BL, B1, ..., BL]`
pub fn cross_stack<T: Scalar>(src: &ModelParams<T>) -> ModelParams<T> {
    let blocks = src.blocks.iter().chain(&src.blocks).cloned().collect();
    rebuild(src, blocks)
}

/// Adds `m <= L` copied blocks. Adjacent mode duplicates each of the top `m`
/// blocks in place; cross mode appends copies of blocks `1..=m` on top.
pub fn partial_stack<T: Scalar>(src: &ModelParams<T>, mode: StackMode, m: usize) -> Result<ModelParams<T>> {
    let l = src.depth();
    if m == 0 || m > l {
        return Err(Error::invalid(format!("can copy between 1 and {l} blocks, asked for {m}")));
    }
    let blocks = match mode {
        StackMode::Adjacent => src.blocks[..l - m]
            .iter()
            .cloned()
            .chain(src.blocks[l - m..].iter().flat_map(|b| [b.clone(), b.clone()]))
            .collect(),
        StackMode::Cross => src.blocks.iter().chain(&src.blocks[..m]).cloned().collect(),
        other => return Err(Error::invalid(format!("partial stacking copies blocks; {other} does not"))),
    };
    Ok(rebuild(src, blocks))
}

/// Keeps all `L` blocks and adds `m` fresh identity-initialized blocks on top.
pub fn random_top_stack<T: Scalar>(src: &ModelParams<T>, m: usize, seed: u64) -> ModelParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = src.depth();
    let mut blocks = src.blocks.clone();
    blocks.extend((l..l + m).map(|i| BlockParams::init(&src.config, src.config.dilation_for(i), &mut rng)));
    rebuild(src, blocks)
}

/// A fresh `new_depth`-block model that reuses only the embedding and softmax.
pub fn embed_only_stack<T: Scalar>(src: &ModelParams<T>, new_depth: usize, seed: u64) -> ModelParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = (0..new_depth).map(|i| BlockParams::init(&src.config, src.config.dilation_for(i), &mut rng)).collect();
    rebuild(src, blocks)
}

pub fn apply_plan<T: Scalar>(src: &ModelParams<T>, plan: &StackPlan) -> Result<ModelParams<T>> {
    let l = src.depth();
    let m = plan.added_blocks;
    if m == 0 {
        return Err(Error::invalid("a stacking step must add at least one block"));
    }
    let mut dst = match plan.mode {
        StackMode::Adjacent | StackMode::Cross if m == l => {
            if plan.mode == StackMode::Adjacent {
                adjacent_stack(src)
            } else {
                cross_stack(src)
            }
        }
        StackMode::Adjacent | StackMode::Cross => partial_stack(src, plan.mode, m)?,
        StackMode::RandomTop => random_top_stack(src, m, plan.seed),
        StackMode::EmbedOnly => embed_only_stack(src, l + m, plan.seed),
    };
    if plan.dilations == DilationPolicy::Canonical {
        for (i, b) in dst.blocks.iter_mut().enumerate() {
            b.dilation = dst.config.dilation_for(i);
        }
    }
    Ok(dst)
}

/// Outcome of [`verify_stack`]: the names of every tensor that breaks the
/// expected copy pattern.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StackReport {
    pub mismatches: Vec<String>,
}

impl StackReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

impl fmt::Display for StackReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            f.write_str("verify: pass")
        } else {
            write!(f, "verify: FAIL {}", self.mismatches.join(" "))
        }
    }
}

/// Checks bit for bit that `dst` is `src` grown according to `plan`.
///
/// Copied blocks must equal their source block in every tensor; fresh blocks
/// must be identity-initialized and share no weights with any source block.
pub fn verify_stack<T: Scalar>(src: &ModelParams<T>, dst: &ModelParams<T>, plan: &StackPlan) -> StackReport {
    let mut bad = Vec::new();
    let l = src.depth();
    let m = plan.added_blocks;
    if dst.depth() != l + m || dst.config.num_blocks != dst.depth() {
        bad.push(format!("depth: expected {}, found {}", l + m, dst.depth()));
        return StackReport { mismatches: bad };
    }
    for (name, a, b) in [
        ("embedding", &src.embedding, &dst.embedding),
        ("softmax.w", &src.softmax_w, &dst.softmax_w),
        ("softmax.b", &src.softmax_b, &dst.softmax_b),
    ] {
        if !a.bit_eq(b) {
            bad.push(name.to_string());
        }
    }

    // Source block index for each destination position, None for fresh blocks.
    let expected: Vec<Option<usize>> = match plan.mode {
        StackMode::Adjacent => {
            let mut v: Vec<Option<usize>> = (0..l - m.min(l)).map(Some).collect();
            for i in l - m.min(l)..l {
                v.push(Some(i));
                v.push(Some(i));
            }
            v
        }
        StackMode::Cross => (0..l).chain(0..m.min(l)).map(Some).collect(),
        StackMode::RandomTop => (0..l).map(Some).chain((0..m).map(|_| None)).collect(),
        StackMode::EmbedOnly => vec![None; l + m],
    };
    if expected.len() != dst.depth() {
        bad.push(format!("mode {} cannot add {m} blocks to {l}", plan.mode));
        return StackReport { mismatches: bad };
    }

    let fields = ["conv1.w", "conv1.b", "ln1.gamma", "ln1.beta", "conv2.w", "conv2.b", "ln2.gamma", "ln2.beta", "alpha"];
    for (i, (block, source)) in dst.blocks.iter().zip(&expected).enumerate() {
        let want_dilation = match (plan.dilations, source) {
            (DilationPolicy::Canonical, _) => dst.config.dilation_for(i),
            (DilationPolicy::KeepWithBlock, Some(j)) => src.blocks[*j].dilation,
            (DilationPolicy::KeepWithBlock, None) => dst.config.dilation_for(i),
        };
        if block.dilation != want_dilation {
            bad.push(format!("block{i}.dilation"));
        }
        match source {
            Some(j) => {
                for ((field, a), b) in fields.iter().zip(block.tensors()).zip(src.blocks[*j].tensors()) {
                    if !a.bit_eq(b) {
                        bad.push(format!("block{i}.{field}"));
                    }
                }
            }
            None => {
                if block.alpha() != T::zero() {
                    bad.push(format!("block{i}.alpha"));
                }
                for (field, w) in [("conv1.w", &block.conv1_w), ("conv2.w", &block.conv2_w)] {
                    if src.blocks.iter().any(|s| s.conv1_w.bit_eq(w) || s.conv2_w.bit_eq(w)) {
                        bad.push(format!("block{i}.{field}"));
                    }
                }
            }
        }
    }
    StackReport { mismatches: bad }
}
