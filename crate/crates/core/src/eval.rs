//! Last-item ranking evaluation, top-N metrics, and speedup accounting.

use std::fmt;
use std::str::FromStr;

use crate::data::{SessionDataset, TransferDataset};
use crate::error::{Error, Result};
use crate::kernels::{linear, softmax_cross_entropy};
use crate::model::{encode, forward, ModelParams};
use crate::tensor::{IdTensor, Scalar, Tensor};
use crate::train::TrainRecord;

/// Sequences scored per forward pass during evaluation.
const EVAL_CHUNK: usize = 256;

/// 1-based rank of `target` among ids `1..row.len()`. Items tied with the
/// target count as ranked above it.
pub fn rank_in_row<T: Scalar>(row: &[T], target: usize) -> usize {
    let score = row[target];
    1 + row
        .iter()
        .enumerate()
        .skip(1)
        .filter(|&(id, &v)| id != target && v >= score)
        .count()
}

/// Scores the last position of every context and ranks the matching target.
pub fn rank_targets<T: Scalar>(params: &ModelParams<T>, contexts: &IdTensor, targets: &[u32]) -> Result<Vec<usize>> {
    if contexts.batch() != targets.len() {
        return Err(Error::shape("one target per context row is required"));
    }
    let classes = params.softmax_b.len();
    if let Some(&t) = targets.iter().find(|&&t| t == 0 || t as usize >= classes) {
        return Err(Error::Index { index: t as usize, rows: classes });
    }
    let k = params.config.embed_dim;
    let len = contexts.len();
    let hidden = encode(params, contexts)?;
    let last: Vec<T> = hidden.data().chunks_exact(len * k).flat_map(|seq| seq[(len - 1) * k..].iter().copied()).collect();
    let last = Tensor::from_vec(&[contexts.batch(), k], last)?;
    let logits = linear(&last, &params.softmax_w, &params.softmax_b)?;
    Ok(logits.data().chunks_exact(classes).zip(targets).map(|(row, &t)| rank_in_row(row, t as usize)).collect())
}

/// Ranks of each sequence's last item given everything before it.
pub fn rank_last_item<T: Scalar>(params: &ModelParams<T>, data: &SessionDataset) -> Result<Vec<usize>> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut ranks = Vec::with_capacity(data.len());
    for chunk in rows.chunks(EVAL_CHUNK) {
        let (ctx, targets) = data.last_item_contexts(chunk);
        ranks.extend(rank_targets(params, &ctx, &targets)?);
    }
    Ok(ranks)
}

/// Ranks of each pair's target item under a transfer head.
pub fn rank_transfer<T: Scalar>(params: &ModelParams<T>, data: &TransferDataset) -> Result<Vec<usize>> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut ranks = Vec::with_capacity(data.len());
    for chunk in rows.chunks(EVAL_CHUNK) {
        let (ctx, targets) = data.batch(chunk);
        ranks.extend(rank_targets(params, &ctx, &targets)?);
    }
    Ok(ranks)
}

/// Mean next-item cross-entropy over every supervised position.
pub fn eval_loss<T: Scalar>(params: &ModelParams<T>, data: &SessionDataset) -> Result<f64> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let (mut total, mut count) = (0.0f64, 0usize);
    for chunk in rows.chunks(EVAL_CHUNK) {
        let batch = data.batch(chunk);
        let n = batch.mask.iter().filter(|&&m| m).count();
        if n == 0 {
            continue;
        }
        let logits = forward(params, &batch.inputs, false)?.logits;
        let (loss, _) = softmax_cross_entropy(&logits, &batch.targets, &batch.mask)?;
        total += loss.as_f64() * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub n: usize,
    pub mrr: f64,
    pub hr: f64,
    pub ndcg: f64,
    pub count: usize,
}

pub fn metrics_at(ranks: &[usize], n: usize) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::invalid("cannot compute metrics over zero ranks"));
    }
    if ranks.contains(&0) {
        return Err(Error::invalid("ranks are 1-based"));
    }
    let (mut rr, mut hit, mut gain) = (0.0, 0.0, 0.0);
    for &r in ranks.iter().filter(|&&r| r <= n) {
        rr += 1.0 / r as f64;
        hit += 1.0;
        gain += 1.0 / ((r + 1) as f64).log2();
    }
    let c = ranks.len() as f64;
    Ok(Metrics { n, mrr: rr / c, hr: hit / c, ndcg: gain / c, count: ranks.len() })
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} mrr={} hr={} ndcg={} count={}",
            self.n, self.mrr as f32, self.hr as f32, self.ndcg as f32, self.count
        )
    }
}

impl FromStr for Metrics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields = crate::train::parse_fields(s, &["n", "mrr", "hr", "ndcg", "count"])?;
        let bad = || Error::Parse { line: 1, message: format!("bad metrics line {s:?}") };
        let num = |i: usize| fields[i].parse::<f32>().map(f64::from).map_err(|_| bad());
        let int = |i: usize| fields[i].parse::<usize>().map_err(|_| bad());
        Ok(Metrics { n: int(0)?, mrr: num(1)?, hr: num(2)?, ndcg: num(3)?, count: int(4)? })
    }
}

/// A speedup ratio, or the fact that one run never got there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Value(f64),
    Unreachable,
}

impl Ratio {
    fn of(reference: Option<f64>, stacked: Option<f64>) -> Ratio {
        match (reference, stacked) {
            (Some(r), Some(0.0)) => Ratio::Value(if r == 0.0 { 1.0 } else { f64::INFINITY }),
            (Some(r), Some(s)) => Ratio::Value(r / s),
            _ => Ratio::Unreachable,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Value(v) => Some(v),
            Ratio::Unreachable => None,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Value(v) => write!(f, "{v:.2}x"),
            Ratio::Unreachable => f.write_str("unreachable"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speedup {
    pub iterations: Ratio,
    pub wall: Ratio,
}

/// First record whose MRR@5 reaches `target`.
pub fn first_reaching(history: &[TrainRecord], target: f64) -> Option<&TrainRecord> {
    history.iter().find(|r| r.mrr5 >= target)
}

/// Reference iterations (and wall time) to reach `target` MRR@5 divided by
/// the stacked run's. Pass the stacked run's post-stack history to count
/// fine-tuning only.
pub fn speedup(stacked: &[TrainRecord], reference: &[TrainRecord], target: f64) -> Speedup {
    let s = first_reaching(stacked, target);
    let r = first_reaching(reference, target);
    Speedup {
        iterations: Ratio::of(r.map(|x| x.iteration as f64), s.map(|x| x.iteration as f64)),
        wall: Ratio::of(r.map(|x| x.wall_ms as f64), s.map(|x| x.wall_ms as f64)),
    }
}
