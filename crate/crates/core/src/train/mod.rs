//! Minibatch training with Adam and the progressive-stacking schedules.

mod record;
mod schedule;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SessionDataset, TransferDataset};
use crate::error::{Error, Result};
use crate::eval::{metrics_at, rank_last_item, rank_transfer, Metrics};
use crate::kernels::softmax_cross_entropy;
use crate::model::{backward, forward, forward_train, ModelParams, ParamGrads};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::{IdTensor, Scalar};

pub(crate) use record::parse_fields;
pub use record::{parse_records, TrainRecord};
pub use schedule::{
    attach_head, default_ts_budgets, run_cl, run_tf, run_ts, Schedule, ScheduleKind, ScheduleOutcome, StageHistory,
};

/// Cutoff used for the metrics logged during training.
pub const LOG_CUTOFF: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Hard cap on iterations when training until convergence.
    pub max_iterations: u64,
    pub eval_every: u64,
    /// Consecutive non-improving evaluations that count as convergence.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_iterations: 100_000,
            eval_every: 200,
            patience: 5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0 && self.adam_eps > 0.0;
        let betas = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !positive || !betas || self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::Config(
                "learning_rate, adam_eps, batch_size, eval_every and patience must be positive; betas in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

/// When a run ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    /// After `patience` evaluations without an MRR@5 gain (or `max_iterations`);
    /// the best evaluated parameters are returned.
    Converged,
    /// After exactly this many iterations; the final parameters are returned.
    Budget(u64),
}

/// A supervised objective plus its held-out evaluation.
pub trait Task<T: Scalar> {
    fn num_examples(&self) -> usize;

    fn loss(&self, params: &ModelParams<T>, rows: &[usize]) -> Result<f64>;

    fn loss_and_grads(&self, params: &ModelParams<T>, rows: &[usize]) -> Result<(f64, ParamGrads<T>)>;

    fn evaluate(&self, params: &ModelParams<T>) -> Result<Metrics>;
}

fn loss_grads<T: Scalar>(
    params: &ModelParams<T>,
    inputs: &IdTensor,
    targets: &IdTensor,
    mask: &[bool],
) -> Result<(f64, ParamGrads<T>)> {
    let pass = forward_train(params, inputs)?;
    let (loss, grad) = softmax_cross_entropy(&pass.logits, targets, mask)?;
    Ok((loss.as_f64(), backward(params, &pass, &grad)?))
}

/// Next-item prediction at every supervised position (self-supervised
/// factorization of the sequence), evaluated on held-out last items.
pub struct NextItemTask<'a> {
    pub train: &'a SessionDataset,
    pub held_out: &'a SessionDataset,
}

impl<T: Scalar> Task<T> for NextItemTask<'_> {
    fn num_examples(&self) -> usize {
        self.train.len()
    }

    fn loss(&self, params: &ModelParams<T>, rows: &[usize]) -> Result<f64> {
        let b = self.train.batch(rows);
        let logits = forward(params, &b.inputs, false)?.logits;
        softmax_cross_entropy(&logits, &b.targets, &b.mask).map(|(l, _)| l.as_f64())
    }

    fn loss_and_grads(&self, params: &ModelParams<T>, rows: &[usize]) -> Result<(f64, ParamGrads<T>)> {
        let b = self.train.batch(rows);
        loss_grads(params, &b.inputs, &b.targets, &b.mask)
    }

    fn evaluate(&self, params: &ModelParams<T>) -> Result<Metrics> {
        metrics_at(&rank_last_item(params, self.held_out)?, LOG_CUTOFF)
    }
}

/// Source sequence to target item, supervised at the final position only.
pub struct TransferTask<'a> {
    pub train: &'a TransferDataset,
    pub held_out: &'a TransferDataset,
}

impl TransferTask<'_> {
    fn supervision(&self, rows: &[usize]) -> (IdTensor, IdTensor, Vec<bool>) {
        let (ctx, targets) = self.train.batch(rows);
        let t = ctx.len();
        let mut tgt = vec![0u32; rows.len() * t];
        let mut mask = vec![false; rows.len() * t];
        for (b, &target) in targets.iter().enumerate() {
            tgt[b * t + t - 1] = target;
            mask[b * t + t - 1] = true;
        }
        (ctx, IdTensor::new(rows.len(), t, tgt).expect("sized above"), mask)
    }
}

impl<T: Scalar> Task<T> for TransferTask<'_> {
    fn num_examples(&self) -> usize {
        self.train.len()
    }

    fn loss(&self, params: &ModelParams<T>, rows: &[usize]) -> Result<f64> {
        let (ctx, tgt, mask) = self.supervision(rows);
        let logits = forward(params, &ctx, false)?.logits;
        softmax_cross_entropy(&logits, &tgt, &mask).map(|(l, _)| l.as_f64())
    }

    fn loss_and_grads(&self, params: &ModelParams<T>, rows: &[usize]) -> Result<(f64, ParamGrads<T>)> {
        let (ctx, tgt, mask) = self.supervision(rows);
        loss_grads(params, &ctx, &tgt, &mask)
    }

    fn evaluate(&self, params: &ModelParams<T>) -> Result<Metrics> {
        metrics_at(&rank_transfer(params, self.held_out)?, LOG_CUTOFF)
    }
}

/// Seeded epoch-wise shuffling over example indices.
struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Batcher { order, cursor: 0, rng }
    }

    /// Next `size` indices; a short tail is skipped and the data reshuffled.
    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.cursor + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let rows = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        rows
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub history: Vec<TrainRecord>,
    /// Iterations actually run.
    pub iterations: u64,
    /// Iteration of the returned parameters.
    pub best_iteration: u64,
    pub wall_ms: u64,
}

fn record(iteration: u64, loss: f64, m: &Metrics, wall_ms: u64) -> TrainRecord {
    TrainRecord { iteration, train_loss: loss, mrr5: m.mrr, hr5: m.hr, ndcg5: m.ndcg, wall_ms }
}

/// Runs Adam on `task` from `params`, evaluating every `eval_every` steps.
///
/// Adam moments start at zero on every call.
pub fn train_task<T: Scalar, K: Task<T> + ?Sized>(
    mut params: ModelParams<T>,
    task: &K,
    config: &TrainConfig,
    stop: Stop,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if task.num_examples() == 0 {
        return Err(Error::EmptyDataset);
    }
    let adam = config.adam();
    let mut state = AdamState::new(&params);
    let mut batcher = Batcher::new(task.num_examples(), config.seed);
    let limit = match stop {
        Stop::Budget(q) => q,
        Stop::Converged => config.max_iterations,
    };

    let first = batcher.order[..config.batch_size.min(task.num_examples())].to_vec();
    let m0 = task.evaluate(&params)?;
    let mut history = vec![record(0, task.loss(&params, &first)?, &m0, 0)];
    let mut best = (m0.mrr, 0u64, params.clone());
    let mut stale = 0usize;
    let mut elapsed = std::time::Duration::ZERO;
    let (mut loss_sum, mut loss_n) = (0.0f64, 0u64);
    let mut iteration = 0u64;

    while iteration < limit {
        let rows = batcher.next(config.batch_size);
        let start = Instant::now();
        let (loss, grads) = task.loss_and_grads(&params, &rows)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at iteration {}", iteration + 1)));
        }
        adam_step(&mut params, &grads, &mut state, &adam)?;
        elapsed += start.elapsed();
        iteration += 1;
        loss_sum += loss;
        loss_n += 1;

        if iteration.is_multiple_of(config.eval_every) || iteration == limit {
            let m = task.evaluate(&params)?;
            history.push(record(iteration, loss_sum / loss_n as f64, &m, elapsed.as_millis() as u64));
            loss_sum = 0.0;
            loss_n = 0;
            if stop == Stop::Converged {
                if m.mrr > best.0 {
                    best = (m.mrr, iteration, params.clone());
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= config.patience {
                        break;
                    }
                }
            }
        }
    }

    let wall_ms = elapsed.as_millis() as u64;
    let (params, best_iteration) = match stop {
        Stop::Converged => (best.2, best.1),
        Stop::Budget(_) => (params, iteration),
    };
    Ok(TrainOutcome { params, history, iterations: iteration, best_iteration, wall_ms })
}

/// Next-item training on `data`, evaluated on `held_out`.
pub fn train<T: Scalar>(
    params: ModelParams<T>,
    data: &SessionDataset,
    held_out: &SessionDataset,
    config: &TrainConfig,
    stop: Stop,
) -> Result<TrainOutcome<T>> {
    if held_out.is_empty() {
        return Err(Error::invalid("held-out set is empty"));
    }
    train_task(params, &NextItemTask { train: data, held_out }, config, stop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_markov, split_train_test, MarkovSpec};
    use crate::model::{init_model, ModelConfig};

    fn setup() -> (SessionDataset, SessionDataset, ModelParams<f32>) {
        let data = gen_markov(&MarkovSpec::new(30, 300, 8, 1)).unwrap();
        let (tr, te) = split_train_test(&data, 0.8, 0).unwrap();
        let c = ModelConfig { vocab_size: 30, embed_dim: 8, max_len: 8, num_blocks: 1, ..Default::default() };
        (tr, te, init_model(&c, 0).unwrap())
    }

    fn quick() -> TrainConfig {
        TrainConfig { batch_size: 16, eval_every: 10, learning_rate: 5e-3, ..Default::default() }
    }

    #[test]
    fn zero_budget_returns_input() {
        let (tr, te, p) = setup();
        let out = train(p.clone(), &tr, &te, &quick(), Stop::Budget(0)).unwrap();
        assert_eq!(out.params, p);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].iteration, 0);
    }

    #[test]
    fn budget_runs_exact_iterations() {
        let (tr, te, p) = setup();
        let out = train(p, &tr, &te, &quick(), Stop::Budget(25)).unwrap();
        assert_eq!(out.iterations, 25);
        let iters: Vec<u64> = out.history.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![0, 10, 20, 25]);
    }

    #[test]
    fn runs_are_reproducible() {
        let (tr, te, p) = setup();
        let a = train(p.clone(), &tr, &te, &quick(), Stop::Budget(30)).unwrap();
        let b = train(p, &tr, &te, &quick(), Stop::Budget(30)).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.history.iter().zip(&b.history).all(|(x, y)| x.same_trajectory(y)));
    }

    #[test]
    fn plateau_stops_within_patience() {
        let (tr, te, p) = setup();
        let cfg = TrainConfig { patience: 3, max_iterations: 5000, ..quick() };
        let out = train(p, &tr, &te, &cfg, Stop::Converged).unwrap();
        assert!(out.iterations < 5000, "never plateaued");
        let last = out.history.last().unwrap().iteration;
        assert!(last - out.best_iteration <= cfg.patience as u64 * cfg.eval_every);
        let best = out.history.iter().map(|r| r.mrr5).fold(0.0, f64::max);
        let at_best = out.history.iter().find(|r| r.iteration == out.best_iteration).unwrap();
        assert_eq!(at_best.mrr5, best);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (tr, te, p) = setup();
        let empty = tr.subset(&[]);
        assert!(matches!(train(p, &empty, &te, &quick(), Stop::Budget(1)), Err(Error::EmptyDataset)));
    }
}
