//! Progressive-stacking schedules: grow a shallow model by doubling its
//! depth between training stages.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{train, train_task, Stop, TrainConfig, TrainOutcome, TrainRecord, TransferTask};
use crate::data::{SessionDataset, TransferDataset};
use crate::error::{Error, Result};
use crate::model::{ModelParams, TABLE_INIT_STD};
use crate::stacking::{apply_plan, DilationPolicy, StackMode, StackPlan};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// A single training run at fixed depth.
    #[default]
    Plain,
    /// Stack, then train to convergence on a growing data snapshot.
    Cl,
    /// Stack after fixed iteration budgets on the full data.
    Ts,
    /// Fine-tune a trained model on a new target catalog.
    Tf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub kind: ScheduleKind,
    /// Depth of the first stage; 0 means take it from the model config.
    pub initial_blocks: usize,
    /// Number of doubling steps.
    pub stack_times: usize,
    pub mode: StackMode,
    pub dilations: DilationPolicy,
    /// Cl: data fraction seen by each stage, one more entry than `stack_times`.
    pub fractions: Vec<f64>,
    pub snapshot_seed: u64,
    /// Ts: iterations per stage. Empty means derive from `total_budget`.
    pub budgets: Vec<u64>,
    pub total_budget: u64,
    /// Ts: ignore the last budget and train the deepest model to convergence.
    pub final_until_converged: bool,
    /// Plain and tf: fixed iteration budget; unset trains to convergence.
    pub budget: Option<u64>,
    /// Learning rate for every stage after the first stack.
    pub finetune_learning_rate: Option<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            kind: ScheduleKind::Plain,
            initial_blocks: 0,
            stack_times: 0,
            mode: StackMode::Adjacent,
            dilations: DilationPolicy::KeepWithBlock,
            fractions: Vec::new(),
            snapshot_seed: 0,
            budgets: Vec::new(),
            total_budget: 0,
            final_until_converged: false,
            budget: None,
            finetune_learning_rate: None,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Some(lr) = self.finetune_learning_rate {
            if lr.is_nan() || lr <= 0.0 {
                return bad(format!("finetune_learning_rate must be positive, got {lr}"));
            }
        }
        match self.kind {
            ScheduleKind::Cl if self.fractions.len() != self.stack_times + 1 => {
                bad(format!("cl needs {} fractions, got {}", self.stack_times + 1, self.fractions.len()))
            }
            ScheduleKind::Ts if !self.budgets.is_empty() && self.budgets.len() != self.stack_times + 1 => {
                bad(format!("ts needs {} budgets, got {}", self.stack_times + 1, self.budgets.len()))
            }
            ScheduleKind::Ts if self.budgets.is_empty() && self.total_budget == 0 => {
                bad("ts needs either budgets or total_budget".into())
            }
            _ => Ok(()),
        }
    }

    /// Ts budgets, explicit or derived from `total_budget`.
    pub fn ts_budgets(&self) -> Vec<u64> {
        if self.budgets.is_empty() {
            default_ts_budgets(self.total_budget, self.stack_times)
        } else {
            self.budgets.clone()
        }
    }

    /// Depth after every doubling step.
    pub fn final_depth(&self, initial: usize) -> usize {
        initial << self.stack_times
    }

    fn stage_config(&self, base: &TrainConfig, stage: usize) -> TrainConfig {
        let mut c = base.clone();
        c.seed = base.seed.wrapping_add(stage as u64);
        if stage > 0 {
            if let Some(lr) = self.finetune_learning_rate {
                c.learning_rate = lr;
            }
        }
        c
    }

    fn plan(&self, depth: usize, base: &TrainConfig, stage: usize) -> StackPlan {
        StackPlan {
            mode: self.mode,
            added_blocks: depth,
            seed: base.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stage as u64)),
            dilations: self.dilations,
        }
    }

    fn check_depth<T: Scalar>(&self, params: &ModelParams<T>) -> Result<()> {
        if self.initial_blocks != 0 && self.initial_blocks != params.depth() {
            return Err(Error::Config(format!(
                "schedule starts at {} blocks, model has {}",
                self.initial_blocks,
                params.depth()
            )));
        }
        Ok(())
    }
}

/// `Q_0 = ceil(total / 4)`; the rest is split evenly over the `k` deeper
/// stages, any remainder going to the last one.
pub fn default_ts_budgets(total: u64, k: usize) -> Vec<u64> {
    if k == 0 {
        return vec![total];
    }
    let q0 = total.div_ceil(4);
    let rest = total - q0;
    let each = rest / k as u64;
    let mut out = vec![q0];
    out.extend(std::iter::repeat_n(each, k));
    *out.last_mut().expect("k > 0") += rest - each * k as u64;
    out
}

/// What happened in one stage of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct StageHistory {
    pub stage: usize,
    pub depth: usize,
    pub data_size: usize,
    pub records: Vec<TrainRecord>,
    pub iterations: u64,
    pub best_iteration: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct ScheduleOutcome<T> {
    pub params: ModelParams<T>,
    pub stages: Vec<StageHistory>,
}

impl<T> ScheduleOutcome<T> {
    pub fn total_iterations(&self) -> u64 {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    pub fn total_wall_ms(&self) -> u64 {
        self.stages.iter().map(|s| s.wall_ms).sum()
    }

    pub fn last_stage(&self) -> &StageHistory {
        self.stages.last().expect("a schedule has at least one stage")
    }

    /// All records on one clock: iterations and wall time accumulate across
    /// stages. The step-0 record of every stage after the first is dropped so
    /// iterations stay strictly increasing.
    pub fn end_to_end(&self) -> Vec<TrainRecord> {
        let (mut it, mut wall) = (0u64, 0u64);
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            let skip = usize::from(i > 0);
            out.extend(s.records.iter().skip(skip).map(|r| TrainRecord {
                iteration: r.iteration + it,
                wall_ms: r.wall_ms + wall,
                ..*r
            }));
            it += s.iterations;
            wall += s.wall_ms;
        }
        out
    }
}

fn stage<T>(stage: usize, data_size: usize, out: &TrainOutcome<T>) -> StageHistory
where
    T: Scalar,
{
    StageHistory {
        stage,
        depth: out.params.depth(),
        data_size,
        records: out.history.clone(),
        iterations: out.iterations,
        best_iteration: out.best_iteration,
        wall_ms: out.wall_ms,
    }
}

fn contains(small: &SessionDataset, big: &SessionDataset) -> bool {
    let mut counts: HashMap<&[u32], isize> = HashMap::new();
    for s in big.sequences() {
        *counts.entry(s.as_slice()).or_default() += 1;
    }
    small.sequences().iter().all(|s| {
        let c = counts.entry(s.as_slice()).or_default();
        *c -= 1;
        *c >= 0
    })
}

/// Continual-learning schedule: train on `snapshots[0]` to convergence, then
/// for each later snapshot double the depth and train to convergence again.
pub fn run_cl<T: Scalar>(
    params: ModelParams<T>,
    schedule: &Schedule,
    snapshots: &[SessionDataset],
    held_out: &SessionDataset,
    config: &TrainConfig,
) -> Result<ScheduleOutcome<T>> {
    schedule.check_depth(&params)?;
    if snapshots.len() != schedule.stack_times + 1 {
        return Err(Error::invalid(format!(
            "{} stacking steps need {} snapshots, got {}",
            schedule.stack_times,
            schedule.stack_times + 1,
            snapshots.len()
        )));
    }
    for (i, w) in snapshots.windows(2).enumerate() {
        if !contains(&w[0], &w[1]) {
            return Err(Error::invalid(format!("snapshot {i} is not contained in snapshot {}", i + 1)));
        }
    }
    let mut params = params;
    let mut stages = Vec::new();
    for (i, data) in snapshots.iter().enumerate() {
        if i > 0 {
            params = apply_plan(&params, &schedule.plan(params.depth(), config, i))?;
        }
        let out = train(params, data, held_out, &schedule.stage_config(config, i), Stop::Converged)?;
        log::info!("cl stage {i}: depth {} iterations {}", out.params.depth(), out.iterations);
        stages.push(stage(i, data.len(), &out));
        params = out.params;
    }
    Ok(ScheduleOutcome { params, stages })
}

/// Train-from-scratch schedule: stage `i` runs `budgets[i]` iterations on the
/// full data before the next doubling. With `final_until_converged` the last
/// stage ignores its budget and trains to convergence.
pub fn run_ts<T: Scalar>(
    params: ModelParams<T>,
    schedule: &Schedule,
    data: &SessionDataset,
    held_out: &SessionDataset,
    budgets: &[u64],
    config: &TrainConfig,
) -> Result<ScheduleOutcome<T>> {
    schedule.check_depth(&params)?;
    if budgets.len() != schedule.stack_times + 1 {
        return Err(Error::invalid(format!(
            "{} stacking steps need {} budgets, got {}",
            schedule.stack_times,
            schedule.stack_times + 1,
            budgets.len()
        )));
    }
    let mut params = params;
    let mut stages = Vec::new();
    for (i, &q) in budgets.iter().enumerate() {
        if i > 0 {
            params = apply_plan(&params, &schedule.plan(params.depth(), config, i))?;
        }
        let last = i + 1 == budgets.len();
        let stop = if last && schedule.final_until_converged { Stop::Converged } else { Stop::Budget(q) };
        let out = train(params, data, held_out, &schedule.stage_config(config, i), stop)?;
        log::info!("ts stage {i}: depth {} iterations {}", out.params.depth(), out.iterations);
        stages.push(stage(i, data.len(), &out));
        params = out.params;
    }
    Ok(ScheduleOutcome { params, stages })
}

/// Replaces the softmax head with a fresh one sized for `target_vocab`,
/// keeping the embedding and every block.
pub fn attach_head<T: Scalar>(source: &ModelParams<T>, target_vocab: usize, seed: u64) -> Result<ModelParams<T>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    if target_vocab == 0 {
        return Err(Error::invalid("target vocabulary must be non-empty"));
    }
    let mut config = source.config.clone();
    config.output_vocab = (target_vocab != config.vocab_size).then_some(target_vocab);
    let classes = target_vocab + 1;
    let k = config.embed_dim;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, TABLE_INIT_STD).expect("positive std");
    let w = (0..k * classes).map(|_| T::from_f64(dist.sample(&mut rng))).collect();
    Ok(ModelParams {
        config,
        embedding: source.embedding.clone(),
        blocks: source.blocks.clone(),
        softmax_w: Tensor::from_vec(&[k, classes], w)?,
        softmax_b: Tensor::zeros(&[classes]),
    })
}

/// Transfer fine-tuning: new head for the target catalog, then every
/// parameter trained on (source sequence, target item) pairs.
pub fn run_tf<T: Scalar>(
    source: &ModelParams<T>,
    target_train: &TransferDataset,
    target_test: &TransferDataset,
    config: &TrainConfig,
    stop: Stop,
) -> Result<TrainOutcome<T>> {
    let target_vocab = target_train.target_vocab();
    if target_train.source_vocab() > source.config.vocab_size {
        return Err(Error::invalid(format!(
            "transfer contexts use items up to {}, source model knows {}",
            target_train.source_vocab(),
            source.config.vocab_size
        )));
    }
    let params = attach_head(source, target_vocab, config.seed)?;
    train_task(params, &TransferTask { train: target_train, held_out: target_test }, config, stop)
}
