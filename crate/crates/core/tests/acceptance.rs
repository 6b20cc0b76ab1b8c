//! Acceptance suite. Runs every criterion in order on one thread so the
//! wall-clock comparisons are not disturbed by other tests, prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.
//!
//! `cargo test -p seqstack --test acceptance` runs everything. Pass
//! criterion numbers after `--` to run a subset, e.g. `-- 1 2 5`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqstack::checkpoint;
use seqstack::data::{
    gen_markov, gen_transfer, load_sessions, pad_left, snapshot, split_train_test, MarkovSpec, SessionDataset,
    SnapshotSpec, TransferDataset, PAD,
};
use seqstack::eval::{eval_loss, first_reaching, metrics_at, rank_in_row, rank_last_item, rank_transfer};
use seqstack::gradcheck::{grad_check, ParamSubset};
use seqstack::kernels::{embedding_lookup, linear};
use seqstack::model::forward;
use seqstack::probe::block_similarity;
use seqstack::stacking::{
    apply_plan, embed_only_stack, partial_stack, random_top_stack, verify_stack, DilationPolicy, StackMode, StackPlan,
};
use seqstack::train::{
    run_cl, run_tf, run_ts, train, NextItemTask, Schedule, ScheduleKind, Stop, Task, TrainConfig, TrainOutcome,
    TrainRecord,
};
use seqstack::{init_model, IdTensor, ModelConfig, ModelParams, Tensor};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn perturb<T: seqstack::Scalar>(p: &mut ModelParams<T>, rng: &mut ChaCha8Rng, scale: f64) {
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v = T::from_f64(v.as_f64() + rng.gen_range(-scale..scale));
        }
    }
    for b in &mut p.blocks {
        b.alpha = Tensor::scalar(T::from_f64(rng.gen_range(0.5..1.5)));
    }
}

fn random_ids(rng: &mut ChaCha8Rng, batch: usize, len: usize, vocab: usize) -> IdTensor {
    let data = (0..batch * len).map(|_| rng.gen_range(0..=vocab as u32)).collect();
    IdTensor::new(batch, len, data).unwrap()
}

// ---------------------------------------------------------------- 1

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let c = ModelConfig { vocab_size: 50, embed_dim: 8, max_len: 8, num_blocks: 2, ..Default::default() };
    let data = gen_markov(&MarkovSpec::new(50, 20, 8, 0)).unwrap();
    let task = NextItemTask { train: &data, held_out: &data };
    let rows = [0usize, 1];
    let mut worst = 0.0f64;
    let mut entries = 0;
    let mut alpha = 0.0f64;
    // once at initialization (every alpha 0) and once with every parameter moved
    for trained in [false, true] {
        let mut p = init_model::<f64>(&c, 3).unwrap();
        if trained {
            perturb(&mut p, &mut ChaCha8Rng::seed_from_u64(1), 0.5);
        }
        let (_, g) = Task::<f64>::loss_and_grads(&task, &p, &rows).unwrap();
        let r = grad_check(&p, &g, &ParamSubset::default(), |q| Task::<f64>::loss(&task, q, &rows), 1e-5, 1e-4)
            .unwrap();
        worst = worst.max(r.max_rel_error());
        alpha = alpha.max(r.max_rel_error_for("alpha").unwrap_or(f64::INFINITY));
        entries += r.entries.len();
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!("{entries} entries, max rel err {worst:.2e} (alpha {alpha:.2e}), {:.1}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn identity_at_init() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = ModelConfig { vocab_size: 60, embed_dim: 16, max_len: 12, ..Default::default() };
    let shallow = init_model::<f32>(&ModelConfig { num_blocks: 1, ..base.clone() }, 11).unwrap();
    let ids = random_ids(&mut rng, 8, 12, 60);
    let direct = linear(&embedding_lookup(&shallow.embedding, &ids).unwrap(), &shallow.softmax_w, &shallow.softmax_b)
        .unwrap();
    let mut ok = true;
    for l in [1usize, 4, 16] {
        let mut p = init_model::<f32>(&ModelConfig { num_blocks: l, ..base.clone() }, 100 + l as u64).unwrap();
        p.embedding = shallow.embedding.clone();
        p.softmax_w = shallow.softmax_w.clone();
        p.softmax_b = shallow.softmax_b.clone();
        ok &= forward(&p, &ids, false).unwrap().logits.bit_eq(&direct);
    }
    verdict(ok, "L in {1, 4, 16} give bit-identical logits to embedding -> softmax".into())
}

// ---------------------------------------------------------------- 3

fn stacking_patterns() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    let mut failures = Vec::new();
    for l in 1..=8usize {
        for trial in 0..3u64 {
            let c = ModelConfig { vocab_size: 30, embed_dim: 8, max_len: 10, num_blocks: l, ..Default::default() };
            let mut src = init_model::<f32>(&c, trial).unwrap();
            perturb(&mut src, &mut rng, 0.3);
            let mut cases: Vec<(StackPlan, ModelParams<f32>)> = Vec::new();
            for policy in [DilationPolicy::KeepWithBlock, DilationPolicy::Canonical] {
                for mode in [StackMode::Adjacent, StackMode::Cross, StackMode::RandomTop, StackMode::EmbedOnly] {
                    let plan = StackPlan { mode, added_blocks: l, seed: trial, dilations: policy };
                    cases.push((plan, apply_plan(&src, &plan).unwrap()));
                }
            }
            for m in 1..=l {
                for mode in [StackMode::Adjacent, StackMode::Cross] {
                    let plan = StackPlan { mode, added_blocks: m, seed: 0, dilations: DilationPolicy::KeepWithBlock };
                    cases.push((plan, partial_stack(&src, mode, m).unwrap()));
                }
                let plan =
                    StackPlan { mode: StackMode::RandomTop, added_blocks: m, seed: 9, dilations: Default::default() };
                cases.push((plan, random_top_stack(&src, m, 9)));
            }
            let plan = StackPlan { mode: StackMode::EmbedOnly, added_blocks: 1, seed: 4, dilations: Default::default() };
            cases.push((plan, embed_only_stack(&src, l + 1, 4)));

            for (plan, dst) in &cases {
                checked += 1;
                let report = verify_stack(&src, dst, plan);
                if !report.passed() {
                    failures.push(format!("L={l} {:?} m={}: {report}", plan.mode, plan.added_blocks));
                }
            }
            // the verifier must notice a single flipped bit in a copied block
            let plan = StackPlan::doubling(StackMode::Adjacent, l, 0);
            let mut tampered = apply_plan(&src, &plan).unwrap();
            let last = tampered.blocks.len() - 1;
            let w = &mut tampered.blocks[last].conv2_w.data_mut()[0];
            *w = f32::from_bits(w.to_bits() ^ 1);
            if verify_stack(&src, &tampered, &plan).passed() {
                failures.push(format!("L={l}: tampered stack not detected"));
            }
        }
    }
    let detail = match failures.first() {
        None => format!("{checked} stacked models verified, tampering detected"),
        Some(f) => format!("{} failures, first: {f}", failures.len()),
    };
    verdict(failures.is_empty(), detail)
}

// ---------------------------------------------------------------- 4

fn random_top_preserves_loss() -> Verdict {
    let data = gen_markov(&MarkovSpec::new(80, 600, 12, 5)).unwrap();
    let (tr, te) = split_train_test(&data, 0.8, 5).unwrap();
    let c = ModelConfig { vocab_size: 80, embed_dim: 16, max_len: 12, num_blocks: 2, ..Default::default() };
    let cfg = TrainConfig { eval_every: 100, ..Default::default() };
    let trained = train(init_model::<f32>(&c, 5).unwrap(), &tr, &te, &cfg, Stop::Budget(200)).unwrap().params;
    let before = eval_loss(&trained, &te).unwrap();
    let mut ok = true;
    let mut detail = format!("loss {before:.6}");
    for m in [1usize, 2, 4] {
        let after = eval_loss(&random_top_stack(&trained, m, 42 + m as u64), &te).unwrap();
        ok &= after.to_bits() == before.to_bits();
        detail.push_str(&format!(", +{m} blocks {after:.6}"));
    }
    verdict(ok, detail)
}

// ---------------------------------------------------------------- 5

fn causality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (batch, len, vocab) = (3usize, 10usize, 40usize);
    let mut violations = 0;
    let mut moved = 0;
    for trial in 0..1000u64 {
        let blocks = rng.gen_range(1..=4);
        let c = ModelConfig { vocab_size: vocab, embed_dim: 8, max_len: len, num_blocks: blocks, ..Default::default() };
        let mut p = init_model::<f32>(&c, trial).unwrap();
        perturb(&mut p, &mut rng, 0.3);
        let ids = random_ids(&mut rng, batch, len, vocab);
        let (b, j) = (rng.gen_range(0..batch), rng.gen_range(0..len));
        let mut changed = ids.clone();
        let slot = &mut changed.data_mut()[b * len + j];
        *slot = (*slot + rng.gen_range(1..=vocab as u32)) % (vocab as u32 + 1);
        let x = forward(&p, &ids, false).unwrap().logits;
        let y = forward(&p, &changed, false).unwrap().logits;
        let classes = vocab + 1;
        let row = |t: &Tensor<f32>, bb: usize, pos: usize| {
            let at = (bb * len + pos) * classes;
            t.data()[at..at + classes].iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        for bb in 0..batch {
            for pos in 0..len {
                let same = row(&x, bb, pos) == row(&y, bb, pos);
                if (bb != b || pos < j) && !same {
                    violations += 1;
                }
                if bb == b && pos == j && !same {
                    moved += 1;
                }
            }
        }
    }
    verdict(violations == 0 && moved > 0, format!("1000 trials, {violations} leaks, {moved} trials moved position j"))
}

// ---------------------------------------------------------------- 6

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut bad = Vec::new();

    for _ in 0..10_000 {
        let count = rng.gen_range(1..60);
        let ranks: Vec<usize> = (0..count).map(|_| rng.gen_range(1..30)).collect();
        let n = rng.gen_range(1..12);
        let m = metrics_at(&ranks, n).unwrap();
        let (mut rr, mut hit, mut gain) = (0.0, 0.0, 0.0);
        for &r in &ranks {
            if r <= n {
                rr += 1.0 / r as f64;
                hit += 1.0;
                gain += 1.0 / ((r + 1) as f64).log2();
            }
        }
        let c = count as f64;
        if (m.mrr, m.hr, m.ndcg) != (rr / c, hit / c, gain / c) {
            bad.push(format!("metrics for {ranks:?} @ {n}"));
            break;
        }
    }

    // full sort: position of the target once every item is ordered by score
    // descending with ties placed ahead of the target
    let sort_rank = |row: &[f32], target: usize| -> usize {
        let mut order: Vec<usize> = (1..row.len()).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then((a == target).cmp(&(b == target))));
        1 + order.iter().position(|&i| i == target).unwrap()
    };
    for _ in 0..1000 {
        let v = rng.gen_range(2..80);
        // coarse values so ties are common
        let row: Vec<f32> = (0..=v).map(|_| rng.gen_range(-8..8) as f32 * 0.25).collect();
        let target = rng.gen_range(1..=v);
        if rank_in_row(&row, target) != sort_rank(&row, target) {
            bad.push(format!("rank of {target} in {row:?}"));
            break;
        }
    }

    // rank_last_item on 1000 sequences of a random model against the same oracle
    let (vocab, len) = (120usize, 9usize);
    let c = ModelConfig { vocab_size: vocab, embed_dim: 8, max_len: len, num_blocks: 2, ..Default::default() };
    let mut p = init_model::<f32>(&c, 6).unwrap();
    perturb(&mut p, &mut rng, 0.3);
    let sequences: Vec<Vec<u32>> = (0..1000)
        .map(|_| {
            let n = rng.gen_range(2..=len);
            pad_left(&(0..n).map(|_| rng.gen_range(1..=vocab as u32)).collect::<Vec<_>>(), len)
        })
        .collect();
    let data = SessionDataset::new(sequences.clone(), vocab, len).unwrap();
    let got = rank_last_item(&p, &data).unwrap();
    for (i, s) in sequences.iter().enumerate() {
        let items: Vec<u32> = s.iter().copied().filter(|&v| v != PAD).collect();
        let (target, context) = items.split_last().unwrap();
        let ctx = IdTensor::new(1, len, pad_left(context, len)).unwrap();
        let logits = forward(&p, &ctx, false).unwrap().logits;
        let last = &logits.data()[(len - 1) * (vocab + 1)..];
        if got[i] != sort_rank(last, *target as usize) {
            bad.push(format!("sequence {i}: rank {} vs oracle {}", got[i], sort_rank(last, *target as usize)));
            break;
        }
    }

    let m = metrics_at(&[1, 2, 10], 5).unwrap();
    let closed = (m.mrr - 0.5).abs() < 1e-4 && (m.hr - 0.6667).abs() < 1e-4 && (m.ndcg - 0.5436).abs() < 1e-4;
    if !closed {
        bad.push(format!("[1,2,10]@5 gave {m}"));
    }
    let detail = if bad.is_empty() {
        format!("10k metric sets exact, 1k rows and 1k sequences match sort oracle, [1,2,10]@5 -> {m}")
    } else {
        bad.join("; ")
    };
    verdict(bad.is_empty(), detail)
}

// ---------------------------------------------------------------- 7, 8

const CATALOG: usize = 500;
const SESSIONS: usize = 20_000;
const SEQ_LEN: usize = 20;
const DIM: usize = 32;

struct Desk {
    train: SessionDataset,
    test: SessionDataset,
    scratch: TrainOutcome<f32>,
}

fn desk_config(blocks: usize) -> ModelConfig {
    ModelConfig { vocab_size: CATALOG, embed_dim: DIM, max_len: SEQ_LEN, num_blocks: blocks, ..Default::default() }
}

fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig { eval_every: 100, seed, ..Default::default() }
}

fn desk(seed: u64) -> Desk {
    let data = gen_markov(&MarkovSpec::new(CATALOG, SESSIONS, SEQ_LEN, seed)).unwrap();
    let (train_set, test) = split_train_test(&data, 0.8, seed).unwrap();
    let scratch = train(
        init_model::<f32>(&desk_config(4), seed + 100).unwrap(),
        &train_set,
        &test,
        &desk_train_config(seed),
        Stop::Converged,
    )
    .unwrap();
    Desk { train: train_set, test, scratch }
}

fn best_mrr(history: &[TrainRecord]) -> f64 {
    history.iter().map(|r| r.mrr5).fold(0.0, f64::max)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn cl_speedup(desks: &mut Vec<Desk>) -> Verdict {
    let start = Instant::now();
    let (mut stacked_iters, mut scratch_iters) = (Vec::new(), Vec::new());
    let (mut stacked_best, mut scratch_best) = (Vec::new(), Vec::new());
    let mut unreached = Vec::new();
    for &seed in &SEEDS {
        let d = desk(seed);
        let spec = SnapshotSpec { fractions: vec![0.5, 1.0], seed };
        let snapshots = [snapshot(&d.train, &spec, 0).unwrap(), snapshot(&d.train, &spec, 1).unwrap()];
        let schedule = Schedule {
            kind: ScheduleKind::Cl,
            stack_times: 1,
            fractions: spec.fractions.clone(),
            snapshot_seed: seed,
            ..Default::default()
        };
        let cl = run_cl(
            init_model::<f32>(&desk_config(2), seed).unwrap(),
            &schedule,
            &snapshots,
            &d.test,
            &desk_train_config(seed),
        )
        .unwrap();
        let fine_tune = &cl.last_stage().records;
        let target = 0.98 * best_mrr(&d.scratch.history);
        let s = first_reaching(fine_tune, target).map(|r| r.iteration);
        let r = first_reaching(&d.scratch.history, target).map(|r| r.iteration);
        eprintln!("  seed {seed}: target {target:.4}, fine-tune reaches at {s:?}, scratch at {r:?}");
        match (s, r) {
            (Some(s), Some(r)) => {
                stacked_iters.push(s as f64);
                scratch_iters.push(r as f64);
            }
            _ => unreached.push(seed),
        }
        stacked_best.push(best_mrr(fine_tune));
        scratch_best.push(best_mrr(&d.scratch.history));
        desks.push(d);
    }
    let elapsed = start.elapsed();
    let speedup = if unreached.is_empty() { mean(&scratch_iters) / mean(&stacked_iters) } else { 0.0 };
    let accurate = mean(&stacked_best) >= 0.98 * mean(&scratch_best);
    verdict(
        unreached.is_empty() && speedup >= 1.4 && accurate && elapsed < Duration::from_secs(30 * 60),
        format!(
            "speedup {speedup:.2}x (fine-tune {:.0} vs scratch {:.0} iterations), best MRR@5 {:.4} vs {:.4}, \
             unreached seeds {unreached:?}, {:.0}s",
            mean(&stacked_iters),
            mean(&scratch_iters),
            mean(&stacked_best),
            mean(&scratch_best),
            elapsed.as_secs_f64()
        ),
    )
}

fn ts_wall_clock(desks: &mut Vec<Desk>) -> Verdict {
    if desks.is_empty() {
        desks.extend(SEEDS.iter().map(|&s| desk(s)));
    }
    let (mut ts_wall, mut scratch_wall) = (Vec::new(), Vec::new());
    let mut unreached = Vec::new();
    for (d, &seed) in desks.iter().zip(&SEEDS) {
        let schedule = Schedule {
            kind: ScheduleKind::Ts,
            stack_times: 1,
            total_budget: 2000,
            final_until_converged: true,
            ..Default::default()
        };
        let ts = run_ts(
            init_model::<f32>(&desk_config(2), seed).unwrap(),
            &schedule,
            &d.train,
            &d.test,
            &schedule.ts_budgets(),
            &desk_train_config(seed),
        )
        .unwrap();
        let target = 0.98 * best_mrr(&d.scratch.history);
        let t = first_reaching(&ts.end_to_end(), target).map(|r| r.wall_ms);
        let r = first_reaching(&d.scratch.history, target).map(|r| r.wall_ms);
        eprintln!("  seed {seed}: target {target:.4}, ts reaches at {t:?} ms, scratch at {r:?} ms");
        match (t, r) {
            (Some(t), Some(r)) => {
                ts_wall.push(t as f64);
                scratch_wall.push(r as f64);
            }
            _ => unreached.push(seed),
        }
    }
    let ratio = if unreached.is_empty() { mean(&ts_wall) / mean(&scratch_wall) } else { f64::INFINITY };
    verdict(
        ratio <= 0.9,
        format!(
            "wall to target {:.0} ms vs scratch {:.0} ms ({:.0}%), unreached seeds {unreached:?}",
            mean(&ts_wall),
            mean(&scratch_wall),
            100.0 * ratio
        ),
    )
}

// ---------------------------------------------------------------- 9

fn probe_pattern() -> Verdict {
    let data = gen_markov(&MarkovSpec::new(200, 5000, 20, 9)).unwrap();
    let (tr, te) = split_train_test(&data, 0.8, 9).unwrap();
    let c = ModelConfig { vocab_size: 200, embed_dim: 32, max_len: 20, num_blocks: 8, ..Default::default() };
    let fresh = init_model::<f32>(&c, 9).unwrap();
    let ones = block_similarity(&fresh, &te, 100, 0).unwrap();
    let all_ones = ones.values.iter().all(|v| (v - 1.0).abs() <= 1e-6);
    let cfg = TrainConfig { eval_every: 100, seed: 9, ..Default::default() };
    let out = train(fresh, &tr, &te, &cfg, Stop::Converged).unwrap();
    let s = block_similarity(&out.params, &te, 100, 0).unwrap();
    let (adj, first) = (s.mean_adjacent_upper(), s.mean_first_block());
    verdict(
        all_ones && adj > first,
        format!(
            "fresh all ones: {all_ones}; trained ({} iterations) adjacent mean {adj:.4} vs block-1 mean {first:.4}",
            out.best_iteration
        ),
    )
}

// ---------------------------------------------------------------- 10

fn round_trips() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_markov(&MarkovSpec::new(60, 800, 10, 10)).unwrap();
    let (tr, te) = split_train_test(&data, 0.8, 10).unwrap();
    let c = ModelConfig { vocab_size: 60, embed_dim: 16, max_len: 10, num_blocks: 1, ..Default::default() };
    let cfg = TrainConfig { eval_every: 50, seed: 10, ..Default::default() };
    let schedule = Schedule { kind: ScheduleKind::Ts, stack_times: 2, budgets: vec![100, 100, 100], ..Default::default() };
    let run = || {
        run_ts(init_model::<f32>(&c, 10).unwrap(), &schedule, &tr, &te, &schedule.budgets, &cfg).unwrap()
    };
    let (a, b) = (run(), run());

    let bytes = checkpoint::encode(&a.params);
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&a.params, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    let ckpt_ok = checkpoint::encode(&loaded) == bytes
        && std::fs::read(&path).unwrap() == bytes
        && loaded.tensors().iter().zip(a.params.tensors()).all(|(x, y)| x.bit_eq(y))
        && loaded.dilations() == a.params.dilations();

    let sessions = dir.path().join("sessions.txt");
    tr.write(&sessions).unwrap();
    let reread = load_sessions(&sessions, 10).unwrap().with_vocab(60).unwrap();
    let sessions_ok = reread == tr;

    let (ra, rb) = (a.end_to_end(), b.end_to_end());
    let replay_ok = ra.len() == rb.len()
        && ra.iter().zip(&rb).all(|(x, y)| x.same_trajectory(y))
        && checkpoint::encode(&b.params) == bytes;
    verdict(
        ckpt_ok && sessions_ok && replay_ok,
        format!(
            "checkpoint {} bytes exact: {ckpt_ok}; session file: {sessions_ok}; {} records replayed: {replay_ok}",
            bytes.len(),
            ra.len()
        ),
    )
}

// ---------------------------------------------------------------- 11

fn transfer_warm_start() -> Verdict {
    let (mut warm, mut cold) = (Vec::new(), Vec::new());
    for &seed in &SEEDS {
        let spec = MarkovSpec::new(200, 5000, 20, seed);
        let (sessions, pairs) = gen_transfer(&spec, 50, 3000, 0.1, seed).unwrap();
        let cut = pairs.len() * 4 / 5;
        let rows: Vec<usize> = (0..pairs.len()).collect();
        let (target_train, target_test): (TransferDataset, TransferDataset) =
            (pairs.subset(&rows[..cut]), pairs.subset(&rows[cut..]));
        let (src_train, src_test) = split_train_test(&sessions, 0.8, seed).unwrap();
        let c = ModelConfig { vocab_size: 200, embed_dim: 32, max_len: 20, num_blocks: 2, ..Default::default() };
        let cfg = TrainConfig { eval_every: 100, seed, ..Default::default() };
        let source = train(init_model::<f32>(&c, seed).unwrap(), &src_train, &src_test, &cfg, Stop::Converged)
            .unwrap()
            .params;
        let random = init_model::<f32>(&c, seed + 1000).unwrap();
        for (model, sink) in [(&source, &mut warm), (&random, &mut cold)] {
            let out = run_tf(model, &target_train, &target_test, &cfg, Stop::Budget(300)).unwrap();
            sink.push(metrics_at(&rank_transfer(&out.params, &target_test).unwrap(), 5).unwrap().hr);
        }
    }
    verdict(
        mean(&warm) > mean(&cold),
        format!("target HR@5 warm {:.4} vs random {:.4} (per seed {warm:.3?} vs {cold:.3?})", mean(&warm), mean(&cold)),
    )
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut desks = Vec::new();
    let mut failed = 0;
    for (n, name) in [
        (1, "gradient check"),
        (2, "identity at init"),
        (3, "stacking copy patterns"),
        (4, "random-top preserves loss"),
        (5, "causality"),
        (6, "metric oracles"),
        (7, "continual stacking speedup"),
        (8, "stacked schedule wall clock"),
        (9, "block similarity probe"),
        (10, "round trips and reproducibility"),
        (11, "transfer warm start"),
    ] {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        failed += report(n, name, || match n {
            1 => gradient_check(),
            2 => identity_at_init(),
            3 => stacking_patterns(),
            4 => random_top_preserves_loss(),
            5 => causality(),
            6 => metric_oracles(),
            7 => cl_speedup(&mut desks),
            8 => ts_wall_clock(&mut desks),
            9 => probe_pattern(),
            10 => round_trips(),
            _ => transfer_warm_start(),
        });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Verdict) -> usize {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
    println!(
        "criterion {n:>2} {name}: {} ({:.1}s) {}",
        if v.pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        v.detail
    );
    usize::from(!v.pass)
}
