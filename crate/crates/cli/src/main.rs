use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seqstack::checkpoint;
use seqstack::config::ExperimentConfig;
use seqstack::data::{
    filter_min_counts, gen_markov, gen_transfer, load_sessions, load_transfer, parse_raw_sessions, snapshot,
    split_train_test, ChunkOptions, MarkovSpec, SessionDataset, SnapshotSpec, TransferDataset,
};
use seqstack::eval::{metrics_at, rank_last_item};
use seqstack::probe::block_similarity;
use seqstack::stacking::{apply_plan, verify_stack, DilationPolicy, StackMode, StackPlan};
use seqstack::train::{run_cl, run_tf, run_ts, train, ScheduleKind, StageHistory, Stop, TrainRecord, LOG_CUTOFF};
use seqstack::{init_model, Error, ModelParams};

#[derive(Parser)]
#[command(name = "seqstack", version, about = "Train and grow dilated-convolution sequential recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic sessions sampled from a random sparse Markov chain.
    GenSynth {
        #[arg(long)]
        items: usize,
        #[arg(long)]
        sessions: usize,
        #[arg(long)]
        max_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Successors per state; 1 makes the chain deterministic.
        #[arg(long, default_value_t = 5)]
        concentration: usize,
        #[arg(long, default_value_t = 1)]
        order: usize,
        /// Uniform transitions (no learnable structure).
        #[arg(long)]
        uniform: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write linked source sessions plus train/test transfer pairs.
    GenTransfer {
        #[arg(long)]
        items: usize,
        #[arg(long)]
        target_items: usize,
        #[arg(long)]
        sessions: usize,
        #[arg(long)]
        pairs: usize,
        #[arg(long)]
        max_len: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for source.txt, transfer_train.txt, transfer_test.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the schedule described by an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grow a checkpoint by stacking blocks.
    Stack {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        mode: StackMode,
        #[arg(long)]
        blocks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reassign every block the cyclic base dilation for its position.
        #[arg(long)]
        canonical_dilations: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Last-item ranking metrics of a checkpoint on a session file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        n: usize,
    },
    /// Block-output cosine similarity matrix.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100)]
        sequences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit 1 for bad input the user can fix in flags or config, 2 otherwise.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            e => Failure::Runtime(e),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::GenSynth { items, sessions, max_len, seed, concentration, order, uniform, out } => {
            let spec = MarkovSpec {
                order,
                concentration: (!uniform).then_some(concentration),
                ..MarkovSpec::new(items, sessions, max_len, seed)
            };
            let data = gen_markov(&spec).map_err(usage)?;
            data.write(&out).map_err(at(&out))?;
            Ok(())
        }
        Command::GenTransfer { items, target_items, sessions, pairs, max_len, noise, seed, out } => {
            let spec = MarkovSpec::new(items, sessions, max_len, seed);
            let (source, pairs) = gen_transfer(&spec, target_items, pairs, noise, seed).map_err(usage)?;
            fs::create_dir_all(&out).map_err(|e| at(&out)(e.into()))?;
            source.write(out.join("source.txt")).map_err(at(&out))?;
            let n_train = (pairs.len() as f64 * 0.8).round() as usize;
            let rows: Vec<usize> = (0..pairs.len()).collect();
            pairs.subset(&rows[..n_train]).write(out.join("transfer_train.txt")).map_err(at(&out))?;
            pairs.subset(&rows[n_train..]).write(out.join("transfer_test.txt")).map_err(at(&out))?;
            Ok(())
        }
        Command::Train { config, resume, out } => train_cmd(&config, resume.as_deref(), &out),
        Command::Stack { input, mode, blocks, seed, canonical_dilations, out } => {
            let src = checkpoint::load(&input).map_err(at(&input))?;
            let dilations = if canonical_dilations { DilationPolicy::Canonical } else { DilationPolicy::KeepWithBlock };
            let plan = StackPlan { mode, added_blocks: blocks, seed, dilations };
            let dst = apply_plan(&src, &plan).map_err(usage)?;
            let report = verify_stack(&src, &dst, &plan);
            println!("{report}");
            if !report.passed() {
                return Err(Failure::Runtime(Error::invalid("stacked model failed verification")));
            }
            checkpoint::save(&dst, &out).map_err(at(&out))?;
            Ok(())
        }
        Command::Eval { ckpt, data, n } => {
            let params = checkpoint::load(&ckpt).map_err(at(&ckpt))?;
            let data = data_for(&params, &data)?;
            let ranks = rank_last_item(&params, &data)?;
            println!("{}", metrics_at(&ranks, n).map_err(usage)?);
            Ok(())
        }
        Command::Probe { ckpt, data, sequences, seed } => {
            let params = checkpoint::load(&ckpt).map_err(at(&ckpt))?;
            let data = data_for(&params, &data)?;
            let m = block_similarity(&params, &data, sequences, seed).map_err(usage)?;
            print!("{m}");
            Ok(())
        }
    }
}

/// Prefixes I/O failures with the file involved.
fn at(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| match e {
        Error::Io(io) => Failure::Runtime(Error::invalid(format!("{}: {io}", path.display()))),
        e => e.into(),
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

/// Loads a session file for a checkpoint, rejecting ids the model has no
/// embedding for.
fn data_for(params: &ModelParams<f32>, path: &Path) -> CliResult<SessionDataset> {
    let data = load_sessions(path, params.config.max_len).map_err(at(path))?;
    let vocab = params.config.vocab_size;
    if data.max_item() > vocab || params.config.output_vocab.is_some() {
        return Err(Failure::Runtime(Error::invalid(format!(
            "vocabulary mismatch: data uses item {}, checkpoint covers 1..={vocab}{}",
            data.max_item(),
            if params.config.output_vocab.is_some() { " with a different output catalog" } else { "" }
        ))));
    }
    Ok(data.with_vocab(vocab)?)
}

struct SessionSplit {
    train: SessionDataset,
    test: SessionDataset,
}

fn load_split(cfg: &mut ExperimentConfig) -> CliResult<SessionSplit> {
    let d = &cfg.data;
    let t = cfg.model.max_len;
    let opts = ChunkOptions { overlap: d.overlap };
    let path = d.sessions.as_ref().expect("validated");
    let read = |p: &Path| -> CliResult<Vec<Vec<u32>>> {
        let text = fs::read_to_string(p).map_err(|e| at(p)(e.into()))?;
        let raw = parse_raw_sessions(&text).map_err(|e| Failure::Runtime(Error::invalid(format!("{}: {e}", p.display()))))?;
        Ok(if d.min_item_users > 0 || d.min_user_items > 0 {
            filter_min_counts(&raw, d.min_item_users, d.min_user_items)
        } else {
            raw
        })
    };
    let all = SessionDataset::from_sessions(&read(path)?, t, opts)?;
    let (train, test) = match &d.test {
        Some(p) => (all, SessionDataset::from_sessions(&read(p)?, t, opts)?),
        None => split_train_test(&all, d.split_ratio, d.split_seed)?,
    };
    if train.is_empty() || test.is_empty() {
        return Err(Failure::Runtime(Error::EmptyDataset));
    }
    let seen = train.max_item().max(test.max_item());
    if cfg.model.vocab_size == 0 {
        cfg.model.vocab_size = seen;
    } else if seen > cfg.model.vocab_size {
        return Err(Failure::Usage(format!("model.vocab_size {} is below item id {seen}", cfg.model.vocab_size)));
    }
    let v = cfg.model.vocab_size;
    Ok(SessionSplit { train: train.with_vocab(v)?, test: test.with_vocab(v)? })
}

fn load_pairs(cfg: &ExperimentConfig, source_vocab: usize, t: usize) -> CliResult<(TransferDataset, TransferDataset)> {
    let (train_path, test_path) = (cfg.data.transfer_train.as_ref().expect("validated"), cfg.data.transfer_test.as_ref().expect("validated"));
    let train = load_transfer(train_path, t).map_err(at(train_path))?;
    let test = load_transfer(test_path, t).map_err(at(test_path))?;
    let tv = train.target_vocab().max(test.target_vocab());
    if train.source_vocab().max(test.source_vocab()) > source_vocab {
        return Err(Failure::Runtime(Error::invalid("transfer contexts use items unknown to the source model")));
    }
    Ok((train.with_vocabs(source_vocab, tv)?, test.with_vocabs(source_vocab, tv)?))
}

fn push_records(log: &mut String, records: &[TrainRecord]) {
    for r in records {
        let _ = writeln!(log, "{r}");
    }
}

fn push_stages(log: &mut String, stages: &[StageHistory]) {
    for s in stages {
        let _ = writeln!(log, "# stage={} depth={} data={}", s.stage, s.depth, s.data_size);
        push_records(log, &s.records);
    }
}

fn log_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".log");
    PathBuf::from(name)
}

fn train_cmd(config_path: &Path, resume: Option<&Path>, out: &Path) -> CliResult {
    let mut cfg = ExperimentConfig::load(config_path).map_err(|e| match e {
        Error::Io(io) => Failure::Usage(format!("{}: {io}", config_path.display())),
        e => e.into(),
    })?;
    let kind = cfg.schedule.kind;
    let resumed = match resume {
        Some(p) => Some(checkpoint::load(p).map_err(at(p))?),
        None => None,
    };
    if kind == ScheduleKind::Tf && resumed.is_none() {
        return Err(Failure::Usage("schedule kind tf fine-tunes a trained model; pass --resume".into()));
    }
    let stop = cfg.schedule.budget.map_or(Stop::Converged, Stop::Budget);
    let mut log = String::new();

    let (params, summary) = if kind == ScheduleKind::Tf {
        let source = resumed.expect("checked above");
        cfg.model = source.config.clone();
        let (tr, te) = load_pairs(&cfg, source.config.vocab_size, source.config.max_len)?;
        push_config(&mut log, &cfg);
        let outcome = run_tf(&source, &tr, &te, &cfg.train, stop)?;
        let _ = writeln!(log, "# stage=0 depth={} data={}", outcome.params.depth(), tr.len());
        push_records(&mut log, &outcome.history);
        let summary = outcome.history.last().map(|r| r.to_string()).unwrap_or_default();
        (outcome.params, summary)
    } else {
        let split = load_split(&mut cfg)?;
        let params = match resumed {
            Some(p) => {
                if p.config.vocab_size != cfg.model.vocab_size || p.config.output_vocab.is_some() {
                    return Err(Failure::Runtime(Error::invalid(format!(
                        "vocabulary mismatch: checkpoint covers {} items, data needs {}",
                        p.config.vocab_size, cfg.model.vocab_size
                    ))));
                }
                cfg.model = p.config.clone();
                p
            }
            None => {
                if cfg.schedule.initial_blocks != 0 {
                    cfg.model.num_blocks = cfg.schedule.initial_blocks;
                }
                init_model(&cfg.model, cfg.train.seed)?
            }
        };
        push_config(&mut log, &cfg);
        let (params, stages) = match kind {
            ScheduleKind::Plain => {
                let o = train(params, &split.train, &split.test, &cfg.train, stop)?;
                let stage = StageHistory {
                    stage: 0,
                    depth: o.params.depth(),
                    data_size: split.train.len(),
                    records: o.history,
                    iterations: o.iterations,
                    best_iteration: o.best_iteration,
                    wall_ms: o.wall_ms,
                };
                (o.params, vec![stage])
            }
            ScheduleKind::Cl => {
                let spec = SnapshotSpec { fractions: cfg.schedule.fractions.clone(), seed: cfg.schedule.snapshot_seed };
                spec.validate().map_err(usage)?;
                let snaps = (0..spec.fractions.len())
                    .map(|i| snapshot(&split.train, &spec, i))
                    .collect::<seqstack::Result<Vec<_>>>()?;
                let o = run_cl(params, &cfg.schedule, &snaps, &split.test, &cfg.train)?;
                (o.params, o.stages)
            }
            ScheduleKind::Ts => {
                let budgets = cfg.schedule.ts_budgets();
                let o = run_ts(params, &cfg.schedule, &split.train, &split.test, &budgets, &cfg.train)?;
                (o.params, o.stages)
            }
            ScheduleKind::Tf => unreachable!("handled above"),
        };
        push_stages(&mut log, &stages);
        let m = metrics_at(&rank_last_item(&params, &split.test)?, LOG_CUTOFF)?;
        (params, m.to_string())
    };

    checkpoint::save(&params, out).map_err(at(out))?;
    let log_file = log_path(out);
    fs::write(&log_file, log).map_err(|e| at(&log_file)(e.into()))?;
    println!("{summary}");
    Ok(())
}

fn push_config(log: &mut String, cfg: &ExperimentConfig) {
    for line in cfg.to_toml().lines() {
        let _ = writeln!(log, "# {line}");
    }
}
