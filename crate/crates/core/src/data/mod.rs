//! Session datasets: ingestion, preprocessing, splits, and CL snapshots.
//!
//! The session file format is UTF-8 text with one session per line, holding
//! space-separated decimal item ids (`>= 1`) in chronological order.

mod synth;
mod transfer;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::IdTensor;

pub use synth::{gen_markov, gen_transfer, MarkovSpec};
pub use transfer::{load_transfer, parse_transfer, TransferDataset};

/// Padding id; real items are `1..=vocab_size`.
pub const PAD: u32 = 0;

/// Fixed-length, left-zero-padded item sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionDataset {
    sequences: Vec<Vec<u32>>,
    vocab_size: usize,
    max_len: usize,
}

/// How sessions longer than `max_len` are cut.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChunkOptions {
    /// Consecutive chunks share their boundary item, so the transition across
    /// the cut is still supervised. Off by default (disjoint windows).
    pub overlap: bool,
}

pub fn pad_left(items: &[u32], len: usize) -> Vec<u32> {
    let keep = &items[items.len().saturating_sub(len)..];
    let mut out = vec![PAD; len - keep.len()];
    out.extend_from_slice(keep);
    out
}

/// Splits one session into windows of at most `len` items.
///
/// A trailing window with a single item has no target and is dropped.
pub fn chunk_session(items: &[u32], len: usize, opts: ChunkOptions) -> Vec<Vec<u32>> {
    if items.len() <= len {
        return vec![items.to_vec()];
    }
    let stride = if opts.overlap && len > 1 { len - 1 } else { len };
    let mut out = Vec::new();
    let mut start = 0;
    while start < items.len() {
        let end = (start + len).min(items.len());
        let window = &items[start..end];
        if window.len() >= 2 {
            out.push(window.to_vec());
        }
        if end == items.len() {
            break;
        }
        start += stride;
    }
    out
}

/// Parses session lines into raw item lists without any length policy.
pub fn parse_raw_sessions(text: &str) -> Result<Vec<Vec<u32>>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|tok| match tok.parse::<u32>() {
                    Ok(0) => Err(Error::Parse { line: i + 1, message: "item id 0 is reserved for padding".into() }),
                    Ok(id) => Ok(id),
                    Err(_) => Err(Error::Parse { line: i + 1, message: format!("invalid item id {tok:?}") }),
                })
                .collect()
        })
        .collect()
}

/// Parses a session file body into a padded dataset of length-`max_len` rows.
pub fn parse_sessions(text: &str, max_len: usize, opts: ChunkOptions) -> Result<SessionDataset> {
    let raw = parse_raw_sessions(text)?;
    SessionDataset::from_sessions(&raw, max_len, opts)
}

pub fn load_sessions(path: impl AsRef<Path>, max_len: usize) -> Result<SessionDataset> {
    load_sessions_with(path, max_len, ChunkOptions::default())
}

pub fn load_sessions_with(path: impl AsRef<Path>, max_len: usize, opts: ChunkOptions) -> Result<SessionDataset> {
    parse_sessions(&fs::read_to_string(path)?, max_len, opts)
}

impl SessionDataset {
    /// Builds a dataset from already-padded rows, checking every invariant.
    pub fn new(sequences: Vec<Vec<u32>>, vocab_size: usize, max_len: usize) -> Result<Self> {
        if max_len < 2 {
            return Err(Error::invalid("max_len must be at least 2"));
        }
        for (i, s) in sequences.iter().enumerate() {
            let fail = |m: &str| Err(Error::invalid(format!("sequence {i}: {m}")));
            if s.len() != max_len {
                return fail("wrong length");
            }
            let start = s.iter().position(|&v| v != PAD).unwrap_or(max_len);
            if s[start..].contains(&PAD) {
                return fail("padding must be a contiguous prefix");
            }
            if max_len - start < 2 {
                return fail("fewer than 2 items");
            }
            if s.iter().any(|&v| v as usize > vocab_size) {
                return fail("item id exceeds vocabulary");
            }
        }
        Ok(SessionDataset { sequences, vocab_size, max_len })
    }

    /// Chunks and pads raw sessions; vocabulary is the largest id seen.
    pub fn from_sessions(raw: &[Vec<u32>], max_len: usize, opts: ChunkOptions) -> Result<Self> {
        if max_len < 2 {
            return Err(Error::invalid("max_len must be at least 2"));
        }
        let mut sequences = Vec::new();
        let mut vocab = 0usize;
        for (i, items) in raw.iter().enumerate() {
            if items.len() < 2 {
                return Err(Error::Parse { line: i + 1, message: "session needs at least 2 items".into() });
            }
            if let Some(&z) = items.iter().find(|&&v| v == PAD) {
                return Err(Error::Parse { line: i + 1, message: format!("invalid item id {z}") });
            }
            vocab = vocab.max(items.iter().copied().max().unwrap_or(0) as usize);
            for chunk in chunk_session(items, max_len, opts) {
                sequences.push(pad_left(&chunk, max_len));
            }
        }
        Ok(SessionDataset { sequences, vocab_size: vocab, max_len })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Largest item id actually present.
    pub fn max_item(&self) -> usize {
        self.sequences.iter().flatten().copied().max().unwrap_or(0) as usize
    }

    /// Widens the vocabulary, e.g. to match a model trained on a superset.
    pub fn with_vocab(mut self, vocab_size: usize) -> Result<Self> {
        if vocab_size < self.max_item() {
            return Err(Error::invalid(format!(
                "vocabulary {vocab_size} is smaller than item id {}",
                self.max_item()
            )));
        }
        self.vocab_size = vocab_size;
        Ok(self)
    }

    /// Non-padding items of sequence `i`.
    pub fn items(&self, i: usize) -> &[u32] {
        let s = &self.sequences[i];
        let start = s.iter().position(|&v| v != PAD).unwrap_or(s.len());
        &s[start..]
    }

    pub fn subset(&self, indices: &[usize]) -> SessionDataset {
        SessionDataset {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            vocab_size: self.vocab_size,
            max_len: self.max_len,
        }
    }

    /// Renders in the session file format, padding stripped.
    pub fn to_session_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            let line: Vec<String> = self.items(i).iter().map(u32::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_session_text())?;
        Ok(())
    }

    /// Next-item training batch over the given rows.
    ///
    /// Inputs are the rows shifted right by one (a pad enters on the left),
    /// targets are the rows themselves, and a position is supervised when its
    /// input is a real item.
    pub fn batch(&self, rows: &[usize]) -> Batch {
        let t = self.max_len;
        let mut inputs = Vec::with_capacity(rows.len() * t);
        let mut targets = Vec::with_capacity(rows.len() * t);
        for &r in rows {
            let s = &self.sequences[r];
            inputs.push(PAD);
            inputs.extend_from_slice(&s[..t - 1]);
            targets.extend_from_slice(s);
        }
        let mask = inputs.iter().map(|&v| v != PAD).collect();
        Batch {
            inputs: IdTensor::new(rows.len(), t, inputs).expect("rows have max_len ids"),
            targets: IdTensor::new(rows.len(), t, targets).expect("rows have max_len ids"),
            mask,
        }
    }

    /// Contexts for last-item evaluation: each row minus its last item, re-padded.
    pub fn last_item_contexts(&self, rows: &[usize]) -> (IdTensor, Vec<u32>) {
        let t = self.max_len;
        let mut ctx = Vec::with_capacity(rows.len() * t);
        let mut targets = Vec::with_capacity(rows.len());
        for &r in rows {
            let s = &self.sequences[r];
            ctx.push(PAD);
            ctx.extend_from_slice(&s[..t - 1]);
            targets.push(s[t - 1]);
        }
        (IdTensor::new(rows.len(), t, ctx).expect("rows have max_len ids"), targets)
    }
}

/// One minibatch of next-item prediction.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: IdTensor,
    pub targets: IdTensor,
    pub mask: Vec<bool>,
}

/// Drops items seen by fewer than `min_item_users` users, then users with
/// fewer than `min_user_items` interactions, repeating until nothing changes.
pub fn filter_min_counts(raw: &[Vec<u32>], min_item_users: usize, min_user_items: usize) -> Vec<Vec<u32>> {
    let mut users: Vec<Vec<u32>> = raw.to_vec();
    loop {
        let mut item_users: HashMap<u32, usize> = HashMap::new();
        for u in &users {
            for &item in u.iter().collect::<HashSet<_>>() {
                *item_users.entry(item).or_default() += 1;
            }
        }
        let before: usize = users.iter().map(Vec::len).sum::<usize>() + users.len();
        for u in &mut users {
            u.retain(|i| item_users[i] >= min_item_users);
        }
        users.retain(|u| u.len() >= min_user_items);
        let after: usize = users.iter().map(Vec::len).sum::<usize>() + users.len();
        if after == before {
            break;
        }
    }
    if users.is_empty() {
        log::warn!("count filter removed every session");
    }
    users
}

/// Seeded sequence-level split; `ratio` of the rows go to the first part.
pub fn split_train_test(data: &SessionDataset, ratio: f64, seed: u64) -> Result<(SessionDataset, SessionDataset)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid("split ratio must lie in [0, 1]"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * data.len() as f64).round() as usize;
    let (mut train, mut test) = (order[..n_train].to_vec(), order[n_train..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}

/// Growing fractions of the training data available at successive CL stages.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSpec {
    pub fractions: Vec<f64>,
    pub seed: u64,
}

impl SnapshotSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::invalid("at least one snapshot fraction is required"));
        }
        let mut prev = 0.0;
        for &f in &self.fractions {
            if !(f > prev && f <= 1.0) {
                return Err(Error::invalid("snapshot fractions must be strictly ascending within (0, 1]"));
            }
            prev = f;
        }
        Ok(())
    }

    pub fn size(&self, i: usize, total: usize) -> usize {
        let exact = self.fractions[i] * total as f64;
        ((exact - 1e-9).ceil().max(0.0) as usize).min(total)
    }
}

/// Snapshot `i`: a prefix of one fixed seeded permutation of `train`, so each
/// snapshot contains all earlier ones.
pub fn snapshot(train: &SessionDataset, spec: &SnapshotSpec, i: usize) -> Result<SessionDataset> {
    spec.validate()?;
    if i >= spec.fractions.len() {
        return Err(Error::invalid(format!("snapshot {i} out of range ({} defined)", spec.fractions.len())));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    Ok(train.subset(&order[..spec.size(i, train.len())]))
}
