//! Synthetic session generators with learnable sequential structure.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;

use super::{pad_left, SessionDataset, TransferDataset};
use crate::error::{Error, Result};

/// Parameters of a sparse random Markov chain over items `1..=num_items`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSpec {
    pub num_items: usize,
    pub num_sessions: usize,
    pub max_len: usize,
    /// How many previous items form the chain state.
    pub order: usize,
    /// Successors per state; `None` makes every transition uniform.
    pub concentration: Option<usize>,
    /// Symmetric Dirichlet parameter for successor weights.
    pub dirichlet_alpha: f64,
    /// Shortest session generated; lengths are uniform in `min_len..=max_len`.
    pub min_len: usize,
    pub seed: u64,
}

impl MarkovSpec {
    pub fn new(num_items: usize, num_sessions: usize, max_len: usize, seed: u64) -> Self {
        MarkovSpec {
            num_items,
            num_sessions,
            max_len,
            order: 1,
            concentration: Some(5),
            dirichlet_alpha: 1.0,
            min_len: 2,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_items < 10 {
            return Err(Error::invalid("the generator needs at least 10 items"));
        }
        if self.order == 0 || self.max_len < 2 || self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::invalid("need order >= 1 and 2 <= min_len <= max_len"));
        }
        if matches!(self.concentration, Some(0)) || self.concentration.is_some_and(|c| c > self.num_items) {
            return Err(Error::invalid("concentration must lie in 1..=num_items"));
        }
        if self.dirichlet_alpha.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::invalid("dirichlet_alpha must be positive"));
        }
        Ok(())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A chain whose per-state successor lists are derived on demand from the
/// seed, so high-order chains need no explicit table.
pub(crate) struct Chain {
    num_items: usize,
    order: usize,
    concentration: Option<usize>,
    alpha: f64,
    seed: u64,
}

impl Chain {
    fn new(spec: &MarkovSpec) -> Self {
        Chain {
            num_items: spec.num_items,
            order: spec.order,
            concentration: spec.concentration,
            alpha: spec.dirichlet_alpha,
            seed: splitmix(spec.seed ^ 0x5eed_c4a1),
        }
    }

    /// Successor ids and their weights for the state ending in `history`.
    fn successors(&self, history: &[u32]) -> Option<(Vec<u32>, WeightedIndex<f64>)> {
        let c = self.concentration?;
        let state = &history[history.len().saturating_sub(self.order)..];
        let key = state.iter().fold(self.seed, |h, &v| splitmix(h ^ v as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let items: Vec<u32> = sample(&mut rng, self.num_items, c).into_iter().map(|i| i as u32 + 1).collect();
        let gamma = Gamma::new(self.alpha, 1.0).expect("alpha checked positive");
        let weights: Vec<f64> = (0..c).map(|_| gamma.sample(&mut rng).max(1e-12)).collect();
        Some((items, WeightedIndex::new(weights).expect("positive weights")))
    }

    fn next(&self, history: &[u32], rng: &mut ChaCha8Rng) -> u32 {
        match self.successors(history) {
            Some((items, dist)) => items[dist.sample(rng)],
            None => rng.gen_range(1..=self.num_items as u32),
        }
    }

    fn session(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let mut s = vec![rng.gen_range(1..=self.num_items as u32)];
        while s.len() < len {
            let next = self.next(&s, rng);
            s.push(next);
        }
        s
    }
}

/// Samples sessions from a random sparse Markov chain.
///
/// Each state gets `concentration` distinct successors with Dirichlet
/// weights; with `concentration = 1` the chain is deterministic.
pub fn gen_markov(spec: &MarkovSpec) -> Result<SessionDataset> {
    spec.validate()?;
    let chain = Chain::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sequences = (0..spec.num_sessions)
        .map(|_| {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            pad_left(&chain.session(len, &mut rng), spec.max_len)
        })
        .collect();
    SessionDataset::new(sequences, spec.num_items, spec.max_len)
}

/// Linked source/target data for transfer experiments.
///
/// Source sessions come from the chain in `source`. Each target example is a
/// fresh source session paired with a target-domain item: the item the chain
/// would emit next, passed through a fixed random map into
/// `1..=target_vocab`. With probability `noise` the target is uniform instead.
pub fn gen_transfer(
    source: &MarkovSpec,
    target_vocab: usize,
    num_pairs: usize,
    noise: f64,
    seed: u64,
) -> Result<(SessionDataset, TransferDataset)> {
    if target_vocab == 0 {
        return Err(Error::invalid("target vocabulary must be non-empty"));
    }
    let sessions = gen_markov(source)?;
    let chain = Chain::new(source);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map: Vec<u32> = (0..=source.num_items).map(|_| rng.gen_range(1..=target_vocab as u32)).collect();
    let mut contexts = Vec::with_capacity(num_pairs);
    let mut targets = Vec::with_capacity(num_pairs);
    for _ in 0..num_pairs {
        let len = rng.gen_range(source.min_len..=source.max_len);
        let s = chain.session(len, &mut rng);
        let next = chain.next(&s, &mut rng);
        let target = if rng.gen_bool(noise.clamp(0.0, 1.0)) {
            rng.gen_range(1..=target_vocab as u32)
        } else {
            map[next as usize]
        };
        contexts.push(pad_left(&s, source.max_len));
        targets.push(target);
    }
    let pairs = TransferDataset::new(contexts, targets, source.num_items, target_vocab, source.max_len)?;
    Ok((sessions, pairs))
}
