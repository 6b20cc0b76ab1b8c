//! Cosine similarity between the output feature maps of every pair of
//! residual blocks.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{SessionDataset, PAD};
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};
use crate::tensor::{IdTensor, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    /// Row-major `L x L`.
    pub values: Vec<f64>,
    pub size: usize,
    pub num_sequences: usize,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    /// Mean similarity of neighbouring blocks among blocks `2..=L`.
    pub fn mean_adjacent_upper(&self) -> f64 {
        let pairs: Vec<f64> = (1..self.size.saturating_sub(1)).map(|i| self.get(i, i + 1)).collect();
        pairs.iter().sum::<f64>() / pairs.len().max(1) as f64
    }

    /// Mean similarity of block 1 with each of blocks `2..=L`.
    pub fn mean_first_block(&self) -> f64 {
        let vals: Vec<f64> = (1..self.size).map(|j| self.get(0, j)).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}

impl fmt::Display for SimilarityMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.size)?;
        for row in self.values.chunks(self.size) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

impl FromStr for SimilarityMatrix {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty matrix".into() })?;
        let size: usize = header
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line: 1, message: format!("bad size {header:?}") })?;
        let mut values = Vec::new();
        for (n, line) in lines {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
            if row.len() != size || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse { line: n + 1, message: format!("expected {size} finite values") });
            }
            values.extend(row);
        }
        if values.len() != size.saturating_mul(size) {
            return Err(Error::Parse { line: size + 1, message: format!("expected {size} rows") });
        }
        Ok(SimilarityMatrix { values, size, num_sequences: 0 })
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    match (na > 0.0, nb > 0.0) {
        (true, true) => (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0),
        (false, false) => 1.0,
        _ => 0.0,
    }
}

/// Averages, over `num_sequences` sequences drawn from `data`, the cosine
/// similarity of every block pair's outputs flattened over non-padding
/// positions and channels.
pub fn block_similarity<T: Scalar>(
    params: &ModelParams<T>,
    data: &SessionDataset,
    num_sequences: usize,
    seed: u64,
) -> Result<SimilarityMatrix> {
    let l = params.depth();
    if l < 2 {
        return Err(Error::invalid(format!("similarity needs at least 2 blocks, model has {l}")));
    }
    if data.is_empty() || num_sequences == 0 {
        return Err(Error::EmptyDataset);
    }
    let rows: Vec<usize> = if data.len() <= num_sequences {
        if data.len() < num_sequences {
            log::warn!("only {} sequences available, {num_sequences} requested", data.len());
        }
        (0..data.len()).collect()
    } else {
        let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), data.len(), num_sequences).into_vec();
        idx.sort_unstable();
        idx
    };

    let seqs: Vec<Vec<u32>> = rows.iter().map(|&r| data.sequences()[r].clone()).collect();
    let ids = IdTensor::from_rows(&seqs)?;
    let hidden = forward(params, &ids, true)?.hidden.expect("requested");
    let (t, k) = (data.max_len(), params.config.embed_dim);

    let mut sums = vec![0.0f64; l * l];
    for (b, seq) in seqs.iter().enumerate() {
        let flat: Vec<Vec<f64>> = hidden
            .iter()
            .map(|h| {
                let rows = &h.data()[b * t * k..(b + 1) * t * k];
                seq.iter()
                    .zip(rows.chunks_exact(k))
                    .filter(|(&id, _)| id != PAD)
                    .flat_map(|(_, r)| r.iter().map(|v| v.as_f64()))
                    .collect()
            })
            .collect();
        for i in 0..l {
            for j in i + 1..l {
                sums[i * l + j] += cosine(&flat[i], &flat[j]);
            }
        }
    }
    let n = seqs.len() as f64;
    let mut values = vec![0.0; l * l];
    for i in 0..l {
        values[i * l + i] = 1.0;
        for j in i + 1..l {
            let v = (sums[i * l + j] / n).clamp(-1.0, 1.0);
            values[i * l + j] = v;
            values[j * l + i] = v;
        }
    }
    Ok(SimilarityMatrix { values, size: l, num_sequences: seqs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::tensor::Tensor;

    fn data() -> SessionDataset {
        SessionDataset::new(vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![0, 0, 8, 9]], 9, 4).unwrap()
    }

    fn model(blocks: usize) -> ModelParams<f64> {
        let c = ModelConfig { vocab_size: 9, embed_dim: 3, max_len: 4, num_blocks: blocks, ..Default::default() };
        init_model(&c, 2).unwrap()
    }

    #[test]
    fn fresh_model_is_all_ones() {
        let m = block_similarity(&model(4), &data(), 100, 0).unwrap();
        assert!(m.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(m.to_string().lines().skip(1).all(|l| l.split(' ').all(|c| c == "1.000000")));
    }

    #[test]
    fn symmetric_with_unit_diagonal() {
        let mut p = model(3);
        for b in &mut p.blocks {
            b.alpha = Tensor::scalar(0.7);
        }
        let m = block_similarity(&p, &data(), 2, 1).unwrap();
        for i in 0..3 {
            assert_eq!(m.get(i, i), 1.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
                assert!(m.get(i, j).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn matches_direct_cosine_oracle() {
        let mut p = model(2);
        p.blocks[1].alpha = Tensor::scalar(1.5);
        let d = data().subset(&[0, 2]);
        let m = block_similarity(&p, &d, 10, 0).unwrap();
        // Independent computation, one sequence at a time.
        let mut total = 0.0;
        for s in d.sequences() {
            let ids = IdTensor::from_rows(std::slice::from_ref(s)).unwrap();
            let h = forward(&p, &ids, true).unwrap().hidden.unwrap();
            let keep: Vec<usize> = (0..4).filter(|&j| s[j] != 0).collect();
            let pick = |t: &Tensor<f64>| keep.iter().flat_map(|&j| t.data()[j * 3..j * 3 + 3].to_vec()).collect::<Vec<_>>();
            let (a, b) = (pick(&h[0]), pick(&h[1]));
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            total += dot / (norm(&a) * norm(&b));
        }
        assert!((m.get(0, 1) - total / 2.0).abs() < 1e-12);
    }

    #[test]
    fn exhausted_sampling_ignores_seed() {
        let mut p = model(2);
        p.blocks[1].alpha = Tensor::scalar(1.0);
        let a = block_similarity(&p, &data(), 3, 0).unwrap();
        let b = block_similarity(&p, &data(), 3, 99).unwrap();
        assert_eq!(a.to_string(), b.to_string());
    }

    #[test]
    fn needs_two_blocks() {
        assert!(block_similarity(&model(1), &data(), 3, 0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = block_similarity(&model(3), &data(), 3, 0).unwrap();
        let back: SimilarityMatrix = m.to_string().parse().unwrap();
        assert_eq!(back.size, 3);
        assert!(back.values.iter().zip(&m.values).all(|(a, b)| (a - b).abs() < 1e-6));
        assert!("2\n1 0\n".parse::<SimilarityMatrix>().is_err());
    }
}
