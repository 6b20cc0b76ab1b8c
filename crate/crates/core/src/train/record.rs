use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One evaluation point of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iteration: u64,
    /// Mean minibatch loss since the previous record.
    pub train_loss: f64,
    pub mrr5: f64,
    pub hr5: f64,
    pub ndcg5: f64,
    /// Cumulative milliseconds spent in training steps (evaluation excluded).
    pub wall_ms: u64,
}

impl TrainRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.iteration == other.iteration
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.mrr5.to_bits() == other.mrr5.to_bits()
            && self.hr5.to_bits() == other.hr5.to_bits()
            && self.ndcg5.to_bits() == other.ndcg5.to_bits()
    }
}

impl fmt::Display for TrainRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} loss={} mrr5={} hr5={} ndcg5={} wall_ms={}",
            self.iteration, self.train_loss as f32, self.mrr5 as f32, self.hr5 as f32, self.ndcg5 as f32, self.wall_ms
        )
    }
}

/// Splits `k1=v1 k2=v2 ...` into values, requiring exactly the given keys in order.
pub(crate) fn parse_fields<'a>(line: &'a str, keys: &[&str]) -> Result<Vec<&'a str>> {
    let bad = || Error::Parse { line: 1, message: format!("expected fields {keys:?} in {line:?}") };
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != keys.len() {
        return Err(bad());
    }
    tokens
        .iter()
        .zip(keys)
        .map(|(tok, key)| match tok.split_once('=') {
            Some((k, v)) if k == *key && !v.is_empty() => Ok(v),
            _ => Err(bad()),
        })
        .collect()
}

impl FromStr for TrainRecord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = parse_fields(s, &["iter", "loss", "mrr5", "hr5", "ndcg5", "wall_ms"])?;
        let bad = || Error::Parse { line: 1, message: format!("bad train record {s:?}") };
        let float = |x: &str| x.parse::<f32>().map(f64::from).map_err(|_| bad());
        let int = |x: &str| x.parse::<u64>().map_err(|_| bad());
        Ok(TrainRecord {
            iteration: int(v[0])?,
            train_loss: float(v[1])?,
            mrr5: float(v[2])?,
            hr5: float(v[3])?,
            ndcg5: float(v[4])?,
            wall_ms: int(v[5])?,
        })
    }
}

/// Parses a log, skipping blank lines and `#` comments.
pub fn parse_records(text: &str) -> Result<Vec<TrainRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.parse().map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse { line: i + 1, message },
                other => other,
            })
        })
        .collect()
}
