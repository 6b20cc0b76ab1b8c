//! Source-sequence to target-item pairs for transfer fine-tuning.
//!
//! File format: one pair per line, the source item ids space-separated, a
//! tab, then the target-domain item id.

use std::fs;
use std::path::Path;

use super::{pad_left, PAD};
use crate::error::{Error, Result};
use crate::tensor::IdTensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferDataset {
    contexts: Vec<Vec<u32>>,
    targets: Vec<u32>,
    source_vocab: usize,
    target_vocab: usize,
    max_len: usize,
}

impl TransferDataset {
    pub fn new(
        contexts: Vec<Vec<u32>>,
        targets: Vec<u32>,
        source_vocab: usize,
        target_vocab: usize,
        max_len: usize,
    ) -> Result<Self> {
        if contexts.len() != targets.len() {
            return Err(Error::invalid("every context needs exactly one target"));
        }
        if target_vocab == 0 {
            return Err(Error::invalid("target vocabulary must be non-empty"));
        }
        for (i, (c, &t)) in contexts.iter().zip(&targets).enumerate() {
            let fail = |m: &str| Err(Error::invalid(format!("pair {i}: {m}")));
            if c.len() != max_len || c.iter().all(|&v| v == PAD) {
                return fail("context must be a non-empty row of max_len ids");
            }
            if c.iter().any(|&v| v as usize > source_vocab) {
                return fail("context id exceeds source vocabulary");
            }
            if t == PAD || t as usize > target_vocab {
                return fail("target outside 1..=target_vocab");
            }
        }
        Ok(TransferDataset { contexts, targets, source_vocab, target_vocab, max_len })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn contexts(&self) -> &[Vec<u32>] {
        &self.contexts
    }

    pub fn targets(&self) -> &[u32] {
        &self.targets
    }

    pub fn source_vocab(&self) -> usize {
        self.source_vocab
    }

    pub fn target_vocab(&self) -> usize {
        self.target_vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Widens both vocabularies, e.g. so a train and a test file agree.
    pub fn with_vocabs(self, source_vocab: usize, target_vocab: usize) -> Result<Self> {
        TransferDataset::new(self.contexts, self.targets, source_vocab, target_vocab, self.max_len)
    }

    pub fn subset(&self, rows: &[usize]) -> TransferDataset {
        TransferDataset {
            contexts: rows.iter().map(|&r| self.contexts[r].clone()).collect(),
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
            ..self.clone()
        }
    }

    /// Contexts and targets of the given rows.
    pub fn batch(&self, rows: &[usize]) -> (IdTensor, Vec<u32>) {
        let ids: Vec<u32> = rows.iter().flat_map(|&r| self.contexts[r].iter().copied()).collect();
        let targets = rows.iter().map(|&r| self.targets[r]).collect();
        (IdTensor::new(rows.len(), self.max_len, ids).expect("rows have max_len ids"), targets)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (c, t) in self.contexts.iter().zip(&self.targets) {
            let items: Vec<String> = c.iter().filter(|&&v| v != PAD).map(u32::to_string).collect();
            out.push_str(&format!("{}\t{t}\n", items.join(" ")));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Parses transfer pairs. Contexts longer than `max_len` keep their most
/// recent items. Vocabularies are the largest ids seen on each side.
pub fn parse_transfer(text: &str, max_len: usize) -> Result<TransferDataset> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be positive"));
    }
    let mut contexts = Vec::new();
    let mut targets = Vec::new();
    let (mut sv, mut tv) = (0usize, 0usize);
    for (i, line) in text.lines().enumerate() {
        let fail = |m: String| Error::Parse { line: i + 1, message: m };
        let (src, tgt) = line.split_once('\t').ok_or_else(|| fail("expected <source ids>\\t<target id>".into()))?;
        let id = |tok: &str| match tok.parse::<u32>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(fail(format!("invalid item id {tok:?}"))),
        };
        let items: Vec<u32> = src.split_whitespace().map(id).collect::<Result<_>>()?;
        if items.is_empty() {
            return Err(fail("empty source sequence".into()));
        }
        let target = id(tgt.trim())?;
        sv = sv.max(items.iter().copied().max().unwrap_or(0) as usize);
        tv = tv.max(target as usize);
        contexts.push(pad_left(&items, max_len));
        targets.push(target);
    }
    TransferDataset::new(contexts, targets, sv, tv.max(1), max_len)
}

pub fn load_transfer(path: impl AsRef<Path>, max_len: usize) -> Result<TransferDataset> {
    parse_transfer(&fs::read_to_string(path)?, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_truncates() {
        let d = parse_transfer("1 2 3 4 5\t7\n9\t2\n", 3).unwrap();
        assert_eq!(d.contexts(), &[vec![3, 4, 5], vec![0, 0, 9]]);
        assert_eq!(d.targets(), &[7, 2]);
        assert_eq!((d.source_vocab(), d.target_vocab()), (9, 7));
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_transfer("1 2 3", 4).is_err());
        assert!(parse_transfer("\t3", 4).is_err());
        assert!(parse_transfer("1 2\t0", 4).is_err());
        assert!(matches!(parse_transfer("1 2\t3\n1 a\t3", 4), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn text_round_trip() {
        let d = parse_transfer("1 2 3\t7\n9 4\t2\n", 5).unwrap();
        assert_eq!(parse_transfer(&d.to_text(), 5).unwrap(), d);
    }
}
