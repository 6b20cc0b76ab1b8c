//! Binary checkpoint container.
//!
//! ```text
//! b"SQCKPT01"
//! u64 manifest_len, manifest bytes (UTF-8 `key=value` lines)
//! u64 tensor_count
//! per tensor: u64 name_len, name, u64 rank, rank x u64 dims, f32 payload
//! ```
//!
//! Integers and floats are little-endian. Tensors appear in the order given
//! by [`ModelParams::tensor_names`].

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SQCKPT01";

/// Upper bound on tensor rank accepted from a file.
const MAX_RANK: u64 = 8;

fn join(v: &[usize]) -> String {
    v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

pub fn manifest(params: &ModelParams<f32>) -> String {
    let c = &params.config;
    let mut m = String::new();
    let _ = writeln!(m, "vocab_size={}", c.vocab_size);
    if let Some(v) = c.output_vocab {
        let _ = writeln!(m, "output_vocab={v}");
    }
    let _ = writeln!(m, "embed_dim={}", c.embed_dim);
    let _ = writeln!(m, "max_len={}", c.max_len);
    let _ = writeln!(m, "base_dilations={}", join(&c.base_dilations));
    let _ = writeln!(m, "num_blocks={}", c.num_blocks);
    let _ = writeln!(m, "kernel_width={}", c.kernel_width);
    let _ = writeln!(m, "block_dilations={}", join(&params.dilations()));
    m
}

pub fn encode(params: &ModelParams<f32>) -> Vec<u8> {
    let manifest = manifest(params);
    let mut out = Vec::with_capacity(params.num_params() * 4 + 1024);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    let named = params.named_tensors();
    out.extend_from_slice(&(named.len() as u64).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    /// A length that must fit in what is left of the buffer.
    fn len(&mut self, what: &str, unit: usize) -> Result<usize> {
        let n = self.u64(what)?;
        let remaining = (self.buf.len() - self.pos) as u64;
        match n.checked_mul(unit as u64) {
            Some(bytes) if bytes <= remaining => Ok(n as usize),
            _ => Err(Error::Checkpoint(format!("{what} of {n} exceeds the remaining {remaining} bytes"))),
        }
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Checkpoint(format!("{key}: bad entry {s:?}"))))
        .collect()
}

fn parse_manifest(text: &str) -> Result<(ModelConfig, Vec<usize>)> {
    let mut c = ModelConfig::default();
    let mut seen = Vec::new();
    let mut dilations = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) =
            line.split_once('=').ok_or_else(|| Error::Checkpoint(format!("manifest line without '=': {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if seen.contains(&key) {
            return Err(Error::Checkpoint(format!("duplicate manifest key {key}")));
        }
        seen.push(key);
        let num = || value.parse::<usize>().map_err(|_| Error::Checkpoint(format!("{key}: bad value {value:?}")));
        match key {
            "vocab_size" => c.vocab_size = num()?,
            "output_vocab" => c.output_vocab = Some(num()?),
            "embed_dim" => c.embed_dim = num()?,
            "max_len" => c.max_len = num()?,
            "base_dilations" => c.base_dilations = parse_list(key, value)?,
            "num_blocks" => c.num_blocks = num()?,
            "kernel_width" => c.kernel_width = num()?,
            "block_dilations" => dilations = Some(parse_list(key, value)?),
            _ => return Err(Error::Checkpoint(format!("unknown manifest key {key}"))),
        }
    }
    for key in ["vocab_size", "embed_dim", "max_len", "base_dilations", "num_blocks", "kernel_width", "block_dilations"]
    {
        if !seen.contains(&key) {
            return Err(Error::Checkpoint(format!("manifest is missing {key}")));
        }
    }
    c.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let dilations = dilations.expect("checked above");
    if dilations.len() != c.num_blocks || dilations.contains(&0) {
        return Err(Error::Checkpoint("block_dilations must list one positive dilation per block".into()));
    }
    Ok((c, dilations))
}

/// Parses a checkpoint. Every length is checked against the buffer before
/// anything is allocated, so arbitrary input is safe to feed in.
pub fn decode(bytes: &[u8]) -> Result<ModelParams<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let mlen = r.len("manifest length", 1)?;
    let text = std::str::from_utf8(r.take(mlen, "manifest")?)
        .map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
    let (config, dilations) = parse_manifest(text)?;

    // Build a zero model of the declared shape, then fill it in file order.
    let mut params = ModelParams {
        embedding: Tensor::zeros(&[0]),
        blocks: Vec::new(),
        softmax_w: Tensor::zeros(&[0]),
        softmax_b: Tensor::zeros(&[0]),
        config: config.clone(),
    };
    let expected = expected_layout(&config, &dilations);
    let count = r.u64("tensor count")?;
    if count != expected.len() as u64 {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", expected.len())));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for (want_name, want_shape) in &expected {
        let nlen = r.len("name length", 1)?;
        let name = r.take(nlen, "tensor name")?;
        if name != want_name.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "expected tensor {want_name}, found {:?}",
                String::from_utf8_lossy(name)
            )));
        }
        let rank = r.u64("rank")?;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("{want_name}: rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        if &shape != want_shape {
            return Err(Error::Checkpoint(format!("{want_name}: expected shape {want_shape:?}, found {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("payload overflow".into()))?, want_name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut it = tensors.into_iter();
    params.embedding = it.next().expect("count checked");
    let template = crate::model::BlockParams::<f32> {
        conv1_w: Tensor::zeros(&[0]),
        conv1_b: Tensor::zeros(&[0]),
        ln1_gamma: Tensor::zeros(&[0]),
        ln1_beta: Tensor::zeros(&[0]),
        conv2_w: Tensor::zeros(&[0]),
        conv2_b: Tensor::zeros(&[0]),
        ln2_gamma: Tensor::zeros(&[0]),
        ln2_beta: Tensor::zeros(&[0]),
        alpha: Tensor::zeros(&[0]),
        dilation: 0,
    };
    for &d in &dilations {
        let mut block = template.clone();
        block.dilation = d;
        for slot in block.tensors_mut() {
            *slot = it.next().expect("count checked");
        }
        params.blocks.push(block);
    }
    params.softmax_w = it.next().expect("count checked");
    params.softmax_b = it.next().expect("count checked");
    params.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(params)
}

fn expected_layout(c: &ModelConfig, dilations: &[usize]) -> Vec<(String, Vec<usize>)> {
    let (k, kw) = (c.embed_dim, c.kernel_width);
    let mut out = vec![("embedding".to_string(), vec![c.input_rows(), k])];
    for i in 0..dilations.len() {
        let shapes: [Vec<usize>; 9] =
            [vec![kw, k, k], vec![k], vec![k], vec![k], vec![kw, k, k], vec![k], vec![k], vec![k], vec![1]];
        for (field, shape) in crate::model::BLOCK_FIELDS.iter().zip(shapes) {
            out.push((format!("block{i}.{field}"), shape));
        }
    }
    out.push(("softmax.w".into(), vec![k, c.classes()]));
    out.push(("softmax.b".into(), vec![c.classes()]));
    out
}

pub fn save(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    decode(&std::fs::read(path)?)
}
