//! Binary checkpoints for the backbone and the prompt encoder.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"CDPK" | u32 version | u32 header_len | header JSON
//! u32 n_tensors
//! per tensor: u32 name_len | name | u32 rank | u64 dims[rank] | f64 data[numel]
//! ```
//!
//! Tensors are written in name order, so saving the same parameters twice
//! yields identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Backbone, ModelConfig};
use crate::params::ParamStore;
use crate::prompt::{PromptEncoder, Strategy};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CDPK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Backbone,
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: CheckpointKind,
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_hidden: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Tokenizer vocabulary in id order, when the producer had one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocab: Vec<String>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint(w: &mut impl Write, header: &CheckpointHeader, tensors: &ParamStore) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(CheckpointHeader, ParamStore)> {
    let magic = read_bytes(r, 4)?;
    if magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = read_u32(r)? as usize;
    let header: CheckpointHeader = serde_json::from_slice(&read_bytes(r, hlen)?)?;
    let n = read_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name_len = read_u32(r)? as usize;
        let name = String::from_utf8(read_bytes(r, name_len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = read_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = read_bytes(r, numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(name, Tensor::new(shape, data)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok((header, store))
}

fn to_file(path: &Path, header: &CheckpointHeader, tensors: &ParamStore) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, header, tensors)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn from_file(path: &Path) -> Result<(CheckpointHeader, ParamStore)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}

fn check_names(expected: &ParamStore, got: &ParamStore) -> Result<()> {
    for (name, t) in expected.iter() {
        let g = got.get(name).map_err(|_| bad(format!("missing tensor {name}")))?;
        if g.shape() != t.shape() {
            return Err(bad(format!(
                "tensor {name}: shape {:?}, expected {:?}",
                g.shape(),
                t.shape()
            )));
        }
    }
    if let Some(extra) = got.names().find(|n| !expected.contains(n)) {
        return Err(bad(format!("unexpected tensor {extra}")));
    }
    Ok(())
}

pub fn backbone_bytes(backbone: &Backbone, seed: u64, vocab: &[String]) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        kind: CheckpointKind::Backbone,
        config: backbone.config.clone(),
        strategy: None,
        d_hidden: None,
        seed,
        vocab: vocab.to_vec(),
    };
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &header, &backbone.params)?;
    Ok(buf)
}

pub fn save_backbone(path: &Path, backbone: &Backbone, seed: u64, vocab: &[String]) -> Result<()> {
    std::fs::write(path, backbone_bytes(backbone, seed, vocab)?)?;
    Ok(())
}

/// Loads a backbone; returns it with the header (seed and vocabulary).
pub fn load_backbone(path: &Path) -> Result<(Backbone, CheckpointHeader)> {
    let (header, params) = from_file(path)?;
    if header.kind != CheckpointKind::Backbone {
        return Err(bad(format!("{} is not a backbone checkpoint", path.display())));
    }
    let template = Backbone::init(header.config.clone(), 0)?;
    check_names(&template.params, &params)?;
    Ok((
        Backbone {
            config: header.config.clone(),
            params,
        },
        header,
    ))
}

const SEED_INPUT: &str = "seed_input";

pub fn save_prompt(path: &Path, prompt: &PromptEncoder, config: &ModelConfig) -> Result<()> {
    let header = CheckpointHeader {
        kind: CheckpointKind::Prompt,
        config: config.clone(),
        strategy: Some(prompt.strategy),
        d_hidden: Some(prompt.d_hidden),
        seed: prompt.init_seed,
        vocab: Vec::new(),
    };
    let mut tensors = prompt.params.clone();
    if let Some(s) = &prompt.seed_input {
        tensors.insert(SEED_INPUT, s.clone());
    }
    to_file(path, &header, &tensors)
}

pub fn load_prompt(path: &Path) -> Result<(PromptEncoder, CheckpointHeader)> {
    let (header, mut tensors) = from_file(path)?;
    if header.kind != CheckpointKind::Prompt {
        return Err(bad(format!("{} is not a prompt checkpoint", path.display())));
    }
    let strategy = header
        .strategy
        .ok_or_else(|| bad("prompt checkpoint without strategy"))?;
    let d_hidden = header
        .d_hidden
        .ok_or_else(|| bad("prompt checkpoint without d_hidden"))?;
    let mut prompt = PromptEncoder::new(strategy, &header.config, d_hidden, header.seed)?;
    prompt.seed_input = tensors.remove(SEED_INPUT);
    if prompt.seed_input.is_some() == strategy.is_contextual() {
        return Err(bad(format!("seed matrix presence does not match strategy {strategy}")));
    }
    check_names(&prompt.params, &tensors)?;
    prompt.params = tensors;
    Ok((prompt, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 16,
            max_seq_len: 10,
            prefix_len: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn backbone_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ckpt");
        let b = Backbone::init(cfg(), 9).unwrap();
        save_backbone(&path, &b, 9, &["x".into()]).unwrap();
        let (back, header) = load_backbone(&path).unwrap();
        assert_eq!(back, b);
        assert_eq!(header.seed, 9);
        assert_eq!(
            std::fs::read(&path).unwrap(),
            backbone_bytes(&back, 9, &["x".into()]).unwrap()
        );
    }

    #[test]
    fn prompt_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for s in Strategy::ALL {
            let path = dir.path().join(format!("{s}.ckpt"));
            let p = PromptEncoder::new(s, &cfg(), 5, 3).unwrap();
            save_prompt(&path, &p, &cfg()).unwrap();
            let (q, _) = load_prompt(&path).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        assert!(read_checkpoint(&mut &b"NOPE"[..]).is_err());
        let b = Backbone::init(cfg(), 1).unwrap();
        let bytes = backbone_bytes(&b, 1, &[]).unwrap();
        assert!(read_checkpoint(&mut &bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&mut extra.as_slice()).is_err());
    }
}
