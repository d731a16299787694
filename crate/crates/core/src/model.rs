//! A T5-style encoder-decoder transformer at toy scale.
//!
//! Pre-layernorm blocks, learned absolute positions shared by encoder and
//! decoder, a token embedding table shared by both sides, and a separate
//! output projection. Prefix slots enter either as extra key/value rows in
//! every self-attention layer ([`PrefixMode::DeepKv`]) or as virtual
//! embeddings in front of the encoder input ([`PrefixMode::Embedding`]).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::params::{normal_like, xavier_uniform, Binder, ParamStore};
use crate::prompt::PrefixTensor;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;

/// Gradient-map prefix for backbone leaves.
pub const BACKBONE_PREFIX: &str = "backbone/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    #[default]
    DeepKv,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub prefix_len: usize,
    pub prefix_mode: PrefixMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 32,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 64,
            max_seq_len: 160,
            prefix_len: 4,
            prefix_mode: PrefixMode::DeepKv,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 3 {
            return fail(format!("vocab_size {} must cover PAD/BOS/EOS", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.prefix_len == 0 {
            return fail("prefix_len must be >= 1".into());
        }
        if self.d_ff == 0 || self.max_seq_len == 0 {
            return fail("d_ff and max_seq_len must be positive".into());
        }
        if self.n_enc_layers == 0 || self.n_dec_layers == 0 {
            return fail("need at least one encoder and one decoder layer".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Shape of a full prefix for this configuration.
    pub fn prefix_shape(&self) -> Vec<usize> {
        match self.prefix_mode {
            PrefixMode::DeepKv => vec![self.n_enc_layers + self.n_dec_layers, 2, self.prefix_len, self.d_model],
            PrefixMode::Embedding => vec![self.prefix_len, self.d_model],
        }
    }

    pub fn prefix_numel(&self) -> usize {
        self.prefix_shape().iter().product()
    }

    /// Longest encoder input accepted alongside a prefix.
    pub fn max_encoder_tokens(&self) -> usize {
        match self.prefix_mode {
            PrefixMode::DeepKv => self.max_seq_len,
            PrefixMode::Embedding => self.max_seq_len.saturating_sub(self.prefix_len),
        }
    }
}

/// Prefix rows bound into a graph.
#[derive(Debug, Clone)]
pub enum PrefixNodes {
    None,
    /// `(key, value)` per self-attention layer: encoder layers first, then decoder.
    DeepKv(Vec<(NodeId, NodeId)>),
    Embedding(NodeId),
}

impl PrefixNodes {
    fn layer_kv(&self, layer: usize) -> Option<(NodeId, NodeId)> {
        match self {
            PrefixNodes::DeepKv(kv) => kv.get(layer).copied(),
            _ => None,
        }
    }

    /// Splits a flat `1 × prefix_numel` node (or an already shaped prefix)
    /// into per-layer key/value rows.
    pub fn from_flat(g: &mut Graph<'_>, flat: NodeId, config: &ModelConfig, slots: usize) -> Result<Self> {
        if slots == 0 {
            return Ok(PrefixNodes::None);
        }
        let d = config.d_model;
        let flat = g.reshape(flat, &[1, g.value(flat).numel()])?;
        match config.prefix_mode {
            PrefixMode::DeepKv => {
                let layers = config.n_enc_layers + config.n_dec_layers;
                let block = slots * d;
                let mut kv = Vec::with_capacity(layers);
                for l in 0..layers {
                    let mut pair = [flat; 2];
                    for (which, slot) in pair.iter_mut().enumerate() {
                        let start = (2 * l + which) * block;
                        let s = g.slice_cols(flat, start, start + block)?;
                        *slot = g.reshape(s, &[slots, d])?;
                    }
                    kv.push((pair[0], pair[1]));
                }
                Ok(PrefixNodes::DeepKv(kv))
            }
            PrefixMode::Embedding => Ok(PrefixNodes::Embedding(g.reshape(flat, &[slots, d])?)),
        }
    }
}

/// The frozen language model φ.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn layer_name(side: &str, layer: usize, part: &str) -> String {
    format!("{side}.{layer}.{part}")
}

impl Backbone {
    /// Random initialization from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut p = ParamStore::new();
        p.insert("embed", normal_like(&mut rng, config.vocab_size, d, 0.3));
        p.insert("pos", normal_like(&mut rng, config.max_seq_len, d, 0.1));
        let ones = Tensor::full(&[1, d], 1.0);
        let zeros = Tensor::zeros(&[1, d]);
        let attn = |p: &mut ParamStore, rng: &mut ChaCha8Rng, base: &str| {
            for w in ["wq", "wk", "wv", "wo"] {
                p.insert(format!("{base}.{w}"), xavier_uniform(rng, d, d));
            }
        };
        for (side, n) in [("enc", config.n_enc_layers), ("dec", config.n_dec_layers)] {
            for l in 0..n {
                attn(&mut p, &mut rng, &layer_name(side, l, "self"));
                if side == "dec" {
                    attn(&mut p, &mut rng, &layer_name(side, l, "cross"));
                }
                let norms: &[&str] = if side == "dec" {
                    &["ln1", "ln2", "ln3"]
                } else {
                    &["ln1", "ln2"]
                };
                for ln in norms {
                    p.insert(layer_name(side, l, &format!("{ln}.g")), ones.clone());
                    p.insert(layer_name(side, l, &format!("{ln}.b")), zeros.clone());
                }
                p.insert(layer_name(side, l, "ff.w1"), xavier_uniform(&mut rng, d, config.d_ff));
                p.insert(layer_name(side, l, "ff.b1"), Tensor::zeros(&[1, config.d_ff]));
                p.insert(layer_name(side, l, "ff.w2"), xavier_uniform(&mut rng, config.d_ff, d));
                p.insert(layer_name(side, l, "ff.b2"), zeros.clone());
            }
            p.insert(format!("{side}.ln_f.g"), ones.clone());
            p.insert(format!("{side}.ln_f.b"), zeros.clone());
        }
        p.insert("lm_head.w", xavier_uniform(&mut rng, d, config.vocab_size));
        p.insert("lm_head.b", Tensor::zeros(&[1, config.vocab_size]));
        Ok(Self { config, params: p })
    }

    pub fn binder(&self, trainable: bool) -> Binder<'_> {
        Binder::new(&self.params, BACKBONE_PREFIX, trainable)
    }

    fn check_ids(&self, ids: &[usize], limit: usize) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("token sequence"));
        }
        if ids.len() > limit {
            return Err(Error::TooLong {
                len: ids.len(),
                max: limit,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Config(format!(
                "token id {bad} out of range for vocab_size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed<'a>(&self, g: &mut Graph<'a>, b: &mut Binder<'a>, ids: &[usize]) -> Result<NodeId> {
        let table = b.get(g, "embed")?;
        let tok = g.embedding_gather(table, ids)?;
        let pos_table = b.get(g, "pos")?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = g.embedding_gather(pos_table, &positions)?;
        g.add(tok, pos)
    }

    fn layernorm<'a>(&self, g: &mut Graph<'a>, b: &mut Binder<'a>, x: NodeId, base: &str) -> Result<NodeId> {
        let gain = b.get(g, &format!("{base}.g"))?;
        let bias = b.get(g, &format!("{base}.b"))?;
        g.layernorm_rows(x, gain, bias)
    }

    /// Multi-head attention of `query` rows over `memory` rows, with optional
    /// prefix key/value rows prepended and an optional additive mask.
    #[allow(clippy::too_many_arguments)]
    fn attention<'a>(
        &self,
        g: &mut Graph<'a>,
        b: &mut Binder<'a>,
        base: &str,
        query: NodeId,
        memory: NodeId,
        prefix: Option<(NodeId, NodeId)>,
        causal: bool,
    ) -> Result<NodeId> {
        let wq = b.get(g, &format!("{base}.wq"))?;
        let wk = b.get(g, &format!("{base}.wk"))?;
        let wv = b.get(g, &format!("{base}.wv"))?;
        let wo = b.get(g, &format!("{base}.wo"))?;
        let q = g.matmul(query, wq)?;
        let mut k = g.matmul(memory, wk)?;
        let mut v = g.matmul(memory, wv)?;
        let mut n_prefix = 0;
        if let Some((pk, pv)) = prefix {
            n_prefix = g.value(pk).rows();
            if n_prefix > 0 {
                k = g.concat_rows(&[pk, k])?;
                v = g.concat_rows(&[pv, v])?;
            }
        }
        let n_q = g.value(q).rows();
        let n_k = g.value(k).rows();
        let mask = if causal {
            let mut m = Tensor::zeros(&[n_q, n_k]);
            for i in 0..n_q {
                for j in (n_prefix + i + 1)..n_k {
                    m.data_mut()[i * n_k + j] = -1e9;
                }
            }
            Some(g.constant(m))
        } else {
            None
        };
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, lo, hi)?;
            let kh = g.slice_cols(k, lo, hi)?;
            let vh = g.slice_cols(v, lo, hi)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let probs = g.softmax_rows(scores)?;
            heads.push(g.matmul(probs, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        g.matmul(merged, wo)
    }

    fn feed_forward<'a>(&self, g: &mut Graph<'a>, b: &mut Binder<'a>, x: NodeId, base: &str) -> Result<NodeId> {
        let w1 = b.get(g, &format!("{base}.w1"))?;
        let b1 = b.get(g, &format!("{base}.b1"))?;
        let w2 = b.get(g, &format!("{base}.w2"))?;
        let b2 = b.get(g, &format!("{base}.b2"))?;
        let h = g.matmul(x, w1)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h);
        let o = g.matmul(h, w2)?;
        g.add(o, b2)
    }

    /// Encoder forward inside a graph. Returns the final hidden states
    /// (including the virtual rows in embedding mode).
    pub fn encode_graph<'a>(
        &self,
        g: &mut Graph<'a>,
        b: &mut Binder<'a>,
        ids: &[usize],
        prefix: &PrefixNodes,
    ) -> Result<NodeId> {
        let limit = match prefix {
            PrefixNodes::Embedding(_) => self.config.max_encoder_tokens(),
            _ => self.config.max_seq_len,
        };
        self.check_ids(ids, limit)?;
        let mut x = self.embed(g, b, ids)?;
        if let PrefixNodes::Embedding(p) = prefix {
            x = g.concat_rows(&[*p, x])?;
        }
        for l in 0..self.config.n_enc_layers {
            let h = self.layernorm(g, b, x, &layer_name("enc", l, "ln1"))?;
            let a = self.attention(g, b, &layer_name("enc", l, "self"), h, h, prefix.layer_kv(l), false)?;
            x = g.add(x, a)?;
            let h = self.layernorm(g, b, x, &layer_name("enc", l, "ln2"))?;
            let f = self.feed_forward(g, b, h, &layer_name("enc", l, "ff"))?;
            x = g.add(x, f)?;
        }
        self.layernorm(g, b, x, "enc.ln_f")
    }

    /// Decoder forward inside a graph; returns `len × vocab_size` logits.
    pub fn decode_graph<'a>(
        &self,
        g: &mut Graph<'a>,
        b: &mut Binder<'a>,
        prefix: &PrefixNodes,
        encoder_states: NodeId,
        decoder_ids: &[usize],
    ) -> Result<NodeId> {
        self.check_ids(decoder_ids, self.config.max_seq_len)?;
        let mut x = self.embed(g, b, decoder_ids)?;
        let offset = self.config.n_enc_layers;
        for l in 0..self.config.n_dec_layers {
            let h = self.layernorm(g, b, x, &layer_name("dec", l, "ln1"))?;
            let a = self.attention(
                g,
                b,
                &layer_name("dec", l, "self"),
                h,
                h,
                prefix.layer_kv(offset + l),
                true,
            )?;
            x = g.add(x, a)?;
            let h = self.layernorm(g, b, x, &layer_name("dec", l, "ln2"))?;
            let c = self.attention(g, b, &layer_name("dec", l, "cross"), h, encoder_states, None, false)?;
            x = g.add(x, c)?;
            let h = self.layernorm(g, b, x, &layer_name("dec", l, "ln3"))?;
            let f = self.feed_forward(g, b, h, &layer_name("dec", l, "ff"))?;
            x = g.add(x, f)?;
        }
        let h = self.layernorm(g, b, x, "dec.ln_f")?;
        let w = b.get(g, "lm_head.w")?;
        let bias = b.get(g, "lm_head.b")?;
        let logits = g.matmul(h, w)?;
        g.add(logits, bias)
    }

    fn bind_prefix<'a>(&self, g: &mut Graph<'a>, prefix: &'a PrefixTensor) -> Result<PrefixNodes> {
        prefix.check_against(&self.config)?;
        if prefix.slots() == 0 {
            return Ok(PrefixNodes::None);
        }
        let flat = g.constant_ref(prefix.tensor());
        PrefixNodes::from_flat(g, flat, &self.config, prefix.slots())
    }

    /// Per-token encoder states without any prefix (the frozen context encoder).
    pub fn encode(&self, ids: &[usize]) -> Result<Tensor> {
        self.encode_with_prefix(&PrefixTensor::empty(&self.config), ids)
    }

    /// Mean-pooled encoder states, `1 × d_model`.
    pub fn encode_pooled(&self, ids: &[usize]) -> Result<Tensor> {
        let states = self.encode(ids)?;
        let (n, d) = (states.rows(), states.cols());
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(states.row(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        Ok(Tensor::row_vector(out))
    }

    pub fn encode_with_prefix(&self, prefix: &PrefixTensor, ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut b = self.binder(false);
        let p = self.bind_prefix(&mut g, prefix)?;
        let out = self.encode_graph(&mut g, &mut b, ids, &p)?;
        Ok(g.value(out).clone())
    }

    /// Decoder logits for `decoder_input_ids` given encoder states produced
    /// with the same prefix.
    pub fn decode_with_prefix(
        &self,
        prefix: &PrefixTensor,
        encoder_states: &Tensor,
        decoder_input_ids: &[usize],
    ) -> Result<Tensor> {
        if encoder_states.cols() != self.config.d_model || !encoder_states.is_matrix() {
            return Err(Error::Shape {
                op: "decode_with_prefix",
                expected: format!("encoder states with {} columns", self.config.d_model),
                actual: format!("{:?}", encoder_states.shape()),
            });
        }
        let mut g = Graph::new();
        let mut b = self.binder(false);
        let p = self.bind_prefix(&mut g, prefix)?;
        let enc = g.constant_ref(encoder_states);
        let out = self.decode_graph(&mut g, &mut b, &p, enc, decoder_input_ids)?;
        Ok(g.value(out).clone())
    }

    /// Encoder then decoder under one prefix.
    pub fn forward(&self, prefix: &PrefixTensor, encoder_ids: &[usize], decoder_input_ids: &[usize]) -> Result<Tensor> {
        let enc = self.encode_with_prefix(prefix, encoder_ids)?;
        self.decode_with_prefix(prefix, &enc, decoder_input_ids)
    }

    /// Greedy decoding from BOS until EOS or `max_new_tokens`. The returned
    /// sequence excludes BOS and EOS. Ties resolve to the lowest token id.
    pub fn generate(
        &self,
        prefix: &PrefixTensor,
        encoder_states: &Tensor,
        max_new_tokens: usize,
    ) -> Result<Vec<usize>> {
        if max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be >= 1".into()));
        }
        let budget = max_new_tokens.min(self.config.max_seq_len);
        let mut dec = vec![BOS_ID];
        let mut out = Vec::new();
        for _ in 0..budget {
            let logits = self.decode_with_prefix(prefix, encoder_states, &dec)?;
            let next = argmax(logits.row(logits.rows() - 1));
            if next == EOS_ID {
                break;
            }
            out.push(next);
            dec.push(next);
            if dec.len() > self.config.max_seq_len {
                break;
            }
        }
        Ok(out)
    }
}

/// Index of the largest value; the first one wins on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
