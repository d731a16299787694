//! Prompt-generation strategies.
//!
//! All strategies share one prompt encoder: a two-layer MLP
//! (`linear → tanh → linear`) whose output is reshaped into the prefix. They
//! differ only in what the MLP reads:
//!
//! | key         | MLP input                                   | encoder text                  |
//! |-------------|---------------------------------------------|-------------------------------|
//! | `prefix`    | fixed seed vector `P′`                      | `C ⊕ u_n`                     |
//! | `prefix_ds` | fixed seed vector `P′`                      | `C ⊕ u_n ⊕ [STATE] D_{n-1}`   |
//! | `cdp`       | mean-pooled frozen `encoder(C)`             | `u_n`                         |
//! | `cdp_ds`    | mean-pooled frozen `encoder(C ⊕ [STATE] D)` | `u_n`                         |
//!
//! Because `P′` has the same width as the pooled encoder output and is not
//! trained, every strategy has exactly the same trainable parameters.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::data::{serialize_context, special, DialogState, Tokenizer, TrainingExample};
use crate::model::{Backbone, ModelConfig, PrefixNodes};
use crate::params::{normal_like, xavier_uniform, Binder, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Gradient-map prefix for prompt-encoder leaves.
pub const PROMPT_PREFIX: &str = "prompt/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Prefix,
    PrefixDs,
    Cdp,
    CdpDs,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Prefix, Strategy::PrefixDs, Strategy::Cdp, Strategy::CdpDs];

    pub fn key(self) -> &'static str {
        match self {
            Strategy::Prefix => "prefix",
            Strategy::PrefixDs => "prefix_ds",
            Strategy::Cdp => "cdp",
            Strategy::CdpDs => "cdp_ds",
        }
    }

    /// Whether the prefix is computed from the dialog context.
    pub fn is_contextual(self) -> bool {
        matches!(self, Strategy::Cdp | Strategy::CdpDs)
    }

    pub fn uses_state(self) -> bool {
        matches!(self, Strategy::PrefixDs | Strategy::CdpDs)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL.into_iter().find(|k| k.key() == s).ok_or_else(|| {
            let keys: Vec<_> = Strategy::ALL.iter().map(|k| k.key()).collect();
            Error::Config(format!("unknown strategy {s:?}; valid keys: {}", keys.join(", ")))
        })
    }
}

/// `P_θ`: prefix rows for every self-attention layer (deep key/value mode,
/// shape `layers × 2 × L × d_model`) or virtual encoder embeddings
/// (shape `L × d_model`). `L = 0` is the empty prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixTensor {
    tensor: Tensor,
    slots: usize,
}

impl PrefixTensor {
    pub fn new(tensor: Tensor, config: &ModelConfig) -> Result<Self> {
        let p = Self {
            slots: config.prefix_len,
            tensor,
        };
        p.check_against(config)?;
        Ok(p)
    }

    /// The zero-slot prefix; decoding with it equals a plain forward pass.
    pub fn empty(config: &ModelConfig) -> Self {
        let mut shape = config.prefix_shape();
        let slot_axis = shape.len() - 2;
        shape[slot_axis] = 0;
        Self {
            tensor: Tensor::zeros(&shape),
            slots: 0,
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let mut expected = config.prefix_shape();
        if self.slots == 0 {
            let slot_axis = expected.len() - 2;
            expected[slot_axis] = 0;
        }
        if self.tensor.shape() != expected.as_slice() {
            return Err(Error::Shape {
                op: "prefix",
                expected: format!("{expected:?}"),
                actual: format!("{:?}", self.tensor.shape()),
            });
        }
        Ok(())
    }
}

/// Token ids for one example under one strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledInput {
    pub encoder_ids: Vec<usize>,
    /// Ids fed to the frozen context encoder (contextual strategies only).
    pub prompt_ids: Option<Vec<usize>>,
    pub target_ids: Vec<usize>,
}

fn state_text(state: &DialogState) -> String {
    if state.is_empty() {
        special::NOSTATE.to_string()
    } else {
        state.serialize()
    }
}

/// Text given to the backbone encoder.
pub fn encoder_text(strategy: Strategy, ex: &TrainingExample) -> String {
    let current = format!("{} {}", special::USER, ex.user);
    let text = match strategy {
        Strategy::Prefix | Strategy::PrefixDs => {
            let ctx = serialize_context(&ex.context);
            if ctx.is_empty() {
                current
            } else {
                format!("{ctx} {current}")
            }
        }
        Strategy::Cdp | Strategy::CdpDs => current,
    };
    if strategy == Strategy::PrefixDs {
        format!("{text} {} {}", special::STATE, state_text(&ex.state))
    } else {
        text
    }
}

/// Text given to the frozen context encoder, `None` for static strategies.
pub fn prompt_text(strategy: Strategy, context: &[(String, String)], state: &DialogState) -> Option<String> {
    if !strategy.is_contextual() {
        return None;
    }
    let ctx = serialize_context(context);
    let ctx = if ctx.is_empty() {
        special::NOCTX.to_string()
    } else {
        ctx
    };
    Some(match strategy {
        Strategy::CdpDs => format!("{ctx} {} {}", special::STATE, state_text(state)),
        _ => ctx,
    })
}

pub fn assemble(strategy: Strategy, ex: &TrainingExample, tok: &Tokenizer) -> AssembledInput {
    AssembledInput {
        encoder_ids: tok.encode(&encoder_text(strategy, ex)),
        prompt_ids: prompt_text(strategy, &ex.context, &ex.state).map(|t| tok.encode(&t)),
        target_ids: tok.encode(&ex.target),
    }
}

/// θ: the prompt MLP, plus the fixed seed `P′` for static strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEncoder {
    pub strategy: Strategy,
    pub d_hidden: usize,
    pub init_seed: u64,
    pub params: ParamStore,
    /// `P′`, a `1 × d_model` constant; present only for static strategies.
    pub seed_input: Option<Tensor>,
}

/// Scalars in a `d_in → d_hidden → d_out` MLP with biases.
pub fn mlp_param_count(d_in: usize, d_hidden: usize, d_out: usize) -> usize {
    d_in * d_hidden + d_hidden + d_hidden * d_out + d_out
}

impl PromptEncoder {
    pub fn new(strategy: Strategy, config: &ModelConfig, d_hidden: usize, init_seed: u64) -> Result<Self> {
        config.validate()?;
        if d_hidden == 0 {
            return Err(Error::Config("prompt encoder d_hidden must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let d_in = config.d_model;
        let d_out = config.prefix_numel();
        let mut params = ParamStore::new();
        params.insert("w1", xavier_uniform(&mut rng, d_in, d_hidden));
        params.insert("b1", Tensor::zeros(&[1, d_hidden]));
        params.insert("w2", xavier_uniform(&mut rng, d_hidden, d_out));
        params.insert("b2", Tensor::zeros(&[1, d_out]));
        let seed_input = (!strategy.is_contextual()).then(|| normal_like(&mut rng, 1, d_in, 1.0));
        Ok(Self {
            strategy,
            d_hidden,
            init_seed,
            params,
            seed_input,
        })
    }

    /// Exact number of trainable scalars.
    pub fn count_trainable(&self) -> usize {
        self.params.numel()
    }

    pub fn binder(&self) -> Binder<'_> {
        Binder::new(&self.params, PROMPT_PREFIX, true)
    }

    /// The `1 × d_model` vector the MLP reads for this input.
    pub fn mlp_input(&self, backbone: &Backbone, input: &AssembledInput) -> Result<Tensor> {
        if self.strategy.is_contextual() {
            let ids = input
                .prompt_ids
                .as_ref()
                .ok_or_else(|| Error::Config("contextual strategy needs prompt ids".into()))?;
            backbone.encode_pooled(ids)
        } else {
            self.seed_input
                .clone()
                .ok_or_else(|| Error::Config("static prefix requires a seed matrix".into()))
        }
    }

    /// MLP forward inside a graph: `1 × prefix_numel` flat prefix.
    pub fn mlp_graph<'a>(&self, g: &mut Graph<'a>, b: &mut Binder<'a>, input: NodeId) -> Result<NodeId> {
        let w1 = b.get(g, "w1")?;
        let b1 = b.get(g, "b1")?;
        let w2 = b.get(g, "w2")?;
        let b2 = b.get(g, "b2")?;
        let h = g.matmul(input, w1)?;
        let h = g.add(h, b1)?;
        let h = g.tanh(h);
        let o = g.matmul(h, w2)?;
        g.add(o, b2)
    }

    /// Prefix nodes for a graph, given the MLP input vector.
    pub fn prefix_graph<'a>(
        &self,
        g: &mut Graph<'a>,
        b: &mut Binder<'a>,
        input: NodeId,
        config: &ModelConfig,
    ) -> Result<PrefixNodes> {
        let flat = self.mlp_graph(g, b, input)?;
        PrefixNodes::from_flat(g, flat, config, config.prefix_len)
    }

    /// Evaluates the MLP on `input` and reshapes to the prefix shape.
    pub fn prefix_from_input(&self, input: &Tensor, config: &ModelConfig) -> Result<PrefixTensor> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params, PROMPT_PREFIX, false);
        let x = g.constant_ref(input);
        let flat = self.mlp_graph(&mut g, &mut b, x)?;
        let t = g.value(flat).reshape(&config.prefix_shape())?;
        PrefixTensor::new(t, config)
    }

    /// `P_θ = MLP_θ(P′)`, independent of any dialog.
    pub fn static_prefix(&self, config: &ModelConfig) -> Result<PrefixTensor> {
        let seed = self
            .seed_input
            .as_ref()
            .ok_or_else(|| Error::Config("static prefix requires a seed matrix".into()))?;
        self.prefix_from_input(seed, config)
    }

    /// `P_θ = MLP_θ(pool(encoder(C)))` with the frozen backbone encoder.
    pub fn contextual_prefix(
        &self,
        context: &[(String, String)],
        backbone: &Backbone,
        tok: &Tokenizer,
    ) -> Result<PrefixTensor> {
        let text = prompt_text(Strategy::Cdp, context, &DialogState::new()).expect("contextual");
        let pooled = backbone.encode_pooled(&tok.encode(&text))?;
        self.prefix_from_input(&pooled, &backbone.config)
    }

    /// `P_θ = MLP_θ(pool(encoder(C ⊕ [STATE] D_{n-1})))`.
    pub fn contextual_prefix_with_state(
        &self,
        context: &[(String, String)],
        state: &DialogState,
        backbone: &Backbone,
        tok: &Tokenizer,
    ) -> Result<PrefixTensor> {
        let text = prompt_text(Strategy::CdpDs, context, state).expect("contextual");
        let pooled = backbone.encode_pooled(&tok.encode(&text))?;
        self.prefix_from_input(&pooled, &backbone.config)
    }

    /// The prefix this encoder produces for an assembled input.
    pub fn prefix_for(&self, backbone: &Backbone, input: &AssembledInput) -> Result<PrefixTensor> {
        let x = self.mlp_input(backbone, input)?;
        self.prefix_from_input(&x, &backbone.config)
    }
}
