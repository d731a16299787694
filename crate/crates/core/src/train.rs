//! Optimizes the prompt encoder θ under token-level log-likelihood with the
//! backbone φ frozen. Also hosts the backbone pretraining phase, which is the
//! one place φ is ever updated.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, NodeId};
use crate::data::{make_examples, special, DialogCorpus, Split, Tokenizer, TrainingExample};
use crate::model::{Backbone, ModelConfig, PrefixNodes, BACKBONE_PREFIX, BOS_ID, EOS_ID};
use crate::params::ParamStore;
use crate::prompt::{assemble, PromptEncoder, Strategy, PROMPT_PREFIX};
use crate::tensor::Tensor;
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Evaluate held-out loss every this many steps (0 disables).
    pub eval_every: usize,
    pub rng_seed: u64,
    pub optimizer: Optimizer,
    /// Global-norm clip threshold (0 disables).
    pub gradient_clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            max_steps: 1000,
            eval_every: 0,
            rng_seed: 0,
            optimizer: Optimizer::default(),
            gradient_clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.max_steps < 1 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.gradient_clip_norm < 0.0 {
            return Err(Error::Config("gradient_clip_norm must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub eval_losses: Vec<StepRecord>,
    pub theta_checksum: String,
    pub phi_checksum_before: String,
    pub phi_checksum_after: String,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// An example reduced to ids plus the cached MLP input. The MLP input is a
/// constant under training because the context encoder is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub encoder_ids: Vec<usize>,
    pub decoder_input: Vec<usize>,
    pub labels: Vec<usize>,
    pub mlp_input: Option<Tensor>,
}

fn teacher_forcing(target_ids: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut dec = Vec::with_capacity(target_ids.len() + 1);
    dec.push(BOS_ID);
    dec.extend_from_slice(target_ids);
    let mut labels = target_ids.to_vec();
    labels.push(EOS_ID);
    (dec, labels)
}

/// Assembles every example for `strategy` and caches its MLP input.
pub fn prepare_examples(
    examples: &[TrainingExample],
    strategy: Strategy,
    tok: &Tokenizer,
    backbone: &Backbone,
    prompt: &PromptEncoder,
) -> Result<Vec<PreparedExample>> {
    par::map_slice(examples, |ex| {
        let a = assemble(strategy, ex, tok);
        let mlp_input = Some(prompt.mlp_input(backbone, &a)?);
        let (decoder_input, labels) = teacher_forcing(&a.target_ids);
        Ok(PreparedExample {
            encoder_ids: a.encoder_ids,
            decoder_input,
            labels,
            mlp_input,
        })
    })
    .into_iter()
    .collect()
}

/// Context-free pairs `[USER] u_n → s_n` used to pretrain the backbone.
pub fn prepare_pretraining_examples(examples: &[TrainingExample], tok: &Tokenizer) -> Vec<PreparedExample> {
    examples
        .iter()
        .map(|ex| {
            let (decoder_input, labels) = teacher_forcing(&tok.encode(&ex.target));
            PreparedExample {
                encoder_ids: tok.encode(&format!("{} {}", special::USER, ex.user)),
                decoder_input,
                labels,
                mlp_input: None,
            }
        })
        .collect()
}

/// All turn-level examples of one split.
pub fn split_examples(corpus: &DialogCorpus, split: Split) -> Vec<TrainingExample> {
    corpus.split(split).flat_map(make_examples).collect()
}

/// Builds the loss graph for one example; returns the mean-token NLL node.
fn example_loss_graph<'a>(
    g: &mut Graph<'a>,
    backbone: &'a Backbone,
    prompt: Option<(&'a PromptEncoder, bool)>,
    train_backbone: bool,
    ex: &'a PreparedExample,
) -> Result<NodeId> {
    let mut bb = backbone.binder(train_backbone);
    let prefix = match (prompt, &ex.mlp_input) {
        (Some((p, trainable)), Some(x)) => {
            let mut pb = crate::params::Binder::new(&p.params, PROMPT_PREFIX, trainable);
            let input = g.constant_ref(x);
            p.prefix_graph(g, &mut pb, input, &backbone.config)?
        }
        (Some(_), None) => return Err(Error::Config("prompt training example without MLP input".into())),
        (None, _) => PrefixNodes::None,
    };
    let enc = backbone.encode_graph(g, &mut bb, &ex.encoder_ids, &prefix)?;
    let logits = backbone.decode_graph(g, &mut bb, &prefix, enc, &ex.decoder_input)?;
    g.cross_entropy_rows(logits, &ex.labels)
}

/// Summed token NLL, token count, and gradients of the summed NLL.
fn example_gradient(
    backbone: &Backbone,
    prompt: Option<&PromptEncoder>,
    train_backbone: bool,
    ex: &PreparedExample,
) -> Result<(f64, usize, Gradients)> {
    let mut g = Graph::new();
    let loss = example_loss_graph(&mut g, backbone, prompt.map(|p| (p, true)), train_backbone, ex)?;
    let n = ex.labels.len();
    let mut grads = g.backward(loss)?;
    grads.scale(n as f64);
    Ok((g.value(loss).item() * n as f64, n, grads))
}

fn example_nll(backbone: &Backbone, prompt: Option<&PromptEncoder>, ex: &PreparedExample) -> Result<(f64, usize)> {
    let mut g = Graph::new();
    let loss = example_loss_graph(&mut g, backbone, prompt.map(|p| (p, false)), false, ex)?;
    let n = ex.labels.len();
    Ok((g.value(loss).item() * n as f64, n))
}

/// Mean token-level negative log-likelihood over a batch.
pub fn loss(batch: &[PreparedExample], prompt: Option<&PromptEncoder>, backbone: &Backbone) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let parts = par::map_slice(batch, |ex| example_nll(backbone, prompt, ex));
    let (mut total, mut tokens) = (0.0, 0usize);
    for p in parts {
        let (s, n) = p?;
        total += s;
        tokens += n;
    }
    Ok(total / tokens as f64)
}

/// Mean loss and its gradient over `batch`. Per-example tapes run in
/// parallel; the reduction runs in batch order so results do not depend on
/// the thread count.
pub fn batch_gradients(
    batch: &[&PreparedExample],
    prompt: Option<&PromptEncoder>,
    backbone: &Backbone,
    train_backbone: bool,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let parts = par::map_slice(batch, |ex| example_gradient(backbone, prompt, train_backbone, ex));
    reduce_gradients(parts)
}

fn reduce_gradients(parts: Vec<Result<(f64, usize, Gradients)>>) -> Result<(f64, Gradients)> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    let mut grads = Gradients::default();
    for p in parts {
        let (s, n, g) = p?;
        total += s;
        tokens += n;
        grads.accumulate(&g);
    }
    grads.scale(1.0 / tokens as f64);
    Ok((total / tokens as f64, grads))
}

/// Per-parameter optimizer state.
#[derive(Debug, Default)]
struct OptimizerState {
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

fn apply_update(
    params: &mut ParamStore,
    grads: &Gradients,
    grad_prefix: &str,
    cfg: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    let clip = if cfg.gradient_clip_norm > 0.0 {
        let norm = grads.global_norm();
        if norm > cfg.gradient_clip_norm {
            cfg.gradient_clip_norm / norm
        } else {
            1.0
        }
    } else {
        1.0
    };
    state.step += 1;
    let t = state.step as i32;
    for (key, g) in grads.iter() {
        let Some(name) = key.strip_prefix(grad_prefix) else {
            return Err(Error::Config(format!("gradient {key} outside the trainable set")));
        };
        let p = params.get_mut(name)?;
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (w, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= cfg.learning_rate * clip * gv;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let n = g.numel();
                let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
                let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (i, (w, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                    let gc = gv * clip;
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gc;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gc * gc;
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    *w -= cfg.learning_rate * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

/// Deterministic stream of example indices: a fresh seeded permutation per pass.
struct BatchOrder {
    rng: ChaCha8Rng,
    perm: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            perm: (0..n).collect(),
            pos: n,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.perm.sort_unstable();
        self.perm.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.perm.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.perm.len() {
                self.reshuffle();
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Callbacks invoked during training.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_eval(&mut self, _record: &StepRecord) {}
}

impl TrainObserver for () {}

/// Collects step records as JSON lines (`{"step":..,"loss":..}`).
#[derive(Debug, Default)]
pub struct JsonLinesLog {
    pub lines: Vec<String>,
}

impl TrainObserver for JsonLinesLog {
    fn on_step(&mut self, record: &StepRecord) {
        self.lines
            .push(serde_json::to_string(record).expect("step record serializes"));
    }
}

/// Trains θ on `examples` with the backbone frozen.
pub fn train_prompt(
    backbone: &Backbone,
    mut prompt: PromptEncoder,
    examples: &[PreparedExample],
    held_out: &[PreparedExample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(PromptEncoder, TrainReport)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyInput("training examples"));
    }
    let started = Instant::now();
    let phi_before = backbone.params.checksum();
    let mut order = BatchOrder::new(examples.len(), cfg.rng_seed);
    let mut state = OptimizerState::default();
    let mut losses = Vec::with_capacity(cfg.max_steps);
    let mut eval_losses = Vec::new();
    for step in 1..=cfg.max_steps {
        let idx = order.next_batch(cfg.batch_size);
        let batch: Vec<&PreparedExample> = idx.iter().map(|&i| &examples[i]).collect();
        let (l, grads) = batch_gradients(&batch, Some(&prompt), backbone, false)?;
        if !l.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged { step, loss: l });
        }
        if let Some(bad) = grads.names().find(|n| !n.starts_with(PROMPT_PREFIX)) {
            return Err(Error::Config(format!("frozen parameter {bad} received a gradient")));
        }
        apply_update(&mut prompt.params, &grads, PROMPT_PREFIX, cfg, &mut state)?;
        let rec = StepRecord { step, loss: l };
        observer.on_step(&rec);
        losses.push(l);
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && !held_out.is_empty() {
            let rec = StepRecord {
                step,
                loss: loss(held_out, Some(&prompt), backbone)?,
            };
            observer.on_eval(&rec);
            eval_losses.push(rec);
        }
    }
    let report = TrainReport {
        losses,
        eval_losses,
        theta_checksum: prompt.params.checksum(),
        phi_checksum_before: phi_before,
        phi_checksum_after: backbone.params.checksum(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((prompt, report))
}

/// Full fine-tuning of the backbone on context-free `u_n → s_n` pairs.
/// This is the only routine that changes φ; it runs before any prompt
/// training and its output is treated as frozen afterwards.
pub fn pretrain_backbone(
    mut backbone: Backbone,
    examples: &[PreparedExample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(Backbone, TrainReport)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyInput("training examples"));
    }
    let started = Instant::now();
    let before = backbone.params.checksum();
    let mut order = BatchOrder::new(examples.len(), cfg.rng_seed);
    let mut state = OptimizerState::default();
    let mut losses = Vec::with_capacity(cfg.max_steps);
    for step in 1..=cfg.max_steps {
        let idx = order.next_batch(cfg.batch_size);
        let batch: Vec<&PreparedExample> = idx.iter().map(|&i| &examples[i]).collect();
        let (l, grads) = batch_gradients(&batch, None, &backbone, true)?;
        if !l.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged { step, loss: l });
        }
        apply_update(&mut backbone.params, &grads, BACKBONE_PREFIX, cfg, &mut state)?;
        let rec = StepRecord { step, loss: l };
        observer.on_step(&rec);
        losses.push(l);
    }
    let report = TrainReport {
        losses,
        eval_losses: Vec::new(),
        theta_checksum: backbone.params.checksum(),
        phi_checksum_before: before,
        phi_checksum_after: backbone.params.checksum(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((backbone, report))
}

/// Prompt-encoder hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub d_hidden: usize,
    pub init_seed: u64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            d_hidden: 64,
            init_seed: 0,
        }
    }
}

/// Prepares the training split for `strategy`, initializes θ and trains it.
pub fn train(
    corpus: &DialogCorpus,
    strategy: Strategy,
    backbone: &Backbone,
    tok: &Tokenizer,
    prompt_cfg: &PromptConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(PromptEncoder, TrainReport)> {
    cfg.validate()?;
    let prompt = PromptEncoder::new(strategy, &backbone.config, prompt_cfg.d_hidden, prompt_cfg.init_seed)?;
    let train_ex = prepare_examples(&split_examples(corpus, Split::Train), strategy, tok, backbone, &prompt)?;
    let dev_ex = if cfg.eval_every > 0 {
        prepare_examples(&split_examples(corpus, Split::Dev), strategy, tok, backbone, &prompt)?
    } else {
        Vec::new()
    };
    train_prompt(backbone, prompt, &train_ex, &dev_ex, cfg, observer)
}

/// Model config sized for a tokenizer and corpus: vocabulary from the
/// tokenizer, `max_seq_len` covering the longest assembled sequence plus prefix.
pub fn fit_model_config(base: &ModelConfig, corpus: &DialogCorpus, tok: &Tokenizer) -> ModelConfig {
    let mut longest = 0;
    for d in &corpus.dialogs {
        for ex in make_examples(d) {
            for s in Strategy::ALL {
                let a = assemble(s, &ex, tok);
                longest = longest
                    .max(a.encoder_ids.len())
                    .max(a.target_ids.len() + 1)
                    .max(a.prompt_ids.map_or(0, |p| p.len()));
            }
        }
    }
    ModelConfig {
        vocab_size: tok.len(),
        max_seq_len: base.max_seq_len.max(longest + base.prefix_len),
        ..base.clone()
    }
}
