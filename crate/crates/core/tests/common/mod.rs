#![allow(dead_code)]

use ctxprompt::data::{make_examples, synthesize_corpus, DialogCorpus, Schema, Split, Tokenizer};
use ctxprompt::model::{BOS_ID, EOS_ID};
use ctxprompt::train::{fit_model_config, PreparedExample};
use ctxprompt::{Backbone, ModelConfig, PrefixMode, PromptEncoder, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// d_model 16, two heads, 2+2 layers, vocab 40.
pub fn tiny_config(mode: PrefixMode) -> ModelConfig {
    ModelConfig {
        vocab_size: 40,
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 2,
        n_dec_layers: 2,
        d_ff: 24,
        max_seq_len: 32,
        prefix_len: 3,
        prefix_mode: mode,
    }
}

pub fn random_ids(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(3..vocab)).collect()
}

/// A hand-built training example with random ids; the MLP input is computed
/// the same way the trainer caches it.
pub fn random_example(rng: &mut ChaCha8Rng, backbone: &Backbone, prompt: Option<&PromptEncoder>) -> PreparedExample {
    let v = backbone.config.vocab_size;
    let enc_len = rng.gen_range(3..7);
    let tgt_len = rng.gen_range(2..5);
    let target = random_ids(rng, tgt_len, v);
    let mut decoder_input = vec![BOS_ID];
    decoder_input.extend(&target);
    let mut labels = target;
    labels.push(EOS_ID);
    let mlp_input = prompt.map(|p| {
        if p.strategy.is_contextual() {
            let ctx_len = rng.gen_range(2..6);
            backbone.encode_pooled(&random_ids(rng, ctx_len, v)).unwrap()
        } else {
            p.seed_input.clone().unwrap()
        }
    });
    PreparedExample {
        encoder_ids: random_ids(rng, enc_len, v),
        decoder_input,
        labels,
        mlp_input,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Synthetic corpus with its tokenizer and a model config fitted to both.
pub fn synth(seed: u64, n: usize, base: &ModelConfig, all_train: bool) -> (DialogCorpus, Tokenizer, ModelConfig) {
    let mut corpus = synthesize_corpus(seed, n, &Schema::restaurant_train()).unwrap();
    if all_train {
        for d in &mut corpus.dialogs {
            d.split = Split::Train;
        }
    }
    let tok = Tokenizer::build(&corpus);
    let cfg = fit_model_config(base, &corpus, &tok);
    (corpus, tok, cfg)
}

pub fn train_targets(corpus: &DialogCorpus) -> usize {
    corpus.split(Split::Train).map(|d| make_examples(d).len()).sum()
}

pub const STRATEGIES: [Strategy; 4] = Strategy::ALL;
