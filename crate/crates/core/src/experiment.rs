//! Generation over dialogs and the end-to-end strategy comparison.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::ComparisonSet;
use crate::data::{make_examples, Dialog, DialogCorpus, Split, Tokenizer, TrainingExample};
use crate::eval::{evaluate, EvalReport};
use crate::model::Backbone;
use crate::prompt::{assemble, PrefixTensor, PromptEncoder, Strategy};
use crate::train::{
    prepare_pretraining_examples, pretrain_backbone, split_examples, train, PromptConfig, TrainConfig, TrainObserver,
    TrainReport,
};
use crate::{par, Error, Result};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 48;

/// Greedy response for one example. Without a prompt encoder the backbone
/// runs with an empty prefix on `[USER] u_n`.
pub fn respond(
    backbone: &Backbone,
    prompt: Option<&PromptEncoder>,
    tok: &Tokenizer,
    ex: &TrainingExample,
    max_new_tokens: usize,
) -> Result<String> {
    let strategy = prompt.map_or(Strategy::Cdp, |p| p.strategy);
    let input = assemble(strategy, ex, tok);
    let prefix = match prompt {
        Some(p) => p.prefix_for(backbone, &input)?,
        None => PrefixTensor::empty(&backbone.config),
    };
    let enc = backbone.encode_with_prefix(&prefix, &input.encoder_ids)?;
    let ids = backbone.generate(&prefix, &enc, max_new_tokens)?;
    Ok(tok.decode(&ids))
}

/// One generated system turn per dialog turn, conditioning on the
/// ground-truth history.
pub fn generate_dialog(
    backbone: &Backbone,
    prompt: Option<&PromptEncoder>,
    tok: &Tokenizer,
    dialog: &Dialog,
    max_new_tokens: usize,
) -> Result<Vec<String>> {
    make_examples(dialog)
        .iter()
        .map(|ex| respond(backbone, prompt, tok, ex, max_new_tokens))
        .collect()
}

/// [`generate_dialog`] over many dialogs, fanned out in parallel.
pub fn generate_dialogs(
    backbone: &Backbone,
    prompt: Option<&PromptEncoder>,
    tok: &Tokenizer,
    dialogs: &[&Dialog],
    max_new_tokens: usize,
) -> Result<Vec<Vec<String>>> {
    par::map_slice(dialogs, |d| generate_dialog(backbone, prompt, tok, d, max_new_tokens))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDialog {
    pub dialog_id: String,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub eval: EvalReport,
    pub train: TrainReport,
    pub trainable_params: usize,
    pub generations: Vec<GeneratedDialog>,
}

/// Generates and scores `split` of `corpus`.
pub fn evaluate_split(
    backbone: &Backbone,
    prompt: Option<&PromptEncoder>,
    tok: &Tokenizer,
    corpus: &DialogCorpus,
    split: Split,
    max_new_tokens: usize,
) -> Result<(EvalReport, Vec<GeneratedDialog>)> {
    let dialogs: Vec<&Dialog> = corpus.split(split).collect();
    let generated = generate_dialogs(backbone, prompt, tok, &dialogs, max_new_tokens)?;
    let report = evaluate(&dialogs, &generated, corpus.schema.as_ref())?;
    let generations = dialogs
        .iter()
        .zip(generated)
        .map(|(d, responses)| GeneratedDialog {
            dialog_id: d.id.clone(),
            responses,
        })
        .collect();
    Ok((report, generations))
}

/// Trains one strategy on the train split and evaluates it on `split`.
#[allow(clippy::too_many_arguments)]
pub fn run_strategy(
    corpus: &DialogCorpus,
    backbone: &Backbone,
    tok: &Tokenizer,
    strategy: Strategy,
    prompt_cfg: &PromptConfig,
    cfg: &TrainConfig,
    split: Split,
    max_new_tokens: usize,
    observer: &mut dyn TrainObserver,
) -> Result<StrategyResult> {
    let (prompt, report) = train(corpus, strategy, backbone, tok, prompt_cfg, cfg, observer)?;
    let (eval, generations) = evaluate_split(backbone, Some(&prompt), tok, corpus, split, max_new_tokens)?;
    Ok(StrategyResult {
        strategy,
        eval,
        train: report,
        trainable_params: prompt.count_trainable(),
        generations,
    })
}

/// Full fine-tune of the backbone on context-free pairs from the train split.
pub fn pretrain_on_corpus(
    corpus: &DialogCorpus,
    tok: &Tokenizer,
    backbone: Backbone,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(Backbone, TrainReport)> {
    let examples = prepare_pretraining_examples(&split_examples(corpus, Split::Train), tok);
    pretrain_backbone(backbone, &examples, cfg, observer)
}

/// A seeded random `fraction` of `ids` (at least one), in shuffled order.
pub fn sample_subset(ids: &[String], fraction: f64, seed: u64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "subset fraction must be in (0, 1], got {fraction}"
        )));
    }
    if ids.is_empty() {
        return Err(Error::EmptyInput("conversation ids"));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len());
    shuffled.truncate(n);
    Ok(shuffled)
}

/// Comparison sets for `dialog_ids`, with one generation list per method
/// given in method order.
pub fn comparison_sets(
    corpus: &DialogCorpus,
    dialog_ids: &[String],
    per_method: &[Vec<GeneratedDialog>],
) -> Result<Vec<ComparisonSet>> {
    dialog_ids
        .iter()
        .map(|id| {
            let dialog = corpus
                .dialogs
                .iter()
                .find(|d| &d.id == id)
                .ok_or_else(|| Error::Eval(format!("dialog {id} not in corpus")))?;
            let mut responses = vec![Vec::with_capacity(per_method.len()); dialog.turns.len()];
            for (m, gens) in per_method.iter().enumerate() {
                let g = gens
                    .iter()
                    .find(|g| &g.dialog_id == id)
                    .ok_or_else(|| Error::Eval(format!("method {} has no generations for {id}", m + 1)))?;
                if g.responses.len() != dialog.turns.len() {
                    return Err(Error::Eval(format!("method {}: turn count mismatch for {id}", m + 1)));
                }
                for (row, r) in responses.iter_mut().zip(&g.responses) {
                    row.push(r.clone());
                }
            }
            Ok(ComparisonSet {
                conversation_id: id.clone(),
                user_turns: dialog.turns.iter().map(|t| t.user.clone()).collect(),
                responses,
            })
        })
        .collect()
}
