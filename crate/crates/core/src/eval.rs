//! Corpus BLEU, Inform/Success, combined score and diversity statistics.
//!
//! Inform and Success are computed over goal annotations with placeholder
//! matching, not with the standard MultiWOZ evaluation script or its entity
//! database.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{placeholder, tokenize, Dialog, Schema};
use crate::{par, Error, Result};

/// Added to a zero n-gram precision when some other order matched.
pub const BLEU_SMOOTHING: f64 = 1e-9;
pub const BLEU_MAX_ORDER: usize = 4;

/// Entity placeholders used when a corpus carries no schema.
pub const DEFAULT_ENTITY_PLACEHOLDERS: &[&str] = &["[name]", "[trainid]"];

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped matches and totals per order, plus corpus lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [usize; BLEU_MAX_ORDER],
    pub totals: [usize; BLEU_MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn precisions(&self) -> [f64; BLEU_MAX_ORDER] {
        let mut p = [0.0; BLEU_MAX_ORDER];
        for n in 0..BLEU_MAX_ORDER {
            if self.totals[n] > 0 {
                p[n] = self.matches[n] as f64 / self.totals[n] as f64;
            }
        }
        p
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// Score in `[0, 100]`.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches.iter().all(|&m| m == 0) {
            return 0.0;
        }
        let log_mean = self
            .precisions()
            .iter()
            .map(|&p| if p > 0.0 { p.ln() } else { BLEU_SMOOTHING.ln() })
            .sum::<f64>()
            / BLEU_MAX_ORDER as f64;
        100.0 * self.brevity_penalty() * log_mean.exp()
    }
}

pub fn bleu_stats(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<BleuStats> {
    if hypotheses.len() != references.len() {
        return Err(Error::Eval(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut s = BleuStats {
        matches: [0; BLEU_MAX_ORDER],
        totals: [0; BLEU_MAX_ORDER],
        hyp_len: 0,
        ref_len: 0,
    };
    for (h, r) in hypotheses.iter().zip(references) {
        s.hyp_len += h.len();
        s.ref_len += r.len();
        for n in 1..=BLEU_MAX_ORDER {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            s.totals[n - 1] += h.len().saturating_sub(n - 1);
            s.matches[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    Ok(s)
}

/// Corpus BLEU-4 with one reference per hypothesis, scaled to `[0, 100]`.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    Ok(bleu_stats(hypotheses, references)?.score())
}

/// [`bleu`] over raw strings, tokenized with the corpus tokenizer.
pub fn bleu_text(hypotheses: &[String], references: &[String]) -> Result<f64> {
    let h: Vec<_> = hypotheses.iter().map(|s| tokenize(s)).collect();
    let r: Vec<_> = references.iter().map(|s| tokenize(s)).collect();
    bleu(&h, &r)
}

pub fn combined(bleu: f64, inform: f64, success: f64) -> f64 {
    bleu + 0.5 * (inform + success)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub avg_len: f64,
    pub uniq_words: usize,
    pub uniq_3grams: usize,
}

pub fn diversity(responses: &[String]) -> Result<Diversity> {
    if responses.is_empty() {
        return Err(Error::Eval("diversity of an empty response set".into()));
    }
    let mut words = BTreeSet::new();
    let mut trigrams = BTreeSet::new();
    let mut total = 0usize;
    for r in responses {
        let toks = tokenize(r);
        total += toks.len();
        for w in toks.windows(3) {
            trigrams.insert(w.to_vec());
        }
        words.extend(toks);
    }
    Ok(Diversity {
        avg_len: total as f64 / responses.len() as f64,
        uniq_words: words.len(),
        uniq_3grams: trigrams.len(),
    })
}

fn contains_phrase(tokens: &[String], phrase: &str) -> bool {
    let p = tokenize(phrase);
    !p.is_empty() && tokens.windows(p.len()).any(|w| w == p.as_slice())
}

fn entity_placeholders(schema: Option<&Schema>, domain: &str) -> Vec<String> {
    match schema.and_then(|s| s.domain(domain)) {
        Some(d) => vec![d.entity_placeholder.clone()],
        None => DEFAULT_ENTITY_PLACEHOLDERS.iter().map(|s| s.to_string()).collect(),
    }
}

/// `(inform, success)` for one dialog given its generated system turns.
pub fn inform_success(dialog: &Dialog, responses: &[String], schema: Option<&Schema>) -> Result<(bool, bool)> {
    let goal = dialog
        .goal
        .as_ref()
        .ok_or_else(|| Error::Eval(format!("dialog {} has no goal annotation", dialog.id)))?;
    let toks: Vec<Vec<String>> = responses.iter().map(|r| tokenize(r)).collect();
    let any_has = |phrase: &str| toks.iter().any(|t| contains_phrase(t, phrase));

    let mut domains: BTreeSet<&str> = goal.constraints.keys().map(String::as_str).collect();
    domains.extend(goal.requested.keys().map(String::as_str));

    let entity = domains
        .iter()
        .all(|d| entity_placeholders(schema, d).iter().any(|p| any_has(p)));
    let constraints_acked = goal
        .constraints
        .values()
        .flat_map(|slots| slots.iter())
        .all(|(slot, value)| any_has(&placeholder(slot)) || any_has(value));
    let inform = !domains.is_empty() && entity && constraints_acked;
    let requested = goal
        .requested
        .values()
        .flat_map(|s| s.iter())
        .all(|slot| any_has(&placeholder(slot)));
    Ok((inform, inform && requested))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogEval {
    pub dialog_id: String,
    pub inform: bool,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub inform_rate: f64,
    pub success_rate: f64,
    pub combined: f64,
    pub avg_len: f64,
    pub uniq_words: usize,
    pub uniq_3grams: usize,
    pub per_dialog: Vec<DialogEval>,
}

/// Scores generated system turns (one list per dialog, one string per turn)
/// against the reference dialogs.
pub fn evaluate(dialogs: &[&Dialog], generated: &[Vec<String>], schema: Option<&Schema>) -> Result<EvalReport> {
    if dialogs.is_empty() {
        return Err(Error::Eval("no dialogs to evaluate".into()));
    }
    if dialogs.len() != generated.len() {
        return Err(Error::Eval(format!(
            "{} dialogs but {} generated transcripts",
            dialogs.len(),
            generated.len()
        )));
    }
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for (d, g) in dialogs.iter().zip(generated) {
        if d.turns.len() != g.len() {
            return Err(Error::Eval(format!(
                "dialog {}: {} turns but {} responses",
                d.id,
                d.turns.len(),
                g.len()
            )));
        }
        hyps.extend(g.iter().cloned());
        refs.extend(d.turns.iter().map(|t| t.system.clone()));
    }
    let per_dialog = par::map_range(dialogs.len(), |i| {
        inform_success(dialogs[i], &generated[i], schema).map(|(inform, success)| DialogEval {
            dialog_id: dialogs[i].id.clone(),
            inform,
            success,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = per_dialog.len() as f64;
    let inform_rate = 100.0 * per_dialog.iter().filter(|d| d.inform).count() as f64 / n;
    let success_rate = 100.0 * per_dialog.iter().filter(|d| d.success).count() as f64 / n;
    let b = bleu_text(&hyps, &refs)?;
    let div = diversity(&hyps)?;
    Ok(EvalReport {
        bleu: b,
        inform_rate,
        success_rate,
        combined: combined(b, inform_rate, success_rate),
        avg_len: div.avg_len,
        uniq_words: div.uniq_words,
        uniq_3grams: div.uniq_3grams,
        per_dialog,
    })
}

/// Text table with one row per model.
pub fn render_table(rows: &[(String, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>6}  {:>6}  {:>7}  {:>8}  {:>8}  {:>12}  {:>14}",
        "Model", "BLEU", "Inform", "Success", "Combined", "Av. len.", "#uniq. words", "#uniq. 3-grams"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>6.2}  {:>6.1}  {:>7.1}  {:>8.2}  {:>8.2}  {:>12}  {:>14}",
            name, r.bleu, r.inform_rate, r.success_rate, r.combined, r.avg_len, r.uniq_words, r.uniq_3grams
        );
    }
    s
}
