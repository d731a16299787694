//! Acceptance suite. Runs criteria 1-8 in order and prints one PASS/FAIL
//! line each. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --release --test acceptance -- 1 4 8`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use ctxprompt::annotation::{reported_distribution, Permutation, ReplayFixture};
use ctxprompt::autodiff::Graph;
use ctxprompt::checkpoint::backbone_bytes;
use ctxprompt::data::{synthesize_corpus, Schema, Split};
use ctxprompt::eval::{bleu_text, combined, diversity, inform_success};
use ctxprompt::experiment::{pretrain_on_corpus, respond, run_strategy, DEFAULT_MAX_NEW_TOKENS};
use ctxprompt::gradcheck::{check_gradients, GradCheckReport, DEFAULT_STEP};
use ctxprompt::model::BACKBONE_PREFIX;
use ctxprompt::params::ParamStore;
use ctxprompt::prompt::PROMPT_PREFIX;
use ctxprompt::tensor::Tensor;
use ctxprompt::train::{batch_gradients, loss, prepare_examples, split_examples, train, PromptConfig, TrainConfig};
use ctxprompt::{Backbone, ModelConfig, NodeId, PrefixMode, PromptEncoder, Strategy};
use rand::seq::SliceRandom;
use rand::Rng;

use common::{random_example, rng, synth, tiny_config};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn combined_scores() -> Outcome {
    let rows = [
        ("prefix", 19.19, 54.7, 48.0, 70.54),
        ("prefix with state", 19.36, 51.8, 47.0, 68.76),
        ("contextual", 19.16, 58.1, 50.5, 73.46),
        ("contextual with state", 17.94, 77.2, 68.8, 90.94),
    ];
    let mut worst: f64 = 0.0;
    for (name, b, i, s, want) in rows {
        let got = combined(b, i, s);
        let diff = (got - want).abs();
        ensure(diff < 1e-6, || format!("{name}: {got} vs {want}"))?;
        worst = worst.max(diff);
    }
    Ok(format!("4 rows, max |diff| {worst:.1e}"))
}

// ---------------------------------------------------------------- 2

const GRAD_TOL: f64 = 1e-4;

fn random_tensor(r: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| r.gen_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero so relu never sits on its kink.
fn off_kink(r: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols)
            .map(|_| {
                let m = r.gen_range(0.1..1.5);
                if r.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .unwrap()
}

/// Checks one op: `build` maps the parameter nodes (in store order) to an
/// output, which is contracted with a fixed random weight into a scalar.
fn op_check<F>(name: &str, params: ParamStore, build: F) -> Result<GradCheckReport, String>
where
    F: for<'a> Fn(&mut Graph<'a>, &[NodeId]) -> ctxprompt::Result<NodeId>,
{
    let scalar =
        |p: &ParamStore, weight: Option<&Tensor>| -> ctxprompt::Result<(f64, Option<Tensor>, ctxprompt::Gradients)> {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = p.iter().map(|(n, t)| g.param(n, t, true)).collect();
            let out = build(&mut g, &ids)?;
            let shape = g.value(out).shape().to_vec();
            let (loss, w) = if g.value(out).is_scalar() {
                (out, None)
            } else {
                let w = match weight {
                    Some(w) => w.clone(),
                    None => {
                        let mut r = rng(17);
                        let n: usize = shape.iter().product();
                        Tensor::new(shape.clone(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
                    }
                };
                let wn = g.constant(w.clone());
                let prod = g.mul(out, wn)?;
                (g.sum(prod), Some(w))
            };
            let grads = if weight.is_none() {
                g.backward(loss)?
            } else {
                Default::default()
            };
            Ok((g.value(loss).item(), w, grads))
        };
    let (_, weight, grads) = scalar(&params, None).map_err(e2s)?;
    let report = check_gradients(
        &params,
        &grads,
        "",
        |p| scalar(p, Some(weight.as_ref().unwrap_or(&Tensor::scalar(1.0)))).map(|x| x.0),
        DEFAULT_STEP,
        64,
        3,
    )
    .map_err(e2s)?;
    ensure(report.passes(GRAD_TOL), || format!("{name}: {:?}", report))?;
    Ok(report)
}

fn store(items: Vec<(&str, Tensor)>) -> ParamStore {
    let mut p = ParamStore::new();
    for (n, t) in items {
        p.insert(n, t);
    }
    p
}

fn gradient_suite() -> Outcome {
    let mut r = rng(2);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut tally = |rep: GradCheckReport| {
        checked += rep.checked;
        worst = worst.max(rep.max_rel_error);
    };
    // names sort as a < b < c in the store, matching the node order below
    tally(op_check(
        "matmul",
        store(vec![
            ("a", random_tensor(&mut r, 3, 4)),
            ("b", random_tensor(&mut r, 4, 2)),
        ]),
        |g, x| g.matmul(x[0], x[1]),
    )?);
    tally(op_check(
        "transpose",
        store(vec![("a", random_tensor(&mut r, 3, 4))]),
        |g, x| g.transpose(x[0]),
    )?);
    tally(op_check(
        "add",
        store(vec![
            ("a", random_tensor(&mut r, 3, 4)),
            ("b", random_tensor(&mut r, 3, 4)),
        ]),
        |g, x| g.add(x[0], x[1]),
    )?);
    tally(op_check(
        "add broadcast",
        store(vec![
            ("a", random_tensor(&mut r, 3, 4)),
            ("b", random_tensor(&mut r, 1, 4)),
        ]),
        |g, x| g.add(x[0], x[1]),
    )?);
    tally(op_check(
        "mul",
        store(vec![
            ("a", random_tensor(&mut r, 3, 4)),
            ("b", random_tensor(&mut r, 3, 4)),
        ]),
        |g, x| g.mul(x[0], x[1]),
    )?);
    tally(op_check(
        "mul self",
        store(vec![("a", random_tensor(&mut r, 2, 3))]),
        |g, x| g.mul(x[0], x[0]),
    )?);
    tally(op_check(
        "scale",
        store(vec![("a", random_tensor(&mut r, 3, 4))]),
        |g, x| Ok(g.scale(x[0], -0.7)),
    )?);
    tally(op_check("relu", store(vec![("a", off_kink(&mut r, 3, 4))]), |g, x| {
        Ok(g.relu(x[0]))
    })?);
    tally(op_check(
        "tanh",
        store(vec![("a", random_tensor(&mut r, 3, 4))]),
        |g, x| Ok(g.tanh(x[0])),
    )?);
    tally(op_check(
        "softmax_rows",
        store(vec![("a", random_tensor(&mut r, 3, 5))]),
        |g, x| g.softmax_rows(x[0]),
    )?);
    tally(op_check(
        "layernorm_rows",
        store(vec![
            ("a", random_tensor(&mut r, 3, 6)),
            ("b", random_tensor(&mut r, 1, 6)),
            ("c", random_tensor(&mut r, 1, 6)),
        ]),
        |g, x| g.layernorm_rows(x[0], x[1], x[2]),
    )?);
    tally(op_check(
        "embedding_gather",
        store(vec![("a", random_tensor(&mut r, 5, 3))]),
        |g, x| g.embedding_gather(x[0], &[0, 2, 2, 4, 2]),
    )?);
    tally(op_check(
        "concat_rows",
        store(vec![
            ("a", random_tensor(&mut r, 2, 3)),
            ("b", random_tensor(&mut r, 1, 3)),
        ]),
        |g, x| g.concat_rows(&[x[0], x[1], x[0]]),
    )?);
    tally(op_check(
        "concat_cols",
        store(vec![
            ("a", random_tensor(&mut r, 3, 2)),
            ("b", random_tensor(&mut r, 3, 1)),
        ]),
        |g, x| g.concat_cols(&[x[1], x[0]]),
    )?);
    tally(op_check(
        "slice_rows",
        store(vec![("a", random_tensor(&mut r, 4, 3))]),
        |g, x| g.slice_rows(x[0], 1, 3),
    )?);
    tally(op_check(
        "slice_cols",
        store(vec![("a", random_tensor(&mut r, 3, 5))]),
        |g, x| g.slice_cols(x[0], 2, 4),
    )?);
    tally(op_check(
        "reshape",
        store(vec![("a", random_tensor(&mut r, 3, 4))]),
        |g, x| g.reshape(x[0], &[2, 6]),
    )?);
    tally(op_check(
        "mean_rows",
        store(vec![("a", random_tensor(&mut r, 4, 3))]),
        |g, x| g.mean_rows(x[0]),
    )?);
    tally(op_check(
        "sum",
        store(vec![("a", random_tensor(&mut r, 3, 4))]),
        |g, x| Ok(g.sum(x[0])),
    )?);
    tally(op_check(
        "cross_entropy_rows",
        store(vec![("a", random_tensor(&mut r, 4, 6))]),
        |g, x| g.cross_entropy_rows(x[0], &[5, 0, 3, 3]),
    )?);
    // a composite: attention-shaped chain
    tally(op_check(
        "attention chain",
        store(vec![
            ("a", random_tensor(&mut r, 3, 4)),
            ("b", random_tensor(&mut r, 4, 4)),
        ]),
        |g, x| {
            let q = g.matmul(x[0], x[1])?;
            let kt = g.transpose(x[0])?;
            let s = g.matmul(q, kt)?;
            let s = g.scale(s, 0.5);
            let p = g.softmax_rows(s)?;
            g.matmul(p, x[0])
        },
    )?);
    let ops = checked;

    // end to end: prefix -> frozen backbone -> token NLL
    let mut e2e = Vec::new();
    for mode in [PrefixMode::DeepKv, PrefixMode::Embedding] {
        let cfg = tiny_config(mode);
        let backbone = Backbone::init(cfg.clone(), 5).map_err(e2s)?;
        for s in Strategy::ALL {
            let prompt = PromptEncoder::new(s, &cfg, 6, 9).map_err(e2s)?;
            let mut r = rng(11);
            let batch: Vec<_> = (0..2)
                .map(|_| random_example(&mut r, &backbone, Some(&prompt)))
                .collect();
            let refs: Vec<_> = batch.iter().collect();
            let (_, grads) = batch_gradients(&refs, Some(&prompt), &backbone, false).map_err(e2s)?;
            ensure(grads.names().all(|n| n.starts_with(PROMPT_PREFIX)), || {
                format!("{s}: backbone leaf in prompt gradients")
            })?;
            let rep = check_gradients(
                &prompt.params,
                &grads,
                PROMPT_PREFIX,
                |p| {
                    let pe = PromptEncoder {
                        params: p.clone(),
                        ..prompt.clone()
                    };
                    loss(&batch, Some(&pe), &backbone)
                },
                DEFAULT_STEP,
                24,
                1,
            )
            .map_err(e2s)?;
            ensure(rep.passes(GRAD_TOL), || format!("end-to-end {mode:?} {s}: {rep:?}"))?;
            e2e.push(rep.max_rel_error);
            checked += rep.checked;
        }
        // backbone weights under a prefix, through every layer
        let prompt = PromptEncoder::new(Strategy::Prefix, &cfg, 6, 9).map_err(e2s)?;
        let mut r = rng(12);
        let batch: Vec<_> = (0..2)
            .map(|_| random_example(&mut r, &backbone, Some(&prompt)))
            .collect();
        let refs: Vec<_> = batch.iter().collect();
        let (_, grads) = batch_gradients(&refs, Some(&prompt), &backbone, true).map_err(e2s)?;
        let rep = check_gradients(
            &backbone.params,
            &grads,
            BACKBONE_PREFIX,
            |p| {
                let bb = Backbone {
                    config: cfg.clone(),
                    params: p.clone(),
                };
                loss(&batch, Some(&prompt), &bb)
            },
            DEFAULT_STEP,
            4,
            2,
        )
        .map_err(e2s)?;
        ensure(rep.passes(GRAD_TOL), || format!("backbone {mode:?}: {rep:?}"))?;
        e2e.push(rep.max_rel_error);
        checked += rep.checked;
    }
    worst = e2e.iter().fold(worst, |a, &b| a.max(b));
    Ok(format!(
        "{ops} op entries + {} end-to-end entries, max rel err {worst:.1e}",
        checked - ops
    ))
}

// ---------------------------------------------------------------- 3

fn freeze_invariant() -> Outcome {
    let base = ModelConfig {
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        prefix_len: 3,
        ..ModelConfig::default()
    };
    let (corpus, tok, cfg) = synth(4, 20, &base, false);
    let backbone = Backbone::init(cfg, 1).map_err(e2s)?;
    let before = backbone_bytes(&backbone, 1, tok.tokens()).map_err(e2s)?;
    let tc = TrainConfig {
        max_steps: 500,
        batch_size: 4,
        learning_rate: 1e-2,
        ..Default::default()
    };
    for s in Strategy::ALL {
        let init = PromptEncoder::new(s, &backbone.config, 16, 0).map_err(e2s)?;
        let (prompt, report) = train(
            &corpus,
            s,
            &backbone,
            &tok,
            &PromptConfig {
                d_hidden: 16,
                init_seed: 0,
            },
            &tc,
            &mut (),
        )
        .map_err(e2s)?;
        let after = backbone_bytes(&backbone, 1, tok.tokens()).map_err(e2s)?;
        ensure(after == before, || format!("{s}: serialized backbone changed"))?;
        ensure(report.phi_checksum_before == report.phi_checksum_after, || {
            format!("{s}: checksum changed")
        })?;
        ensure(report.losses.len() == 500, || {
            format!("{s}: {} steps", report.losses.len())
        })?;
        ensure(prompt.params.checksum() != init.params.checksum(), || {
            format!("{s}: prompt did not train")
        })?;
    }
    Ok(format!(
        "{} bytes identical after 500 steps x 4 strategies",
        before.len()
    ))
}

// ---------------------------------------------------------------- 4

fn parameter_parity() -> Outcome {
    let mut seen = Vec::new();
    for mode in [PrefixMode::DeepKv, PrefixMode::Embedding] {
        for (d_model, heads, layers, plen, d_hidden) in [(32, 4, 2, 4, 64), (16, 2, 1, 7, 5), (24, 3, 3, 1, 128)] {
            let cfg = ModelConfig {
                d_model,
                n_heads: heads,
                n_enc_layers: layers,
                n_dec_layers: layers,
                prefix_len: plen,
                prefix_mode: mode,
                ..ModelConfig::default()
            };
            let counts: Vec<usize> = Strategy::ALL
                .iter()
                .map(|&s| PromptEncoder::new(s, &cfg, d_hidden, 0).map(|p| p.count_trainable()))
                .collect::<Result<_, _>>()
                .map_err(e2s)?;
            ensure(counts.windows(2).all(|w| w[0] == w[1]), || {
                format!("{mode:?} d{d_model}: {counts:?}")
            })?;
            seen.push(counts[0]);
        }
    }
    Ok(format!("6 configs, counts {seen:?}"))
}

// ---------------------------------------------------------------- 5

fn overfit_oracle() -> Outcome {
    let (corpus, tok, cfg) = synth(1, 8, &ModelConfig::default(), true);
    let backbone = Backbone::init(cfg, 0).map_err(e2s)?;
    let pre = TrainConfig {
        max_steps: 400,
        batch_size: 16,
        learning_rate: 3e-3,
        ..Default::default()
    };
    let (backbone, _) = pretrain_on_corpus(&corpus, &tok, backbone, &pre, &mut ()).map_err(e2s)?;
    let tc = TrainConfig {
        max_steps: 1500,
        batch_size: 16,
        learning_rate: 5e-3,
        ..Default::default()
    };
    let examples = split_examples(&corpus, Split::Train);
    let mut summary = Vec::new();
    for s in Strategy::ALL {
        let (prompt, _) = train(&corpus, s, &backbone, &tok, &PromptConfig::default(), &tc, &mut ()).map_err(e2s)?;
        let prepared = prepare_examples(&examples, s, &tok, &backbone, &prompt).map_err(e2s)?;
        let l = loss(&prepared, Some(&prompt), &backbone).map_err(e2s)?;
        ensure(l < 0.05, || format!("{s}: loss {l:.4}"))?;
        for ex in &examples {
            let got = respond(&backbone, Some(&prompt), &tok, ex, DEFAULT_MAX_NEW_TOKENS).map_err(e2s)?;
            let want = tok.decode(&tok.encode(&ex.target));
            ensure(got == want, || {
                format!("{s} {} turn {}: {got:?} != {want:?}", ex.dialog_id, ex.turn)
            })?;
        }
        summary.push(format!("{s} {l:.4}"));
    }
    Ok(format!(
        "{} targets reproduced; loss {}",
        examples.len(),
        summary.join(", ")
    ))
}

// ---------------------------------------------------------------- 6

const DIRECTION_SEEDS: [u64; 3] = [1, 2, 3];

fn directional_claim() -> Outcome {
    let strategies = [Strategy::Prefix, Strategy::Cdp, Strategy::CdpDs];
    let mut success: BTreeMap<Strategy, Vec<f64>> = BTreeMap::new();
    for seed in DIRECTION_SEEDS {
        let (corpus, tok, cfg) = synth(seed, 500, &ModelConfig::default(), false);
        let domains: BTreeSet<&str> = corpus
            .dialogs
            .iter()
            .filter_map(|d| d.goal.as_ref())
            .flat_map(|g| g.constraints.keys().map(String::as_str))
            .collect();
        ensure(domains.len() == 2, || format!("corpus has domains {domains:?}"))?;
        let backbone = Backbone::init(cfg, seed).map_err(e2s)?;
        let pre = TrainConfig {
            max_steps: 1500,
            batch_size: 16,
            learning_rate: 3e-3,
            rng_seed: seed,
            ..Default::default()
        };
        let (backbone, _) = pretrain_on_corpus(&corpus, &tok, backbone, &pre, &mut ()).map_err(e2s)?;
        let tc = TrainConfig {
            max_steps: 4000,
            batch_size: 16,
            learning_rate: 3e-3,
            rng_seed: seed,
            ..Default::default()
        };
        let pc = PromptConfig {
            d_hidden: 128,
            init_seed: seed,
        };
        for s in strategies {
            let res = run_strategy(
                &corpus,
                &backbone,
                &tok,
                s,
                &pc,
                &tc,
                Split::Test,
                DEFAULT_MAX_NEW_TOKENS,
                &mut (),
            )
            .map_err(e2s)?;
            eprintln!(
                "    seed {seed} {s}: success {:.1} inform {:.1} bleu {:.2}",
                res.eval.success_rate, res.eval.inform_rate, res.eval.bleu
            );
            success.entry(s).or_default().push(res.eval.success_rate);
        }
    }
    let mean = |s: Strategy| success[&s].iter().sum::<f64>() / success[&s].len() as f64;
    let (p, c, cd) = (mean(Strategy::Prefix), mean(Strategy::Cdp), mean(Strategy::CdpDs));
    let line = format!("mean Success prefix {p:.1}, cdp {c:.1}, cdp_ds {cd:.1} over seeds {DIRECTION_SEEDS:?}");
    ensure(c - p >= 5.0, || format!("{line}: cdp - prefix = {:.1} < 5", c - p))?;
    ensure(cd >= c, || format!("{line}: cdp_ds < cdp"))?;
    Ok(line)
}

// ---------------------------------------------------------------- 7

fn metric_oracles() -> Outcome {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    // p = 5/6, 3/5, 1/4, 0/3 with the zero floored at 1e-9:
    // 100 * (5/6 * 3/5 * 1/4 * 1e-9)^(1/4) = 100 * (1.25e-10)^(1/4)
    let golden = [
        (
            s(&["the cat sat on the mat"]),
            s(&["the cat is on the mat"]),
            0.334370152488211,
        ),
        (
            s(&["hello [name] , how can i help ?"]),
            s(&["hello [name] , how can i help ?"]),
            100.0,
        ),
        // all precisions 1, brevity penalty exp(1 - 6/5)
        (
            s(&["the cat sat on the"]),
            s(&["the cat sat on the mat"]),
            81.87307530779819,
        ),
    ];
    for (h, r, want) in &golden {
        let got = bleu_text(h, r).map_err(e2s)?;
        ensure((got - want).abs() < 1e-9, || format!("BLEU {h:?}: {got} vs {want}"))?;
    }

    // diversity against a brute-force recount
    let words = ["a", "b", "c", "dog", "cat", "[name]", "the", "is", "on"];
    let mut r = rng(7);
    let responses: Vec<String> = (0..100)
        .map(|_| {
            let n = r.gen_range(0..9);
            (0..n)
                .map(|_| *words.choose(&mut r).unwrap())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let d = diversity(&responses).map_err(e2s)?;
    let mut total = 0;
    let mut uniq_words: Vec<&str> = Vec::new();
    let mut uniq_tri: Vec<(&str, &str, &str)> = Vec::new();
    for resp in &responses {
        let t: Vec<&str> = resp.split(' ').filter(|w| !w.is_empty()).collect();
        total += t.len();
        for w in &t {
            if !uniq_words.contains(w) {
                uniq_words.push(w);
            }
        }
        for i in 0..t.len().saturating_sub(2) {
            let tri = (t[i], t[i + 1], t[i + 2]);
            if !uniq_tri.contains(&tri) {
                uniq_tri.push(tri);
            }
        }
    }
    ensure((d.avg_len - total as f64 / 100.0).abs() < 1e-12, || {
        format!("avg_len {}", d.avg_len)
    })?;
    ensure(d.uniq_words == uniq_words.len(), || {
        format!("uniq words {} vs {}", d.uniq_words, uniq_words.len())
    })?;
    ensure(d.uniq_3grams == uniq_tri.len(), || {
        format!("uniq 3-grams {} vs {}", d.uniq_3grams, uniq_tri.len())
    })?;

    // success implies inform
    let schema = Schema::restaurant_train();
    let corpus = synthesize_corpus(9, 200, &schema).map_err(e2s)?;
    let pool: Vec<String> = corpus
        .dialogs
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| t.system.clone()))
        .collect();
    let vocab: Vec<String> = schema
        .placeholders()
        .into_iter()
        .chain(s(&["the", "a", "cheap", "north", "is"]))
        .collect();
    let (mut n_success, mut n_inform_only, mut n_neither) = (0, 0, 0);
    for i in 0..1000 {
        let dialog = corpus.dialogs.choose(&mut r).unwrap();
        let responses: Vec<String> = dialog
            .turns
            .iter()
            .map(|t| match (i % 4, r.gen_range(0..3)) {
                (0, _) => t.system.clone(),
                (_, 0) => t.system.clone(),
                (_, 1) => pool.choose(&mut r).unwrap().clone(),
                _ => (0..r.gen_range(1..6))
                    .map(|_| vocab.choose(&mut r).unwrap().as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
            })
            .collect();
        let (inform, success) = inform_success(dialog, &responses, Some(&schema)).map_err(e2s)?;
        ensure(!success || inform, || {
            format!("fixture {i}: success without inform in {}", dialog.id)
        })?;
        match (inform, success) {
            (_, true) => n_success += 1,
            (true, false) => n_inform_only += 1,
            _ => n_neither += 1,
        }
    }
    ensure(n_success > 0 && n_inform_only > 0 && n_neither > 0, || {
        format!("fixtures not varied: {n_success}/{n_inform_only}/{n_neither}")
    })?;
    Ok(format!(
        "3 BLEU constants; diversity recount ({} words, {} 3-grams); 1000 fixtures: {n_success} success, {n_inform_only} inform only, {n_neither} neither",
        d.uniq_words, d.uniq_3grams
    ))
}

// ---------------------------------------------------------------- 8

fn tally_replay() -> Outcome {
    let fixture = ReplayFixture::default();
    let store = fixture.store().map_err(e2s)?;
    let blinded = fixture
        .sessions
        .iter()
        .filter(|(a, _, _)| {
            store
                .permutation(a)
                .map(|p| *p != Permutation::identity(4))
                .unwrap_or(false)
        })
        .count();
    ensure(blinded > 0, || "every session has the identity permutation".into())?;
    let t = store.tally().map_err(e2s)?;
    let want = reported_distribution();
    ensure(t.turns == 728 && t.conversations == 100, || {
        format!("totals {} / {}", t.turns, t.conversations)
    })?;
    ensure(t.turn_ties == 596, || format!("turn ties {}", t.turn_ties))?;
    ensure(t.turn_wins == [12, 22, 33, 65], || {
        format!("turn wins {:?}", t.turn_wins)
    })?;
    ensure(t.conversation_ties == 37, || {
        format!("conversation ties {}", t.conversation_ties)
    })?;
    ensure(t.conversation_wins[2] + t.conversation_wins[3] == 53, || {
        format!("conversation wins {:?}", t.conversation_wins)
    })?;
    ensure(t.conversation_wins == want.conversation_wins, || {
        format!("conversation wins {:?}", t.conversation_wins)
    })?;
    ensure(t.is_conserved(), || "counts not conserved".into())?;
    ensure(t.turn_ties + t.turn_wins.iter().sum::<usize>() == 728, || {
        "turn sum".into()
    })?;
    ensure(
        t.conversation_ties + t.conversation_wins.iter().sum::<usize>() == 100,
        || "conversation sum".into(),
    )?;
    Ok(format!(
        "turns 728 (ties 596, wins {:?}); conversations 100 (ties 37, wins {:?}); {blinded}/{} sessions permuted",
        t.turn_wins,
        t.conversation_wins,
        fixture.sessions.len()
    ))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "combined-score reproduction", combined_scores),
        (2, "gradient suite", gradient_suite),
        (3, "freeze invariant", freeze_invariant),
        (4, "parameter parity", parameter_parity),
        (5, "overfit oracle", overfit_oracle),
        (6, "directional claim", directional_claim),
        (7, "metric oracles", metric_oracles),
        (8, "annotation tally replay", tally_replay),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
