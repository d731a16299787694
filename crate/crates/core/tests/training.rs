mod common;

use ctxprompt::data::Split;
use ctxprompt::train::{
    batch_gradients, loss, prepare_examples, split_examples, train, train_prompt, JsonLinesLog, Optimizer,
    PromptConfig, TrainConfig,
};
use ctxprompt::{Backbone, Error, ModelConfig, PromptEncoder, Strategy};

use common::synth;

fn small() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        prefix_len: 2,
        ..ModelConfig::default()
    }
}

fn cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        max_steps: steps,
        batch_size: 4,
        learning_rate: 1e-2,
        ..Default::default()
    }
}

#[test]
fn same_seed_gives_identical_runs() {
    let (corpus, tok, mc) = synth(2, 12, &small(), false);
    let bb = Backbone::init(mc, 0).unwrap();
    let pc = PromptConfig {
        d_hidden: 8,
        init_seed: 4,
    };
    for s in Strategy::ALL {
        let mut log_a = JsonLinesLog::default();
        let mut log_b = JsonLinesLog::default();
        let (pa, ra) = train(&corpus, s, &bb, &tok, &pc, &cfg(20), &mut log_a).unwrap();
        let (pb, rb) = train(&corpus, s, &bb, &tok, &pc, &cfg(20), &mut log_b).unwrap();
        assert_eq!(ra.losses, rb.losses, "{s}");
        assert_eq!(pa, pb);
        assert_eq!(log_a.lines, log_b.lines);
        assert_eq!(log_a.lines.len(), 20);
        let mut other = cfg(20);
        other.rng_seed = 1;
        let (_, rc) = train(&corpus, s, &bb, &tok, &pc, &other, &mut ()).unwrap();
        assert_ne!(ra.losses, rc.losses, "{s}: data order ignored the seed");
    }
}

#[test]
fn training_lowers_the_loss() {
    let (corpus, tok, mc) = synth(2, 12, &small(), false);
    let bb = Backbone::init(mc, 0).unwrap();
    let pc = PromptConfig {
        d_hidden: 8,
        init_seed: 0,
    };
    let examples = split_examples(&corpus, Split::Train);
    let init = PromptEncoder::new(Strategy::Cdp, &bb.config, 8, 0).unwrap();
    let prepared = prepare_examples(&examples, Strategy::Cdp, &tok, &bb, &init).unwrap();
    let before = loss(&prepared, Some(&init), &bb).unwrap();
    let (trained, _) = train(&corpus, Strategy::Cdp, &bb, &tok, &pc, &cfg(60), &mut ()).unwrap();
    let after = loss(&prepared, Some(&trained), &bb).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn runaway_learning_rate_saturates_without_nan() {
    let (corpus, tok, mc) = synth(2, 12, &small(), false);
    let bb = Backbone::init(mc, 0).unwrap();
    let tc = TrainConfig {
        learning_rate: f64::MAX,
        optimizer: Optimizer::Sgd,
        gradient_clip_norm: 0.0,
        ..cfg(10)
    };
    let (p, report) = train(
        &corpus,
        Strategy::Cdp,
        &bb,
        &tok,
        &PromptConfig::default(),
        &tc,
        &mut (),
    )
    .unwrap();
    assert!(report.losses.iter().all(|l| l.is_finite()));
    assert!(p.params.get("w2").unwrap().data().iter().any(|w| w.abs() > 1e300));
}

#[test]
fn non_finite_loss_reports_the_step() {
    let (corpus, tok, mc) = synth(2, 12, &small(), false);
    let bb = Backbone::init(mc, 0).unwrap();
    let mut p = PromptEncoder::new(Strategy::Cdp, &bb.config, 8, 0).unwrap();
    let prepared = prepare_examples(&split_examples(&corpus, Split::Train), Strategy::Cdp, &tok, &bb, &p).unwrap();
    p.params.get_mut("b2").unwrap().data_mut()[0] = f64::NAN;
    let mut log = JsonLinesLog::default();
    let err = train_prompt(&bb, p, &prepared, &[], &cfg(5), &mut log).unwrap_err();
    match err {
        Error::Diverged { step, loss } => {
            assert_eq!(step, 1);
            assert!(!loss.is_finite());
        }
        other => panic!("expected divergence, got {other}"),
    }
    assert!(log.lines.is_empty());
}

#[test]
fn empty_batch_is_an_error() {
    let (_, _, mc) = synth(2, 3, &small(), false);
    let bb = Backbone::init(mc, 0).unwrap();
    assert!(matches!(loss(&[], None, &bb), Err(Error::EmptyInput(_))));
    assert!(batch_gradients(&[], None, &bb, false).is_err());
}

#[cfg(feature = "parallel")]
#[test]
fn gradients_do_not_depend_on_thread_count() {
    let (corpus, tok, mc) = synth(2, 12, &small(), false);
    let bb = Backbone::init(mc, 0).unwrap();
    let p = PromptEncoder::new(Strategy::CdpDs, &bb.config, 8, 0).unwrap();
    let prepared = prepare_examples(&split_examples(&corpus, Split::Train), Strategy::CdpDs, &tok, &bb, &p).unwrap();
    let batch: Vec<_> = prepared.iter().take(8).collect();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| batch_gradients(&batch, Some(&p), &bb, false).unwrap())
    };
    let (l1, g1) = run(1);
    let (l4, g4) = run(4);
    assert_eq!(l1.to_bits(), l4.to_bits());
    for (name, t) in g1.iter() {
        assert_eq!(t, g4.get(name).unwrap(), "{name}");
    }
}
