use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ctxprompt::annotation::{reported_distribution, AnnotationStore, ReplayFixture, DEFAULT_AGENTS};
use ctxprompt::checkpoint::{load_backbone, load_prompt, save_backbone, save_prompt};
use ctxprompt::data::{load_corpus, synthesize_corpus, DialogCorpus, Schema, Split, Tokenizer};
use ctxprompt::eval::{evaluate, render_table, EvalReport};
use ctxprompt::experiment::{
    comparison_sets, evaluate_split, pretrain_on_corpus, sample_subset, GeneratedDialog, StrategyResult,
};
use ctxprompt::train::{fit_model_config, train, StepRecord, TrainObserver};
use ctxprompt::{Backbone, Strategy};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::{beside, RunManifest};
use crate::{Cli, CliError, Command};

/// Streams step records to a JSON-lines file.
struct FileLog {
    out: BufWriter<File>,
    failed: Option<std::io::Error>,
}

impl FileLog {
    fn create(path: &Path) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(Self {
            out: BufWriter::new(file),
            failed: None,
        })
    }

    fn write(&mut self, kind: &str, r: &StepRecord) {
        if self.failed.is_some() {
            return;
        }
        let line = serde_json::json!({ "kind": kind, "step": r.step, "loss": r.loss });
        if let Err(e) = writeln!(self.out, "{line}") {
            self.failed = Some(e);
        }
    }

    fn finish(mut self) -> Result<(), CliError> {
        if let Some(e) = self.failed.take() {
            return Err(e.into());
        }
        self.out.flush()?;
        Ok(())
    }
}

impl TrainObserver for FileLog {
    fn on_step(&mut self, r: &StepRecord) {
        if r.step % 50 == 0 {
            log::info!("step {} loss {:.4}", r.step, r.loss);
        }
        self.write("train", r);
    }

    fn on_eval(&mut self, r: &StepRecord) {
        log::info!("step {} dev loss {:.4}", r.step, r.loss);
        self.write("dev", r);
    }
}

fn read_corpus(path: &Path) -> Result<DialogCorpus, CliError> {
    if !path.exists() {
        return Err(CliError::Validation(format!("corpus not found: {}", path.display())));
    }
    Ok(load_corpus(path)?)
}

fn checkpoint_must_exist(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "{what} checkpoint not found at expected path {}",
            path.display()
        )))
    }
}

/// Loads a backbone checkpoint together with the tokenizer stored in it.
fn read_backbone(path: &Path) -> Result<(Backbone, Tokenizer, u64), CliError> {
    checkpoint_must_exist(path, "backbone")?;
    let (backbone, header) = load_backbone(path)?;
    if header.vocab.is_empty() {
        return Err(CliError::Validation(format!(
            "{} carries no vocabulary",
            path.display()
        )));
    }
    let tok = Tokenizer::from_tokens(header.vocab)?;
    Ok((backbone, tok, header.seed))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_generations(path: &Path) -> Result<Vec<GeneratedDialog>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read generations {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Prints to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, CliError> {
    s.parse()
        .map_err(|e: ctxprompt::Error| CliError::Validation(e.to_string()))
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    s.parse()
        .map_err(|e: ctxprompt::Error| CliError::Validation(e.to_string()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::SynthData { out, n_dialogs, seed } => {
            let mut synth = cfg.synth.clone();
            if let Some(n) = n_dialogs {
                synth.n_dialogs = n;
            }
            if let Some(s) = seed {
                synth.seed = s;
            }
            let corpus = synthesize_corpus(synth.seed, synth.n_dialogs, &Schema::restaurant_train())?;
            corpus.save(&out)?;
            let sizes = corpus.split_sizes();
            log::info!(
                "wrote {} dialogs (train {}, dev {}, test {}) to {}",
                corpus.dialogs.len(),
                sizes.train,
                sizes.dev,
                sizes.test,
                out.display()
            );
            RunManifest::new("synth-data", &synth)
                .output("corpus", &out)
                .seed("synth", synth.seed)
                .write(&beside(&out, ".manifest.json"))
        }
        Command::PretrainBackbone {
            corpus,
            out,
            init_seed,
            overrides,
        } => {
            let data = read_corpus(&corpus)?;
            let mut tcfg = cfg.pretrain.clone();
            overrides.apply(&mut tcfg);
            let tok = Tokenizer::build(&data);
            let mcfg = fit_model_config(&cfg.model, &data, &tok);
            let backbone = Backbone::init(mcfg, init_seed)?;
            let log_path = beside(&out, ".log.jsonl");
            let mut log = FileLog::create(&log_path)?;
            let (backbone, report) = pretrain_on_corpus(&data, &tok, backbone, &tcfg, &mut log)?;
            log.finish()?;
            save_backbone(&out, &backbone, init_seed, tok.tokens())?;
            log::info!(
                "final loss {:?}; backbone saved to {}",
                report.final_loss(),
                out.display()
            );
            RunManifest::new("pretrain-backbone", (&backbone.config, &tcfg))
                .input("corpus", &corpus)
                .output("backbone", &out)
                .output("log", &log_path)
                .seed("init", init_seed)
                .seed("data_order", tcfg.rng_seed)
                .write(&beside(&out, ".manifest.json"))
        }
        Command::Train {
            corpus,
            backbone,
            strategy,
            out,
            report,
            overrides,
        } => {
            let strategy = parse_strategy(&strategy)?;
            let data = read_corpus(&corpus)?;
            let (bb, tok, _) = read_backbone(&backbone)?;
            let mut tcfg = cfg.train.clone();
            overrides.apply(&mut tcfg);
            let log_path = beside(&out, ".log.jsonl");
            let mut log = FileLog::create(&log_path)?;
            let (prompt, train_report) = train(&data, strategy, &bb, &tok, &cfg.prompt, &tcfg, &mut log)?;
            log.finish()?;
            save_prompt(&out, &prompt, &bb.config)?;
            match &report {
                Some(p) => write_json(p, &train_report)?,
                None => emit(
                    &(serde_json::to_string_pretty(&train_report).map_err(|e| CliError::Runtime(e.to_string()))?
                        + "\n"),
                )?,
            }
            let mut m = RunManifest::new("train", (strategy, &cfg.prompt, &tcfg))
                .input("corpus", &corpus)
                .input("backbone", &backbone)
                .output("prompt", &out)
                .output("log", &log_path)
                .seed("prompt_init", cfg.prompt.init_seed)
                .seed("data_order", tcfg.rng_seed);
            if let Some(p) = &report {
                m = m.output("report", p);
            }
            m.write(&beside(&out, ".manifest.json"))
        }
        Command::Generate {
            corpus,
            backbone,
            prompt,
            split,
            out,
        } => {
            let split = parse_split(&split)?;
            let data = read_corpus(&corpus)?;
            let (bb, tok, _) = read_backbone(&backbone)?;
            let encoder = match &prompt {
                Some(p) => {
                    checkpoint_must_exist(p, "prompt")?;
                    Some(load_prompt(p)?.0)
                }
                None => None,
            };
            let (report, generations) =
                evaluate_split(&bb, encoder.as_ref(), &tok, &data, split, cfg.generate.max_new_tokens)?;
            write_json(&out, &generations)?;
            log::info!(
                "{} dialogs generated; BLEU {:.2} inform {:.1} success {:.1}",
                generations.len(),
                report.bleu,
                report.inform_rate,
                report.success_rate
            );
            let mut m = RunManifest::new("generate", &cfg.generate)
                .input("corpus", &corpus)
                .input("backbone", &backbone)
                .output("generations", &out);
            if let Some(p) = &prompt {
                m = m.input("prompt", p);
            }
            m.write(&beside(&out, ".manifest.json"))
        }
        Command::Evaluate {
            corpus,
            generations,
            out,
            table,
        } => {
            let data = read_corpus(&corpus)?;
            let gens = read_generations(&generations)?;
            let report = score(&data, &gens)?;
            let label = generations
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("model")
                .trim_end_matches(".generations")
                .to_string();
            if table {
                emit(&render_table(&[(label, &report)]))?;
            } else {
                emit(&(serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))? + "\n"))?;
            }
            if let Some(path) = &out {
                write_json(path, &report)?;
                RunManifest::new("evaluate", ())
                    .input("corpus", &corpus)
                    .input("generations", &generations)
                    .output("report", path)
                    .write(&beside(path, ".manifest.json"))?;
            }
            Ok(())
        }
        Command::Compare {
            corpus,
            backbone,
            out_dir,
            split,
            overrides,
        } => {
            let split = parse_split(&split)?;
            let data = read_corpus(&corpus)?;
            let (bb, tok, _) = read_backbone(&backbone)?;
            let mut tcfg = cfg.train.clone();
            overrides.apply(&mut tcfg);
            std::fs::create_dir_all(&out_dir)?;
            let mut manifest = RunManifest::new("compare", (&cfg.prompt, &tcfg, &cfg.generate))
                .input("corpus", &corpus)
                .input("backbone", &backbone)
                .seed("prompt_init", cfg.prompt.init_seed)
                .seed("data_order", tcfg.rng_seed);
            let mut rows = Vec::new();
            for strategy in Strategy::ALL {
                log::info!("training {strategy}");
                let key = strategy.key();
                let log_path = out_dir.join(format!("{key}.log.jsonl"));
                let mut log = FileLog::create(&log_path)?;
                let (prompt, train_report) = train(&data, strategy, &bb, &tok, &cfg.prompt, &tcfg, &mut log)?;
                log.finish()?;
                let ckpt_path = out_dir.join(format!("{key}.ckpt"));
                save_prompt(&ckpt_path, &prompt, &bb.config)?;
                let (eval, generations) =
                    evaluate_split(&bb, Some(&prompt), &tok, &data, split, cfg.generate.max_new_tokens)?;
                let gens_path = out_dir.join(format!("{key}.generations.json"));
                write_json(&gens_path, &generations)?;
                manifest = manifest
                    .output(&format!("{key}.prompt"), &ckpt_path)
                    .output(&format!("{key}.generations"), &gens_path)
                    .output(&format!("{key}.log"), &log_path);
                let result = StrategyResult {
                    strategy,
                    eval,
                    train: train_report,
                    trainable_params: prompt.count_trainable(),
                    generations,
                };
                rows.push(result);
            }
            let report: Vec<ReportRow> = rows
                .iter()
                .map(|r| ReportRow {
                    model: r.strategy.key().to_string(),
                    trainable_params: r.trainable_params,
                    final_train_loss: r.train.final_loss(),
                    eval: &r.eval,
                })
                .collect();
            let report_path = out_dir.join("report.json");
            write_json(&report_path, &report)?;
            let labelled: Vec<(String, &EvalReport)> =
                rows.iter().map(|r| (r.strategy.key().to_string(), &r.eval)).collect();
            let table = render_table(&labelled);
            let table_path = out_dir.join("table.txt");
            std::fs::write(&table_path, &table)?;
            emit(&table)?;
            manifest
                .output("report", &report_path)
                .output("table", &table_path)
                .write(&out_dir.join("manifest.json"))
        }
        Command::ServeAnnotation {
            corpus,
            generations_dir,
            store,
            addr,
            fraction,
            subset_seed,
        } => {
            let data = read_corpus(&corpus)?;
            let mut per_method = Vec::new();
            for s in Strategy::ALL {
                let path = generations_dir.join(format!("{}.generations.json", s.key()));
                if !path.exists() {
                    return Err(CliError::Validation(format!(
                        "generations for {s} not found at expected path {}",
                        path.display()
                    )));
                }
                per_method.push(read_generations(&path)?);
            }
            let ids: Vec<String> = per_method[0].iter().map(|g| g.dialog_id.clone()).collect();
            let subset = sample_subset(&ids, fraction, subset_seed)?;
            let sets = comparison_sets(&data, &subset, &per_method)?;
            let st = AnnotationStore::open(&store, sets, DEFAULT_AGENTS)?;
            log::info!("{} conversations to annotate; listening on {addr}", subset.len());
            RunManifest::new("serve-annotation", (fraction, addr.to_string()))
                .input("corpus", &corpus)
                .input("generations_dir", &generations_dir)
                .output("store", &store)
                .seed("subset", subset_seed)
                .write(&store.join("manifest.json"))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(ctxprompt_server::serve(addr, ctxprompt_server::shared(st)))?;
            Ok(())
        }
        Command::Tally {
            store,
            replay,
            export,
            out,
        } => {
            let st = if replay {
                let dist = reported_distribution();
                ReplayFixture::build(&dist, 0, 4)?.store()?
            } else {
                let dir: PathBuf = store.expect("clap requires --store without --replay");
                if !dir.join("log.jsonl").exists() && !dir.join("sets.json").exists() {
                    return Err(CliError::Validation(format!(
                        "no annotation store at {}",
                        dir.display()
                    )));
                }
                AnnotationStore::open_existing(&dir, DEFAULT_AGENTS)?
            };
            let tally = st.tally()?;
            let json = serde_json::to_string_pretty(&tally).map_err(|e| CliError::Runtime(e.to_string()))?;
            match &out {
                Some(p) => std::fs::write(p, json + "\n")?,
                None => emit(&(json + "\n"))?,
            }
            if let Some(p) = &export {
                std::fs::write(p, st.export_csv()?)?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ReportRow<'a> {
    model: String,
    trainable_params: usize,
    final_train_loss: Option<f64>,
    #[serde(flatten)]
    eval: &'a EvalReport,
}

fn score(data: &DialogCorpus, gens: &[GeneratedDialog]) -> Result<EvalReport, CliError> {
    let mut dialogs = Vec::with_capacity(gens.len());
    let mut responses = Vec::with_capacity(gens.len());
    for g in gens {
        let d = data
            .dialogs
            .iter()
            .find(|d| d.id == g.dialog_id)
            .ok_or_else(|| CliError::Validation(format!("dialog {} is not in the corpus", g.dialog_id)))?;
        dialogs.push(d);
        responses.push(g.responses.clone());
    }
    Ok(evaluate(&dialogs, &responses, data.schema.as_ref())?)
}
