//! The staged experiment runner.
//!
//! Stage order per variant (everything evaluates on the code-mixed test
//! split, which never passes through transliteration or pseudo-labeling):
//!
//! - `cm`: train on the gold code-mixed set, evaluate.
//! - `tra`: transliterate the training set, label it (argmax
//!   pseudo-labels from a model trained on the gold set, or carried gold
//!   labels when `tra_gold_labels` is set), train on it, evaluate.
//! - `cmtra`: transliterate, pseudo-label, fuse with the gold set, train
//!   on the combination, evaluate.
//!
//! By default one model serves both roles: it is trained on the gold set,
//! labels the transliterated copy, and then continues training on the
//! fused data. With `separate_labeler` a dedicated labeler is trained and
//! the final model starts fresh.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use codemix_core::corpus::{
    load_split, to_tsv_with_origin, validate_labels, Dataset, Split,
};
use codemix_core::eval::{
    classification_report_json, classification_report_text, evaluate, heatmap_csv,
};
use codemix_core::model::{
    save_checkpoint, train, ClassifierModel, EpochStats, ModelConfig, Vocab,
};
use codemix_core::pseudo::{build_cm_tra, generate_pseudo_labels, PseudoLabelRun};
use codemix_core::rng::derive_seed;
use codemix_core::translit::{transliterate_dataset, GraphemeMapping};

use crate::{file_digest, sha256_hex, Digests, ExperimentConfig, PipelineError, Variant};

#[derive(Debug, Clone, Serialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

/// Everything needed to reproduce and audit one run. Written to
/// `manifest.json` whether the run succeeds or aborts.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub input_digests: Digests,
    pub translit_unmapped_chars: Option<usize>,
    pub stages_completed: Vec<String>,
    pub artifacts: Vec<String>,
    pub error: Option<StageFailure>,
}

/// Paths of the run's artifacts, returned for convenience.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub report_text: PathBuf,
    pub report_json: PathBuf,
    pub heatmap: PathBuf,
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
}

struct RunContext<'a> {
    cfg: &'a ExperimentConfig,
    manifest: RunManifest,
    history: Vec<(String, Vec<EpochStats>)>,
}

impl<'a> RunContext<'a> {
    fn artifact(&mut self, path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
        fs::write(path, bytes)?;
        self.manifest
            .artifacts
            .push(path.file_name().unwrap_or_default().to_string_lossy().into_owned());
        Ok(())
    }

    fn stage_done(&mut self, name: &str) {
        self.manifest.stages_completed.push(name.to_string());
    }
}

fn load_labeled(
    path: &Path,
    cfg: &ExperimentConfig,
    split: Split,
) -> Result<Dataset, PipelineError> {
    let ds = load_split(path, cfg.language, split, true)?;
    validate_labels(&ds).map_err(|e| PipelineError::Data(e.to_string()))?;
    Ok(ds)
}

fn mapping_for(cfg: &ExperimentConfig) -> Result<GraphemeMapping, PipelineError> {
    match &cfg.translit_table {
        Some(path) => Ok(GraphemeMapping::load(path, cfg.language)?),
        None => Ok(GraphemeMapping::builtin(cfg.language).clone()),
    }
}

fn union_vocab(a: &Dataset, b: &Dataset, min_freq: usize) -> Result<Vocab, PipelineError> {
    let texts: Vec<&str> = a
        .iter()
        .map(|s| s.text.as_str())
        .chain(b.iter().map(|s| s.text.as_str()))
        .collect();
    Ok(Vocab::from_texts(texts.iter().copied(), min_freq)?)
}

fn model_with_seed(
    cfg: &ExperimentConfig,
    vocab: Vocab,
    name: &str,
) -> Result<ClassifierModel, PipelineError> {
    let config = ModelConfig {
        seed: derive_seed(cfg.seed, name),
        num_classes: cfg.language.num_classes(),
        ..cfg.model
    };
    Ok(ClassifierModel::new(vocab, config, cfg.language)?)
}

fn train_phase(
    ctx: &mut RunContext,
    model: &mut ClassifierModel,
    data: &Dataset,
    dev: Option<&Dataset>,
    phase: &str,
) -> Result<(), PipelineError> {
    let train_cfg = codemix_core::model::TrainConfig {
        seed: derive_seed(ctx.cfg.seed, &format!("train-{phase}")),
        ..ctx.cfg.train
    };
    let stats = train(model, data, dev, &train_cfg)?;
    ctx.history.push((phase.to_string(), stats));
    Ok(())
}

#[derive(Serialize)]
struct HistoryLine<'a> {
    phase: &'a str,
    epoch: usize,
    train_loss: f64,
    train_acc: f64,
    dev_acc: Option<f64>,
}

fn write_history(ctx: &mut RunContext, path: &Path) -> Result<(), PipelineError> {
    let mut out = String::new();
    for (phase, stats) in &ctx.history {
        for e in stats {
            let line = HistoryLine {
                phase,
                epoch: e.epoch,
                train_loss: e.train_loss,
                train_acc: e.train_acc,
                dev_acc: e.dev_acc,
            };
            out.push_str(&serde_json::to_string(&line).expect("history serializes"));
            out.push('\n');
        }
    }
    ctx.artifact(path, out.as_bytes())
}

fn write_pseudo_run(
    ctx: &mut RunContext,
    path: &Path,
    run: &PseudoLabelRun,
) -> Result<(), PipelineError> {
    let mut json = serde_json::to_string_pretty(run).expect("run record serializes");
    json.push('\n');
    ctx.artifact(path, json.as_bytes())
}

fn stage<T>(
    name: &str,
    ctx: &mut RunContext,
    f: impl FnOnce(&mut RunContext) -> Result<T, PipelineError>,
) -> Result<T, (String, PipelineError)> {
    match f(ctx) {
        Ok(v) => {
            ctx.stage_done(name);
            Ok(v)
        }
        Err(e) => Err((name.to_string(), e)),
    }
}

/// Run the configured experiment end to end, writing all artifacts (and
/// the manifest, success or not) under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, PipelineError> {
    let mut cfg = cfg.clone();
    cfg.normalize();
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| PipelineError::Config(format!("creating {}: {e}", cfg.out_dir.display())))?;

    let mut input_digests = Digests::new();
    input_digests.insert("train".into(), file_digest(&cfg.train_path)?);
    if let Some(dev) = &cfg.dev_path {
        input_digests.insert("dev".into(), file_digest(dev)?);
    }
    input_digests.insert("test".into(), file_digest(&cfg.test_path)?);

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        config_hash: sha256_hex(&serde_json::to_vec(&cfg).expect("config serializes")),
        seed: cfg.seed,
        input_digests,
        translit_unmapped_chars: None,
        stages_completed: Vec::new(),
        artifacts: Vec::new(),
        error: None,
    };
    let mut ctx = RunContext {
        cfg: &cfg,
        manifest,
        history: Vec::new(),
    };

    let result = run_stages(&mut ctx);
    let manifest_path = cfg.out_dir.join("manifest.json");
    if let Err((stage, err)) = &result {
        ctx.manifest.error = Some(StageFailure {
            stage: stage.clone(),
            message: err.to_string(),
        });
    }
    let mut manifest_json =
        serde_json::to_string_pretty(&ctx.manifest).expect("manifest serializes");
    manifest_json.push('\n');
    fs::write(&manifest_path, manifest_json)?;

    match result {
        Ok(outcome) => Ok(outcome),
        Err((_, e)) => Err(e),
    }
}

fn run_stages(ctx: &mut RunContext) -> Result<RunOutcome, (String, PipelineError)> {
    let cfg = ctx.cfg;
    let out = cfg.out_dir.clone();

    let (train_ds, dev_ds, test_ds) = stage("load-data", ctx, |ctx| {
        let train_ds = load_labeled(&ctx.cfg.train_path, ctx.cfg, Split::Train)?;
        let dev_ds = match &ctx.cfg.dev_path {
            Some(p) => Some(load_labeled(p, ctx.cfg, Split::Dev)?),
            None => None,
        };
        let test_ds = load_labeled(&ctx.cfg.test_path, ctx.cfg, Split::Test)?;
        Ok((train_ds, dev_ds, test_ds))
    })?;

    // Transliteration (tra and cmtra only).
    let tra_ds = if cfg.variant != Variant::Cm {
        Some(stage("transliterate", ctx, |ctx| {
            let mapping = mapping_for(ctx.cfg)?;
            let keep_gold = ctx.cfg.variant == Variant::Tra && ctx.cfg.tra_gold_labels;
            let result = transliterate_dataset(&train_ds, &mapping, keep_gold)?;
            ctx.manifest.translit_unmapped_chars = Some(result.unmapped_chars);
            let path = ctx.cfg.out_dir.join("transliterated.tsv");
            ctx.artifact(&path, to_tsv_with_origin(&result.dataset).as_bytes())?;
            Ok(result.dataset)
        })?)
    } else {
        None
    };

    // Vocabulary covers every text the model will ever see in this run.
    let vocab = stage("vocab", ctx, |ctx| match &tra_ds {
        Some(tra) => union_vocab(&train_ds, tra, ctx.cfg.min_freq),
        None => union_vocab(&train_ds, &Dataset::new(ctx.cfg.language, Split::Unsplit), ctx.cfg.min_freq),
    })?;

    let dev = dev_ds.as_ref();
    let final_model = match cfg.variant {
        Variant::Cm => stage("train", ctx, |ctx| {
            let mut model = model_with_seed(ctx.cfg, vocab.clone(), "model")?;
            train_phase(ctx, &mut model, &train_ds, dev, "final")?;
            Ok(model)
        })?,
        Variant::Tra if cfg.tra_gold_labels => stage("train", ctx, |ctx| {
            let tra = tra_ds.as_ref().expect("tra variant transliterates");
            let mut model = model_with_seed(ctx.cfg, vocab.clone(), "model")?;
            train_phase(ctx, &mut model, tra, dev, "final")?;
            Ok(model)
        })?,
        Variant::Tra => {
            let mut labeler = stage("train-labeler", ctx, |ctx| {
                let mut model = model_with_seed(ctx.cfg, vocab.clone(), "model")?;
                train_phase(ctx, &mut model, &train_ds, dev, "labeler")?;
                Ok(model)
            })?;
            let pseudo = stage("pseudo-label", ctx, |ctx| {
                let tra = tra_ds.as_ref().expect("tra variant transliterates");
                let (pseudo, run) = generate_pseudo_labels(&labeler, tra, ctx.cfg.threshold)?;
                let path = ctx.cfg.out_dir.join("pseudo_run.json");
                write_pseudo_run(ctx, &path, &run)?;
                Ok(pseudo)
            })?;
            stage("train", ctx, |ctx| {
                if ctx.cfg.separate_labeler {
                    let mut model = model_with_seed(ctx.cfg, vocab.clone(), "final-model")?;
                    train_phase(ctx, &mut model, &pseudo, dev, "final")?;
                    Ok(model)
                } else {
                    train_phase(ctx, &mut labeler, &pseudo, dev, "final")?;
                    Ok(labeler)
                }
            })?
        }
        Variant::Cmtra => {
            let mut labeler = stage("train-labeler", ctx, |ctx| {
                let mut model = model_with_seed(ctx.cfg, vocab.clone(), "model")?;
                train_phase(ctx, &mut model, &train_ds, dev, "labeler")?;
                Ok(model)
            })?;
            let pseudo = stage("pseudo-label", ctx, |ctx| {
                let tra = tra_ds.as_ref().expect("cmtra variant transliterates");
                let (pseudo, run) = generate_pseudo_labels(&labeler, tra, ctx.cfg.threshold)?;
                let path = ctx.cfg.out_dir.join("pseudo_run.json");
                write_pseudo_run(ctx, &path, &run)?;
                Ok(pseudo)
            })?;
            let cmtra = stage("build-cmtra", ctx, |ctx| {
                let combined = build_cm_tra(&train_ds, &pseudo, ctx.cfg.seed)?;
                let path = ctx.cfg.out_dir.join("cmtra.tsv");
                ctx.artifact(&path, to_tsv_with_origin(&combined).as_bytes())?;
                Ok(combined)
            })?;
            stage("train", ctx, |ctx| {
                if ctx.cfg.separate_labeler {
                    let mut model = model_with_seed(ctx.cfg, vocab.clone(), "final-model")?;
                    train_phase(ctx, &mut model, &cmtra, dev, "final")?;
                    Ok(model)
                } else {
                    train_phase(ctx, &mut labeler, &cmtra, dev, "final")?;
                    Ok(labeler)
                }
            })?
        }
    };

    let checkpoint = out.join("model.ckpt");
    stage("checkpoint", ctx, |ctx| {
        save_checkpoint(&final_model, &checkpoint)?;
        ctx.manifest.artifacts.push("model.ckpt".into());
        let path = ctx.cfg.out_dir.join("history.jsonl");
        write_history(ctx, &path)
    })?;

    let (report_text, report_json, heatmap) = stage("evaluate", ctx, |ctx| {
        evaluate_into(ctx, &final_model, &test_ds)
    })?;

    Ok(RunOutcome {
        out_dir: out.clone(),
        report_text,
        report_json,
        heatmap,
        checkpoint,
        manifest: out.join("manifest.json"),
    })
}

fn evaluate_into(
    ctx: &mut RunContext,
    model: &ClassifierModel,
    test_ds: &Dataset,
) -> Result<(PathBuf, PathBuf, PathBuf), PipelineError> {
    let cfg = ctx.cfg;
    let texts: Vec<&str> = test_ds.iter().map(|s| s.text.as_str()).collect();
    let predictions = model.predict(&texts)?;
    let gold: Vec<_> = test_ds
        .iter()
        .enumerate()
        .map(|(index, s)| {
            s.label
                .ok_or(codemix_core::model::ModelError::UnlabeledSample { index })
        })
        .collect::<Result<_, _>>()?;
    let pred: Vec<_> = predictions.iter().map(|(l, _)| *l).collect();
    let (cm, report) = evaluate(&gold, &pred, cfg.language.label_set())?;

    let base = format!("report-{}-{}-{}", cfg.language, cfg.variant.name(), cfg.tag);
    let text_path = cfg.out_dir.join(format!("{base}.txt"));
    let json_path = cfg.out_dir.join(format!("{base}.json"));
    let heatmap_path = cfg
        .out_dir
        .join(format!("heatmap-{}-{}-{}.csv", cfg.language, cfg.variant.name(), cfg.tag));
    ctx.artifact(&text_path, classification_report_text(&report).as_bytes())?;
    ctx.artifact(&json_path, classification_report_json(&report).as_bytes())?;
    ctx.artifact(&heatmap_path, heatmap_csv(&cm).as_bytes())?;
    Ok((text_path, json_path, heatmap_path))
}

/// The standalone `train` stage: fit one model on the configured training
/// split (gold labels), score the dev split if present, and write the
/// checkpoint and history without evaluating on test.
pub fn run_training_only(cfg: &ExperimentConfig) -> Result<PathBuf, PipelineError> {
    let mut cfg = cfg.clone();
    cfg.normalize();
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| PipelineError::Config(format!("creating {}: {e}", cfg.out_dir.display())))?;
    let train_ds = load_labeled(&cfg.train_path, &cfg, Split::Train)?;
    let dev_ds = match &cfg.dev_path {
        Some(p) => Some(load_labeled(p, &cfg, Split::Dev)?),
        None => None,
    };
    let vocab = union_vocab(&train_ds, &Dataset::new(cfg.language, Split::Unsplit), cfg.min_freq)?;
    let mut model = model_with_seed(&cfg, vocab, "model")?;
    let train_cfg = codemix_core::model::TrainConfig {
        seed: derive_seed(cfg.seed, "train-final"),
        ..cfg.train
    };
    let stats = train(&mut model, &train_ds, dev_ds.as_ref(), &train_cfg)?;
    let checkpoint = cfg.out_dir.join("model.ckpt");
    save_checkpoint(&model, &checkpoint)?;
    let mut out = String::new();
    for e in &stats {
        let line = HistoryLine {
            phase: "final",
            epoch: e.epoch,
            train_loss: e.train_loss,
            train_acc: e.train_acc,
            dev_acc: e.dev_acc,
        };
        out.push_str(&serde_json::to_string(&line).expect("history serializes"));
        out.push('\n');
    }
    fs::write(cfg.out_dir.join("history.jsonl"), out)?;
    Ok(checkpoint)
}
