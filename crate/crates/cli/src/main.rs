use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use codemix_cli::{
    run_experiment, run_training_only, ExperimentConfig, Overrides, PipelineError, Variant,
};
use codemix_core::corpus::{
    class_distribution, load_split, load_tsv_with_origin, reference, to_tsv, to_tsv_with_origin,
    validate_labels, Language, Split,
};
use codemix_core::eval::{
    classification_report_json, classification_report_text, evaluate, heatmap_csv,
};
use codemix_core::model::load_checkpoint;
use codemix_core::pseudo::{build_cm_tra, generate_pseudo_labels};
use codemix_core::synth;
use codemix_core::translit::{transliterate_dataset, GraphemeMapping};

/// Offensive-language classification for code-mixed Dravidian text:
/// transliteration, from-scratch training, pseudo-labeling, and
/// evaluation, as one pipeline or as individual stages.
#[derive(Parser)]
#[command(name = "codemix", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_language)]
    language: Option<Language>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Pseudo-label confidence floor.
    #[arg(long)]
    threshold: Option<f64>,
    /// Grapheme table TSV overriding the built-in one.
    #[arg(long)]
    translit_table: Option<PathBuf>,
    /// Output directory overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment end to end.
    Run(ConfigArgs),
    /// Load a split, validate it, and print its class distribution.
    Prepare {
        #[arg(long, value_parser = parse_language)]
        language: Language,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_split, default_value = "train")]
        split: Split,
        /// Treat the file as unlabeled.
        #[arg(long)]
        unlabeled: bool,
    },
    /// Transliterate a TSV's texts into the native script.
    Transliterate {
        #[arg(long, value_parser = parse_language)]
        language: Language,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        translit_table: Option<PathBuf>,
        /// Carry gold labels into the output instead of dropping them.
        #[arg(long)]
        keep_labels: bool,
        /// Treat the input as unlabeled.
        #[arg(long)]
        unlabeled: bool,
    },
    /// Train a model on the configured training split and save the
    /// checkpoint plus history (no test evaluation).
    Train(ConfigArgs),
    /// Label a transliterated TSV with a trained model's predictions.
    PseudoLabel {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Origin-tagged TSV, as written by `transliterate`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the run record; defaults to `<output>.run.json`.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Merge a gold code-mixed TSV with a pseudo-labeled one and shuffle.
    BuildCmtra {
        #[arg(long, value_parser = parse_language)]
        language: Language,
        #[arg(long)]
        cm: PathBuf,
        #[arg(long)]
        pseudo: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Score a checkpoint on a labeled test TSV and write the reports.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "cm")]
        variant: Variant,
        #[arg(long, default_value = "scratch")]
        tag: String,
    },
    /// Generate synthetic stand-in splits with the published sizes and
    /// class distributions, or a small toy corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_language)]
        language: Option<Language>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Generate a toy corpus of this many rows instead of the
        /// full-size reference splits.
        #[arg(long)]
        toy: Option<usize>,
    },
}

fn parse_language(s: &str) -> Result<Language, String> {
    Language::parse(s).map_err(|e| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        "unsplit" => Ok(Split::Unsplit),
        _ => Err(format!("unknown split {s:?}")),
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    cfg.apply_overrides(&Overrides {
        language: args.language,
        variant: args.variant,
        seed: args.seed,
        epochs: args.epochs,
        batch_size: args.batch_size,
        threshold: args.threshold,
        translit_table: args.translit_table.clone(),
        out: args.out.clone(),
    });
    Ok(cfg)
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            let outcome = run_experiment(&cfg)?;
            println!("run complete: {}", outcome.out_dir.display());
            println!("report: {}", outcome.report_text.display());
            Ok(())
        }
        Command::Prepare {
            language,
            input,
            split,
            unlabeled,
        } => {
            let ds = load_split(&input, language, split, !unlabeled)?;
            println!("{}: {} records", input.display(), ds.len());
            if !unlabeled {
                validate_labels(&ds).map_err(|e| PipelineError::Data(e.to_string()))?;
                let dist = class_distribution(&ds)?;
                for (label, count) in &dist {
                    println!("  {:<40} {count}", label.canonical());
                }
            }
            for warning in reference::check_dataset(&ds) {
                println!("warning: {warning}");
            }
            Ok(())
        }
        Command::Transliterate {
            language,
            input,
            output,
            translit_table,
            keep_labels,
            unlabeled,
        } => {
            let mapping = match translit_table {
                Some(path) => GraphemeMapping::load(path, language)?,
                None => GraphemeMapping::builtin(language).clone(),
            };
            let ds = load_split(&input, language, Split::Unsplit, !unlabeled)?;
            let result = transliterate_dataset(&ds, &mapping, keep_labels)?;
            std::fs::write(&output, to_tsv_with_origin(&result.dataset))?;
            println!(
                "{} rows transliterated, {} unmapped Latin letters passed through",
                result.dataset.len(),
                result.unmapped_chars
            );
            Ok(())
        }
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            let checkpoint = run_training_only(&cfg)?;
            println!("checkpoint: {}", checkpoint.display());
            Ok(())
        }
        Command::PseudoLabel {
            checkpoint,
            input,
            output,
            record,
            threshold,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let ds = load_tsv_with_origin(&input, model.language, Split::Train)?;
            let (labeled, run) = generate_pseudo_labels(&model, &ds, threshold)?;
            std::fs::write(&output, to_tsv_with_origin(&labeled))?;
            let record = record.unwrap_or_else(|| {
                let mut p = output.clone().into_os_string();
                p.push(".run.json");
                PathBuf::from(p)
            });
            let mut json = serde_json::to_string_pretty(&run)
                .map_err(|e| PipelineError::Data(format!("run record: {e}")))?;
            json.push('\n');
            std::fs::write(&record, json)?;
            println!("labeled {}, skipped {}", run.labeled, run.skipped);
            Ok(())
        }
        Command::BuildCmtra {
            language,
            cm,
            pseudo,
            output,
            seed,
        } => {
            let cm_ds = load_split(&cm, language, Split::Train, true)?;
            let pseudo_ds = load_tsv_with_origin(&pseudo, language, Split::Train)?;
            let combined = build_cm_tra(&cm_ds, &pseudo_ds, seed)?;
            std::fs::write(&output, to_tsv_with_origin(&combined))?;
            println!("{} combined rows", combined.len());
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            test,
            out,
            variant,
            tag,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let ds = load_split(&test, model.language, Split::Test, true)?;
            let texts: Vec<&str> = ds.iter().map(|s| s.text.as_str()).collect();
            let predictions = model.predict(&texts)?;
            let gold: Vec<_> = ds.iter().map(|s| s.label.expect("labeled test split")).collect();
            let pred: Vec<_> = predictions.iter().map(|(l, _)| *l).collect();
            let (cm, report) = evaluate(&gold, &pred, model.language.label_set())?;
            std::fs::create_dir_all(&out)?;
            let base = format!("report-{}-{}-{}", model.language, variant.name(), tag);
            std::fs::write(out.join(format!("{base}.txt")), classification_report_text(&report))?;
            std::fs::write(out.join(format!("{base}.json")), classification_report_json(&report))?;
            std::fs::write(
                out.join(format!("heatmap-{}-{}-{}.csv", model.language, variant.name(), tag)),
                heatmap_csv(&cm),
            )?;
            print!("{}", classification_report_text(&report));
            Ok(())
        }
        Command::GenData {
            out,
            language,
            seed,
            toy,
        } => {
            std::fs::create_dir_all(&out)?;
            let languages: Vec<Language> = match language {
                Some(l) => vec![l],
                None => Language::ALL.to_vec(),
            };
            for lang in languages {
                if let Some(n) = toy {
                    let ds = synth::toy_labeled(lang, n, seed);
                    let path = out.join(format!("{lang}-toy.tsv"));
                    std::fs::write(&path, to_tsv(&ds))?;
                    println!("wrote {} ({} rows)", path.display(), ds.len());
                } else {
                    for split in [Split::Train, Split::Dev, Split::Test] {
                        let ds = synth::reference_split(lang, split, seed);
                        let path = out.join(format!("{lang}-{}.tsv", split.name()));
                        std::fs::write(&path, to_tsv(&ds))?;
                        println!("wrote {} ({} rows)", path.display(), ds.len());
                    }
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are config errors (exit 1); --help/--version
            // print and exit cleanly.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
