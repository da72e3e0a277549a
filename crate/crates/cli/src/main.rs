//! `icdseq` — batch pipeline for the death-certificate coding engine:
//! synthesize data, train, predict, evaluate, cross-validate, and audit
//! gradients from one executable.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! failure.

mod appconfig;
mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use appconfig::{describe, FileConfig, TrainFlags};
use icdseq::check::gradient_report;
use icdseq::corpus::{build_code_vocab, build_vocab, load_corpus, write_corpus};
use icdseq::datasynth::{self, SynthConfig};
use icdseq::embeddings::{build_embedding_matrix, load_word2vec_text};
use icdseq::eval::{predict_corpus, predictions_to_records, score, MetricsReport, Prediction};
use icdseq::prior::{build_code_documents, fit_tfidf, load_dictionary};
use icdseq::train::{cross_validate, train, Checkpoint, TrainMeta};
use icdseq::{Rng, Seq2SeqModel};
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "icdseq", version, about = "ICD-10 line coding pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, loss trace, and manifest.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Diagnosis dictionary used to build the TF-IDF prior.
        #[arg(long)]
        dict: PathBuf,
        /// Pre-trained word2vec text embeddings (optional).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// key = value config file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Master seed; omitted → drawn from the clock and recorded.
        #[arg(long)]
        seed: Option<u64>,
        /// Ablation: drop the dictionary prior from the decoder context.
        #[arg(long)]
        no_prior: bool,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Decode a corpus with a trained checkpoint.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predictions file against gold labels.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Optional machine-readable JSON report.
        #[arg(long)]
        report_file: Option<PathBuf>,
    },
    /// K-fold cross-validation with fresh per-fold models.
    Cv {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_prior: bool,
        #[arg(long)]
        report_file: Option<PathBuf>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Generate a synthetic dictionary plus train/test corpus split.
    Synth {
        /// Named scale preset; currently `table2-mini`.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        lines: Option<usize>,
        #[arg(long)]
        codes: Option<usize>,
        #[arg(long)]
        abbreviation_prob: Option<f64>,
        #[arg(long)]
        misspelling_prob: Option<f64>,
        #[arg(long)]
        synonyms: Option<usize>,
        #[arg(long, default_value_t = 2.0 / 3.0)]
        train_fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run every primitive and full-model gradient check.
    Gradcheck {
        /// Random seeds per check.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints --help/--version through the error path too;
            // those are successes, not usage errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Data/format problems are exit 2; numerical failures (non-finite values,
/// shape violations inside the math) are exit 3.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<icdseq::Error>() {
            return match e {
                icdseq::Error::NonFinite { .. } | icdseq::Error::Shape { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn pick_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        // one scramble round so consecutive runs differ in high bits too
        let mut rng = Rng::new(nanos ^ std::process::id() as u64);
        rng.next_u64()
    })
}

fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    name.push_str(suffix);
    base.with_file_name(name)
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

fn load_pretrained(
    path: &Option<PathBuf>,
) -> Result<Option<(std::collections::HashMap<String, Vec<f64>>, usize)>> {
    match path {
        Some(p) => Ok(Some(load_word2vec_text(p)?)),
        None => Ok(None),
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train {
            corpus,
            dict,
            embeddings,
            config,
            out,
            seed,
            no_prior,
            flags,
        } => cmd_train(corpus, dict, embeddings, config, out, seed, no_prior, flags),
        Command::Predict { model, corpus, out } => cmd_predict(model, corpus, out),
        Command::Evaluate {
            pred,
            gold,
            report_file,
        } => cmd_evaluate(pred, gold, report_file),
        Command::Cv {
            corpus,
            dict,
            embeddings,
            config,
            folds,
            seed,
            no_prior,
            report_file,
            flags,
        } => cmd_cv(
            corpus,
            dict,
            embeddings,
            config,
            folds,
            seed,
            no_prior,
            report_file,
            flags,
        ),
        Command::Synth {
            preset,
            lines,
            codes,
            abbreviation_prob,
            misspelling_prob,
            synonyms,
            train_fraction,
            seed,
            out_dir,
        } => cmd_synth(
            preset,
            lines,
            codes,
            abbreviation_prob,
            misspelling_prob,
            synonyms,
            train_fraction,
            seed,
            out_dir,
        ),
        Command::Gradcheck { seeds } => cmd_gradcheck(seeds),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    corpus_path: PathBuf,
    dict_path: PathBuf,
    embeddings_path: Option<PathBuf>,
    config_path: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    no_prior: bool,
    flags: TrainFlags,
) -> Result<ExitCode> {
    let seed = pick_seed(seed);
    let mut manifest = RunManifest::new("train", seed);
    manifest.add_input(&corpus_path)?;
    manifest.add_input(&dict_path)?;
    if let Some(p) = &embeddings_path {
        manifest.add_input(p)?;
    }
    if let Some(p) = &config_path {
        manifest.add_input(p)?;
    }

    let file_cfg = load_file_config(&config_path)?;
    let (mut model_cfg, train_cfg) = appconfig::resolve(&file_cfg, &flags, seed)?;
    let records = load_corpus(&corpus_path)?;
    let dict = load_dictionary(&dict_path)?;
    let pretrained = load_pretrained(&embeddings_path)?;
    if let Some((_, dim)) = &pretrained {
        model_cfg.emb_dim = *dim;
    }

    let vocab = build_vocab(&records, train_cfg.min_count);
    let code_vocab = build_code_vocab(&records);
    let index = if no_prior {
        None
    } else {
        Some(fit_tfidf(&build_code_documents(&dict)))
    };
    let mut rng = Rng::new(seed);
    let emb = build_embedding_matrix(
        &vocab,
        pretrained.as_ref().map(|(m, _)| m),
        model_cfg.emb_dim,
        &mut rng,
    );
    let coverage = emb.coverage;
    let mut model = Seq2SeqModel::new(emb, vocab, code_vocab, index, model_cfg, &mut rng);

    let trace = train(&mut model, &records, &train_cfg)?;
    let final_loss = trace.last().copied().unwrap_or(0.0);
    let checkpoint = Checkpoint {
        model,
        meta: TrainMeta {
            epochs_completed: trace.len() as u32,
            final_loss,
            seed,
        },
    };
    checkpoint.save(&out)?;

    let trace_path = sibling(&out, ".loss.txt");
    let mut body = String::new();
    for (epoch, loss) in trace.iter().enumerate() {
        body.push_str(&format!("{}\t{}\n", epoch + 1, loss));
    }
    fs::write(&trace_path, body)
        .with_context(|| format!("writing loss trace {}", trace_path.display()))?;

    for (k, v) in describe(&checkpoint.model.config, &train_cfg) {
        manifest.config.insert(k, v);
    }
    manifest.set("context_width", checkpoint.model.context_dim());
    manifest.set("prior", !no_prior);
    manifest.set("embedding_coverage", coverage);
    manifest.add_output(&out);
    manifest.add_output(&trace_path);
    let manifest_path = manifest.write_next_to(&out)?;

    println!("seed: {seed}");
    println!(
        "trained {} epochs, final mean loss {:.6}",
        trace.len(),
        final_loss
    );
    println!("checkpoint: {}", out.display());
    println!("loss trace: {}", trace_path.display());
    println!("manifest:   {}", manifest_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(model_path: PathBuf, corpus_path: PathBuf, out: PathBuf) -> Result<ExitCode> {
    let checkpoint = Checkpoint::load(&model_path)?;
    let mut manifest = RunManifest::new("predict", checkpoint.meta.seed);
    manifest.add_input(&model_path)?;
    manifest.add_input(&corpus_path)?;

    let records = load_corpus(&corpus_path)?;
    let predictions = predict_corpus(&checkpoint.model, &records)?;
    let out_records = predictions_to_records(&predictions);
    write_corpus(&out_records, &out)?;

    manifest.set("lines", records.len());
    manifest.add_output(&out);
    manifest.write_next_to(&out)?;
    println!("wrote {} predicted lines to {}", out_records.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn print_metrics(label: &str, m: &MetricsReport) {
    println!(
        "{label:<10} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
        m.tp,
        m.fp,
        m.fn_,
        m.precision(),
        m.recall(),
        m.f_measure()
    );
}

fn metrics_json(m: &MetricsReport) -> serde_json::Value {
    serde_json::json!({
        "tp": m.tp,
        "fp": m.fp,
        "fn": m.fn_,
        "precision": m.precision(),
        "recall": m.recall(),
        "f_measure": m.f_measure(),
    })
}

fn write_report(path: &Path, value: &serde_json::Value) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing report {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("renaming report into place at {}", path.display()))?;
    Ok(())
}

fn cmd_evaluate(
    pred_path: PathBuf,
    gold_path: PathBuf,
    report_file: Option<PathBuf>,
) -> Result<ExitCode> {
    let pred_records = load_corpus(&pred_path)?;
    let golds = load_corpus(&gold_path)?;
    let predictions: Vec<Prediction> = pred_records
        .iter()
        .map(|r| Prediction {
            doc_id: r.doc_id.clone(),
            line_id: r.line_id,
            codes: r.gold_codes.clone(),
        })
        .collect();
    let metrics = score(&predictions, &golds)?;

    println!(
        "{:<10} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
        "", "tp", "fp", "fn", "precision", "recall", "f-measure"
    );
    print_metrics("overall", &metrics);

    if let Some(path) = &report_file {
        let mut manifest = RunManifest::new("evaluate", 0);
        manifest.add_input(&pred_path)?;
        manifest.add_input(&gold_path)?;
        write_report(path, &metrics_json(&metrics))?;
        manifest.add_output(path);
        manifest.write_next_to(path)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_cv(
    corpus_path: PathBuf,
    dict_path: PathBuf,
    embeddings_path: Option<PathBuf>,
    config_path: Option<PathBuf>,
    folds: usize,
    seed: Option<u64>,
    no_prior: bool,
    report_file: Option<PathBuf>,
    flags: TrainFlags,
) -> Result<ExitCode> {
    let seed = pick_seed(seed);
    let file_cfg = load_file_config(&config_path)?;
    let (mut model_cfg, train_cfg) = appconfig::resolve(&file_cfg, &flags, seed)?;
    let records = load_corpus(&corpus_path)?;
    let dict = load_dictionary(&dict_path)?;
    let pretrained = load_pretrained(&embeddings_path)?;
    if let Some((_, dim)) = &pretrained {
        model_cfg.emb_dim = *dim;
    }
    let index = if no_prior {
        None
    } else {
        Some(fit_tfidf(&build_code_documents(&dict)))
    };

    let result = cross_validate(
        &records,
        index.as_ref(),
        &model_cfg,
        &train_cfg,
        pretrained.as_ref().map(|(m, _)| m),
        folds,
    )?;

    println!("seed: {seed}");
    println!(
        "{:<10} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
        "fold", "tp", "fp", "fn", "precision", "recall", "f-measure"
    );
    for (i, fold) in result.per_fold.iter().enumerate() {
        print_metrics(&format!("{}", i + 1), fold);
    }
    println!(
        "{:<10} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
        "mean", "", "", "", result.mean_precision, result.mean_recall, result.mean_f
    );

    if let Some(path) = &report_file {
        let mut manifest = RunManifest::new("cv", seed);
        manifest.add_input(&corpus_path)?;
        manifest.add_input(&dict_path)?;
        for (k, v) in describe(&model_cfg, &train_cfg) {
            manifest.config.insert(k, v);
        }
        manifest.set("folds", folds);
        manifest.set("prior", !no_prior);
        let report = serde_json::json!({
            "seed": seed,
            "folds": result.per_fold.iter().map(metrics_json).collect::<Vec<_>>(),
            "mean_precision": result.mean_precision,
            "mean_recall": result.mean_recall,
            "mean_f": result.mean_f,
        });
        write_report(path, &report)?;
        manifest.add_output(path);
        manifest.write_next_to(path)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    preset: Option<String>,
    lines: Option<usize>,
    codes: Option<usize>,
    abbreviation_prob: Option<f64>,
    misspelling_prob: Option<f64>,
    synonyms: Option<usize>,
    train_fraction: f64,
    seed: Option<u64>,
    out_dir: PathBuf,
) -> Result<ExitCode> {
    let seed = pick_seed(seed);
    let mut cfg = match preset.as_deref() {
        None => SynthConfig {
            seed,
            ..SynthConfig::default()
        },
        Some("table2-mini") => SynthConfig::table2_mini(seed),
        Some(other) => anyhow::bail!("unknown preset {other:?} (expected table2-mini)"),
    };
    if let Some(v) = lines {
        cfg.n_lines = v;
    }
    if let Some(v) = codes {
        cfg.n_codes = v;
    }
    if let Some(v) = abbreviation_prob {
        cfg.abbreviation_prob = v;
    }
    if let Some(v) = misspelling_prob {
        cfg.misspelling_prob = v;
    }
    if let Some(v) = synonyms {
        cfg.synonyms_per_code = v;
    }

    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let (entries, _bank) = datasynth::generate_dictionary(&cfg);
    let records = datasynth::generate_corpus(&cfg, &entries);

    let dict_path = out_dir.join("dict.txt");
    let train_path = out_dir.join("train.txt");
    let test_path = out_dir.join("test.txt");
    datasynth::write_dict(&entries, &dict_path)?;
    let (n_train, n_test) =
        datasynth::write_split(&records, train_fraction, seed, &train_path, &test_path)?;

    let mut manifest = RunManifest::new("synth", seed);
    let mut cfg_map = BTreeMap::new();
    cfg_map.insert("n_lines".into(), cfg.n_lines.to_string());
    cfg_map.insert("n_codes".into(), cfg.n_codes.to_string());
    cfg_map.insert(
        "abbreviation_prob".into(),
        cfg.abbreviation_prob.to_string(),
    );
    cfg_map.insert("misspelling_prob".into(), cfg.misspelling_prob.to_string());
    cfg_map.insert("synonyms_per_code".into(), cfg.synonyms_per_code.to_string());
    cfg_map.insert("train_fraction".into(), train_fraction.to_string());
    manifest.config = cfg_map;
    manifest.add_output(&dict_path);
    manifest.add_output(&train_path);
    manifest.add_output(&test_path);
    manifest.write_next_to(&out_dir.join("synth"))?;

    println!("seed: {seed}");
    println!(
        "wrote {} dictionary phrases, {} train lines, {} test lines under {}",
        entries.len(),
        n_train,
        n_test,
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(seeds: u64) -> Result<ExitCode> {
    let lines = gradient_report(seeds);
    println!(
        "{:<28} {:>13} {:>10} {:>6}",
        "check", "max rel err", "threshold", "state"
    );
    let mut all_ok = true;
    for line in &lines {
        let ok = line.passed();
        all_ok &= ok;
        println!(
            "{:<28} {:>13.3e} {:>10.0e} {:>6}",
            line.name,
            line.max_rel_err,
            line.threshold,
            if ok { "pass" } else { "FAIL" }
        );
    }
    if all_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(3))
    }
}
