//! `sqledit`: dataset analysis, training, evaluation, prediction and
//! gradient checking for the editing-based text-to-SQL model.

mod config;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use sqledit::autodiff::Graph;
use sqledit::corpus::{
    corpus_stats, load_interactions, load_schemas, tokenize_utterance, write_interactions, write_schemas,
    Interaction, SchemaMap,
};
use sqledit::edit_ops::{segment_report, turn_edit_stats};
use sqledit::embedding::EmbeddingProvider;
use sqledit::model::{decoded_query, Model, ModelConfig, PrevQueryMode};
use sqledit::synthetic::{synthetic_interactions, synthetic_schemas};
use sqledit::training::{evaluate, fit, gold_passthrough, gradient_check, Checkpoint};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "sqledit", version, about = "Editing-based context-dependent text-to-SQL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Corpus statistics: counts, averages and clause frequencies.
    Stats(Common),
    /// Per-turn edit statistics and segment counts of consecutive gold queries.
    AnalyzeEdits(Common),
    /// Train a model; writes latest.json, best.json and report.json to --out.
    Train(Common),
    /// Score a checkpoint on --dev-path.
    Eval(Common),
    /// Decode --dev-path, or read utterances from stdin with --interactive.
    Predict(Common),
    /// Finite-difference gradient check of the full model.
    Gradcheck(Common),
    /// Write the synthetic corpus (tables.json, train.json, dev.json) to --out.
    Synthetic(Common),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Mode {
    Gold,
    Predicted,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON object of flat dotted keys, e.g. {"train.model.hidden_size": 16}.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_path: Option<PathBuf>,
    #[arg(long)]
    dev_path: Option<PathBuf>,
    #[arg(long)]
    tables_path: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    editing: Option<Switch>,
    /// Evaluation threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    interactive: bool,
    /// Database for --interactive.
    #[arg(long)]
    db: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score gold queries as predictions (evaluator sanity hook).
    #[arg(long)]
    gold_as_prediction: bool,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

/// Usage errors exit with 2, everything else with 1.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<sqledit::Error> for Failure {
    fn from(e: sqledit::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `sqledit --help` for usage");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Outcome {
    let (name, args) = match &command {
        Command::Stats(a) => ("stats", a),
        Command::AnalyzeEdits(a) => ("analyze-edits", a),
        Command::Train(a) => ("train", a),
        Command::Eval(a) => ("eval", a),
        Command::Predict(a) => ("predict", a),
        Command::Gradcheck(a) => ("gradcheck", a),
        Command::Synthetic(a) => ("synthetic", a),
    };
    let cfg = resolve(name, args)?;
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    match command {
        Command::Stats(_) => cmd_stats(&cfg),
        Command::AnalyzeEdits(_) => cmd_analyze_edits(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Eval(a) => cmd_eval(&cfg, &a),
        Command::Predict(a) => cmd_predict(&cfg, &a),
        Command::Gradcheck(_) => cmd_gradcheck(&cfg),
        Command::Synthetic(_) => cmd_synthetic(&cfg),
    }
}

fn resolve(name: &str, a: &Common) -> Outcome<RunConfig> {
    let mut cfg = RunConfig::new(name);
    if let Some(path) = &a.config {
        if !path.exists() {
            return Err(usage(format!("config file {} does not exist", path.display())));
        }
        cfg.load_file(path).map_err(|e| usage(format!("{e:#}")))?;
    }
    if a.train_path.is_some() {
        cfg.paths.train = a.train_path.clone();
    }
    if a.dev_path.is_some() {
        cfg.paths.dev = a.dev_path.clone();
    }
    if a.tables_path.is_some() {
        cfg.paths.tables = a.tables_path.clone();
    }
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(mode) = a.mode {
        cfg.train.prev_query_mode = match mode {
            Mode::Gold => PrevQueryMode::Gold,
            Mode::Predicted => PrevQueryMode::Predicted,
        };
    }
    if let Some(e) = a.editing {
        cfg.train.model.editing = matches!(e, Switch::On);
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    cfg.verbosity = a.verbose;
    Ok(cfg)
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Outcome<&'a Path> {
    let path = path.as_deref().ok_or_else(|| usage(format!("{flag} is required")))?;
    if !path.exists() {
        return Err(usage(format!("{flag} {} does not exist", path.display())));
    }
    Ok(path)
}

fn optional<'a>(path: &'a Option<PathBuf>, flag: &str) -> Outcome<Option<&'a Path>> {
    match path {
        Some(_) => required(path, flag).map(Some),
        None => Ok(None),
    }
}

fn schemas(cfg: &RunConfig) -> Outcome<SchemaMap> {
    Ok(load_schemas(required(&cfg.paths.tables, "--tables-path")?)?)
}

/// Train and dev splits that were supplied, at least one required.
fn splits(cfg: &RunConfig, schemas: &SchemaMap) -> Outcome<Vec<(&'static str, Vec<Interaction>)>> {
    let mut out = Vec::new();
    if let Some(p) = optional(&cfg.paths.train, "--train-path")? {
        out.push(("train", load_interactions(p, schemas)?));
    }
    if let Some(p) = optional(&cfg.paths.dev, "--dev-path")? {
        out.push(("dev", load_interactions(p, schemas)?));
    }
    if out.is_empty() {
        return Err(usage("--train-path or --dev-path is required"));
    }
    Ok(out)
}

/// Writes `value` with the resolved config echoed alongside.
fn emit(cfg: &RunConfig, file: &str, value: &impl Serialize) -> Outcome {
    let doc = json!({ "config": cfg.flatten(), "result": value });
    let text = serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)? + "\n";
    match &cfg.out {
        Some(dir) => {
            let path = dir.join(file);
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_stats(cfg: &RunConfig) -> Outcome {
    let schemas = schemas(cfg)?;
    let all: Vec<Interaction> = splits(cfg, &schemas)?.into_iter().flat_map(|(_, s)| s).collect();
    let stats = corpus_stats(&all);
    eprintln!("interactions        {}", stats.num_interactions);
    eprintln!("questions           {}", stats.num_questions);
    eprintln!("databases           {}", stats.num_databases);
    eprintln!("avg turns           {:.2}", stats.avg_turns);
    eprintln!("avg question length {:.2}", stats.avg_question_length);
    eprintln!("question vocabulary {}", stats.question_vocab_size);
    for (k, v) in &stats.clause_frequencies {
        eprintln!("{k:<19} {v:.1}%");
    }
    emit(cfg, "stats.json", &stats)
}

fn cmd_analyze_edits(cfg: &RunConfig) -> Outcome {
    let schemas = schemas(cfg)?;
    let all: Vec<Interaction> = splits(cfg, &schemas)?.into_iter().flat_map(|(_, s)| s).collect();
    let turns = turn_edit_stats(&all);
    let segments = segment_report(all.iter().flat_map(|i| i.turns.iter().map(|t| &t.query)));
    eprintln!("turn  n      len    copied  inserted  copy-ops  insert-ops  delete-ops");
    for t in &turns {
        eprintln!(
            "{:<5} {:<6} {:<6.2} {:<7.2} {:<9.2} {:<9.2} {:<11.2} {:.2}",
            t.turn,
            t.sample_count,
            t.avg_query_length,
            t.avg_tokens_copied,
            t.avg_tokens_inserted,
            t.avg_copy_ops,
            t.avg_insert_ops,
            t.avg_delete_ops
        );
    }
    eprintln!("segments per query  {:.2}", segments.avg_segments_per_query);
    emit(cfg, "edits.json", &json!({ "turns": turns, "segments": segments }))
}

fn cmd_train(cfg: &RunConfig) -> Outcome {
    let schemas = schemas(cfg)?;
    let train = load_interactions(required(&cfg.paths.train, "--train-path")?, &schemas)?;
    let dev = match optional(&cfg.paths.dev, "--dev-path")? {
        Some(p) => load_interactions(p, &schemas)?,
        None => Vec::new(),
    };
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    let (model, report, timing) = fit(&cfg.train, &train, &dev, &schemas, cfg.out.as_deref())?;
    let provider = EmbeddingProvider::from_config(&cfg.train.provider)?;
    let train_eval = evaluate(&model, &provider, &schemas, &train, cfg.train.prev_query_mode, cfg.jobs)?;
    for e in &report.epochs {
        eprintln!(
            "epoch {:>3}  lr {:.6}  train loss {:.4}  dev loss {}",
            e.epoch,
            e.lr,
            e.train_loss,
            e.validation_loss.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
    }
    eprintln!(
        "train question match {:.4}  interaction match {:.4}",
        train_eval.report.question_match, train_eval.report.interaction_match
    );
    emit(
        cfg,
        "report.json",
        &json!({ "report": report, "train_evaluation": train_eval.report, "metadata": timing }),
    )
}

fn load_model(a: &Common) -> Outcome<(Model, EmbeddingProvider)> {
    let path = required(&a.checkpoint, "--checkpoint")?;
    let ckpt = Checkpoint::load(path)?;
    let model = ckpt.restore().with_context(|| format!("loading {}", path.display()))?;
    let provider = EmbeddingProvider::from_config(&ckpt.provider)?;
    Ok((model, provider))
}

fn cmd_eval(cfg: &RunConfig, a: &Common) -> Outcome {
    let schemas = schemas(cfg)?;
    let data = load_interactions(required(&cfg.paths.dev, "--dev-path")?, &schemas)?;
    if a.gold_as_prediction {
        let report = gold_passthrough(&data)?;
        eprintln!("question match {:.4}  interaction match {:.4}", report.question_match, report.interaction_match);
        return emit(cfg, "eval.json", &report);
    }
    let (model, provider) = load_model(a)?;
    let out = evaluate(&model, &provider, &schemas, &data, cfg.train.prev_query_mode, cfg.jobs)?;
    eprintln!(
        "question match {:.4}  interaction match {:.4}  truncated {}",
        out.report.question_match, out.report.interaction_match, out.truncated
    );
    emit(cfg, "eval.json", &out)
}

fn cmd_predict(cfg: &RunConfig, a: &Common) -> Outcome {
    let schemas = schemas(cfg)?;
    if a.interactive {
        let (model, provider) = load_model(a)?;
        return interactive(&model, &provider, &schemas, a.db.as_deref());
    }
    let data = load_interactions(required(&cfg.paths.dev, "--dev-path")?, &schemas)?;
    let (model, provider) = load_model(a)?;
    let out = evaluate(&model, &provider, &schemas, &data, cfg.train.prev_query_mode, cfg.jobs)?;
    emit(cfg, "predictions.json", &out.predictions)
}

/// Reads one utterance per line. `:reset` starts a new interaction; EOF or
/// `:quit` ends the session.
fn interactive(model: &Model, provider: &EmbeddingProvider, schemas: &SchemaMap, db: Option<&str>) -> Outcome {
    let available = || schemas.keys().cloned().collect::<Vec<_>>().join(", ");
    let db = db.ok_or_else(|| usage(format!("--interactive needs --db; available: {}", available())))?;
    let schema = schemas
        .get(db)
        .ok_or_else(|| Failure::Runtime(anyhow!("unknown database {db}; available: {}", available())))?;
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    let mut history: Vec<Vec<String>> = Vec::new();
    for line in stdin.lock().lines() {
        let line = line.map_err(anyhow::Error::from)?;
        let text = line.trim();
        match text {
            "" => continue,
            ":quit" => break,
            ":reset" => {
                history.clear();
                continue;
            }
            _ => {}
        }
        history.push(tokenize_utterance(text));
        let mut g = Graph::new(&model.store);
        let decoded = model.predict_interaction(&mut g, provider, schema, &history, None, PrevQueryMode::Predicted)?;
        let last = decoded.last().expect("one decoded turn per utterance");
        writeln!(stdout, "{}", decoded_query(db, last).render(schema)).map_err(anyhow::Error::from)?;
    }
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> Outcome {
    let config = ModelConfig {
        embedding_dim: 3,
        hidden_size: 2,
        editing: cfg.train.model.editing,
        use_interaction_state: cfg.train.model.use_interaction_state,
        turn_window: cfg.train.model.turn_window,
        max_decode_len: 10,
    };
    let (schemas, data) = match &cfg.paths.tables {
        Some(_) => {
            let s = schemas(cfg)?;
            let d = load_interactions(required(&cfg.paths.train, "--train-path")?, &s)?;
            (s, d)
        }
        None => {
            let s = synthetic_schemas();
            let d = synthetic_interactions(&s, 4, cfg.train.seed)?;
            (s, d)
        }
    };
    let data: Vec<Interaction> = data.into_iter().take(1).collect();
    let mut model = Model::new(config, 0.5, cfg.train.seed);
    let provider = EmbeddingProvider::random(3, cfg.train.seed);
    let report = gradient_check(&mut model, &provider, &schemas, &data, 1e-5)?;
    eprintln!(
        "checked {} scalars, max relative error {:.3e} at {}",
        report.checked, report.max_relative_error, report.worst_parameter
    );
    emit(cfg, "gradcheck.json", &report)?;
    if report.max_relative_error >= 1e-4 {
        return Err(Failure::Runtime(anyhow!(
            "max relative error {:.3e} exceeds 1e-4",
            report.max_relative_error
        )));
    }
    Ok(())
}

fn cmd_synthetic(cfg: &RunConfig) -> Outcome {
    let out = cfg.out.as_deref().ok_or_else(|| usage("--out is required"))?;
    let schemas = synthetic_schemas();
    let all = synthetic_interactions(&schemas, 30, cfg.train.seed)?;
    let (train, dev) = all.split_at(20);
    write_schemas(&out.join("tables.json"), &schemas)?;
    write_interactions(&out.join("train.json"), train, &schemas)?;
    write_interactions(&out.join("dev.json"), dev, &schemas)?;
    let summary: Value = json!({ "train": train.len(), "dev": dev.len(), "databases": schemas.len() });
    eprintln!("{summary}");
    Ok(())
}
