//! `factorcell` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
//! failure. Results go to stdout (or `--out`), diagnostics to stderr.

use std::collections::BTreeMap;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use factorcell::data::{load_jsonl, read_records, tokenize, DataConfig, Document};
use factorcell::eval::{
    classify_documents, log_likelihood_ratio, top_boosted_words, true_label,
    write_context_embeddings, write_ratios_csv,
};
use factorcell::model::load_checkpoint;
use factorcell::training::{MetricsLog, MetricsRow, ProgressSink};
use factorcell::{
    generate, perplexity, train, ContextValue, Corpus, Error, LabelSet, Model, RunConfig,
};

#[derive(Parser)]
#[command(name = "factorcell", version, about = "Context-adapted recurrent language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its checkpoint and metrics log.
    Train(TrainArgs),
    /// Perplexity of a corpus.
    Ppl(PplArgs),
    /// Generative classification of a labelled corpus.
    Classify(ClassifyArgs),
    /// Per-token log-likelihood ratio of a text under two labels.
    Llr(LlrArgs),
    /// Output words most boosted by a context.
    Boost(BoostArgs),
    /// Export context embeddings of the labels as CSV.
    Embed(EmbedArgs),
    /// Sample text under a context.
    Gen(GenArgs),
    /// Describe a checkpoint.
    Info(InfoArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics log path [default: <out>.metrics.tsv].
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip malformed corpus lines instead of failing.
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CorpusInput {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Truncation cap in tokens; 0 disables truncation.
    #[arg(long, default_value_t = DataConfig::default().max_tokens)]
    max_tokens: usize,
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct PplArgs {
    #[command(flatten)]
    input: CorpusInput,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    input: CorpusInput,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

/// The context to condition on: an inline JSON object, or a named label.
#[derive(Args)]
struct ContextArgs {
    /// Context as a JSON object, e.g. '{"lang": "en"}'.
    #[arg(long, conflicts_with = "label")]
    context: Option<String>,
    /// Label name to take the context from (needs --labels).
    #[arg(long, requires = "labels")]
    label: Option<String>,
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct LlrArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Numerator label.
    #[arg(long)]
    a: String,
    /// Denominator label.
    #[arg(long)]
    b: String,
    #[arg(long)]
    text: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoostArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    context: ContextArgs,
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    context: ContextArgs,
    #[arg(long, default_value_t = 200)]
    max_len: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    json: bool,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else if e.is_usage() {
        1
    } else {
        2
    }
}

/// Write `text` to `path`, or stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| io_error(p, e)),
        None => {
            let mut s = io::stdout().lock();
            s.write_all(text.as_bytes()).and_then(|_| s.flush()).map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn load_model(path: &Path) -> Result<Model, Error> {
    Ok(load_checkpoint(path)?.0)
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn load_docs(input: &CorpusInput, model: &Model) -> Result<Vec<Document>, Error> {
    let (raw, warnings) = load_jsonl(&input.corpus, &model.schema, input.lenient)?;
    warn_all(&warnings);
    let (docs, skipped) = tokenize(&raw, &model.vocab, input.max_tokens);
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} documents that are empty after preprocessing");
    }
    Ok(docs)
}

fn resolve_context(args: &ContextArgs, model: &Model) -> Result<ContextValue, Error> {
    if let Some(json) = &args.context {
        let obj: BTreeMap<String, serde_json::Value> = serde_json::from_str(json)
            .map_err(|e| Error::Argument(format!("--context is not a JSON object: {e}")))?;
        return model.schema.value_from_json(&obj);
    }
    match (&args.label, &args.labels) {
        (Some(name), Some(path)) => Ok(LabelSet::load(path, &model.schema)?.find(name)?.context.clone()),
        _ => model.schema.value_from_json(&BTreeMap::new()),
    }
}

/// Mirrors every metrics row to stderr while writing the log.
struct Progress(MetricsLog);

impl ProgressSink for Progress {
    fn record(&mut self, row: &MetricsRow) -> factorcell::Result<()> {
        eprintln!("step {:>7}  train loss {:.4}  dev ppl {:.4}", row.step, row.train_loss, row.dev_ppl);
        self.0.record(row)
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_train(a: &TrainArgs) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &a.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let (train_recs, warnings) = read_records(&a.corpus, a.lenient)?;
    warn_all(&warnings);
    let dev_recs = match &a.dev {
        Some(p) => {
            let (r, w) = read_records(p, a.lenient)?;
            warn_all(&w);
            r
        }
        None => Vec::new(),
    };
    let corpus = Corpus::from_records(&train_recs, &dev_recs, &[], &cfg.data)?;
    eprintln!(
        "{} training and {} dev documents, vocabulary of {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.vocab.len()
    );
    let metrics = a.metrics.clone().unwrap_or_else(|| with_suffix(&a.out, ".metrics.tsv"));
    let cfg_path = with_suffix(&a.out, ".cfg");
    std::fs::write(&cfg_path, cfg.to_text()).map_err(|e| io_error(&cfg_path, e))?;
    let mut sink = Progress(MetricsLog::create(&metrics)?);
    let out = train(&corpus, &cfg.model, &cfg.train, Some(&a.out), &mut sink)?;
    let best_ppl = Some(out.best_dev_ppl).filter(|p| p.is_finite());
    let text = if a.json {
        let v = serde_json::json!({
            "steps": cfg.train.max_steps,
            "best_step": out.best_step,
            "best_dev_ppl": best_ppl,
            "checkpoint": a.out.display().to_string(),
            "metrics": metrics.display().to_string(),
        });
        format!("{v}\n")
    } else {
        format!(
            "checkpoint  {}\nmetrics     {}\nbest step   {}\nbest dev    {}\n",
            a.out.display(),
            metrics.display(),
            out.best_step,
            best_ppl.map_or("-".to_string(), |p| format!("{p:.6}"))
        )
    };
    emit(None, &text)
}

fn run_ppl(a: &PplArgs) -> Result<(), Error> {
    let model = load_model(&a.input.model)?;
    let docs = load_docs(&a.input, &model)?;
    let report = perplexity(&model, &docs)?;
    emit(a.out.as_deref(), &format!("{}\n", report.to_json()))
}

fn run_classify(a: &ClassifyArgs) -> Result<(), Error> {
    let model = load_model(&a.input.model)?;
    let set = LabelSet::load(&a.labels, &model.schema)?;
    let docs = load_docs(&a.input, &model)?;
    let truth = docs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            true_label(d, &set.labels)
                .ok_or_else(|| Error::Argument(format!("document {} matches no label", i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = classify_documents(&model, &docs, &set.labels, &truth, set.prior.as_deref())?;
    let text = if a.json { format!("{}\n", report.to_json()) } else { report.to_text() };
    emit(a.out.as_deref(), &text)
}

fn run_llr(a: &LlrArgs) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    let set = LabelSet::load(&a.labels, &model.schema)?;
    let toks = factorcell::data::preprocess(&a.text, model.vocab.unit(), 0)
        .ok_or_else(|| Error::Argument("text is empty after preprocessing".into()))?;
    let framed = model.vocab.frame(&toks);
    let ratios = log_likelihood_ratio(&model, &framed, &set.find(&a.a)?.context, &set.find(&a.b)?.context)?;
    let mut csv = Vec::new();
    write_ratios_csv(&ratios, &mut csv).map_err(|e| io_error(Path::new("<csv>"), e))?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&csv))
}

fn run_boost(a: &BoostArgs) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    let ctx = resolve_context(&a.context, &model)?;
    let words = top_boosted_words(&model, &ctx, a.top)?;
    let text = if a.json {
        let v: Vec<_> = words.iter().map(|(t, s)| serde_json::json!({ "token": t, "score": s })).collect();
        format!("{}\n", serde_json::Value::from(v))
    } else {
        words.iter().map(|(t, s)| format!("{t}\t{s:.6}\n")).collect()
    };
    emit(a.out.as_deref(), &text)
}

fn run_embed(a: &EmbedArgs) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    let set = LabelSet::load(&a.labels, &model.schema)?;
    match &a.out {
        Some(p) => factorcell::eval::export_context_embeddings(&model, &set.contexts(), p),
        None => {
            let stdout = io::stdout().lock();
            let mut w = BufWriter::new(stdout);
            write_context_embeddings(&model, &set.contexts(), &mut w)?;
            w.flush().map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn run_gen(a: &GenArgs) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    let ctx = resolve_context(&a.context, &model)?;
    let g = generate(&model, &ctx, a.max_len, a.temperature, a.seed)?;
    let text = if a.json {
        format!("{}\n", serde_json::json!({ "text": g.text, "tokens": g.tokens.len(), "finished": g.finished }))
    } else {
        format!("{}\n", g.text)
    };
    emit(a.out.as_deref(), &text)
}

fn run_info(a: &InfoArgs) -> Result<(), Error> {
    let (model, precision) = load_checkpoint(&a.model)?;
    let c = &model.config;
    let arrays: Vec<(&str, Vec<usize>)> = model
        .params
        .arrays()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let variables: Vec<String> = model.schema.variables().iter().map(|v| {
        match v.cardinality() {
            Some(n) => format!("{} (categorical, {n} levels)", v.name),
            None => format!("{} (numeric)", v.name),
        }
    }).collect();
    let text = if a.json {
        let shapes: serde_json::Map<String, serde_json::Value> =
            arrays.iter().map(|(n, s)| (n.to_string(), serde_json::json!(s))).collect();
        let v = serde_json::json!({
            "variant": c.variant.as_str(),
            "softmax_bias": c.softmax_bias.as_str(),
            "unit": c.unit.to_string(),
            "vocab_size": c.vocab_size,
            "word_dim": c.word_dim,
            "hidden_dim": c.hidden_dim,
            "context_dim": c.context_dim,
            "rank": c.rank,
            "precision": precision.to_string(),
            "parameters": model.parameter_count(),
            "context": variables,
            "shapes": shapes,
        });
        format!("{v}\n")
    } else {
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k:<14}{v}\n"));
        line("variant", c.variant.as_str().into());
        line("softmax_bias", c.softmax_bias.as_str().into());
        line("unit", c.unit.to_string());
        line("vocab_size", c.vocab_size.to_string());
        line("dims", format!("e={} d={} k={} r={}", c.word_dim, c.hidden_dim, c.context_dim, c.rank));
        line("precision", precision.to_string());
        line("parameters", model.parameter_count().to_string());
        line("context", if variables.is_empty() { "-".into() } else { variables.join(", ") });
        for (n, shape) in &arrays {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            line(&format!("  {n}"), dims.join("x"));
        }
        s
    };
    emit(None, &text)
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Ppl(a) => run_ppl(a),
        Command::Classify(a) => run_classify(a),
        Command::Llr(a) => run_llr(a),
        Command::Boost(a) => run_boost(a),
        Command::Embed(a) => run_embed(a),
        Command::Gen(a) => run_gen(a),
        Command::Info(a) => run_info(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
