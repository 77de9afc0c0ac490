//! Command-line driver: train a model, extract keyphrases, evaluate
//! against gold sets, dump word graphs and verify gradients.
//!
//! Progress goes to stderr, results to stdout or the paths given by
//! flags. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use keygraph::beam::{extract_keyphrases, ExtractionConfig};
use keygraph::corpus::{
    self, apply_config_entry, checkpoint_dtype, ingest, load_checkpoint, load_config,
    load_jsonl, save_checkpoint, CheckpointMeta, RunConfig, Split,
};
use keygraph::metrics::{self, evaluate_corpus};
use keygraph::model::ModelState;
use keygraph::tensor::Dtype;
use keygraph::text::TextPipeline;
use keygraph::trainer;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "keygraph", version, about)]
struct Cli {
    /// Cap the worker thread count (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a JSONL corpus and write a checkpoint.
    Train(TrainArgs),
    /// Extract ranked keyphrases with a trained model.
    Extract(ExtractArgs),
    /// Score a model or the tf-idf baseline against gold keyphrases.
    Eval(EvalArgs),
    /// Dump a document's word graph as a tab-separated edge list.
    InspectGraph(InspectArgs),
    /// Verify analytic gradients of the full model at 64 bits.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set d_h=64 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Random seed (overrides config).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path).with_context(|| format!("reading {path:?}"))?,
            None => RunConfig::default(),
        };
        for entry in &self.sets {
            let (key, value) = entry
                .split_once('=')
                .with_context(|| format!("--set {entry:?} is not KEY=VALUE"))?;
            apply_config_entry(&mut cfg, key.trim(), value.trim())
                .map_err(|e| anyhow::anyhow!("--set {entry:?}: {e}"))?;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (JSONL).
    #[arg(long)]
    train: PathBuf,

    /// Validation corpus (JSONL).
    #[arg(long)]
    valid: PathBuf,

    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,

    /// Training log path (default: <out>.log).
    #[arg(long)]
    log: Option<PathBuf>,

    /// Pretrained word vectors, one `word v1 .. vd` per line.
    #[arg(long)]
    embeddings: Option<PathBuf>,

    /// Keep imported embeddings fixed during training.
    #[arg(long, requires = "embeddings")]
    freeze_embeddings: bool,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ExtractArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,

    /// Documents to extract from (JSONL).
    #[arg(long)]
    input: PathBuf,

    /// Length-penalty factor.
    #[arg(long)]
    alpha: Option<f64>,

    /// Beam width.
    #[arg(long)]
    beam: Option<usize>,

    /// Maximum phrase length.
    #[arg(long)]
    depth: Option<usize>,

    /// Phrases to emit per document.
    #[arg(long)]
    top: Option<usize>,

    /// Disable coverage attention at extraction time.
    #[arg(long)]
    no_coverage: bool,

    /// Disable context modification at extraction time.
    #[arg(long)]
    no_context: bool,

    /// Output TSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluation corpus with gold keyphrases (JSONL).
    #[arg(long)]
    input: PathBuf,

    /// Trained checkpoint.
    #[arg(long, conflicts_with = "baseline")]
    model: Option<PathBuf>,

    /// Evaluate a baseline instead of a model (choices: tfidf).
    #[arg(long)]
    baseline: Option<String>,

    /// Corpus for baseline document frequencies (default: --input).
    #[arg(long)]
    df: Option<PathBuf>,

    /// Comma-separated metric cutoffs.
    #[arg(long, default_value = "5,10")]
    cutoffs: String,

    #[arg(long)]
    alpha: Option<f64>,

    #[arg(long)]
    beam: Option<usize>,

    #[arg(long)]
    depth: Option<usize>,

    #[arg(long)]
    top: Option<usize>,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct InspectArgs {
    /// Corpus (JSONL).
    #[arg(long)]
    input: PathBuf,

    /// 0-based document index.
    #[arg(long)]
    doc: usize,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Dimension preset.
    #[arg(long, default_value = "small")]
    dims: String,

    #[arg(long, default_value_t = 5)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        keygraph::exec::init_threads(cli.threads);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Eval(args) => cmd_eval(args),
        Command::InspectGraph(args) => cmd_inspect_graph(args),
        Command::GradCheck(args) => cmd_grad_check(args),
    }
}

fn extraction_config(
    base: &RunConfig,
    alpha: Option<f64>,
    beam: Option<usize>,
    depth: Option<usize>,
    top: Option<usize>,
) -> ExtractionConfig {
    let mut cfg = base.extract.clone();
    if let Some(alpha) = alpha {
        cfg.alpha = alpha;
    }
    if let Some(beam) = beam {
        cfg.beam_width = beam;
    }
    if let Some(depth) = depth {
        cfg.max_depth = depth;
    }
    if let Some(top) = top {
        cfg.top_m = top;
    }
    cfg
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let pipeline = TextPipeline::new(cfg.model.max_doc_len);

    let train_records = load_jsonl(&args.train).with_context(|| format!("{:?}", args.train))?;
    let valid_records = load_jsonl(&args.valid).with_context(|| format!("{:?}", args.valid))?;
    let train_set = ingest(&train_records, &pipeline, Split::Train);
    let valid_set = ingest(&valid_records, &pipeline, Split::Train);
    eprintln!(
        "train: {} docs ({} dropped empty, {} without present golds), {}/{} phrases kept",
        train_set.stats.docs_kept,
        train_set.stats.docs_dropped_empty,
        train_set.stats.docs_dropped_no_golds,
        train_set.stats.phrases_kept,
        train_set.stats.phrases_total,
    );

    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.log", args.out.display())));
    let mut log = fs::File::create(&log_path)
        .with_context(|| format!("creating log {log_path:?}"))?;

    let embeddings = args.embeddings.clone();
    let freeze = args.freeze_embeddings;
    let outcome = trainer::train_with::<f32>(
        &cfg.train,
        &cfg.model,
        &train_set,
        &valid_set,
        &mut log,
        |state| {
            let Some(path) = embeddings else {
                return Ok(());
            };
            let import =
                corpus::load_pretrained_embeddings::<f32>(&path, &state.vocab, cfg.train.seed)?;
            if import.dim != state.cfg.d_in {
                return Err(keygraph::Error::InvalidConfig(format!(
                    "embedding file dimension {} does not match d_in {}",
                    import.dim, state.cfg.d_in
                )));
            }
            eprintln!(
                "embeddings: {}/{} stems covered (hit ratio {:.3})",
                import.hits,
                import.hits + import.misses,
                import.hit_ratio()
            );
            let id = state.embedding;
            let param = state.params.get_mut(id);
            param.value = import.table;
            if freeze {
                param.trainable = false;
            }
            Ok(())
        },
    )?;

    let meta = CheckpointMeta {
        step: outcome.steps,
        valid_loss: outcome.best_valid_loss,
    };
    save_checkpoint(&outcome.model, &meta, &args.out)?;
    eprintln!(
        "trained {} steps over {} epochs; best validation loss {:.6}; checkpoint at {:?}",
        outcome.steps, outcome.epochs, outcome.best_valid_loss, args.out
    );
    Ok(())
}

fn with_checkpoint<R>(
    path: &Path,
    f: impl FnOnce(DynModel) -> Result<R>,
) -> Result<R> {
    match checkpoint_dtype(path)? {
        Dtype::F32 => {
            let (state, _) = load_checkpoint::<f32>(path)?;
            f(DynModel::F32(Box::new(state)))
        }
        Dtype::F64 => {
            let (state, _) = load_checkpoint::<f64>(path)?;
            f(DynModel::F64(Box::new(state)))
        }
    }
}

/// A checkpoint loaded at whichever precision it was saved with.
enum DynModel {
    F32(Box<ModelState<f32>>),
    F64(Box<ModelState<f64>>),
}

impl DynModel {
    fn max_doc_len(&self) -> usize {
        match self {
            DynModel::F32(m) => m.cfg.max_doc_len,
            DynModel::F64(m) => m.cfg.max_doc_len,
        }
    }

    fn extract(
        &self,
        doc: &keygraph::text::TokenizedDocument,
        graph: &keygraph::graph::WordGraph,
        cfg: &ExtractionConfig,
    ) -> keygraph::Result<Vec<keygraph::beam::ExtractedPhrase>> {
        match self {
            DynModel::F32(m) => extract_keyphrases(m, doc, graph, cfg),
            DynModel::F64(m) => extract_keyphrases(m, doc, graph, cfg),
        }
    }
}

fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let mut extract_cfg =
        extraction_config(&cfg, args.alpha, args.beam, args.depth, args.top);
    extract_cfg.coverage_enabled = !args.no_coverage;
    extract_cfg.context_enabled = !args.no_context;

    let records = load_jsonl(&args.input).with_context(|| format!("{:?}", args.input))?;
    with_checkpoint(&args.model, |model| {
        let pipeline = TextPipeline::new(model.max_doc_len());
        let results = keygraph::exec::par_map(&records, |record| {
            let text = format!("{} {}", record.title, record.abstract_text);
            let doc = pipeline.tokenize(&text)?;
            let graph = keygraph::graph::build_graph_from_doc(&doc);
            model.extract(&doc, &graph, &extract_cfg)
        });

        let mut out: Box<dyn Write> = match &args.out {
            Some(path) => Box::new(fs::File::create(path)?),
            None => Box::new(std::io::stdout().lock()),
        };
        for (idx, result) in results.into_iter().enumerate() {
            let doc_id = records[idx]
                .id
                .clone()
                .unwrap_or_else(|| format!("doc{idx}"));
            match result {
                Ok(phrases) => {
                    for (rank, phrase) in phrases.iter().enumerate() {
                        writeln!(
                            out,
                            "{doc_id}\t{}\t{}\t{:.6}\t{:.6}",
                            rank + 1,
                            phrase.text,
                            phrase.raw_score,
                            phrase.norm_score
                        )?;
                    }
                }
                Err(err) => {
                    eprintln!("{doc_id}: error: {err}");
                }
            }
        }
        Ok(())
    })
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let extract_cfg = extraction_config(&cfg, args.alpha, args.beam, args.depth, args.top);
    let cutoffs: Vec<usize> = args
        .cutoffs
        .split(',')
        .map(|c| c.trim().parse::<usize>().with_context(|| format!("bad cutoff {c:?}")))
        .collect::<Result<_>>()?;

    let records = load_jsonl(&args.input).with_context(|| format!("{:?}", args.input))?;

    let report = match (&args.model, args.baseline.as_deref()) {
        (Some(path), None) => with_checkpoint(path, |model| {
            let pipeline = TextPipeline::new(model.max_doc_len());
            let dataset = ingest(&records, &pipeline, Split::Eval);
            let report = evaluate_corpus(&dataset, &cutoffs, |doc| {
                let phrases = model.extract(&doc.doc, &doc.graph, &extract_cfg)?;
                Ok(phrases
                    .into_iter()
                    .map(|p| p.text.split(' ').map(str::to_string).collect())
                    .collect())
            })?;
            Ok(report)
        })?,
        (None, Some("tfidf")) => {
            let pipeline = TextPipeline::default();
            let dataset = ingest(&records, &pipeline, Split::Eval);
            let df_docs = match &args.df {
                Some(path) => {
                    let df_records = load_jsonl(path)?;
                    ingest(&df_records, &pipeline, Split::Eval)
                }
                None => dataset.clone(),
            };
            let (df, total) =
                metrics::document_frequencies(df_docs.docs.iter().map(|d| &d.doc));
            evaluate_corpus(&dataset, &cutoffs, |doc| {
                Ok(metrics::tfidf_baseline(
                    &doc.doc,
                    &doc.graph.nodes,
                    &df,
                    total,
                    extract_cfg.top_m,
                ))
            })?
        }
        (None, Some(other)) => bail!("unknown baseline {other:?} (choices: tfidf)"),
        (None, None) => bail!("one of --model or --baseline is required"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    print!("{}", report.render_text());
    println!("{}", report.to_json());
    Ok(())
}

fn cmd_inspect_graph(args: InspectArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let records = load_jsonl(&args.input).with_context(|| format!("{:?}", args.input))?;
    let Some(record) = records.get(args.doc) else {
        bail!(
            "document index {} out of range ({} records)",
            args.doc,
            records.len()
        );
    };
    let pipeline = TextPipeline::new(cfg.model.max_doc_len);
    let text = format!("{} {}", record.title, record.abstract_text);
    let doc = pipeline.tokenize(&text)?;
    let graph = keygraph::graph::build_graph_from_doc(&doc);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for i in 0..graph.node_count() {
        for j in 0..graph.node_count() {
            let w_fwd = graph.a_fwd.at(i, j);
            let w_bwd = graph.a_bwd.at(i, j);
            if w_fwd != 0.0 || w_bwd != 0.0 {
                writeln!(out, "{i}\t{j}\t{w_fwd:.6}\t{w_bwd:.6}")?;
            }
        }
    }
    Ok(())
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<()> {
    if args.dims != "small" {
        bail!("unknown dims preset {:?} (choices: small)", args.dims);
    }
    let report = keygraph::gradcheck::full_model_check(args.seed)?;
    println!("parameter                      max-rel-err");
    for (name, err) in &report.per_param {
        println!("{name:<30} {err:.3e}");
    }
    println!("overall max relative error: {:.3e}", report.max_rel_err);
    if report.passes(1e-4) {
        println!("gradients OK (tolerance 1e-4)");
        Ok(())
    } else {
        bail!("gradient check failed: {:.3e} >= 1e-4", report.max_rel_err)
    }
}
