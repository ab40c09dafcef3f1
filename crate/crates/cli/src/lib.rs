//! Command-line front end: train, evaluate, predict, encode, gensynth.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use convres::checkpoint;
use convres::gradcheck::Parameterized;
use convres::metrics::rank_k;
use convres::synth::{self, GroundTruth, SynthConfig, MAX_ENUM_LABELS};
use convres::text::{read_corpus, tokenize, write_corpus, DEFAULT_MAX_LEN, EMBED_DIM};
use convres::training::{self, TrainConfig, TrainInputs};
use convres::{EncoderConfig, LabelVocab, ModelKind, ModelSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "convres", version, about = "Multi-label text classification with convolutional encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus the per-epoch history.
    Train(TrainArgs),
    /// Report P@k, nDCG@k and macro AUC on a labelled corpus.
    Evaluate(EvalArgs),
    /// Write the top-k labels of every document.
    Predict(PredictArgs),
    /// Export encoded sentence vectors.
    Encode(EvalArgs),
    /// Generate a synthetic corpus with a known label model.
    Gensynth(GensynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "residual")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    /// Hidden sizes `h_1..h_n`, comma separated; one value applies to every layer.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// Word vectors in text format; missing words are drawn at random.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Fixed label list, one per line; otherwise taken from the corpus.
    #[arg(long)]
    pub label_vocab: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub dropout_keep: f64,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[arg(long, default_value_t = EMBED_DIM)]
    pub embed_dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [3, 4, 5])]
    pub windows: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub filters: usize,
    /// CRBM hidden units; defaults to the label count.
    #[arg(long)]
    pub crbm_hidden: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub gibbs_steps: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub history: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GensynthArgs {
    #[arg(long)]
    pub labels: usize,
    #[arg(long)]
    pub vocab: usize,
    #[arg(long)]
    pub docs: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `i j weight` lines; defaults to coupling labels 2i and 2i+1.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    pub unary: f64,
    #[arg(long, default_value_t = 10)]
    pub keywords: usize,
    #[arg(long, default_value_t = 8)]
    pub min_len: usize,
    #[arg(long, default_value_t = 24)]
    pub max_len: usize,
    #[arg(long)]
    pub allow_controls: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<convres::Error> for Failure {
    fn from(e: convres::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<'a, I, T>(args: I, stdout: &'a mut dyn Write, stderr: &'a mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let sink = if code == EXIT_OK { stdout } else { stderr };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(stderr, "error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

pub fn execute(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Train(a) => cmd_train(&a, stderr),
        Command::Evaluate(a) => cmd_evaluate(&a, stdout),
        Command::Predict(a) => cmd_predict(&a, stdout),
        Command::Encode(a) => cmd_encode(&a, stdout),
        Command::Gensynth(a) => cmd_gensynth(&a, stderr),
    }
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => stdout.write_all(text.as_bytes()).context("writing to stdout"),
    }
}

pub fn cmd_train(a: &TrainArgs, log: &mut dyn Write) -> std::result::Result<(), Failure> {
    let spec = ModelSpec {
        kind: a.model,
        layers: a.layers,
        hidden: a.hidden.clone(),
        encoder: EncoderConfig {
            embed_dim: a.embed_dim,
            windows: a.windows.clone(),
            filters_per_window: a.filters,
        },
        max_len: a.max_len,
        crbm_hidden: a.crbm_hidden,
        gibbs_steps: a.gibbs_steps,
        ..ModelSpec::new(a.model)
    };
    if spec.layers == 0 || spec.max_len == 0 {
        return Err(Failure::Usage("--layers and --max-len must be >= 1".into()));
    }
    spec.encoder.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let cfg = TrainConfig {
        lr: a.lr,
        minibatch: a.batch,
        dropout_keep: a.dropout_keep,
        val_fraction: a.val_frac,
        patience: a.patience,
        max_epochs: a.epochs,
        seed: a.seed,
        min_count: a.min_count,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let corpus = read_corpus(&a.corpus)?;
    let labels = a.label_vocab.as_deref().map(LabelVocab::read).transpose()?;
    let inputs = TrainInputs {
        embeddings: a.embeddings.clone(),
        labels,
    };
    let outcome = training::train(&corpus, &spec, &cfg, &inputs)?;
    let model = &outcome.model;
    let total: usize = model.params().iter().map(|p| p.len()).sum();
    let _ = writeln!(
        log,
        "model {} layers={} labels={} head_params={} total_params={}",
        spec.kind,
        spec.layers,
        model.labels.len(),
        model.head_param_count(),
        total
    );
    let mut history = String::new();
    for r in &outcome.history {
        let _ = writeln!(
            log,
            "epoch {:>3} {:?} train_loss={:.6} val_loss={:.6} val_p@1={:.4} ({:.1}s)",
            r.epoch, r.stage, r.train_loss, r.val_loss, r.val_p_at_1, r.wall_time_secs
        );
        history.push_str(&serde_json::to_string(r).context("serializing history")?);
        history.push('\n');
    }
    let _ = writeln!(log, "best epoch {} val_loss={:.6}", outcome.best_epoch, outcome.best_val_loss);
    checkpoint::save(model, &a.out)?;
    fs::write(&a.history, history).with_context(|| format!("writing {}", a.history.display()))?;
    Ok(())
}

pub fn cmd_evaluate(a: &EvalArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let model = checkpoint::load(&a.checkpoint)?;
    let corpus = read_corpus(&a.corpus)?;
    let report = training::evaluate(&model, &corpus)?;
    let mut text = serde_json::to_string(&report).context("serializing report")?;
    text.push('\n');
    if a.out.is_some() {
        stdout.write_all(text.as_bytes()).context("writing to stdout")?;
    }
    write_output(a.out.as_deref(), &text, stdout)?;
    Ok(())
}

#[derive(Serialize)]
struct Scored<'a> {
    label: &'a str,
    score: f64,
}

#[derive(Serialize)]
struct TopK<'a> {
    top: Vec<Scored<'a>>,
}

pub fn cmd_predict(a: &PredictArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let model = checkpoint::load(&a.checkpoint)?;
    let corpus = read_corpus(&a.corpus)?;
    let mut text = String::new();
    for (_, p) in training::predict_corpus(&model, &corpus)? {
        let top = rank_k(&p, a.k as usize)
            .into_iter()
            .map(|i| Scored {
                label: model.labels.label(i),
                score: p[i],
            })
            .collect();
        text.push_str(&serde_json::to_string(&TopK { top }).context("serializing prediction")?);
        text.push('\n');
    }
    write_output(a.out.as_deref(), &text, stdout)?;
    Ok(())
}

#[derive(Serialize)]
struct Encoded<'a> {
    labels: &'a [String],
    x: Vec<f64>,
}

pub fn cmd_encode(a: &EvalArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let model = checkpoint::load(&a.checkpoint)?;
    let corpus = read_corpus(&a.corpus)?;
    let mut text = String::new();
    for doc in &corpus {
        let td = model.prepare(doc)?;
        let enc = model.encode(&td);
        text.push_str(
            &serde_json::to_string(&Encoded {
                labels: &doc.labels,
                x: enc.x,
            })
            .context("serializing encoding")?,
        );
        text.push('\n');
    }
    write_output(a.out.as_deref(), &text, stdout)?;
    Ok(())
}

/// Path of a sidecar file next to `out`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_gensynth(a: &GensynthArgs, log: &mut dyn Write) -> std::result::Result<(), Failure> {
    let pair_weights = match &a.pairs {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            synth::parse_pairs(&text, a.labels).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => synth::correlated_pairs(a.labels, 3.0),
    };
    let cfg = SynthConfig {
        labels: a.labels,
        vocab_size: a.vocab,
        pair_weights,
        unary: vec![a.unary; a.labels],
        keywords_per_label: a.keywords,
        doc_len: (a.min_len, a.max_len),
        noise_rate: a.noise,
        allow_controls: a.allow_controls,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let corpus = synth::generate_corpus(&cfg, a.docs)?;
    write_corpus(&a.out, &corpus.docs)?;
    let labels = LabelVocab::new((0..cfg.labels).map(|l| cfg.label_name(l)).collect())?;
    labels.write(&sidecar(&a.out, ".labels"))?;

    let truth_json = if cfg.labels <= MAX_ENUM_LABELS {
        let truth = GroundTruth::new(&cfg)?;
        let oracle = corpus
            .docs
            .iter()
            .map(|d| truth.posterior_marginals(&tokenize(&d.text)?))
            .collect::<convres::Result<Vec<_>>>()?;
        truth.to_json(Some(&oracle))?
    } else {
        serde_json::json!({ "config": cfg }).to_string()
    };
    let truth_path = sidecar(&a.out, ".truth.json");
    fs::write(&truth_path, truth_json + "\n").with_context(|| format!("writing {}", truth_path.display()))?;
    let _ = writeln!(log, "wrote {} documents to {}", a.docs, a.out.display());
    Ok(())
}
