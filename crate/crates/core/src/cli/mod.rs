//! Command-line front end. Settings come from an optional TOML config file;
//! flags override it, and `SLOTFILL_OUTPUT_DIR` stands in for
//! `--output-dir`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 data
//! error, 4 label-set mismatch, 5 gradient-check failure.

pub mod config;
pub mod gradcheck;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{load_conll, write_conll, ColumnSpec, LabeledCorpus, PosSource, Sentence};
use crate::error::Error;
use crate::evaluation::span_f1;
use crate::layers::read_glove;
use crate::numerics::OpKind;
use crate::training::{run_ablation, train, Checkpoint};
pub use config::{DataConfig, GradcheckConfig, RunConfig, SynthConfig};
use gradcheck::run_gradcheck;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_LABELS: i32 = 4;
pub const EXIT_GRADCHECK: i32 = 5;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const EPOCH_LOG_FILE: &str = "epochs.tsv";

#[derive(Debug, Parser)]
#[command(name = "slotfill", version, about = "BiLSTM-CRF slot filling with auxiliary context losses")]
pub struct Cli {
    /// TOML config file; flags given on the command line override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory [config: output_dir, default: slotfill-out]
    #[arg(long, global = true, env = "SLOTFILL_OUTPUT_DIR", value_name = "DIR")]
    pub output_dir: Option<PathBuf>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, epoch log and resolved config
    Train(TrainArgs),
    /// Score a checkpoint on a labeled CoNLL file
    Eval(EvalArgs),
    /// Write predicted BIO tags for a CoNLL file
    Decode(DecodeArgs),
    /// Train Full, Full - MI, Full - WP and Full - SP and report test F1
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients of every loss term
    Gradcheck(GradcheckArgs),
    /// Write a seeded synthetic corpus as train/dev/test CoNLL files
    SynthData(SynthArgs),
    /// Print corpus statistics as key=value lines
    Stats(StatsArgs),
}

#[derive(Debug, Args, Default)]
pub struct ColumnArgs {
    /// Token column, 0-based [config: data.columns.token_col, default: 0]
    #[arg(long, value_name = "N")]
    pub token_col: Option<usize>,
    /// POS column, 0-based [config: data.columns.pos, default: 1]
    #[arg(long, value_name = "N", conflicts_with = "hash_pos")]
    pub pos_col: Option<usize>,
    /// Derive pseudo POS tags from a token hash instead of reading a column
    #[arg(long)]
    pub hash_pos: bool,
    /// BIO tag column, 0-based [config: data.columns.tag_col, default: 2]
    #[arg(long, value_name = "N")]
    pub tag_col: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// Word embedding size [config: model.word_dim, default: 300]
    #[arg(long, value_name = "N")]
    pub word_dim: Option<usize>,
    /// POS embedding size [config: model.pos_dim, default: 30]
    #[arg(long, value_name = "N")]
    pub pos_dim: Option<usize>,
    /// LSTM hidden size per direction [config: model.lstm_hidden, default: 200]
    #[arg(long, value_name = "N")]
    pub hidden: Option<usize>,
    /// Feed-forward hidden size [config: model.ff_hidden, default: 200]
    #[arg(long, value_name = "N")]
    pub ff_hidden: Option<usize>,
    /// Sentence-level targets over slot types [config: model.collapse_bio_for_sp, default: false]
    #[arg(long)]
    pub collapse_bio_for_sp: bool,
}

#[derive(Debug, Args, Default)]
pub struct OptimArgs {
    /// Adam learning rate [config: train.learning_rate, default: 0.001]
    #[arg(long, value_name = "F")]
    pub lr: Option<f64>,
    /// Sentences per mini-batch [config: train.batch_size, default: 32]
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Maximum epochs [config: train.max_epochs, default: 50]
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Epochs without dev improvement before stopping [config: train.patience, default: 5]
    #[arg(long, value_name = "N")]
    pub patience: Option<usize>,
    /// Global gradient-norm bound [config: train.grad_clip_norm, default: 5.0]
    #[arg(long, value_name = "F")]
    pub clip: Option<f64>,
    /// Seed for initialization, shuffling and negatives [config: train.seed, default: 13]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Weight of the discriminator loss [config: train.weights.alpha, default: 0.1]
    #[arg(long, value_name = "F")]
    pub alpha: Option<f64>,
    /// Weight of the word-from-context loss [config: train.weights.beta, default: 0.1]
    #[arg(long, value_name = "F")]
    pub beta: Option<f64>,
    /// Weight of the sentence-label loss [config: train.weights.gamma, default: 0.1]
    #[arg(long, value_name = "F")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training CoNLL file [config: data.train]
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Dev CoNLL file used for model selection [config: data.dev]
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    /// GloVe text file [config: data.embeddings]
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub columns: ColumnArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file [default: <output-dir>/model.ckpt]
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Labeled CoNLL file [config: data.test]
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Checkpoint file [default: <output-dir>/model.ckpt]
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// CoNLL file to tag; its tag column is read but ignored
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Output file [default: <output-dir>/decoded.conll]
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Training CoNLL file [config: data.train]
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Dev CoNLL file [config: data.dev]
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    /// Test CoNLL file [config: data.test]
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// GloVe text file [config: data.embeddings]
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Column header of the report [config: dataset_name, default: data]
    #[arg(long, value_name = "NAME")]
    pub dataset_name: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub columns: ColumnArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Central-difference step [config: gradcheck.epsilon, default: 1e-5]
    #[arg(long, value_name = "F")]
    pub epsilon: Option<f64>,
    /// Coordinates sampled per loss term [config: gradcheck.samples, default: 40]
    #[arg(long, value_name = "N")]
    pub samples: Option<usize>,
    /// Seed of the micro-instance and the sampling [config: gradcheck.seed, default: 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Largest accepted relative error [config: gradcheck.tolerance, default: 1e-4]
    #[arg(long, value_name = "F")]
    pub tolerance: Option<f64>,
    #[arg(long, hide = true, value_name = "OP")]
    pub corrupt_backward: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator seed [config: synth.seed, default: 7]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Training sentences [config: synth.train_size, default: 200]
    #[arg(long, value_name = "N")]
    pub train_size: Option<usize>,
    /// Dev sentences [config: synth.dev_size, default: 50]
    #[arg(long, value_name = "N")]
    pub dev_size: Option<usize>,
    /// Test sentences [config: synth.test_size, default: 50]
    #[arg(long, value_name = "N")]
    pub test_size: Option<usize>,
    /// Number of slot types [config: synth.slot_types, default: 4]
    #[arg(long, value_name = "N")]
    pub slot_types: Option<usize>,
    /// Distinct word forms [config: synth.vocab_size, default: 60]
    #[arg(long, value_name = "N")]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Training CoNLL file; dev and test OOV counts use its vocabulary [config: data.train]
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Dev CoNLL file [config: data.dev]
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    /// Test CoNLL file [config: data.test]
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
}

/// A failure with its exit code and one-line message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Parse { .. }
            | Error::EmptyInput(_)
            | Error::Io { .. }
            | Error::Data(_)
            | Error::Checkpoint(_) => EXIT_DATA,
            Error::LabelSetMismatch(_) => EXIT_LABELS,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string().replace('\n', " "),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

impl ColumnArgs {
    fn apply(&self, spec: &mut ColumnSpec) {
        if let Some(c) = self.token_col {
            spec.token_col = c;
        }
        if let Some(c) = self.pos_col {
            spec.pos = PosSource::Column(c);
        }
        if self.hash_pos {
            spec.pos = PosSource::Hash;
        }
        if let Some(c) = self.tag_col {
            spec.tag_col = c;
        }
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let m = &mut cfg.model;
        set(&mut m.word_dim, self.word_dim);
        set(&mut m.pos_dim, self.pos_dim);
        set(&mut m.lstm_hidden, self.hidden);
        set(&mut m.ff_hidden, self.ff_hidden);
        if self.collapse_bio_for_sp {
            m.collapse_bio_for_sp = true;
        }
    }
}

impl OptimArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        set(&mut t.learning_rate, self.lr);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.max_epochs, self.epochs);
        set(&mut t.patience, self.patience);
        set(&mut t.grad_clip_norm, self.clip);
        set(&mut t.seed, self.seed);
        set(&mut t.weights.alpha, self.alpha);
        set(&mut t.weights.beta, self.beta);
        set(&mut t.weights.gamma, self.gamma);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

/// Config file, then flags.
pub fn resolve(cli: &Cli) -> crate::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    match &cli.command {
        Command::Train(a) => {
            set_path(&mut cfg.data.train, &a.train);
            set_path(&mut cfg.data.dev, &a.dev);
            set_path(&mut cfg.data.embeddings, &a.embeddings);
            a.model.apply(&mut cfg);
            a.optim.apply(&mut cfg);
            a.columns.apply(&mut cfg.data.columns);
        }
        Command::Eval(a) => {
            set_path(&mut cfg.data.test, &a.test);
            a.columns.apply(&mut cfg.data.columns);
        }
        Command::Decode(a) => a.columns.apply(&mut cfg.data.columns),
        Command::Ablate(a) => {
            set_path(&mut cfg.data.train, &a.train);
            set_path(&mut cfg.data.dev, &a.dev);
            set_path(&mut cfg.data.test, &a.test);
            set_path(&mut cfg.data.embeddings, &a.embeddings);
            set(&mut cfg.dataset_name, a.dataset_name.clone());
            a.model.apply(&mut cfg);
            a.optim.apply(&mut cfg);
            a.columns.apply(&mut cfg.data.columns);
        }
        Command::Gradcheck(a) => {
            let g = &mut cfg.gradcheck;
            set(&mut g.epsilon, a.epsilon);
            set(&mut g.samples, a.samples);
            set(&mut g.seed, a.seed);
            set(&mut g.tolerance, a.tolerance);
        }
        Command::SynthData(a) => {
            let s = &mut cfg.synth;
            set(&mut s.seed, a.seed);
            set(&mut s.train_size, a.train_size);
            set(&mut s.dev_size, a.dev_size);
            set(&mut s.test_size, a.test_size);
            set(&mut s.slot_types, a.slot_types);
            set(&mut s.vocab_size, a.vocab_size);
        }
        Command::Stats(a) => {
            set_path(&mut cfg.data.train, &a.train);
            set_path(&mut cfg.data.dev, &a.dev);
            set_path(&mut cfg.data.test, &a.test);
            a.columns.apply(&mut cfg.data.columns);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Decode(_) => "decode",
        Command::Ablate(_) => "ablate",
        Command::Gradcheck(_) => "gradcheck",
        Command::SynthData(_) => "synth-data",
        Command::Stats(_) => "stats",
    }
}

fn write_output(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn prepare_output(cfg: &RunConfig, command: &str) -> CliResult<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;
    let text = cfg.to_toml()?;
    write_output(&dir.join(format!("{command}.config.toml")), &text)?;
    Ok(dir)
}

fn load_split(path: &Path, spec: &ColumnSpec, train: Option<&LabeledCorpus>) -> CliResult<LabeledCorpus> {
    let c = load_conll(path, spec)?;
    Ok(match train {
        Some(t) => c.with_tables_of(t),
        None => c,
    })
}

fn load_pretrained(cfg: &RunConfig, train: &LabeledCorpus) -> CliResult<Option<Vec<(usize, Vec<f64>)>>> {
    let Some(path) = &cfg.data.embeddings else {
        return Ok(None);
    };
    let glove = read_glove(path, cfg.model.word_dim, |t| train.word_vocab.get(t))?;
    log::info!(
        "{} pretrained vectors from {} ({} lines skipped)",
        glove.vectors.len(),
        path.display(),
        glove.skipped
    );
    Ok(Some(glove.vectors))
}

fn checkpoint_path(arg: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    arg.clone().unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE))
}

fn cmd_train(cfg: &RunConfig) -> CliResult {
    let train_path = RunConfig::require(&cfg.data.train, "train")?;
    let dev_path = RunConfig::require(&cfg.data.dev, "dev")?;
    let spec = &cfg.data.columns;
    let train_set = load_split(&train_path, spec, None)?;
    let dev = load_split(&dev_path, spec, Some(&train_set))?;
    let pretrained = load_pretrained(cfg, &train_set)?;
    let out = prepare_output(cfg, "train")?;
    let outcome = train(&train_set, &dev, &cfg.model, &cfg.train, pretrained.as_deref())?;
    let ckpt = out.join(CHECKPOINT_FILE);
    outcome
        .checkpoint
        .save(&ckpt)
        .map_err(|e| Failure::runtime(e.to_string()))?;
    write_output(&out.join(EPOCH_LOG_FILE), &outcome.log.to_tsv())?;
    println!(
        "best dev F1 {:.4} at epoch {} of {}; checkpoint {}",
        outcome.checkpoint.best_dev_f1,
        outcome.checkpoint.best_epoch,
        outcome.log.records.len(),
        ckpt.display()
    );
    Ok(())
}

fn check_labels(ckpt: &Checkpoint, sentences: &[Sentence], path: &Path) -> CliResult {
    let mut unknown: Vec<&str> = sentences
        .iter()
        .flat_map(|s| s.bio_tags.iter())
        .filter(|t| ckpt.label_set.get(t).is_none())
        .map(String::as_str)
        .collect();
    unknown.sort_unstable();
    unknown.dedup();
    if unknown.is_empty() {
        return Ok(());
    }
    Err(Error::LabelSetMismatch(format!(
        "{} uses tags missing from the checkpoint label set: {}",
        path.display(),
        unknown.join(", ")
    ))
    .into())
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> CliResult {
    let test_path = RunConfig::require(&cfg.data.test, "test")?;
    let ckpt = Checkpoint::load(&checkpoint_path(&args.checkpoint, cfg))?;
    let test = load_conll(&test_path, &cfg.data.columns)?;
    check_labels(&ckpt, &test.sentences, &test_path)?;
    let out = prepare_output(cfg, "eval")?;
    let predicted = ckpt.predict(&test.sentences)?;
    let slot_types = ckpt.label_set.slot_types();
    let report = span_f1(&test.sentences, &predicted)?.with_types(slot_types.iter().map(String::as_str));
    print!("{}", report.to_text());
    write_output(&out.join("eval.txt"), &report.to_text())?;
    write_output(&out.join("eval.kv"), &report.to_key_values())
}

fn cmd_decode(cfg: &RunConfig, args: &DecodeArgs) -> CliResult {
    let ckpt = Checkpoint::load(&checkpoint_path(&args.checkpoint, cfg))?;
    let input = load_conll(&args.input, &cfg.data.columns)?;
    let out = prepare_output(cfg, "decode")?;
    let predicted = ckpt.predict(&input.sentences)?;
    let tagged: Vec<Sentence> = input
        .sentences
        .iter()
        .zip(predicted)
        .map(|(s, tags)| Sentence::new(s.tokens.clone(), s.pos_tags.clone(), tags))
        .collect::<crate::Result<_>>()?;
    let path = args.output.clone().unwrap_or_else(|| out.join("decoded.conll"));
    let mut buf = Vec::new();
    write_conll(&mut buf, &tagged).map_err(|e| Failure::runtime(e.to_string()))?;
    fs::write(&path, buf).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("tagged {} sentences into {}", tagged.len(), path.display());
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> CliResult {
    let spec = &cfg.data.columns;
    let train_set = load_split(&RunConfig::require(&cfg.data.train, "train")?, spec, None)?;
    let dev = load_split(&RunConfig::require(&cfg.data.dev, "dev")?, spec, Some(&train_set))?;
    let test = load_conll(&RunConfig::require(&cfg.data.test, "test")?, spec)?;
    let pretrained = load_pretrained(cfg, &train_set)?;
    let out = prepare_output(cfg, "ablate")?;
    let report = run_ablation(
        &cfg.dataset_name,
        &train_set,
        &dev,
        &test,
        &cfg.model,
        &cfg.train,
        pretrained.as_deref(),
    );
    print!("{}", report.to_text());
    write_output(&out.join("ablation.txt"), &report.to_text())?;
    write_output(&out.join("ablation.kv"), &report.to_key_values())?;
    let failed: Vec<&str> = report.rows.iter().filter(|r| r.outcome.is_err()).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::runtime(format!("ablation runs failed: {}", failed.join(", "))))
    }
}

fn cmd_gradcheck(cfg: &RunConfig, args: &GradcheckArgs) -> CliResult {
    let corrupt = args.corrupt_backward.as_deref().map(str::parse::<OpKind>).transpose()?;
    let out = prepare_output(cfg, "gradcheck")?;
    let g = &cfg.gradcheck;
    let checks = run_gradcheck(g, corrupt)?;
    let mut text = format!(
        "gradcheck epsilon={:e} samples={} tolerance={:e} seed={}\n",
        g.epsilon, g.samples, g.tolerance, g.seed
    );
    for c in &checks {
        text.push_str(&c.line(g));
        text.push('\n');
    }
    print!("{text}");
    write_output(&out.join("gradcheck.txt"), &text)?;
    match checks.iter().find(|c| !c.passed) {
        None => Ok(()),
        Some(c) => Err(Failure {
            code: EXIT_GRADCHECK,
            message: format!(
                "gradient check failed for {}: relative error {:.3e} at {}",
                c.term,
                c.max_rel_error,
                c.worst
                    .as_ref()
                    .map_or_else(|| "?".to_string(), |w| format!("{}[{}]", w.param, w.index))
            ),
        }),
    }
}

fn cmd_synth(cfg: &RunConfig) -> CliResult {
    let s = &cfg.synth;
    let splits = crate::data::generate_synthetic_splits(
        s.seed,
        (s.train_size, s.dev_size, s.test_size),
        s.slot_types,
        s.vocab_size,
    )?;
    let out = prepare_output(cfg, "synth-data")?;
    for (name, corpus) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        let path = out.join(format!("{name}.conll"));
        let mut buf = Vec::new();
        write_conll(&mut buf, &corpus.sentences).map_err(|e| Failure::runtime(e.to_string()))?;
        fs::write(&path, buf).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
        println!("{name}: {} sentences -> {}", corpus.len(), path.display());
    }
    Ok(())
}

fn cmd_stats(cfg: &RunConfig) -> CliResult {
    let spec = &cfg.data.columns;
    let train_set = cfg
        .data
        .train
        .as_deref()
        .map(|p| load_split(p, spec, None))
        .transpose()?;
    let mut text = String::new();
    if let Some(t) = &train_set {
        text.push_str(&t.stats("train").to_key_values());
    }
    for (name, path) in [("dev", &cfg.data.dev), ("test", &cfg.data.test)] {
        if let Some(p) = path {
            let c = load_conll(p, spec)?;
            let mut stats = c.stats(name);
            if let Some(t) = &train_set {
                let tokens = c.sentences.iter().flat_map(|s| s.tokens.iter());
                stats.oov_tokens = tokens.filter(|w| t.word_vocab.get(w).is_none()).count();
                let tags = c.sentences.iter().flat_map(|s| s.bio_tags.iter());
                stats.unseen_labels = tags.filter(|tag| t.label_set.get(tag).is_none()).count();
            }
            text.push_str(&stats.to_key_values());
        }
    }
    if text.is_empty() {
        return Err(Error::Config("stats needs at least one of data.train, data.dev, data.test".into()).into());
    }
    let out = prepare_output(cfg, "stats")?;
    print!("{text}");
    write_output(&out.join("stats.txt"), &text)
}

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> CliResult {
    let cfg = resolve(cli)?;
    log::debug!("resolved config for {}:\n{}", command_name(&cli.command), cfg.to_toml().unwrap_or_default());
    match &cli.command {
        Command::Train(_) => cmd_train(&cfg),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::Decode(a) => cmd_decode(&cfg, a),
        Command::Ablate(_) => cmd_ablate(&cfg),
        Command::Gradcheck(a) => cmd_gradcheck(&cfg, a),
        Command::SynthData(_) => cmd_synth(&cfg),
        Command::Stats(_) => cmd_stats(&cfg),
    }
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
