//! The `dispatcher` command line: `train`, `eval`, `bench`, `generate` and
//! `check`.
//!
//! Settings resolve as command-line flags over the `--config` JSON file over
//! built-in defaults. Commands that write files first write
//! `<command>.manifest.json` into the output directory with the resolved settings and
//! the SHA-256 of every input, then update it with the outputs' hashes.
//!
//! Exit status: 0 on success, 2 for usage, data and file errors, 3 for
//! non-finite values, 4 when a property check fails.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bench::{self, BenchOptions, BenchRecord};
use crate::checkpoint;
use crate::checks;
use crate::config::{LayerKind, ModelConfig};
use crate::corpus::{self, Corpus, Split, TokenizerMode, Vocab};
use crate::error::{Error, Result};
use crate::model::{generate, perplexity, LmModel};
use crate::trainer::{self, TrainConfig};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PROPERTY: i32 = 4;

const CHECKPOINT: &str = "model.ckpt";
const VOCAB: &str = "vocab.txt";

fn parse_layer(s: &str) -> std::result::Result<LayerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<TokenizerMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::ALL
        .into_iter()
        .find(|split| split.name() == s)
        .ok_or_else(|| format!("unknown split {s:?} (expected train, valid or test)"))
}

#[derive(Debug, Parser)]
#[command(name = "dispatcher", version, about = "Train, evaluate and benchmark dispatcher and attention language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a corpus and write a checkpoint, loss log and manifest.
    Train(TrainArgs),
    /// Report the perplexity of a checkpoint on one corpus split.
    Eval(EvalArgs),
    /// Time training steps across sequence lengths and write CSV.
    Bench(BenchArgs),
    /// Extend a prompt with tokens sampled from a checkpoint.
    Generate(GenerateArgs),
    /// Run the causality, oracle, gradient and dropout property suites.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "DISPATCHER_OUT_DIR", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Corpus prefix; reads `<prefix>.train.txt`, `.valid.txt` and `.test.txt`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Tokenizer: char or word.
    #[arg(long, default_value = "char", value_parser = parse_mode)]
    pub tokenizer: TokenizerMode,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Sequence-mixing layer: dispatcher or msa.
    #[arg(long, default_value_t = ModelConfig::default().layer_kind, value_parser = parse_layer)]
    pub layer: LayerKind,
    #[arg(long, default_value_t = ModelConfig::default().d_model)]
    pub d_model: usize,
    /// Feed-forward hidden width.
    #[arg(long, default_value_t = ModelConfig::default().d_inner)]
    pub d_inner: usize,
    #[arg(long, default_value_t = ModelConfig::default().n_layers)]
    pub n_layers: usize,
    #[arg(long, default_value_t = ModelConfig::default().n_heads)]
    pub heads: usize,
    /// Longest sequence the model accepts.
    #[arg(long, default_value_t = ModelConfig::default().max_seq)]
    pub max_seq: usize,
    /// Residual dropout probability.
    #[arg(long, default_value_t = ModelConfig::default().dropout_p)]
    pub dropout: f64,
    /// Dispatcher row dropout probability [default: same as --dropout].
    #[arg(long)]
    pub row_dropout: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// JSON file with `model` and `train` objects; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Drop training tokens seen fewer times than this.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    /// Vocabulary size cap including <UNK> and <EOS> [default: unlimited].
    #[arg(long)]
    pub max_vocab: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().seq_len)]
    pub seq_len: usize,
    #[arg(long, default_value_t = TrainConfig::default().steps)]
    pub steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().warmup_steps)]
    pub warmup: usize,
    /// Global gradient-norm limit.
    #[arg(long, default_value_t = TrainConfig::default().clip_norm)]
    pub clip: f64,
    /// Validate and checkpoint every this many steps.
    #[arg(long, default_value_t = TrainConfig::default().eval_every)]
    pub eval_every: usize,
    /// Seed for initialisation, batching order and dropout.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CheckpointArgs {
    /// Checkpoint file [default: <out>/model.ckpt].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary file [default: <out>/vocab.txt].
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,
    /// Split to score: train, valid or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Expected model settings (JSON with a `model` object); any field that
    /// disagrees with the checkpoint is an error.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Expected layer kind; an error if the checkpoint differs.
    #[arg(long, value_parser = parse_layer)]
    pub layer: Option<LayerKind>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Layer kinds to sweep: dispatcher, msa or all.
    #[arg(long, default_value = "all")]
    pub layer: String,
    /// Sequence lengths.
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024,2048,4096")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    /// Timed steps per length.
    #[arg(long, default_value_t = bench::MIN_REPEATS)]
    pub repeats: usize,
    /// Untimed steps per length.
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 128)]
    pub d_model: usize,
    #[arg(long, default_value_t = 128)]
    pub d_inner: usize,
    #[arg(long, default_value_t = 2)]
    pub n_layers: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub vocab: usize,
    /// Residual dropout probability.
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Dispatcher row dropout probability [default: same as --dropout].
    #[arg(long)]
    pub row_dropout: Option<f64>,
    /// Refuse tensor allocations beyond this many live bytes [default: no limit].
    #[arg(long)]
    pub memory_limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,
    /// Tokenizer used to encode the prompt and render the output.
    #[arg(long, default_value = "char", value_parser = parse_mode)]
    pub tokenizer: TokenizerMode,
    /// Text to continue; empty starts from a line break.
    #[arg(long, default_value = "")]
    pub prompt: String,
    /// Tokens to generate.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Sampling temperature; 0 always takes the most likely token.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Resolved settings and input/output hashes of one command.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub settings: Value,
    pub corpus: Vec<PathBuf>,
    pub out_dir: PathBuf,
    /// File name to `sha256:<hex>`.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str, seed: u64, settings: Value, out_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            settings,
            corpus: Vec::new(),
            out_dir: out_dir.to_path_buf(),
            artifacts: BTreeMap::new(),
        }
    }

    fn hash(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.artifacts.insert(name, format!("sha256:{}", hex::encode(Sha256::digest(&bytes))));
        Ok(())
    }

    fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(Error::io(&self.out_dir))?;
        write_json(&self.out_dir.join(format!("{}.manifest.json", self.command)), self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

fn to_json<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("settings serialize")
}

fn read_config_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(Error::Data(format!("{}: expected a JSON object", path.display())));
    }
    Ok(value)
}

/// Overlay `section` of the config file onto the serialised defaults.
fn layered<T: Serialize + serde::de::DeserializeOwned>(defaults: T, file: Option<&Value>, section: &str) -> Result<T> {
    let mut base = to_json(&defaults);
    if let Some(Value::Object(fields)) = file.and_then(|f| f.get(section)) {
        let target = base.as_object_mut().expect("settings are objects");
        for (k, v) in fields {
            if !target.contains_key(k) && !(section == "model" && k == "row_dropout_p") {
                return Err(Error::Config {
                    field: format!("{section}.{k}"),
                    msg: "unknown setting".into(),
                });
            }
            target.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(base).map_err(|e| Error::Config {
        field: section.to_string(),
        msg: e.to_string(),
    })
}

struct Explicit<'a>(&'a ArgMatches);

impl Explicit<'_> {
    fn has(&self, id: &str) -> bool {
        self.0.value_source(id) == Some(ValueSource::CommandLine)
    }
}

fn resolve_train(args: &TrainArgs, matches: &ArgMatches) -> Result<(ModelConfig, TrainConfig)> {
    let file = args.config.as_deref().map(read_config_file).transpose()?;
    let mut model: ModelConfig = layered(ModelConfig::default(), file.as_ref(), "model")?;
    let mut train: TrainConfig = layered(TrainConfig::default(), file.as_ref(), "train")?;
    let flag = Explicit(matches);
    let m = &args.model;
    if flag.has("layer") {
        model.layer_kind = m.layer;
    }
    if flag.has("d_model") {
        model.d_model = m.d_model;
    }
    if flag.has("d_inner") {
        model.d_inner = m.d_inner;
    }
    if flag.has("n_layers") {
        model.n_layers = m.n_layers;
    }
    if flag.has("heads") {
        model.n_heads = m.heads;
    }
    if flag.has("max_seq") {
        model.max_seq = m.max_seq;
    }
    if flag.has("dropout") {
        model.dropout_p = m.dropout;
    }
    if m.row_dropout.is_some() {
        model.row_dropout_p = m.row_dropout;
    }
    if flag.has("batch_size") {
        train.batch_size = args.batch_size;
    }
    if flag.has("seq_len") {
        train.seq_len = args.seq_len;
    }
    if flag.has("steps") {
        train.steps = args.steps;
    }
    if flag.has("lr") {
        train.learning_rate = args.lr;
    }
    if flag.has("warmup") {
        train.warmup_steps = args.warmup;
    }
    if flag.has("clip") {
        train.clip_norm = args.clip;
    }
    if flag.has("eval_every") {
        train.eval_every = args.eval_every;
    }
    if flag.has("seed") {
        model.seed = args.seed;
        train.seed = args.seed;
    }
    // A shorter run than the warmup would otherwise be rejected.
    if !flag.has("warmup") && train.warmup_steps > train.steps {
        train.warmup_steps = train.steps;
    }
    Ok((model, train))
}

fn cmd_train(args: &TrainArgs, matches: &ArgMatches) -> Result<i32> {
    let (mut model_cfg, mut train_cfg) = resolve_train(args, matches)?;
    let corpus = Corpus::load(&args.corpus.corpus, args.corpus.tokenizer, args.min_count, args.max_vocab, None)?;
    model_cfg.vocab_size = corpus.vocab.len();
    model_cfg.validate()?;
    train_cfg.validate()?;
    let out = &args.out.out;
    train_cfg.checkpoint_path = Some(out.join(CHECKPOINT));
    train_cfg.loss_log = Some(out.join("loss.csv"));

    let settings = json!({
        "model": model_cfg,
        "train": train_cfg,
        "tokenizer": args.corpus.tokenizer,
        "min_count": args.min_count,
        "max_vocab": args.max_vocab,
    });
    let mut manifest = RunManifest::new("train", train_cfg.seed, settings, out);
    for split in Split::ALL {
        let path = corpus::split_path(&args.corpus.corpus, split);
        if path.exists() {
            manifest.hash(&path)?;
            manifest.corpus.push(path);
        }
    }
    manifest.write()?;

    let vocab_path = out.join(VOCAB);
    corpus.vocab.save(&vocab_path)?;
    let model = LmModel::new(model_cfg.clone())?;
    eprintln!(
        "training {} model: {} parameters, vocabulary {}, {} training tokens",
        model_cfg.layer_kind,
        model.parameter_count(),
        corpus.vocab.len(),
        corpus.train.ids.len()
    );
    let valid = corpus.valid.as_ref().map(|s| s.ids.as_slice());
    let report = trainer::train(&model, &corpus.train.ids, valid, &train_cfg)?;
    let test_ppl = corpus.test.as_ref().map(|t| perplexity(&model, &t.ids)).transpose()?;
    let unigram = corpus
        .test
        .as_ref()
        .map(|t| corpus::unigram_perplexity(&corpus.train.ids, &t.ids, corpus.vocab.len()));

    let summary = json!({
        "layer_kind": model_cfg.layer_kind,
        "parameters": model.parameter_count(),
        "steps": report.losses.len(),
        "final_loss": report.losses.last(),
        "valid_perplexity": report.evals,
        "test_perplexity": test_ppl,
        "unigram_test_perplexity": unigram,
        "seconds": report.seconds,
    });
    let summary_path = out.join("train.json");
    write_json(&summary_path, &summary)?;
    for path in [out.join(CHECKPOINT), out.join("loss.csv"), vocab_path] {
        manifest.hash(&path)?;
    }
    manifest.write()?;
    if let Some(loss) = report.losses.last() {
        println!("final_loss={loss}");
    }
    if let Some((step, ppl)) = report.evals.last() {
        println!("valid_perplexity={ppl} (step {step})");
    }
    if let Some(ppl) = test_ppl {
        println!("test_perplexity={ppl}");
    }
    println!("checkpoint={}", out.join(CHECKPOINT).display());
    Ok(0)
}

fn checkpoint_paths(args: &CheckpointArgs, out: &Path) -> (PathBuf, PathBuf) {
    (
        args.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT)),
        args.vocab.clone().unwrap_or_else(|| out.join(VOCAB)),
    )
}

fn load_pair(ckpt: &Path, vocab_path: &Path) -> Result<(LmModel, Vocab)> {
    let model = checkpoint::load(ckpt)?;
    let vocab = Vocab::load(vocab_path)?;
    if vocab.len() != model.config().vocab_size {
        return Err(Error::Config {
            field: "vocab_size".into(),
            msg: format!(
                "{} has {} entries but the checkpoint was trained with {}",
                vocab_path.display(),
                vocab.len(),
                model.config().vocab_size
            ),
        });
    }
    Ok((model, vocab))
}

/// First field of the `model` section of `file` that disagrees with `cfg`.
fn config_mismatch(cfg: &ModelConfig, file: &Value) -> Option<String> {
    let stored = to_json(cfg);
    let expected = file.get("model")?.as_object()?;
    expected
        .iter()
        .find(|(k, v)| stored.get(k.as_str()) != Some(v))
        .map(|(k, _)| k.clone())
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let out = &args.out.out;
    let (ckpt, vocab_path) = checkpoint_paths(&args.checkpoint, out);
    let (model, vocab) = load_pair(&ckpt, &vocab_path)?;
    let cfg = model.config();
    if let Some(layer) = args.layer.filter(|&l| l != cfg.layer_kind) {
        return Err(Error::Config {
            field: "layer_kind".into(),
            msg: format!("expected {layer}, the checkpoint holds a {} model", cfg.layer_kind),
        });
    }
    if let Some(path) = &args.config {
        if let Some(field) = config_mismatch(cfg, &read_config_file(path)?) {
            return Err(Error::Config {
                field: field.clone(),
                msg: format!("{} disagrees with the checkpoint", path.display()),
            });
        }
    }
    let split_file = corpus::split_path(&args.corpus.corpus, args.split);
    if !split_file.exists() {
        return Err(Error::Io {
            path: split_file,
            source: std::io::ErrorKind::NotFound.into(),
        });
    }
    let mut manifest = RunManifest::new(
        "eval",
        cfg.seed,
        json!({"model": cfg, "split": args.split, "tokenizer": args.corpus.tokenizer}),
        out,
    );
    manifest.corpus.push(split_file.clone());
    for path in [&ckpt, &vocab_path, &split_file] {
        manifest.hash(path)?;
    }
    manifest.write()?;

    let corpus = Corpus::load(&args.corpus.corpus, args.corpus.tokenizer, 1, None, Some(vocab))?;
    let stream = corpus.split(args.split).expect("split file exists");
    let ppl = perplexity(&model, &stream.ids)?;
    let report = json!({
        "checkpoint": ckpt,
        "layer_kind": cfg.layer_kind,
        "split": args.split,
        "tokens": stream.ids.len(),
        "oov_rate": stream.oov_rate(),
        "perplexity": ppl,
        "unigram_perplexity": corpus::unigram_perplexity(&corpus.train.ids, &stream.ids, corpus.vocab.len()),
    });
    let report_path = out.join("eval.json");
    write_json(&report_path, &report)?;
    manifest.hash(&report_path)?;
    manifest.write()?;
    println!("perplexity={ppl}");
    Ok(0)
}

fn bench_kinds(layer: &str) -> Result<Vec<LayerKind>> {
    match layer {
        "all" => Ok(vec![LayerKind::Dispatcher, LayerKind::Msa]),
        other => Ok(vec![other.parse()?]),
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let kinds = bench_kinds(&args.layer)?;
    let max_seq = args.n.iter().copied().max().ok_or_else(|| Error::config("n", "no sequence lengths given"))?;
    let opts = BenchOptions {
        batch_size: args.batch_size,
        repeats: args.repeats,
        warmup: args.warmup,
        memory_limit: args.memory_limit,
        seed: args.seed,
    };
    let configs: Vec<ModelConfig> = kinds
        .iter()
        .map(|&layer_kind| ModelConfig {
            layer_kind,
            d_model: args.d_model,
            d_inner: args.d_inner,
            n_layers: args.n_layers,
            n_heads: args.heads,
            max_seq,
            vocab_size: args.vocab,
            dropout_p: args.dropout,
            row_dropout_p: args.row_dropout,
            seed: args.seed,
        })
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    let out = &args.out.out;
    let settings = json!({
        "models": configs,
        "n": args.n,
        "batch_size": args.batch_size,
        "repeats": args.repeats,
        "warmup": args.warmup,
        "memory_limit": args.memory_limit,
    });
    let mut manifest = RunManifest::new("bench", args.seed, settings, out);
    manifest.write()?;

    eprintln!(
        "# single-threaded: every step runs on the calling thread; batch {}, {} timed repeats after {} warmup steps",
        args.batch_size, args.repeats, args.warmup
    );
    let mut all: Vec<BenchRecord> = Vec::new();
    let mut fits = BTreeMap::new();
    let stdout = std::io::stdout();
    writeln!(stdout.lock(), "{}", bench::CSV_HEADER).map_err(Error::io("<stdout>"))?;
    for cfg in &configs {
        let records = bench::bench_step_time(cfg, &args.n, &opts)?;
        for r in &records {
            writeln!(stdout.lock(), "{}", r.csv_row()).map_err(Error::io("<stdout>"))?;
            if let Some(reason) = &r.failed {
                eprintln!("# {} N={} failed: {reason}", r.layer_kind, r.n);
            }
        }
        match bench::fit_scaling_exponent(&records) {
            Ok(slope) => {
                eprintln!("# {} time exponent {slope:.3}", cfg.layer_kind);
                fits.insert(cfg.layer_kind.to_string(), slope);
            }
            Err(e) => eprintln!("# {} time exponent unavailable: {e}", cfg.layer_kind),
        }
        all.extend(records);
    }
    let csv_path = out.join("bench.csv");
    let file = fs::File::create(&csv_path).map_err(Error::io(&csv_path))?;
    bench::write_csv(&all, file).map_err(Error::io(&csv_path))?;
    let json_path = out.join("bench.json");
    write_json(
        &json_path,
        &json!({"threads": 1, "records": all, "time_exponents": fits}),
    )?;
    manifest.hash(&csv_path)?;
    manifest.hash(&json_path)?;
    manifest.write()?;
    Ok(0)
}

fn cmd_generate(args: &GenerateArgs) -> Result<i32> {
    let out = &args.out.out;
    let (ckpt, vocab_path) = checkpoint_paths(&args.checkpoint, out);
    let (model, vocab) = load_pair(&ckpt, &vocab_path)?;
    let mut prompt = vocab.encode(&corpus::preprocess(args.prompt.as_bytes(), args.tokenizer)?);
    if prompt.is_empty() {
        prompt.push(corpus::EOS_ID);
    }
    let mut manifest = RunManifest::new(
        "generate",
        args.seed,
        json!({"prompt": args.prompt, "steps": args.steps, "temperature": args.temperature, "tokenizer": args.tokenizer}),
        out,
    );
    manifest.hash(&ckpt)?;
    manifest.hash(&vocab_path)?;
    manifest.write()?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let ids = generate(&model, &prompt, args.steps, args.temperature, &mut rng)?;
    let text = vocab.render(&ids, args.tokenizer)?;
    let text_path = out.join("generated.txt");
    fs::write(&text_path, &text).map_err(Error::io(&text_path))?;
    manifest.hash(&text_path)?;
    manifest.write()?;
    println!("{text}");
    Ok(0)
}

fn cmd_check(args: &CheckArgs) -> Result<i32> {
    let outcomes = checks::run_all(args.seed)?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} suites passed", outcomes.len() - failed, outcomes.len());
    Ok(if failed == 0 { 0 } else { EXIT_PROPERTY })
}

/// Parse `args` (including the program name) and run the command. Returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, sub),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_matches(extra: &[&str]) -> (TrainArgs, ArgMatches) {
        let mut argv = vec!["dispatcher", "train", "--corpus", "c"];
        argv.extend_from_slice(extra);
        let matches = Cli::command().try_get_matches_from(argv).unwrap();
        let cli = Cli::from_arg_matches(&matches).unwrap();
        let Command::Train(args) = cli.command else { panic!("not train") };
        let sub = matches.subcommand().unwrap().1.clone();
        (args, sub)
    }

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_match_library_defaults() {
        let (args, m) = train_matches(&[]);
        let (model, train) = resolve_train(&args, &m).unwrap();
        assert_eq!(model, ModelConfig::default());
        assert_eq!(train, TrainConfig::default());
    }

    #[test]
    fn flags_override_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"model": {"d_model": 32, "n_layers": 2}, "train": {"steps": 40}}"#).unwrap();
        let (args, m) = train_matches(&["--config", path.to_str().unwrap(), "--d-model", "16", "--seed", "5"]);
        let (model, train) = resolve_train(&args, &m).unwrap();
        assert_eq!(model.d_model, 16);
        assert_eq!(model.n_layers, 2);
        assert_eq!(model.seed, 5);
        assert_eq!(train.steps, 40);
        assert_eq!(train.warmup_steps, 40);
        assert_eq!(model.d_inner, ModelConfig::default().d_inner);
    }

    #[test]
    fn unknown_file_settings_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"model": {"width": 32}}"#).unwrap();
        let (args, m) = train_matches(&["--config", path.to_str().unwrap()]);
        match resolve_train(&args, &m) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "model.width"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_layer_is_a_usage_error() {
        assert_eq!(run(["dispatcher", "train", "--corpus", "c", "--layer", "foo"]), EXIT_USAGE);
        assert_eq!(run(["dispatcher"]), EXIT_USAGE);
    }

    #[test]
    fn mismatch_names_the_field() {
        let cfg = ModelConfig::default();
        assert_eq!(config_mismatch(&cfg, &json!({"model": {"d_model": 128, "n_layers": 9}})), Some("n_layers".into()));
        assert_eq!(config_mismatch(&cfg, &json!({"model": {"d_model": 128}})), None);
    }
}
