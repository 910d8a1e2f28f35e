//! Subcommand front end: `train`, `translate`, `predict-pronouns`, `score`
//! and `make-synthetic`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{
    examples_from_documents, generate_synthetic, load_parallel, load_source, tokenize, write_parallel,
    ContextualExample, Document, SyntheticTask, Vocabulary,
};
use crate::decoding::{beam_best, BeamConfig};
use crate::error::Error;
use crate::metrics::score_report;
use crate::model::{Mode, Model, ModelConfig};
use crate::pronoun::{self, PronounSet, DEFAULT_CAP, OTHER};
use crate::training::{train, TrainingConfig};
use crate::SeededRng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) => e.exit_code(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "lcnmt", version, about = "Larger-context neural machine translation toolkit")]
pub struct Cli {
    /// Worker threads for training shards and decoding [default: 1]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Train an nmt or lc-nmt model with greedy-BLEU early stopping
    Train(TrainArgs),
    /// Translate a source file with beam search
    Translate(TranslateArgs),
    /// Fill REPLACE slots of a pronoun task file and report recall
    PredictPronouns(PredictArgs),
    /// Corpus BLEU and RIBES of a hypothesis file against references
    Score(ScoreArgs),
    /// Write a synthetic parallel corpus
    MakeSynthetic(SyntheticArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training source file, one sentence per line
    #[arg(long)]
    pub train_src: Option<PathBuf>,
    /// Training target file, line-aligned with the source
    #[arg(long)]
    pub train_tgt: Option<PathBuf>,
    /// Optional document boundary sidecar for the training corpus
    #[arg(long)]
    pub train_docs: Option<PathBuf>,
    #[arg(long)]
    pub valid_src: Option<PathBuf>,
    #[arg(long)]
    pub valid_tgt: Option<PathBuf>,
    #[arg(long)]
    pub valid_docs: Option<PathBuf>,
    /// Directory for best.ckpt, final.ckpt, train.log and run_config.json
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Model variant [default: nmt]
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Word embedding size [default: 16]
    #[arg(long)]
    pub word_dim: Option<usize>,
    /// Units per encoder direction [default: 32]
    #[arg(long)]
    pub enc_hidden: Option<usize>,
    /// Decoder units [default: 32]
    #[arg(long)]
    pub dec_hidden: Option<usize>,
    /// Units per context-encoder direction, lc-nmt only [default: 32]
    #[arg(long)]
    pub ctx_hidden: Option<usize>,
    /// Attention hidden size [default: 32]
    #[arg(long)]
    pub attn_hidden: Option<usize>,
    /// Dropout rate on embeddings and the pre-output state [default: 0.2]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Maximum vocabulary size per side, reserved tokens included [default: 30000]
    #[arg(long)]
    pub max_vocab: Option<usize>,
    /// Minimum token count to enter the vocabulary [default: 1]
    #[arg(long)]
    pub min_count: Option<u64>,
    /// Sentences per minibatch [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Global gradient-norm ceiling [default: 1.0]
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// [default: 10]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Validations without improvement before stopping [default: 5]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Steps between validations [default: 200]
    #[arg(long)]
    pub valid_interval: Option<usize>,
    /// Greedy decoding bound during validation [default: 50]
    #[arg(long)]
    pub valid_max_len: Option<usize>,
    /// Fraction of the training corpus to use, e.g. 0.05, 0.1, 0.2, 0.4, 1.0 [default: 1.0]
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Seed for initialisation, shuffling, dropout and subsampling [default: 1234]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source file; blank lines separate documents
    #[arg(long)]
    pub source: PathBuf,
    /// Optional document boundary sidecar
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Output file [default: stdout]
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    /// Maximum content tokens per translation
    #[arg(long, default_value_t = 80)]
    pub max_len: usize,
    /// Rank finished hypotheses by per-token log-probability
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub length_norm: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Task file: source<TAB>target-with-REPLACE[<TAB>gold...]
    #[arg(long)]
    pub task: PathBuf,
    /// Pronoun class set: en-fr, en-de or synthetic
    #[arg(long, default_value = "synthetic")]
    pub pronouns: String,
    /// Prediction output file [default: stdout]
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Largest number of candidate sentences scored per instance
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub cap: u128,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Hypothesis file, one tokenized sentence per line
    #[arg(long)]
    pub hyp: PathBuf,
    /// Reference file, line-aligned with the hypotheses
    #[arg(long = "ref")]
    pub reference: PathBuf,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long, value_enum)]
    pub task: SyntheticTask,
    /// Number of documents
    #[arg(long, default_value_t = 1000)]
    pub size: usize,
    /// Number of ordinary words
    #[arg(long, default_value_t = 20)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 1234)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// File stem [default: task name]
    #[arg(long)]
    pub stem: Option<String>,
}

/// Everything needed to rerun a training job. Written next to every
/// checkpoint and accepted back through `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub mode: Mode,
    pub train_source: Option<PathBuf>,
    pub train_target: Option<PathBuf>,
    pub train_docs: Option<PathBuf>,
    pub valid_source: Option<PathBuf>,
    pub valid_target: Option<PathBuf>,
    pub valid_docs: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub word_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub ctx_enc_hidden: usize,
    pub attn_hidden: usize,
    pub dropout_rate: f64,
    pub max_vocab: usize,
    pub min_count: u64,
    pub training: TrainingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let desk = ModelConfig::desk_scale(Mode::LcNmt, 0, 0);
        RunConfig {
            command: "train".into(),
            mode: Mode::Nmt,
            train_source: None,
            train_target: None,
            train_docs: None,
            valid_source: None,
            valid_target: None,
            valid_docs: None,
            out_dir: None,
            word_dim: desk.word_dim,
            enc_hidden: desk.enc_hidden,
            dec_hidden: desk.dec_hidden,
            ctx_enc_hidden: desk.ctx_enc_hidden.expect("lc-nmt desk config"),
            attn_hidden: desk.attn_hidden,
            dropout_rate: desk.dropout_rate,
            max_vocab: 30_000,
            min_count: 1,
            training: TrainingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn model_config(&self, src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            word_dim: self.word_dim,
            enc_hidden: self.enc_hidden,
            dec_hidden: self.dec_hidden,
            ctx_enc_hidden: (self.mode == Mode::LcNmt).then_some(self.ctx_enc_hidden),
            attn_hidden: self.attn_hidden,
            dropout_rate: self.dropout_rate,
            src_vocab,
            tgt_vocab,
        }
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn apply(&mut self, a: &TrainArgs, threads: Option<usize>) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        fn set_path(slot: &mut Option<PathBuf>, v: &Option<PathBuf>) {
            if v.is_some() {
                *slot = v.clone();
            }
        }
        set_path(&mut self.train_source, &a.train_src);
        set_path(&mut self.train_target, &a.train_tgt);
        set_path(&mut self.train_docs, &a.train_docs);
        set_path(&mut self.valid_source, &a.valid_src);
        set_path(&mut self.valid_target, &a.valid_tgt);
        set_path(&mut self.valid_docs, &a.valid_docs);
        set_path(&mut self.out_dir, &a.out_dir);
        set(&mut self.mode, &a.mode);
        set(&mut self.word_dim, &a.word_dim);
        set(&mut self.enc_hidden, &a.enc_hidden);
        set(&mut self.dec_hidden, &a.dec_hidden);
        set(&mut self.ctx_enc_hidden, &a.ctx_hidden);
        set(&mut self.attn_hidden, &a.attn_hidden);
        set(&mut self.dropout_rate, &a.dropout);
        set(&mut self.max_vocab, &a.max_vocab);
        set(&mut self.min_count, &a.min_count);
        let t = &mut self.training;
        set(&mut t.batch_size, &a.batch_size);
        set(&mut t.clip_norm, &a.clip_norm);
        set(&mut t.max_epochs, &a.max_epochs);
        set(&mut t.patience, &a.patience);
        set(&mut t.valid_interval, &a.valid_interval);
        set(&mut t.valid_max_len, &a.valid_max_len);
        set(&mut t.fraction, &a.fraction);
        set(&mut t.seed, &a.seed);
        set(&mut t.threads, &threads);
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("lcnmt: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    let threads = cli.threads;
    if threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a, threads),
        Command::Translate(a) => cmd_translate(a, threads.unwrap_or(1)),
        Command::PredictPronouns(a) => cmd_predict_pronouns(a, threads.unwrap_or(1)),
        Command::Score(a) => cmd_score(a),
        Command::MakeSynthetic(a) => cmd_make_synthetic(a),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing {flag} (flag or config file)")))
}

fn write_file(path: &Path, body: &[u8]) -> CliResult {
    fs::write(path, body).map_err(|e| Error::io(path, e).into())
}

fn sentences(docs: &[Document], target: bool) -> Vec<Vec<String>> {
    docs.iter()
        .flat_map(|d| d.pairs.iter())
        .map(|p| if target { p.target.clone() } else { p.source.clone() })
        .collect()
}

/// Loads the corpora, builds both vocabularies from the training side and
/// trains; writes `best.ckpt`, `final.ckpt`, `train.log` and
/// `run_config.json` into the output directory.
pub fn cmd_train(a: &TrainArgs, threads: Option<usize>) -> CliResult {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    rc.apply(a, threads);
    let train_src = required(&rc.train_source, "--train-src")?;
    let train_tgt = required(&rc.train_target, "--train-tgt")?;
    let valid_src = required(&rc.valid_source, "--valid-src")?;
    let valid_tgt = required(&rc.valid_target, "--valid-tgt")?;
    let out_dir = required(&rc.out_dir, "--out-dir")?;
    rc.training.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let train_docs = load_parallel(train_src, train_tgt, rc.train_docs.as_deref())?;
    let valid_docs = load_parallel(valid_src, valid_tgt, rc.valid_docs.as_deref())?;
    if train_docs.is_empty() {
        return Err(Error::contract(format!("{} holds no sentence pairs", train_src.display())).into());
    }
    if valid_docs.is_empty() {
        return Err(Error::contract(format!("{} holds no sentence pairs", valid_src.display())).into());
    }
    let src_vocab = Vocabulary::build(&sentences(&train_docs, false), rc.max_vocab, rc.min_count)?;
    let mut tgt_vocab = Vocabulary::build(&sentences(&train_docs, true), rc.max_vocab, rc.min_count)?;
    tgt_vocab.ensure(OTHER);
    let train_ex = examples_from_documents(&train_docs, &src_vocab, &tgt_vocab);
    let valid_ex = examples_from_documents(&valid_docs, &src_vocab, &tgt_vocab);
    log::info!(
        "{} training / {} validation examples, vocab {} / {}",
        train_ex.len(),
        valid_ex.len(),
        src_vocab.len(),
        tgt_vocab.len()
    );

    let model_config = rc.model_config(src_vocab.len(), tgt_vocab.len());
    model_config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut rng = SeededRng::seed_from_u64(rc.training.seed);
    let mut model = Model::new(model_config.clone(), &mut rng)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let run_json = serde_json::to_value(&rc).map_err(Error::from)?;
    write_file(
        &out_dir.join("run_config.json"),
        (serde_json::to_string_pretty(&rc).map_err(Error::from)? + "\n").as_bytes(),
    )?;
    let log_path = out_dir.join("train.log");
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let outcome = train(&mut model, &train_ex, &valid_ex, &rc.training, &mut log_file)?;
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;

    let best = Model::from_params(model_config, outcome.best_params)?;
    for (name, m) in [("best.ckpt", best), ("final.ckpt", model)] {
        Checkpoint {
            model: m,
            source_vocab: src_vocab.clone(),
            target_vocab: tgt_vocab.clone(),
            run_config: run_json.clone(),
        }
        .save(&out_dir.join(name))?;
    }
    log::info!(
        "stopped after {} steps ({}), best validation BLEU {:.4}",
        outcome.steps,
        outcome.stop_reason.as_str(),
        outcome.early_stop.best_bleu.unwrap_or(0.0)
    );
    Ok(())
}

/// Applies `f` to every item on up to `threads` scoped workers, keeping
/// input order.
fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn emit(output: &Option<PathBuf>, body: &str) -> CliResult {
    match output {
        Some(p) => write_file(p, body.as_bytes()),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

pub fn cmd_translate(a: &TranslateArgs, threads: usize) -> CliResult {
    if a.beam == 0 || a.max_len == 0 {
        return Err(CliError::Usage("--beam and --max-len must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let docs = load_source(&a.source, a.docs.as_deref())?;
    if docs.is_empty() {
        return Err(Error::contract(format!("{} holds no sentences", a.source.display())).into());
    }
    let examples: Vec<ContextualExample> = examples_from_documents(&docs, &ckpt.source_vocab, &ckpt.target_vocab);
    let config = BeamConfig {
        beam_size: a.beam,
        max_len: a.max_len,
        length_norm: a.length_norm,
    };
    let results = parallel_map(&examples, threads, |ex| beam_best(&ckpt.model, ex, &config));
    let mut out = String::new();
    for r in results {
        out.push_str(&ckpt.target_vocab.decode(&r?.tokens).join(" "));
        out.push('\n');
    }
    emit(&a.output, &out)
}

pub fn cmd_predict_pronouns(a: &PredictArgs, threads: usize) -> CliResult {
    let set = PronounSet::by_name(&a.pronouns).map_err(|e| CliError::Usage(e.to_string()))?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let docs = pronoun::read_task_file(&a.task)?;
    let inst = pronoun::instances(&docs, &ckpt.source_vocab, &ckpt.target_vocab, &set)?;
    set.class_ids(&ckpt.target_vocab)?;
    let results = parallel_map(&inst, threads, |i| {
        pronoun::predict(&ckpt.model, i, &set, &ckpt.target_vocab, a.cap)
    });
    let mut out = String::new();
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut skipped = 0;
    for (n, (i, r)) in inst.iter().zip(results).enumerate() {
        if i.slots().is_empty() {
            continue;
        }
        match r {
            Ok(p) => {
                let names: Vec<&str> = p.classes.iter().map(|&c| set.classes()[c].as_str()).collect();
                out.push_str(&format!("{}\t{}\n", n + 1, names.join("\t")));
                if let Some(g) = &i.gold {
                    preds.extend(p.classes.iter().copied());
                    golds.extend(g.iter().copied());
                }
            }
            Err(Error::CapExceeded { count, .. }) => {
                skipped += 1;
                out.push_str(&format!("{}\tSKIPPED\t{count} candidates\n", n + 1));
            }
            Err(e) => return Err(e.into()),
        }
    }
    emit(&a.output, &out)?;
    if skipped > 0 {
        eprintln!("lcnmt: {skipped} instance(s) skipped: candidate count above --cap {}", a.cap);
    }
    if !golds.is_empty() {
        let report = pronoun::evaluate(&preds, &golds, &set)?;
        println!("{report}");
    }
    Ok(())
}

fn read_tokenized(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(tokenize).collect())
}

pub fn cmd_score(a: &ScoreArgs) -> CliResult {
    let hyps = read_tokenized(&a.hyp)?;
    let refs = read_tokenized(&a.reference)?;
    if hyps.len() != refs.len() {
        return Err(Error::Alignment {
            left: a.hyp.clone(),
            left_lines: hyps.len(),
            right: a.reference.clone(),
            right_lines: refs.len(),
        }
        .into());
    }
    println!("{}", score_report(&hyps, &refs)?);
    Ok(())
}

pub fn cmd_make_synthetic(a: &SyntheticArgs) -> CliResult {
    let docs = generate_synthetic(a.task, a.size, a.vocab_size, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let stem = a.stem.clone().unwrap_or_else(|| match a.task {
        SyntheticTask::Copy => "copy".into(),
        SyntheticTask::ContextPronoun => "context-pronoun".into(),
    });
    write_parallel(&docs, &a.out_dir, &stem)?;
    if a.task == SyntheticTask::ContextPronoun {
        let set = PronounSet::synthetic();
        let records: Vec<_> = docs.iter().map(|d| pronoun::mask_pronouns(d, &set)).collect();
        write_file(
            &a.out_dir.join(format!("{stem}.task")),
            pronoun::format_task(&records).as_bytes(),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn parser_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["lcnmt", "--help"]), 0);
        assert_eq!(run(["lcnmt", "frobnicate"]), 1);
        assert_eq!(run(["lcnmt", "score"]), 1);
        assert_eq!(run(["lcnmt", "train"]), 1);
        assert_eq!(run(["lcnmt", "score", "--hyp", "/nonexistent/h", "--ref", "/nonexistent/r"]), 2);
    }

    #[test]
    fn run_config_round_trips() {
        let mut rc = RunConfig {
            mode: Mode::LcNmt,
            train_source: Some("a.src".into()),
            ..RunConfig::default()
        };
        rc.training.fraction = 0.2;
        let json = serde_json::to_string(&rc).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rc);
        let partial: RunConfig = serde_json::from_str(r#"{"mode": "lc-nmt"}"#).unwrap();
        assert_eq!(partial.mode, Mode::LcNmt);
        assert_eq!(partial.training, TrainingConfig::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from(["lcnmt", "--threads", "2", "train", "--batch-size", "7", "--mode", "lc-nmt"]).unwrap();
        let Command::Train(a) = &cli.command else { panic!() };
        let mut rc = RunConfig::default();
        rc.training.patience = 9;
        rc.apply(a, cli.threads);
        assert_eq!(rc.training.batch_size, 7);
        assert_eq!(rc.training.patience, 9);
        assert_eq!(rc.training.threads, 2);
        assert_eq!(rc.mode, Mode::LcNmt);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let xs: Vec<usize> = (0..37).collect();
        assert_eq!(parallel_map(&xs, 4, |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
