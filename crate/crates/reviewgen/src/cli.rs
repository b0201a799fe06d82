//! Command-line pipeline: one flat key=value config file, a global seed and
//! seven subcommands covering corpus synthesis through evaluation.
//!
//! Exit codes: 0 success, 1 contract/config error, 2 io error,
//! 3 verification failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::dataset::{
    corpus_stats, load_jsonl, split, synth_corpus, to_docs, write_jsonl, DatasetError, Sample,
    SplitSpec,
};
use crate::metrics;
use crate::model::{
    generate, gradcheck, prepare_all, train, ModelConfig, ModelError, Parameters, TrainConfig,
    TrainOptions,
};
use crate::retrieval::{InvertedIndex, RetrievalError};
use crate::text::{tokenize, TextError, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Contract or configuration violation (exit 1).
    #[error("{0}")]
    Contract(String),
    /// Filesystem or serialization failure (exit 2).
    #[error("{0}")]
    Io(String),
    /// A verification gate did not pass (exit 3).
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Contract(_) => 1,
            CliError::Io(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::ParamIo { .. } => CliError::Io(e.to_string()),
            _ => CliError::Contract(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Contract(e.to_string()),
        }
    }
}

impl From<TextError> for CliError {
    fn from(e: TextError) -> Self {
        CliError::Contract(e.to_string())
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        CliError::Contract(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "reviewgen",
    about = "Retrieval-augmented review-response generation pipeline",
    after_help = "Config keys (key=value file and --set overrides): run with `config-keys`."
)]
pub struct Cli {
    /// Flat key=value config file; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. --set seed=7 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    pub force: bool,
    /// Validate configuration and paths, then exit without doing work.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a deterministic synthetic corpus to `corpus`.
    Synth,
    /// Split the corpus and report per-split statistics to `output`.
    Stats,
    /// Build the retrieval index from the train split; write to `index`.
    Index,
    /// Train on the train split; write `params`, `vocab` and a loss log.
    Train,
    /// Generate responses for the `split` samples; write JSONL to `output`.
    Generate,
    /// Score generated responses against gold; write a report to `output`.
    Evaluate,
    /// Run the finite-difference gradient check on the micro configuration.
    Gradcheck,
    /// List every recognized config key with its default.
    ConfigKeys,
}

/// Everything the pipeline reads from the config file. One flat namespace;
/// every key has a default so a missing file is just "all defaults".
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // Model architecture.
    pub hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_review: usize,
    pub max_title: usize,
    pub max_store: usize,
    pub pair_cap: usize,
    pub max_properties: usize,
    pub recalled: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub sd_properties: f64,
    pub sd_recalled: f64,
    pub sd_title: f64,
    pub sd_store: f64,
    pub beam: usize,
    pub max_gen: usize,
    // Optimization.
    pub lr: f64,
    pub warmup: f64,
    pub batch: usize,
    pub epochs: usize,
    pub clip: f64,
    pub max_steps: u64,
    pub target_loss: f64,
    pub no_source_dropout: bool,
    pub resume: bool,
    // Split ratios.
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    /// Which split generate/evaluate read: train | valid | test.
    pub split: String,
    // Synthesis.
    pub samples: usize,
    pub aspects: usize,
    pub stores: usize,
    // Paths.
    pub corpus: PathBuf,
    pub index: PathBuf,
    pub params: PathBuf,
    pub vocab: PathBuf,
    pub generated: PathBuf,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::desk();
        let t = TrainConfig::default();
        RunConfig {
            seed: 42,
            hidden: m.hidden,
            enc_layers: m.enc_layers,
            dec_layers: m.dec_layers,
            heads: m.heads,
            ff: m.ff,
            max_review: m.max_review,
            max_title: m.max_title,
            max_store: m.max_store,
            pair_cap: m.pair_cap,
            max_properties: m.max_properties,
            recalled: m.recalled,
            vocab_size: m.vocab_size,
            dropout: m.dropout,
            sd_properties: m.sd_probs[0],
            sd_recalled: m.sd_probs[1],
            sd_title: m.sd_probs[2],
            sd_store: m.sd_probs[3],
            beam: m.beam,
            max_gen: m.max_gen,
            lr: t.lr,
            warmup: t.warmup,
            batch: t.batch,
            epochs: t.epochs,
            clip: t.clip,
            max_steps: t.max_steps,
            target_loss: t.target_loss,
            no_source_dropout: false,
            resume: false,
            train_ratio: 0.8,
            valid_ratio: 0.1,
            test_ratio: 0.1,
            split: "test".to_string(),
            samples: 64,
            aspects: 3,
            stores: 4,
            corpus: "corpus.jsonl".into(),
            index: "index.json".into(),
            params: "params.json".into(),
            vocab: "vocab.txt".into(),
            generated: "generated.jsonl".into(),
            output: "output.txt".into(),
        }
    }
}

macro_rules! apply_keys {
    ($cfg:expr, $key:expr, $value:expr, { $($name:ident),* $(,)? }) => {
        match $key {
            $(stringify!($name) => {
                $cfg.$name = $value.parse().map_err(|_| CliError::Contract(
                    format!("invalid value {:?} for config key {}", $value, $key),
                ))?;
            })*
            _ => {
                return Err(CliError::Contract(format!(
                    "unknown config key {:?}",
                    $key
                )))
            }
        }
    };
}

impl RunConfig {
    /// Apply one key=value assignment; unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        apply_keys!(self, key, value, {
            seed, hidden, enc_layers, dec_layers, heads, ff,
            max_review, max_title, max_store, pair_cap, max_properties,
            recalled, vocab_size, dropout,
            sd_properties, sd_recalled, sd_title, sd_store,
            beam, max_gen,
            lr, warmup, batch, epochs, clip, max_steps, target_loss,
            no_source_dropout, resume,
            train_ratio, valid_ratio, test_ratio, split,
            samples, aspects, stores,
            corpus, index, params, vocab, generated, output,
        });
        Ok(())
    }

    /// Load from an optional file, then apply command-line overrides.
    pub fn from_sources(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Contract(format!(
                        "config line {} is not key=value: {line:?}",
                        lineno + 1
                    ))
                })?;
                cfg.apply(key.trim(), value.trim())?;
            }
        }
        for assignment in overrides {
            let (key, value) = assignment.split_once('=').ok_or_else(|| {
                CliError::Contract(format!("override is not key=value: {assignment:?}"))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            heads: self.heads,
            ff: self.ff,
            max_review: self.max_review,
            max_title: self.max_title,
            max_store: self.max_store,
            pair_cap: self.pair_cap,
            max_properties: self.max_properties,
            recalled: self.recalled,
            vocab_size: self.vocab_size,
            dropout: self.dropout,
            sd_probs: [
                self.sd_properties,
                self.sd_recalled,
                self.sd_title,
                self.sd_store,
            ],
            beam: self.beam,
            max_gen: self.max_gen,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            warmup: self.warmup,
            batch: self.batch,
            epochs: self.epochs,
            clip: self.clip,
            max_steps: self.max_steps,
            target_loss: self.target_loss,
        }
    }

    fn ratios(&self) -> [f64; 3] {
        [self.train_ratio, self.valid_ratio, self.test_ratio]
    }

    fn selected<'a>(&self, spec: &'a SplitSpec) -> Result<&'a Vec<Sample>, CliError> {
        match self.split.as_str() {
            "train" => Ok(&spec.train),
            "valid" => Ok(&spec.valid),
            "test" => Ok(&spec.test),
            other => Err(CliError::Contract(format!(
                "split must be train, valid or test, got {other:?}"
            ))),
        }
    }
}

fn require_readable(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Io(format!(
            "{what} file {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Io(format!(
            "output {} exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() && !dir.is_dir() {
            return Err(CliError::Io(format!(
                "output directory {} does not exist",
                dir.display()
            )));
        }
    }
    Ok(())
}

fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn load_split(cfg: &RunConfig) -> Result<SplitSpec, CliError> {
    let samples = load_jsonl(&cfg.corpus)?;
    Ok(split(&samples, cfg.ratios(), cfg.seed)?)
}

fn build_vocab(train_split: &[Sample], max_size: usize) -> Result<Vocab, CliError> {
    let texts = train_split.iter().flat_map(|s| {
        let mut parts = vec![
            s.review.clone(),
            s.response.clone(),
            s.title.clone(),
            s.store_name.clone(),
        ];
        for (k, v) in &s.properties {
            parts.push(k.clone());
            parts.push(v.clone());
        }
        parts
    });
    Ok(Vocab::build(texts, max_size)?)
}

fn load_index(path: &Path) -> Result<InvertedIndex, CliError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read index {}: {e}", path.display())))?;
    serde_json::from_str(&body)
        .map_err(|e| CliError::Contract(format!("malformed index {}: {e}", path.display())))
}

/// One generated line of cmd_generate output.
#[derive(Debug, Deserialize)]
struct GeneratedLine {
    #[allow(dead_code)]
    review: String,
    generated_response: String,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::from_sources(cli.config.as_deref(), &cli.sets)?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg, cli.force, cli.dry_run),
        Command::Stats => cmd_stats(&cfg, cli.force, cli.dry_run),
        Command::Index => cmd_index(&cfg, cli.force, cli.dry_run),
        Command::Train => cmd_train(&cfg, cli.dry_run),
        Command::Generate => cmd_generate(&cfg, cli.force, cli.dry_run),
        Command::Evaluate => cmd_evaluate(&cfg, cli.force, cli.dry_run),
        Command::Gradcheck => cmd_gradcheck(&cfg, cli.dry_run),
        Command::ConfigKeys => {
            print!("{}", config_keys_help());
            Ok(())
        }
    }
}

pub fn config_keys_help() -> String {
    let d = RunConfig::default();
    let mut out = String::from("# recognized config keys and defaults\n");
    let pairs: Vec<(&str, String)> = vec![
        ("seed", d.seed.to_string()),
        ("hidden", d.hidden.to_string()),
        ("enc_layers", d.enc_layers.to_string()),
        ("dec_layers", d.dec_layers.to_string()),
        ("heads", d.heads.to_string()),
        ("ff", d.ff.to_string()),
        ("max_review", d.max_review.to_string()),
        ("max_title", d.max_title.to_string()),
        ("max_store", d.max_store.to_string()),
        ("pair_cap", d.pair_cap.to_string()),
        ("max_properties", d.max_properties.to_string()),
        ("recalled", d.recalled.to_string()),
        ("vocab_size", d.vocab_size.to_string()),
        ("dropout", d.dropout.to_string()),
        ("sd_properties", d.sd_properties.to_string()),
        ("sd_recalled", d.sd_recalled.to_string()),
        ("sd_title", d.sd_title.to_string()),
        ("sd_store", d.sd_store.to_string()),
        ("beam", d.beam.to_string()),
        ("max_gen", d.max_gen.to_string()),
        ("lr", d.lr.to_string()),
        ("warmup", d.warmup.to_string()),
        ("batch", d.batch.to_string()),
        ("epochs", d.epochs.to_string()),
        ("clip", d.clip.to_string()),
        ("max_steps", d.max_steps.to_string()),
        ("target_loss", d.target_loss.to_string()),
        ("no_source_dropout", d.no_source_dropout.to_string()),
        ("resume", d.resume.to_string()),
        ("train_ratio", d.train_ratio.to_string()),
        ("valid_ratio", d.valid_ratio.to_string()),
        ("test_ratio", d.test_ratio.to_string()),
        ("split", d.split.clone()),
        ("samples", d.samples.to_string()),
        ("aspects", d.aspects.to_string()),
        ("stores", d.stores.to_string()),
        ("corpus", d.corpus.display().to_string()),
        ("index", d.index.display().to_string()),
        ("params", d.params.display().to_string()),
        ("vocab", d.vocab.display().to_string()),
        ("generated", d.generated.display().to_string()),
        ("output", d.output.display().to_string()),
    ];
    for (k, v) in pairs {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

fn cmd_synth(cfg: &RunConfig, force: bool, dry_run: bool) -> Result<(), CliError> {
    refuse_overwrite(&cfg.corpus, force)?;
    if cfg.samples == 0 || cfg.aspects == 0 || cfg.stores == 0 {
        return Err(CliError::Contract(
            "samples, aspects and stores must be >= 1".to_string(),
        ));
    }
    if dry_run {
        return Ok(());
    }
    let samples = synth_corpus(cfg.seed, cfg.samples, cfg.aspects, cfg.stores);
    write_jsonl(&cfg.corpus, &samples)?;
    println!("wrote {} samples to {}", samples.len(), cfg.corpus.display());
    Ok(())
}

fn cmd_stats(cfg: &RunConfig, force: bool, dry_run: bool) -> Result<(), CliError> {
    require_readable(&cfg.corpus, "corpus")?;
    refuse_overwrite(&cfg.output, force)?;
    if dry_run {
        return Ok(());
    }
    let spec = load_split(cfg)?;
    let index = if cfg.index.is_file() {
        Some(load_index(&cfg.index)?)
    } else {
        None
    };
    let stats = corpus_stats(&spec, index.as_ref().map(|i| (i, cfg.recalled)));
    let body = stats.to_lines();
    write_text(&cfg.output, &body)?;
    print!("{body}");
    Ok(())
}

fn cmd_index(cfg: &RunConfig, force: bool, dry_run: bool) -> Result<(), CliError> {
    require_readable(&cfg.corpus, "corpus")?;
    refuse_overwrite(&cfg.index, force)?;
    if dry_run {
        return Ok(());
    }
    let spec = load_split(cfg)?;
    let index = InvertedIndex::build(to_docs(&spec.train))?;
    let body = serde_json::to_string(&index)
        .map_err(|e| CliError::Io(format!("cannot serialize index: {e}")))?;
    write_text(&cfg.index, &body)?;
    println!("indexed {} train docs into {}", index.len(), cfg.index.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, dry_run: bool) -> Result<(), CliError> {
    require_readable(&cfg.corpus, "corpus")?;
    let model_cfg = cfg.model_config();
    model_cfg.validate()?;
    cfg.train_config().validate()?;
    if cfg.resume {
        require_readable(&cfg.params, "resume parameters")?;
    }
    if dry_run {
        return Ok(());
    }
    let spec = load_split(cfg)?;
    let index = if cfg.index.is_file() {
        load_index(&cfg.index)?
    } else {
        InvertedIndex::build(to_docs(&spec.train))?
    };
    let vocab = if cfg.resume {
        let text = std::fs::read_to_string(&cfg.vocab)
            .map_err(|e| CliError::Io(format!("cannot read vocab {}: {e}", cfg.vocab.display())))?;
        Vocab::from_lines(&text)?
    } else {
        build_vocab(&spec.train, cfg.vocab_size)?
    };
    let opts = TrainOptions {
        start: if cfg.resume {
            Some(Parameters::load(&cfg.params)?)
        } else {
            None
        },
        no_source_dropout: cfg.no_source_dropout,
    };
    let outcome = train(&model_cfg, &cfg.train_config(), &spec.train, &index, &vocab, opts)?;
    outcome.params.save(&cfg.params)?;
    write_text(&cfg.vocab, &vocab.to_lines())?;
    let mut log = String::new();
    for (i, loss) in outcome.epoch_losses.iter().enumerate() {
        let _ = writeln!(log, "epoch={} loss={loss}", i + 1);
    }
    write_text(&cfg.output, &log)?;
    println!(
        "trained {} steps over {} epochs; final loss {}",
        outcome.steps,
        outcome.epoch_losses.len(),
        outcome.epoch_losses.last().unwrap_or(&f64::NAN)
    );
    Ok(())
}

fn cmd_generate(cfg: &RunConfig, force: bool, dry_run: bool) -> Result<(), CliError> {
    require_readable(&cfg.corpus, "corpus")?;
    require_readable(&cfg.params, "parameters")?;
    require_readable(&cfg.vocab, "vocab")?;
    refuse_overwrite(&cfg.generated, force)?;
    if dry_run {
        return Ok(());
    }
    let spec = load_split(cfg)?;
    let samples = cfg.selected(&spec)?;
    let index = if cfg.index.is_file() {
        load_index(&cfg.index)?
    } else {
        InvertedIndex::build(to_docs(&spec.train))?
    };
    let vocab_text = std::fs::read_to_string(&cfg.vocab)
        .map_err(|e| CliError::Io(format!("cannot read vocab {}: {e}", cfg.vocab.display())))?;
    let vocab = Vocab::from_lines(&vocab_text)?;
    let params = Parameters::load(&cfg.params)?;
    let prepared = prepare_all(samples, Some(&index), &vocab, &params.config)?;
    let mut out = String::new();
    for (sample, prep) in samples.iter().zip(&prepared) {
        let response = generate(&params, &prep.sources, &vocab, cfg.beam)?;
        let line = serde_json::json!({
            "review": sample.review,
            "generated_response": response.surfaces.join(" "),
        });
        let _ = writeln!(out, "{line}");
    }
    write_text(&cfg.generated, &out)?;
    println!(
        "generated {} responses into {}",
        samples.len(),
        cfg.generated.display()
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, force: bool, dry_run: bool) -> Result<(), CliError> {
    require_readable(&cfg.corpus, "corpus")?;
    require_readable(&cfg.generated, "generated")?;
    refuse_overwrite(&cfg.output, force)?;
    if dry_run {
        return Ok(());
    }
    let spec = load_split(cfg)?;
    let gold = cfg.selected(&spec)?;
    let text = std::fs::read_to_string(&cfg.generated)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", cfg.generated.display())))?;
    let mut candidates = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: GeneratedLine = serde_json::from_str(line).map_err(|e| {
            CliError::Contract(format!("generated line {}: {e}", i + 1))
        })?;
        candidates.push(tokenize(&parsed.generated_response));
    }
    if candidates.len() != gold.len() {
        return Err(CliError::Contract(format!(
            "generated file has {} lines but the {} split has {} samples",
            candidates.len(),
            cfg.split,
            gold.len()
        )));
    }
    let references: Vec<Vec<String>> = gold.iter().map(|s| tokenize(&s.response)).collect();
    let report = metrics::evaluate(&candidates, &references)
        .map_err(|e| CliError::Contract(e.to_string()))?;
    let body = report.to_lines();
    write_text(&cfg.output, &body)?;
    print!("{body}");
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, dry_run: bool) -> Result<(), CliError> {
    // Always runs on the micro configuration; only the seed follows the
    // config (the desk model would take far longer than the gate allows).
    let mut model_cfg = ModelConfig::micro();
    model_cfg.seed = cfg.seed;
    if dry_run {
        return Ok(());
    }
    let report = gradcheck(&model_cfg, 1e-4)?;
    for (name, err) in &report.groups {
        println!("{name} rel_err={err:.3e}");
    }
    println!("max_rel_err={:.3e} tolerance={:.0e}", report.max_rel_err(), report.tolerance);
    if report.pass() {
        println!("gradcheck: PASS");
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed: max relative error {:.3e} exceeds {:.0e}",
            report.max_rel_err(),
            report.tolerance
        )))
    }
}

/// Helper shared by tests: run evaluation on in-memory token lists.
pub fn evaluate_pairs(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
) -> Result<metrics::EvalReport, CliError> {
    metrics::evaluate(candidates, references).map_err(|e| CliError::Contract(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn config_defaults_round_trip_through_keys_help() {
        // Every emitted default line must re-apply cleanly.
        let mut cfg = RunConfig::default();
        for line in config_keys_help().lines().skip(1) {
            let (k, v) = line.split_once('=').unwrap();
            cfg.apply(k, v).unwrap();
        }
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("not_a_key", "1").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = cfg.apply("hidden", "not-a-number").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn config_file_and_overrides_compose() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nseed=9\nhidden=32\n\nbeam=2\n").unwrap();
        let cfg =
            RunConfig::from_sources(Some(&path), &["hidden=16".to_string()]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.hidden, 16); // override wins
        assert_eq!(cfg.beam, 2);

        std::fs::write(&path, "bogus line\n").unwrap();
        assert!(RunConfig::from_sources(Some(&path), &[]).is_err());
    }

    #[test]
    fn model_and_train_configs_mirror_run_config() {
        let mut cfg = RunConfig::default();
        cfg.apply("sd_recalled", "0.5").unwrap();
        cfg.apply("lr", "0.001").unwrap();
        assert_eq!(cfg.model_config().sd_probs[1], 0.5);
        assert_eq!(cfg.train_config().lr, 0.001);
    }

    #[test]
    fn synth_refuses_overwrite_without_force() {
        let dir = tempdir().unwrap();
        let corpus = dir.path().join("c.jsonl");
        let mut cfg = RunConfig {
            corpus: corpus.clone(),
            samples: 4,
            ..RunConfig::default()
        };
        cfg.stores = 2;
        cmd_synth(&cfg, false, false).unwrap();
        let first = std::fs::read_to_string(&corpus).unwrap();
        let err = cmd_synth(&cfg, false, false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        // Same seed with --force reproduces the identical file.
        cmd_synth(&cfg, true, false).unwrap();
        assert_eq!(std::fs::read_to_string(&corpus).unwrap(), first);
    }

    #[test]
    fn synth_missing_directory_is_a_path_error() {
        let cfg = RunConfig {
            corpus: PathBuf::from("/nonexistent-dir-xyz/c.jsonl"),
            ..RunConfig::default()
        };
        let err = cmd_synth(&cfg, false, false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn dry_run_does_no_work() {
        let dir = tempdir().unwrap();
        let corpus = dir.path().join("c.jsonl");
        let cfg = RunConfig {
            corpus: corpus.clone(),
            ..RunConfig::default()
        };
        cmd_synth(&cfg, false, true).unwrap();
        assert!(!corpus.exists());
    }

    #[test]
    fn stats_report_schema() {
        let dir = tempdir().unwrap();
        let corpus = dir.path().join("c.jsonl");
        let output = dir.path().join("stats.txt");
        let cfg = RunConfig {
            corpus,
            output: output.clone(),
            samples: 24,
            stores: 3,
            train_ratio: 0.5,
            valid_ratio: 0.25,
            test_ratio: 0.25,
            ..RunConfig::default()
        };
        cmd_synth(&cfg, false, false).unwrap();
        cmd_stats(&cfg, false, false).unwrap();
        let body = std::fs::read_to_string(&output).unwrap();
        for key in [
            "train_count=",
            "review_len_min=",
            "response_len_avg=",
            "title_relevance_f1=",
            "properties_relevance_r=",
        ] {
            assert!(body.contains(key), "missing {key} in:\n{body}");
        }
        // No index supplied: recalled relevance absent.
        assert!(!body.contains("recalled_relevance"));
    }

    #[test]
    fn index_then_stats_includes_recalled_relevance() {
        let dir = tempdir().unwrap();
        let cfg = RunConfig {
            corpus: dir.path().join("c.jsonl"),
            index: dir.path().join("i.json"),
            output: dir.path().join("stats.txt"),
            samples: 24,
            stores: 2,
            ..RunConfig::default()
        };
        cmd_synth(&cfg, false, false).unwrap();
        cmd_index(&cfg, false, false).unwrap();
        cmd_stats(&cfg, false, false).unwrap();
        let body = std::fs::read_to_string(&cfg.output).unwrap();
        assert!(body.contains("recalled_relevance_f1="));
    }

    #[test]
    fn evaluate_rejects_misaligned_files() {
        let dir = tempdir().unwrap();
        let cfg = RunConfig {
            corpus: dir.path().join("c.jsonl"),
            generated: dir.path().join("gen.jsonl"),
            output: dir.path().join("report.txt"),
            samples: 16,
            stores: 2,
            ..RunConfig::default()
        };
        cmd_synth(&cfg, false, false).unwrap();
        // More generated lines than any split can hold.
        let line = "{\"review\":\"r\",\"generated_response\":\"a b\"}\n";
        std::fs::write(&cfg.generated, line.repeat(17)).unwrap();
        let err = cmd_evaluate(&cfg, false, false).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("split has"));
    }
}
