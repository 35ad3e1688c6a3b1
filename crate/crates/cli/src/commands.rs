//! The subcommands as library functions. Each returns the library error so
//! the binary can map it to an exit code.

use std::fs;
use std::path::{Path, PathBuf};

use lexadapt::config::{Config, CorpusFormat, Variant};
use lexadapt::corpus::{
    build_vocabularies, char_slice, gen_synthetic_domains, parse_benchls, parse_complex_lcp, parse_cwi2018,
    subsample_indices, write_complex_lcp, AnnotatedExample, EncodedExample, Encoder, SimplificationExample, SynthSpec,
    TargetSpan, Vocabularies,
};
use lexadapt::exec::Execution;
use lexadapt::metrics::{evaluate, EvalTable, TrainingReport};
use lexadapt::model::{CwiModel, ModelSizes};
use lexadapt::nn::Checkpoint;
use lexadapt::rng::derive_seed;
use lexadapt::train::{train_multitask, train_single_task};
use lexadapt::{Error, Result};

pub const REPORT_FILE: &str = "report.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "effective-config.toml";
pub const VOCAB_FILE: &str = "vocab.json";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const SYNTH_FILE: &str = "synthetic.tsv";

const SUBSAMPLE_PURPOSE: u64 = 11;

/// Exit status for a failed command: 2 configuration, 3 data,
/// 4 checkpoint, 1 anything else.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Validation { .. } | Error::Io { .. } | Error::Json(_) | Error::Vocabulary { .. } => 3,
        Error::Checkpoint(_) => 4,
        _ => 1,
    }
}

/// Options shared by every run-style command.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// File values, then overrides, then `--seed`.
pub fn effective_config(opts: &RunOptions) -> Result<Config> {
    let text = match &opts.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut config = Config::with_overrides(&text, &opts.overrides)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir(opts: &RunOptions) -> Result<&Path> {
    let dir = opts.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_owned(), source: e })?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_owned(), source: e })
}

pub fn read_corpus(config: &Config, path: &Path) -> Result<Vec<AnnotatedExample>> {
    match config.data.format {
        CorpusFormat::Complex => parse_complex_lcp(path),
        CorpusFormat::Cwi2018 => parse_cwi2018(path, config.data.group.as_deref()),
    }
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::Config(format!("{key} is required")))
}

/// Discriminator classes: the two tasks for the multitask variant, the
/// training groups otherwise.
pub fn model_sizes(config: &Config, vocab: &Vocabularies) -> ModelSizes {
    let groups = if config.train.variant == Variant::MultitaskDa { 2 } else { vocab.groups.len() };
    ModelSizes { chars: vocab.chars.len(), tokens: vocab.tokens.len(), groups }
}

fn encoder<'v>(config: &Config, vocab: &'v Vocabularies) -> Encoder<'v> {
    Encoder { vocab, max_chars: config.model.max_chars, max_tokens: config.model.max_tokens }
}

fn group_names(examples: &[AnnotatedExample]) -> Vec<&str> {
    examples.iter().map(|e| e.group.as_str()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub report: TrainingReport,
    pub out: PathBuf,
}

/// Trains on `data.train` and writes the checkpoint, vocabulary, report,
/// metrics table and effective configuration under `--out`.
pub fn cmd_train(opts: &RunOptions, exec: Execution) -> Result<TrainOutcome> {
    let config = effective_config(opts)?;
    let out = out_dir(opts)?;
    let mut train_raw = read_corpus(&config, required(&config.data.train, "data.train")?)?;
    if let Some(n) = config.data.max_train {
        let keep = subsample_indices(train_raw.len(), n, derive_seed(config.seed, &[SUBSAMPLE_PURPOSE]));
        train_raw = keep.into_iter().map(|i| train_raw[i].clone()).collect();
    }
    let validation_raw = match &config.data.validation {
        Some(path) => read_corpus(&config, path)?,
        None => Vec::new(),
    };
    let multitask = config.train.variant == Variant::MultitaskDa;
    let simplification: Vec<SimplificationExample> = if multitask {
        parse_benchls(required(&config.data.simplification, "data.simplification")?)?
    } else {
        Vec::new()
    };
    let vocab = match &config.data.vocab {
        Some(path) => Vocabularies::load(path)?,
        None => build_vocabularies(&train_raw, &simplification),
    };
    let enc = encoder(&config, &vocab);
    let train = enc.encode_all(&train_raw, &config.train.unlabeled_groups)?;
    let validation = enc.encode_all(&validation_raw, &[])?;
    log::info!("{} training and {} validation examples", train.len(), validation.len());

    let mut model = CwiModel::new(&config.model, config.train.variant, model_sizes(&config, &vocab), config.seed)?;
    let mut report = if multitask {
        let items = simplification
            .iter()
            .map(|s| enc.encode_simplification(s))
            .collect::<Result<Vec<_>>>()?;
        train_multitask(&mut model, &train, &items, &validation, &config.train, config.seed, exec)?
    } else {
        train_single_task(&mut model, &train, &validation, &config.train, config.seed, exec)?
    };
    let (scored, groups) = if validation.is_empty() {
        (&train, group_names(&train_raw))
    } else {
        (&validation, group_names(&validation_raw))
    };
    let table = evaluate(&model, scored, &groups, exec)?;
    report.summary = Some(table.clone());

    write(&out.join(CONFIG_FILE), &config.to_toml()?)?;
    vocab.save(&out.join(VOCAB_FILE))?;
    model.store.to_checkpoint().save(&out.join(CHECKPOINT_FILE))?;
    report.save(&out.join(REPORT_FILE))?;
    write(&out.join(METRICS_FILE), &table.to_tsv())?;
    Ok(TrainOutcome { report, out: out.to_owned() })
}

/// Rebuilds the configured model and loads `checkpoint` into it. The
/// vocabulary defaults to the one saved next to the checkpoint.
pub fn load_model(config: &Config, checkpoint: &Path, vocab: Option<&Path>) -> Result<(CwiModel, Vocabularies)> {
    if !checkpoint.is_file() {
        return Err(Error::Config(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let vocab_path = match vocab {
        Some(p) => p.to_owned(),
        None => checkpoint.with_file_name(VOCAB_FILE),
    };
    if !vocab_path.is_file() {
        return Err(Error::Config(format!("vocabulary {} does not exist", vocab_path.display())));
    }
    let vocab = Vocabularies::load(&vocab_path)?;
    let ckpt = Checkpoint::load(checkpoint).map_err(|e| match e {
        Error::Json(e) => Error::Checkpoint(format!("{}: {e}", checkpoint.display())),
        other => other,
    })?;
    let mut model = CwiModel::new(&config.model, config.train.variant, model_sizes(config, &vocab), config.seed)?;
    model.store.load_checkpoint(&ckpt)?;
    Ok((model, vocab))
}

/// Scores `corpus` (or `data.test`, then `data.validation`) overall and per
/// group. The table is also written to `--out` when given.
pub fn cmd_evaluate(
    opts: &RunOptions,
    checkpoint: &Path,
    vocab: Option<&Path>,
    corpus: Option<&Path>,
    exec: Execution,
) -> Result<EvalTable> {
    let config = effective_config(opts)?;
    let path = corpus
        .or(config.data.test.as_deref())
        .or(config.data.validation.as_deref())
        .ok_or_else(|| Error::Config("no corpus given and data.test is unset".into()))?;
    let (model, vocab) = load_model(&config, checkpoint, vocab)?;
    let raw = read_corpus(&config, path)?;
    let examples: Vec<EncodedExample> = encoder(&config, &vocab).encode_all(&raw, &[])?;
    let table = evaluate(&model, &examples, &group_names(&raw), exec)?;
    if opts.out.is_some() {
        write(&out_dir(opts)?.join(METRICS_FILE), &table.to_tsv())?;
    }
    Ok(table)
}

/// Where the target sits in the sentence, in characters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanQuery {
    pub sentence: String,
    pub start: usize,
    pub end: usize,
    /// Expected surface form; checked against the slice when given.
    pub target: Option<String>,
}

/// Complexity of one target in context, clamped to [0, 1].
pub fn cmd_predict(opts: &RunOptions, checkpoint: &Path, vocab: Option<&Path>, query: &SpanQuery) -> Result<f64> {
    let config = effective_config(opts)?;
    let surface = match char_slice(&query.sentence, query.start, query.end) {
        Some(s) if !s.is_empty() => s.to_owned(),
        _ => {
            return Err(Error::Config(format!(
                "span {}..{} is not a non-empty range of a {}-character sentence",
                query.start,
                query.end,
                query.sentence.chars().count()
            )))
        }
    };
    if let Some(t) = &query.target {
        if *t != surface {
            return Err(Error::Config(format!("span {}..{} reads {surface:?}, not {t:?}", query.start, query.end)));
        }
    }
    let (model, vocab) = load_model(&config, checkpoint, vocab)?;
    let example = AnnotatedExample {
        id: "query".into(),
        group: String::new(),
        sentence: query.sentence.clone(),
        target: TargetSpan { start: query.start, end: query.end, surface },
        gold: 0.0,
        annotators: None,
    };
    let encoded = encoder(&config, &vocab).encode(&example, false)?;
    let pred = model.predict(std::slice::from_ref(&encoded), Execution::Sequential)?;
    Ok(pred[0].clamp(0.0, 1.0))
}

/// Writes the synthetic corpus as one CompLex-layout file and returns its
/// path.
pub fn cmd_synth(spec: &SynthSpec, seed: u64, out: &Path) -> Result<PathBuf> {
    let examples = gen_synthetic_domains(spec, seed)?;
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_owned(), source: e })?;
    let path = out.join(SYNTH_FILE);
    write_complex_lcp(&path, &examples)?;
    Ok(path)
}
