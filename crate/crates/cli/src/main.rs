use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lexadapt::corpus::SynthSpec;
use lexadapt::exec::Execution;
use lexadapt_cli::commands::{
    cmd_evaluate, cmd_predict, cmd_synth, cmd_train, exit_code, RunOptions, SpanQuery,
};
use lexadapt_cli::experiments::{adaptation_experiment, sanity_run, AdaptationSettings, SanitySettings};

/// Lexical complexity prediction with adversarial domain, language and task
/// adaptation.
///
/// Exit status: 0 success, 2 configuration error, 3 data error,
/// 4 checkpoint incompatible with the configuration.
#[derive(Parser)]
#[command(name = "lexadapt", version)]
struct Cli {
    /// Run every step on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override applied after the file, e.g. `train.epochs=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn options(self) -> RunOptions {
        RunOptions { config: self.config, overrides: self.overrides, seed: self.seed, out: self.out }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.json, vocab.json, report.jsonl,
    /// metrics.tsv and effective-config.toml under --out.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a corpus with a trained checkpoint; prints a per-group table.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to vocab.json next to the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Corpus in the configured format; defaults to data.test.
        corpus: Option<PathBuf>,
    },
    /// Print the complexity of one target span.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        sentence: String,
        /// First character of the target.
        #[arg(long)]
        start: usize,
        /// One past the last character of the target.
        #[arg(long)]
        end: usize,
        /// Expected target text, checked against the span.
        #[arg(long)]
        target: Option<String>,
    },
    /// Write a synthetic multi-domain corpus in the CompLex layout.
    Synth {
        #[command(flatten)]
        spec: SynthArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a seeded synthetic experiment and print its results.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    domains: usize,
    #[arg(long, default_value_t = 100)]
    per_domain: usize,
    #[arg(long, default_value_t = 200)]
    target_words: usize,
    #[arg(long, default_value_t = 40)]
    filler_words: usize,
    #[arg(long, default_value_t = 6)]
    fillers_per_sentence: usize,
    #[arg(long, default_value_t = 4)]
    style_words: usize,
    #[arg(long, default_value_t = 2)]
    style_per_sentence: usize,
    /// Marker/label agreement in source domains.
    #[arg(long, default_value_t = 0.8)]
    spurious: f64,
    /// Domain whose markers track the label; repeatable. All when absent.
    #[arg(long = "source-domain")]
    source_domains: Vec<usize>,
}

impl From<SynthArgs> for SynthSpec {
    fn from(a: SynthArgs) -> Self {
        SynthSpec {
            domains: a.domains,
            per_domain: a.per_domain,
            target_words: a.target_words,
            filler_words: a.filler_words,
            fillers_per_sentence: a.fillers_per_sentence,
            style_words: a.style_words,
            style_per_sentence: a.style_per_sentence,
            spurious_strength: a.spurious,
            source_domains: a.source_domains,
        }
    }
}

#[derive(Subcommand)]
enum Experiment {
    /// Baseline vs adversarial training on a two-domain corpus whose marker
    /// tokens mislead only in the target domain.
    Adaptation {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Base variant on 500 synthetic examples, scored on held-out ones.
    Sanity {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> lexadapt::Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Train { common } => {
            let outcome = cmd_train(&common.options(), exec)?;
            if let Some(table) = &outcome.report.summary {
                print!("{}", table.to_tsv());
            }
            eprintln!("artifacts written to {}", outcome.out.display());
        }
        Command::Evaluate { common, checkpoint, vocab, corpus } => {
            let table = cmd_evaluate(&common.options(), &checkpoint, vocab.as_deref(), corpus.as_deref(), exec)?;
            print!("{}", table.to_tsv());
        }
        Command::Predict { common, checkpoint, vocab, sentence, start, end, target } => {
            let query = SpanQuery { sentence, start, end, target };
            println!("{}", cmd_predict(&common.options(), &checkpoint, vocab.as_deref(), &query)?);
        }
        Command::Synth { spec, seed, out } => {
            let path = cmd_synth(&spec.into(), seed, &out)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Experiment { which: Experiment::Adaptation { seeds } } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let outcome = adaptation_experiment(&AdaptationSettings::default(), &seeds, exec)?;
            println!("seed\tbase_mae\tda_mae\tda_disc_acc\tcontrol_disc_acc\tcontrol_probe\tda_probe");
            for s in &outcome.seeds {
                println!(
                    "{}\t{:.4}\t{:.4}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
                    s.seed,
                    s.base_mae,
                    s.da_mae,
                    s.da_discriminator_accuracy,
                    s.control_discriminator_accuracy,
                    s.control_probe_accuracy,
                    s.da_probe_accuracy
                );
            }
            println!("adversarial wins on {}/{} seeds", outcome.wins(), outcome.seeds.len());
        }
        Command::Experiment { which: Experiment::Sanity { seed } } => {
            let o = sanity_run(&SanitySettings::default(), seed, exec)?;
            let r = o.validation_pearson.map_or("undefined".to_owned(), |r| format!("{r:.4}"));
            println!(
                "{} train / {} validation examples, {} epochs: pearson {r}, mae {:.4}",
                o.train_examples, o.validation_examples, o.epochs, o.validation_mae
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
