//! Seeded synthetic experiments: the two-domain adaptation comparison and
//! the small-sample sanity run.

use lexadapt::config::{ModelConfig, OptimizerConfig, TrainConfig, Variant};
use lexadapt::corpus::{
    build_vocabularies, gen_synthetic_domains, subsample_indices, AnnotatedExample, EncodedExample, Encoder,
    SynthSpec,
};
use lexadapt::exec::Execution;
use lexadapt::metrics::mae;
use lexadapt::model::{CwiModel, ModelSizes};
use lexadapt::nn::Pooling;
use lexadapt::train::{extract_features, train_probe, train_single_task, ProbeConfig};
use lexadapt::Result;

/// Two domains: a labeled source whose marker tokens track the label and an
/// unlabeled target where they do not.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationSettings {
    pub corpus: SynthSpec,
    /// Data for seed `s` is generated from `data_seed_offset + s`.
    pub data_seed_offset: u64,
    /// Leading share of each domain used for training.
    pub train_share: f64,
    pub model: ModelConfig,
    /// Plan of the adversarial run; the baseline and the λ = 0 control
    /// reuse it with the variant or λ changed.
    pub plan: TrainConfig,
    pub probe: ProbeConfig,
}

pub const SOURCE: &str = "domain0";
pub const TARGET: &str = "domain1";

impl Default for AdaptationSettings {
    fn default() -> Self {
        let mut plan = TrainConfig {
            variant: Variant::BaseDa,
            epochs: Some(15),
            batch_size: 16,
            discriminator_lr_scale: 3.0,
            unlabeled_groups: vec![TARGET.into()],
            optimizer: OptimizerConfig { learning_rate: 3e-3, ..OptimizerConfig::default() },
            ..TrainConfig::default()
        };
        plan.weights.beta = 1.0;
        plan.weights.gamma = 0.3;
        AdaptationSettings {
            corpus: SynthSpec {
                domains: 2,
                per_domain: 200,
                target_words: 150,
                filler_words: 30,
                fillers_per_sentence: 2,
                style_words: 4,
                style_per_sentence: 4,
                spurious_strength: 0.9,
                source_domains: vec![0],
            },
            data_seed_offset: 100,
            train_share: 0.75,
            model: ModelConfig {
                char_embed_dim: 8,
                char_hidden: 8,
                max_chars: 12,
                max_tokens: 16,
                d_model: 16,
                layers: 1,
                heads: 2,
                ff_dim: 32,
                pooling: Pooling::Mean,
                head_hidden: [16, 8],
                disc_hidden: [16, 8],
                dropout: 0.1,
                ..ModelConfig::default()
            },
            plan,
            probe: ProbeConfig::default(),
        }
    }
}

/// Results of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Held-out target-domain MAE of the regression-only baseline.
    pub base_mae: f64,
    /// Held-out target-domain MAE of the adversarial run.
    pub da_mae: f64,
    /// Final-epoch accuracy of the adversarial run's own discriminator.
    pub da_discriminator_accuracy: f64,
    /// Final-epoch accuracy of the λ = 0 control's own discriminator.
    pub control_discriminator_accuracy: f64,
    /// Held-out accuracy of a fresh probe on the control's frozen features.
    pub control_probe_accuracy: f64,
    /// Held-out accuracy of a fresh probe on the adversarial run's features.
    pub da_probe_accuracy: f64,
}

impl SeedOutcome {
    pub fn da_wins(&self) -> bool {
        self.da_mae < self.base_mae
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationOutcome {
    pub seeds: Vec<SeedOutcome>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

impl AdaptationOutcome {
    pub fn wins(&self) -> usize {
        self.seeds.iter().filter(|s| s.da_wins()).count()
    }

    pub fn mean_da_discriminator_accuracy(&self) -> f64 {
        mean(self.seeds.iter().map(|s| s.da_discriminator_accuracy))
    }

    pub fn mean_control_probe_accuracy(&self) -> f64 {
        mean(self.seeds.iter().map(|s| s.control_probe_accuracy))
    }

    pub fn mean_da_probe_accuracy(&self) -> f64 {
        mean(self.seeds.iter().map(|s| s.da_probe_accuracy))
    }
}

struct Split {
    vocab_sizes: ModelSizes,
    train: Vec<EncodedExample>,
    target_test: Vec<EncodedExample>,
}

fn split(settings: &AdaptationSettings, seed: u64) -> Result<Split> {
    let spec = &settings.corpus;
    let raw = gen_synthetic_domains(spec, settings.data_seed_offset + seed)?;
    let cut = (spec.per_domain as f64 * settings.train_share).round() as usize;
    let (train_raw, held): (Vec<(usize, AnnotatedExample)>, Vec<_>) =
        raw.into_iter().enumerate().partition(|(i, _)| i % spec.per_domain < cut);
    let train_raw: Vec<AnnotatedExample> = train_raw.into_iter().map(|(_, e)| e).collect();
    let test_raw: Vec<AnnotatedExample> = held.into_iter().map(|(_, e)| e).filter(|e| e.group == TARGET).collect();
    let vocab = build_vocabularies(&train_raw, &[]);
    let enc = Encoder { vocab: &vocab, max_chars: settings.model.max_chars, max_tokens: settings.model.max_tokens };
    Ok(Split {
        vocab_sizes: ModelSizes { chars: vocab.chars.len(), tokens: vocab.tokens.len(), groups: vocab.groups.len() },
        train: enc.encode_all(&train_raw, &settings.plan.unlabeled_groups)?,
        target_test: enc.encode_all(&test_raw, &[])?,
    })
}

/// Held-out accuracy of a fresh probe predicting the domain from frozen
/// features; every fourth training example is held out.
fn probe_domains(model: &CwiModel, train: &[EncodedExample], config: &ProbeConfig, exec: Execution) -> Result<f64> {
    let x = extract_features(model, train, exec)?;
    let y: Vec<usize> = train.iter().map(|e| e.group.unwrap_or(0)).collect();
    let (mut fit_x, mut fit_y, mut test_x, mut test_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, (row, label)) in x.into_iter().zip(y).enumerate() {
        if i % 4 == 0 {
            test_x.push(row);
            test_y.push(label);
        } else {
            fit_x.push(row);
            fit_y.push(label);
        }
    }
    train_probe(&fit_x, &fit_y, &test_x, &test_y, 2, config)
}

/// Baseline, adversarial run and λ = 0 control on one seed.
pub fn adaptation_seed(settings: &AdaptationSettings, seed: u64, exec: Execution) -> Result<SeedOutcome> {
    let data = split(settings, seed)?;
    let gold: Vec<f64> = data.target_test.iter().map(|e| e.gold).collect();
    let run = |plan: &TrainConfig| -> Result<(CwiModel, f64, Option<f64>)> {
        let mut model = CwiModel::new(&settings.model, plan.variant, data.vocab_sizes, seed)?;
        let report = train_single_task(&mut model, &data.train, &[], plan, seed, exec)?;
        let pred: Vec<f64> =
            model.predict(&data.target_test, exec)?.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        let acc = report.epochs.last().and_then(|e| e.discriminator_accuracy);
        Ok((model, mae(&pred, &gold)?, acc))
    };
    let base_plan = TrainConfig { variant: Variant::Base, ..settings.plan.clone() };
    let control_plan = TrainConfig { lambda_fixed: Some(0.0), ..settings.plan.clone() };
    let (_, base_mae, _) = run(&base_plan)?;
    let (da_model, da_mae, da_acc) = run(&settings.plan)?;
    let (control_model, _, control_acc) = run(&control_plan)?;
    let outcome = SeedOutcome {
        seed,
        base_mae,
        da_mae,
        da_discriminator_accuracy: da_acc.unwrap_or(f64::NAN),
        control_discriminator_accuracy: control_acc.unwrap_or(f64::NAN),
        control_probe_accuracy: probe_domains(&control_model, &data.train, &settings.probe, exec)?,
        da_probe_accuracy: probe_domains(&da_model, &data.train, &settings.probe, exec)?,
    };
    log::info!("adaptation seed {seed}: {outcome:?}");
    Ok(outcome)
}

pub fn adaptation_experiment(settings: &AdaptationSettings, seeds: &[u64], exec: Execution) -> Result<AdaptationOutcome> {
    let seeds = seeds.iter().map(|&s| adaptation_seed(settings, s, exec)).collect::<Result<_>>()?;
    Ok(AdaptationOutcome { seeds })
}

/// Base variant on a subsample of a synthetic corpus, scored on the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct SanitySettings {
    pub corpus: SynthSpec,
    pub train_examples: usize,
    pub model: ModelConfig,
    pub plan: TrainConfig,
}

impl Default for SanitySettings {
    fn default() -> Self {
        SanitySettings {
            corpus: SynthSpec { domains: 2, per_domain: 400, ..SynthSpec::default() },
            train_examples: 500,
            model: ModelConfig {
                char_embed_dim: 8,
                char_hidden: 8,
                max_chars: 12,
                max_tokens: 16,
                d_model: 16,
                layers: 1,
                heads: 2,
                ff_dim: 32,
                head_hidden: [16, 8],
                disc_hidden: [16, 8],
                ..ModelConfig::default()
            },
            plan: TrainConfig {
                variant: Variant::Base,
                epochs: Some(8),
                batch_size: 16,
                optimizer: OptimizerConfig { learning_rate: 3e-3, ..OptimizerConfig::default() },
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanityOutcome {
    pub train_examples: usize,
    pub validation_examples: usize,
    pub epochs: usize,
    pub validation_pearson: Option<f64>,
    pub validation_mae: f64,
}

pub fn sanity_run(settings: &SanitySettings, seed: u64, exec: Execution) -> Result<SanityOutcome> {
    let raw = gen_synthetic_domains(&settings.corpus, seed)?;
    let keep = subsample_indices(raw.len(), settings.train_examples, seed);
    let mut in_train = vec![false; raw.len()];
    for &i in &keep {
        in_train[i] = true;
    }
    let (train_raw, validation_raw): (Vec<_>, Vec<_>) =
        raw.into_iter().zip(in_train).partition(|(_, keep)| *keep);
    let train_raw: Vec<AnnotatedExample> = train_raw.into_iter().map(|(e, _)| e).collect();
    let validation_raw: Vec<AnnotatedExample> = validation_raw.into_iter().map(|(e, _)| e).collect();
    let vocab = build_vocabularies(&train_raw, &[]);
    let enc = Encoder { vocab: &vocab, max_chars: settings.model.max_chars, max_tokens: settings.model.max_tokens };
    let train = enc.encode_all(&train_raw, &[])?;
    let validation = enc.encode_all(&validation_raw, &[])?;
    let sizes = ModelSizes { chars: vocab.chars.len(), tokens: vocab.tokens.len(), groups: vocab.groups.len() };
    let mut model = CwiModel::new(&settings.model, settings.plan.variant, sizes, seed)?;
    let report = train_single_task(&mut model, &train, &validation, &settings.plan, seed, exec)?;
    let last = report.epochs.last().expect("at least one epoch");
    Ok(SanityOutcome {
        train_examples: train.len(),
        validation_examples: validation.len(),
        epochs: report.epochs.len(),
        validation_pearson: last.validation_pearson,
        validation_mae: last.validation_mae.unwrap_or(f64::NAN),
    })
}
