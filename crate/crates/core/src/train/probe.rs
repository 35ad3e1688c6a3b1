//! Classifier probes trained on frozen features.

use rand::rngs::mock::StepRng;

use super::{purpose, AdamW};
use crate::autodiff::Tensor;
use crate::config::OptimizerConfig;
use crate::corpus::{EncodedExample, EncodedSimplification};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::metrics::discriminator_accuracy;
use crate::model::{cross_entropy, CwiModel, Inputs};
use crate::nn::{Mlp3, Mode, ParamStore};
use crate::rng;

/// Evaluation-mode `concat` features, one row per example.
pub fn extract_features(model: &CwiModel, examples: &[EncodedExample], exec: Execution) -> Result<Vec<Vec<f64>>> {
    try_map_indexed(exec, examples, |_, ex| {
        let mut g = model.store.graph();
        let keep = vec![true; ex.tokens.len()];
        let x = Inputs { chars: &ex.chars, tokens: &ex.tokens, keep: &keep };
        let out = model.forward(&mut g, x, Mode::Eval, &mut StepRng::new(0, 0))?;
        Ok(g.value(out.features.concat).data().to_vec())
    })
}

/// Evaluation-mode `concat` features of masked simplification items.
pub fn simplification_features(
    model: &CwiModel,
    items: &[EncodedSimplification],
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    try_map_indexed(exec, items, |_, ex| {
        let mut g = model.store.graph();
        let out = model.mask_and_predict(&mut g, &ex.chars, &ex.tokens, ex.position, Mode::Eval, &mut StepRng::new(0, 0))?;
        Ok(g.value(out.features.concat).data().to_vec())
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub hidden: [usize; 2],
    /// Full-batch AdamW steps.
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { hidden: [32, 16], steps: 300, learning_rate: 1e-2, seed: 0 }
    }
}

fn matrix(rows: &[Vec<f64>]) -> Result<Tensor> {
    if rows.is_empty() {
        return Err(Error::Contract("probe needs at least one row".into()));
    }
    Tensor::matrix(rows)
}

/// Per-column mean and standard deviation of `rows`; constant columns get
/// a unit deviation.
fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let dim = rows.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..dim)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 { var.sqrt() } else { 1.0 }
        })
        .collect();
    (mean, std)
}

fn standardize(rows: &[Vec<f64>], mean: &[f64], std: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().zip(mean).zip(std).map(|((x, m), s)| (x - m) / s).collect())
        .collect()
}

/// Fits a fresh three-layer classifier on `(train_x, train_y)` and returns
/// its accuracy on `(test_x, test_y)`. Columns are standardised with the
/// training statistics first.
pub fn train_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    classes: usize,
    config: &ProbeConfig,
) -> Result<f64> {
    let (mean, std) = column_stats(train_x);
    let x = matrix(&standardize(train_x, &mean, &std))?;
    let dim = x.rows_cols().1;
    let mut store = ParamStore::new(rng::derive_seed(config.seed, &[purpose::PROBE]));
    let [h1, h2] = config.hidden;
    let mlp = Mlp3::new(&mut store, "probe", [dim, h1, h2, classes], 0.0)?;
    let opt_config = OptimizerConfig { learning_rate: config.learning_rate, weight_decay: 0.0, ..OptimizerConfig::default() };
    let mut opt = AdamW::new(opt_config, store.values());
    for _ in 0..config.steps {
        let grads = {
            let mut g = store.graph();
            let input = g.input(x.clone())?;
            let logits = mlp.forward(&mut g, input, Mode::Eval, &mut StepRng::new(0, 0))?;
            let loss = cross_entropy(&mut g, logits, train_y)?;
            let grads = g.backward(loss)?;
            (0..store.len())
                .map(|id| grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.values()[id].shape())))
                .collect::<Vec<_>>()
        };
        opt.step(store.values_mut(), &grads)?;
    }
    let mut g = store.graph();
    let input = g.input(matrix(&standardize(test_x, &mean, &std))?)?;
    let logits = mlp.forward(&mut g, input, Mode::Eval, &mut StepRng::new(0, 0))?;
    let (n, k) = g.value(logits).rows_cols();
    let rows: Vec<&[f64]> = (0..n).map(|r| &g.value(logits).data()[r * k..(r + 1) * k]).collect();
    discriminator_accuracy(&rows, test_y)
}
