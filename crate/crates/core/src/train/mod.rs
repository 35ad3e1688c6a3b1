//! Training loops: λ annealing, AdamW updates, the single-task adversarial
//! loop and the alternating complexity/simplification loop.

mod multitask;
mod optim;
mod probe;
mod single;

use rand::seq::SliceRandom;

pub use multitask::{multitask_gradients, train_multitask};
pub use optim::{adamw_step, adamw_step_scaled, clip_grad_norm, AdamState, AdamW};
pub use probe::{extract_features, simplification_features, train_probe, ProbeConfig};
pub use single::{batch_gradients, train_single_task};

use crate::autodiff::{Gradients, Tensor};
use crate::config::{TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::metrics::{mae, pearson};
use crate::model::{CwiModel, LossParts};
use crate::rng;

/// Run settings consumed by the loops.
pub type RunPlan = TrainConfig;

/// `λ = 2 / (1 + e^(−γ·ε)) − 1`, with `ε` the number of completed epochs.
pub fn lambda_schedule(epoch: usize, gamma: f64) -> f64 {
    2.0 / (1.0 + (-gamma * epoch as f64).exp()) - 1.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleState {
    pub epoch: usize,
    pub lambda: f64,
}

impl ScheduleState {
    /// λ for `epoch`, or the plan's fixed value when one is set.
    pub fn for_epoch(plan: &RunPlan, epoch: usize) -> Self {
        let lambda = plan
            .lambda_fixed
            .unwrap_or_else(|| lambda_schedule(epoch, plan.weights.gamma));
        ScheduleState { epoch, lambda }
    }
}

/// Coordinates of one optimisation step; every random draw inside it is a
/// function of these values.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub seed: u64,
    pub epoch: usize,
    pub batch: usize,
    pub lambda: f64,
    pub plan: &'a RunPlan,
}

impl StepContext<'_> {
    pub(crate) fn dropout_rng(&self, item: usize) -> rand_chacha::ChaCha8Rng {
        rng::stream(self.seed, &[purpose::DROPOUT, self.epoch as u64, self.batch as u64, item as u64])
    }
}

/// Summed parameter gradients of one step and the step's loss terms as
/// batch means.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub grads: Vec<Tensor>,
    pub losses: LossParts<f64>,
}

pub(crate) mod purpose {
    pub const DROPOUT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const SIMPLIFICATION_SHUFFLE: u64 = 3;
    pub const PROBE: u64 = 4;
}

/// Adds per-item gradients in item order, so the total does not depend on
/// how the items were computed.
pub(crate) fn sum_gradients(params: &[Tensor], items: Vec<Gradients>) -> Vec<Tensor> {
    let mut total: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for g in items {
        for (t, p) in total.iter_mut().zip(g.into_params()) {
            if let Some(p) = p {
                t.add_assign(&p);
            }
        }
    }
    total
}

pub(crate) fn sum_parts(items: &[LossParts<f64>]) -> LossParts<f64> {
    let add = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => Some(x + y),
        (x, None) => x,
        (None, y) => y,
    };
    items.iter().fold(LossParts::default(), |acc, p| LossParts {
        regression: add(acc.regression, p.regression),
        discriminator: add(acc.discriminator, p.discriminator),
        vae: add(acc.vae, p.vae),
        decoder: add(acc.decoder, p.decoder),
        masked_lm: add(acc.masked_lm, p.masked_lm),
    })
}

/// Mean of each part over the batches where it was present.
pub(crate) fn mean_parts(batches: &[LossParts<f64>]) -> LossParts<f64> {
    let mean = |f: fn(&LossParts<f64>) -> Option<f64>| {
        let vals: Vec<f64> = batches.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    LossParts {
        regression: mean(|p| p.regression),
        discriminator: mean(|p| p.discriminator),
        vae: mean(|p| p.vae),
        decoder: mean(|p| p.decoder),
        masked_lm: mean(|p| p.masked_lm),
    }
}

/// AdamW over every parameter, with the plan's discriminator multiplier.
pub(crate) fn optimizer(model: &CwiModel, plan: &RunPlan) -> AdamW {
    let mut opt = AdamW::new(plan.optimizer.clone(), model.store.values());
    if plan.discriminator_lr_scale != 1.0 {
        opt.lr_scale = vec![1.0; model.store.len()];
        for id in model.discriminator_params() {
            opt.lr_scale[id] = plan.discriminator_lr_scale;
        }
    }
    opt
}

/// Clips the discriminator and the remaining parameters as separate groups,
/// then applies one AdamW step.
pub(crate) fn apply_update(model: &mut CwiModel, opt: &mut AdamW, mut grads: Vec<Tensor>, clip: f64) -> Result<()> {
    let disc = model.discriminator_params();
    let rest: Vec<usize> = (0..grads.len()).filter(|i| !disc.contains(i)).collect();
    clip_grad_norm(&mut grads, &disc, clip);
    clip_grad_norm(&mut grads, &rest, clip);
    opt.step(model.store.values_mut(), &grads)
}

/// Pearson (when defined) and MAE of clamped predictions.
pub(crate) fn fit_metrics(pred: &[f64], gold: &[f64]) -> Result<(Option<f64>, f64)> {
    let pred: Vec<f64> = pred.iter().map(|p| p.clamp(0.0, 1.0)).collect();
    let r = match pearson(&pred, gold) {
        Ok(r) => Some(r),
        Err(Error::UndefinedCorrelation(_)) => None,
        Err(e) => return Err(e),
    };
    Ok((r, mae(&pred, gold)?))
}

pub(crate) fn check_model(model: &CwiModel, plan: &RunPlan) -> Result<()> {
    plan.validate()?;
    if model.variant != plan.variant {
        return Err(Error::Config(format!(
            "model was built as {} but the plan trains {}",
            model.variant.name(),
            plan.variant.name()
        )));
    }
    Ok(())
}

/// Index chunks of a seeded permutation of `0..n`.
pub(crate) fn shuffled_chunks(n: usize, size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[]));
    order.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

pub(crate) fn is_multitask(variant: Variant) -> bool {
    variant == Variant::MultitaskDa
}
