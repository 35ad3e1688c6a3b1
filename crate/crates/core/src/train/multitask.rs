use super::{
    apply_update, check_model, fit_metrics, mean_parts, optimizer, purpose, shuffled_chunks, sum_gradients, sum_parts,
    RunPlan, ScheduleState, StepContext, StepOutput,
};
use crate::autodiff::Gradients;
use crate::config::Variant;
use crate::corpus::{make_batches, EncodedExample, EncodedSimplification};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::metrics::{discriminator_accuracy, BatchRecord, EpochRecord, TrainingReport};
use crate::model::{compose_loss, cross_entropy, regression_loss, reversal_scale, training_loss, CwiModel, Inputs, LossParts};
use crate::nn::Mode;
use crate::rng;

/// Task labels of the discriminator.
pub const COMPLEXITY_TASK: usize = 0;
pub const SIMPLIFICATION_TASK: usize = 1;

enum Item<'a> {
    Complexity(&'a EncodedExample),
    Simplification(&'a EncodedSimplification),
}

/// Gradients of one alternating step: a complexity batch `e1` and a
/// simplification batch `e2`. The task discriminator sees the features of
/// both batches behind the reversal layer. Reported parts are batch means:
/// `regression` over labeled `e1` rows, `masked_lm` over `e2`, and
/// `discriminator` over `e1 ∪ e2`.
pub fn multitask_gradients(
    model: &CwiModel,
    e1: &[&EncodedExample],
    e2: &[&EncodedSimplification],
    ctx: &StepContext<'_>,
    exec: Execution,
) -> Result<StepOutput> {
    if e2.is_empty() {
        return Err(Error::Config("multitask step without simplification examples".into()));
    }
    let labeled = e1.iter().filter(|e| e.labeled).count();
    let all = (e1.len() + e2.len()) as f64;
    let reversal = reversal_scale(&ctx.plan.weights, ctx.lambda);
    let items: Vec<Item> = e1
        .iter()
        .map(|e| Item::Complexity(e))
        .chain(e2.iter().map(|e| Item::Simplification(e)))
        .collect();

    let results = try_map_indexed(exec, &items, |i, item| -> Result<(Gradients, LossParts<f64>)> {
        let mut g = model.store.graph();
        let mut rng = ctx.dropout_rng(i);
        let mut parts = LossParts::default();
        let (features, task) = match item {
            Item::Complexity(ex) => {
                let keep = vec![true; ex.tokens.len()];
                let x = Inputs { chars: &ex.chars, tokens: &ex.tokens, keep: &keep };
                let out = model.forward(&mut g, x, Mode::Train, &mut rng)?;
                if ex.labeled {
                    let l = regression_loss(&mut g, out.prediction, &[ex.gold], ctx.plan.loss)?;
                    parts.regression = Some(g.scale(l, 1.0 / labeled as f64)?);
                }
                (out.features, COMPLEXITY_TASK)
            }
            Item::Simplification(ex) => {
                let out = model.mask_and_predict(&mut g, &ex.chars, &ex.tokens, ex.position, Mode::Train, &mut rng)?;
                let l = cross_entropy(&mut g, out.logits, &[ex.label])?;
                parts.masked_lm = Some(g.scale(l, 1.0 / e2.len() as f64)?);
                (out.features, SIMPLIFICATION_TASK)
            }
        };
        let logits = model.discriminate(&mut g, &features, reversal)?;
        let l = cross_entropy(&mut g, logits, &[task])?;
        parts.discriminator = Some(g.scale(l, 1.0 / all)?);
        let values = LossParts {
            regression: parts.regression.map(|v| g.scalar(v)),
            discriminator: parts.discriminator.map(|v| g.scalar(v)),
            masked_lm: parts.masked_lm.map(|v| g.scalar(v)),
            ..LossParts::default()
        };
        let total = training_loss(&mut g, &parts, &ctx.plan.weights, Variant::MultitaskDa)?;
        Ok((g.backward(total)?, values))
    })?;
    let (grads, values): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut losses = sum_parts(&values);
    losses.regression.get_or_insert(0.0);
    Ok(StepOutput { grads: sum_gradients(model.store.values(), grads), losses })
}

/// Endless reshuffled passes over the simplification corpus.
struct Cycle {
    seed: u64,
    size: usize,
    n: usize,
    pass: u64,
    chunks: std::vec::IntoIter<Vec<usize>>,
}

impl Cycle {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        Cycle { seed, size, n, pass: 0, chunks: Vec::new().into_iter() }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        loop {
            if let Some(c) = self.chunks.next() {
                return c;
            }
            let seed = rng::derive_seed(self.seed, &[purpose::SIMPLIFICATION_SHUFFLE, self.pass]);
            self.chunks = shuffled_chunks(self.n, self.size, seed).into_iter();
            self.pass += 1;
        }
    }
}

/// Alternating loop: every step pairs one complexity batch with one
/// simplification batch of `round(batch_size · simplification_ratio)`
/// items, cycling through the simplification corpus as needed. An epoch is
/// one pass over the complexity corpus.
pub fn train_multitask(
    model: &mut CwiModel,
    complexity: &[EncodedExample],
    simplification: &[EncodedSimplification],
    validation: &[EncodedExample],
    plan: &RunPlan,
    seed: u64,
    exec: Execution,
) -> Result<TrainingReport> {
    check_model(model, plan)?;
    if plan.variant != Variant::MultitaskDa {
        return Err(Error::Config(format!("{} is trained with train_single_task", plan.variant.name())));
    }
    if simplification.is_empty() {
        return Err(Error::Config("multitask-da needs a non-empty simplification corpus".into()));
    }
    if complexity.is_empty() {
        return Err(Error::Config("multitask-da needs a non-empty complexity corpus".into()));
    }
    let classes = model.discriminator.as_ref().map_or(0, |d| d.out_dim());
    if classes != 2 {
        return Err(Error::Config(format!("the task discriminator needs 2 classes, model has {classes}")));
    }
    let e2_size = ((plan.batch_size as f64 * plan.simplification_ratio).round() as usize).max(1);
    let mut cycle = Cycle::new(simplification.len(), e2_size, seed);
    let mut opt = optimizer(model, plan);
    let mut report = TrainingReport::default();
    for epoch in 0..plan.epochs() {
        let schedule = ScheduleState::for_epoch(plan, epoch);
        let batches = make_batches(complexity, plan.batch_size, rng::derive_seed(seed, &[purpose::SHUFFLE, epoch as u64]))?;
        let mut losses = Vec::with_capacity(batches.len());
        for (b, batch) in batches.iter().enumerate() {
            let e1: Vec<&EncodedExample> = batch.source.iter().map(|&i| &complexity[i]).collect();
            let e2: Vec<&EncodedSimplification> = cycle.next_batch().into_iter().map(|i| &simplification[i]).collect();
            let ctx = StepContext { seed, epoch, batch: b, lambda: schedule.lambda, plan };
            let step = multitask_gradients(model, &e1, &e2, &ctx, exec)?;
            let (loss1, loss2, task) = (
                step.losses.regression.unwrap_or(0.0),
                step.losses.masked_lm.unwrap_or(0.0),
                step.losses.discriminator.unwrap_or(0.0),
            );
            let total = compose_loss(&step.losses, &plan.weights, schedule.lambda, plan.variant)?;
            report.batches.push(BatchRecord { epoch, batch: b, loss1, loss2, task_loss: task, total });
            apply_update(model, &mut opt, step.grads, plan.clip_norm)?;
            losses.push(step.losses);
        }
        let losses = mean_parts(&losses);
        let objective = compose_loss(&losses, &plan.weights, schedule.lambda, plan.variant)?;
        let record = epoch_metrics(model, complexity, simplification, validation, exec, schedule, losses, objective)?;
        log::info!("epoch {epoch}: lambda {:.4} objective {:.5}", record.lambda, record.objective);
        report.epochs.push(record);
    }
    report.check()?;
    Ok(report)
}

/// Evaluation-mode task logits of simplification items (no reversal).
pub(crate) fn simplification_task_logits(
    model: &CwiModel,
    items: &[EncodedSimplification],
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    try_map_indexed(exec, items, |_, ex| {
        let mut g = model.store.graph();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = model.mask_and_predict(&mut g, &ex.chars, &ex.tokens, ex.position, Mode::Eval, &mut rng)?;
        let logits = model.discriminate(&mut g, &out.features, 0.0)?;
        Ok(g.value(logits).data().to_vec())
    })
}

#[allow(clippy::too_many_arguments)]
fn epoch_metrics(
    model: &CwiModel,
    complexity: &[EncodedExample],
    simplification: &[EncodedSimplification],
    validation: &[EncodedExample],
    exec: Execution,
    schedule: ScheduleState,
    losses: LossParts<f64>,
    objective: f64,
) -> Result<EpochRecord> {
    let labeled: Vec<EncodedExample> = complexity.iter().filter(|e| e.labeled).cloned().collect();
    let (train_pearson, train_mae) = if labeled.is_empty() {
        (None, 0.0)
    } else {
        let pred = model.predict(&labeled, exec)?;
        let gold: Vec<f64> = labeled.iter().map(|e| e.gold).collect();
        fit_metrics(&pred, &gold)?
    };
    let (validation_pearson, validation_mae) = if validation.is_empty() {
        (None, None)
    } else {
        let pred = model.predict(validation, exec)?;
        let gold: Vec<f64> = validation.iter().map(|e| e.gold).collect();
        let (r, m) = fit_metrics(&pred, &gold)?;
        (r, Some(m))
    };
    let mut logits = model.discriminator_logits(complexity, exec)?;
    let mut labels = vec![COMPLEXITY_TASK; logits.len()];
    logits.extend(simplification_task_logits(model, simplification, exec)?);
    labels.resize(logits.len(), SIMPLIFICATION_TASK);
    Ok(EpochRecord {
        epoch: schedule.epoch,
        lambda: schedule.lambda,
        losses,
        objective,
        train_pearson,
        train_mae,
        validation_pearson,
        validation_mae,
        discriminator_accuracy: Some(discriminator_accuracy(&logits, &labels)?),
    })
}
