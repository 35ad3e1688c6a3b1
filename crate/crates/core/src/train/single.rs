use std::collections::BTreeSet;

use super::{
    apply_update, check_model, fit_metrics, is_multitask, mean_parts, optimizer, purpose, sum_gradients, sum_parts,
    RunPlan, ScheduleState, StepContext, StepOutput,
};
use crate::autodiff::Gradients;
use crate::config::Variant;
use crate::corpus::{make_batches, EncodedExample};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::metrics::{discriminator_accuracy, EpochRecord, TrainingReport};
use crate::model::{
    compose_loss, decoder_loss, regression_loss, reversal_scale, training_loss, CwiModel, Inputs, LossParts,
    cross_entropy, vae_loss,
};
use crate::nn::vocab::PAD;
use crate::nn::Mode;
use crate::rng;

/// Gradients of one batch. Each example gets its own graph; terms are
/// scaled so the summed loss is the batch mean of each part (`L_r` over
/// labeled rows, `L_d` over rows with a known group).
pub fn batch_gradients(
    model: &CwiModel,
    examples: &[EncodedExample],
    rows: &[usize],
    ctx: &StepContext<'_>,
    exec: Execution,
) -> Result<StepOutput> {
    let batch: Vec<&EncodedExample> = rows.iter().map(|&r| &examples[r]).collect();
    let labeled = batch.iter().filter(|e| e.labeled).count();
    let grouped = batch.iter().filter(|e| e.group.is_some()).count();
    let adversarial = model.variant.adversarial();
    let reversal = reversal_scale(&ctx.plan.weights, ctx.lambda);
    let per_batch = 1.0 / batch.len() as f64;

    let items = try_map_indexed(exec, &batch, |i, ex| -> Result<Option<(Gradients, LossParts<f64>)>> {
        let mut g = model.store.graph();
        let mut rng = ctx.dropout_rng(i);
        let keep = vec![true; ex.tokens.len()];
        let x = Inputs { chars: &ex.chars, tokens: &ex.tokens, keep: &keep };
        let out = model.forward(&mut g, x, Mode::Train, &mut rng)?;
        let mut parts = LossParts::default();
        if ex.labeled {
            let l = regression_loss(&mut g, out.prediction, &[ex.gold], ctx.plan.loss)?;
            parts.regression = Some(g.scale(l, 1.0 / labeled as f64)?);
        }
        if let (true, Some(group)) = (adversarial, ex.group) {
            let logits = model.discriminate(&mut g, &out.features, reversal)?;
            let l = cross_entropy(&mut g, logits, &[group])?;
            parts.discriminator = Some(g.scale(l, 1.0 / grouped as f64)?);
        }
        if let Some(state) = &out.vae {
            let l = vae_loss(&mut g, state, out.features.f_c)?;
            parts.vae = Some(g.scale(l, per_batch)?);
        }
        if model.variant == Variant::DecoderDa {
            let dec = model.decode(&mut g, &out.encoder, &ex.tokens, Mode::Train, &mut rng)?;
            let l = decoder_loss(&mut g, dec.logits, &ex.tokens, PAD, None)?;
            parts.decoder = Some(g.scale(l, per_batch)?);
        }
        let values = LossParts {
            regression: parts.regression.map(|v| g.scalar(v)),
            discriminator: parts.discriminator.map(|v| g.scalar(v)),
            vae: parts.vae.map(|v| g.scalar(v)),
            decoder: parts.decoder.map(|v| g.scalar(v)),
            masked_lm: None,
        };
        if values == LossParts::default() {
            // Unlabeled row in a variant with no unsupervised term.
            return Ok(None);
        }
        let total = training_loss(&mut g, &parts, &ctx.plan.weights, model.variant)?;
        Ok(Some((g.backward(total)?, values)))
    })?;
    let (grads, values): (Vec<_>, Vec<_>) = items.into_iter().flatten().unzip();
    Ok(StepOutput { grads: sum_gradients(model.store.values(), grads), losses: sum_parts(&values) })
}

/// Trains `model` in place. Examples flagged unlabeled feed only the
/// discriminator; `validation` may be empty.
pub fn train_single_task(
    model: &mut CwiModel,
    train: &[EncodedExample],
    validation: &[EncodedExample],
    plan: &RunPlan,
    seed: u64,
    exec: Execution,
) -> Result<TrainingReport> {
    check_model(model, plan)?;
    if is_multitask(plan.variant) {
        return Err(Error::Config("multitask-da is trained with train_multitask".into()));
    }
    if !train.iter().any(|e| e.labeled) {
        return Err(Error::Config("training corpus has no labeled examples".into()));
    }
    let groups: BTreeSet<usize> = train.iter().filter_map(|e| e.group).collect();
    if plan.variant.adversarial() && groups.len() < 2 {
        return Err(Error::Config(format!(
            "{} needs at least 2 groups in the training corpus, found {}",
            plan.variant.name(),
            groups.len()
        )));
    }

    let mut opt = optimizer(model, plan);
    let mut report = TrainingReport::default();
    for epoch in 0..plan.epochs() {
        let schedule = ScheduleState::for_epoch(plan, epoch);
        let batches = make_batches(train, plan.batch_size, rng::derive_seed(seed, &[purpose::SHUFFLE, epoch as u64]))?;
        let mut losses = Vec::with_capacity(batches.len());
        for (b, batch) in batches.iter().enumerate() {
            let ctx = StepContext { seed, epoch, batch: b, lambda: schedule.lambda, plan };
            let step = batch_gradients(model, train, &batch.source, &ctx, exec)?;
            apply_update(model, &mut opt, step.grads, plan.clip_norm)?;
            losses.push(step.losses);
        }
        let losses = mean_parts(&losses);
        let objective = compose_loss(&losses, &plan.weights, schedule.lambda, plan.variant)?;
        let record = epoch_metrics(model, train, validation, exec, schedule, losses, objective)?;
        log::info!(
            "epoch {epoch}: lambda {:.4} objective {:.5} train mae {:.4}",
            record.lambda,
            record.objective,
            record.train_mae
        );
        report.epochs.push(record);
    }
    report.check()?;
    Ok(report)
}

fn epoch_metrics(
    model: &CwiModel,
    train: &[EncodedExample],
    validation: &[EncodedExample],
    exec: Execution,
    schedule: ScheduleState,
    losses: LossParts<f64>,
    objective: f64,
) -> Result<EpochRecord> {
    let labeled: Vec<EncodedExample> = train.iter().filter(|e| e.labeled).cloned().collect();
    let pred = model.predict(&labeled, exec)?;
    let gold: Vec<f64> = labeled.iter().map(|e| e.gold).collect();
    let (train_pearson, train_mae) = fit_metrics(&pred, &gold)?;
    let (validation_pearson, validation_mae) = if validation.is_empty() {
        (None, None)
    } else {
        let pred = model.predict(validation, exec)?;
        let gold: Vec<f64> = validation.iter().map(|e| e.gold).collect();
        let (r, m) = fit_metrics(&pred, &gold)?;
        (r, Some(m))
    };
    let discriminator_accuracy = if model.variant.adversarial() {
        let grouped: Vec<EncodedExample> = train.iter().filter(|e| e.group.is_some()).cloned().collect();
        let logits = model.discriminator_logits(&grouped, exec)?;
        let labels: Vec<usize> = grouped.iter().filter_map(|e| e.group).collect();
        Some(discriminator_accuracy(&logits, &labels)?)
    } else {
        None
    };
    Ok(EpochRecord {
        epoch: schedule.epoch,
        lambda: schedule.lambda,
        losses,
        objective,
        train_pearson,
        train_mae,
        validation_pearson,
        validation_mae,
        discriminator_accuracy,
    })
}
