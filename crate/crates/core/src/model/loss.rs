use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::config::{LossKind, LossWeights, Variant};
use crate::error::{Error, Result};

/// Mean absolute (`l1`) or mean squared (`mse`) difference.
pub fn regression_loss(g: &mut Graph, pred: Var, gold: &[f64], kind: LossKind) -> Result<Var> {
    if gold.is_empty() {
        return Err(Error::Contract("regression loss over an empty batch".into()));
    }
    if g.value(pred).len() != gold.len() {
        return Err(Error::dim("regression_loss", g.shape(pred), &[gold.len()]));
    }
    let pred = g.reshape(pred, &[gold.len()])?;
    let target = g.input(Tensor::vector(gold.to_vec()))?;
    let diff = g.sub(pred, target)?;
    let per = match kind {
        LossKind::L1 => g.abs(diff)?,
        LossKind::Mse => g.mul(diff, diff)?,
    };
    g.mean(per)
}

/// Batch mean of `−log softmax(logits_b)[labels_b]`. Accepts `[K]` with one
/// label or `[B × K]`.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, cols) = g.value(logits).rows_cols();
    if rows != labels.len() || labels.is_empty() {
        return Err(Error::dim("cross_entropy", g.shape(logits), &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
        return Err(Error::Contract(format!("label {bad} outside {cols} classes")));
    }
    let logp = g.log_softmax(logits)?;
    let total = g.nll(logp, labels, &vec![1.0; rows])?;
    g.scale(total, 1.0 / rows as f64)
}

/// Loss terms of one composition; `discriminator` holds the domain,
/// language or task classifier loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub regression: Option<T>,
    pub discriminator: Option<T>,
    pub vae: Option<T>,
    pub decoder: Option<T>,
    pub masked_lm: Option<T>,
}

impl<T> Default for LossParts<T> {
    fn default() -> Self {
        LossParts { regression: None, discriminator: None, vae: None, decoder: None, masked_lm: None }
    }
}

impl<T: Copy> LossParts<T> {
    fn named(&self) -> [(&'static str, Option<T>); 5] {
        [
            ("regression", self.regression),
            ("discriminator", self.discriminator),
            ("vae", self.vae),
            ("decoder", self.decoder),
            ("masked_lm", self.masked_lm),
        ]
    }
}

/// Which parts a variant uses, in [`LossParts`] field order.
fn uses(variant: Variant) -> [bool; 5] {
    match variant {
        Variant::Base => [true, false, false, false, false],
        Variant::BaseDa => [true, true, false, false, false],
        Variant::VaeDa => [true, true, true, false, false],
        Variant::DecoderDa => [true, true, false, true, false],
        Variant::MultitaskDa => [true, true, false, false, true],
    }
}

fn check_unused<T: Copy>(parts: &LossParts<T>, variant: Variant) -> Result<()> {
    for ((name, part), used) in parts.named().into_iter().zip(uses(variant)) {
        if part.is_some() && !used {
            return Err(Error::Config(format!("{} does not use a {name} loss", variant.name())));
        }
    }
    Ok(())
}

/// The variant's objective value:
///
/// | variant        | objective                              |
/// |----------------|----------------------------------------|
/// | `base`         | `L_r`                                  |
/// | `base-da`      | `L_r − βλ·L_d`                         |
/// | `vae-da`       | `L_r − βλ·L_d + α_vae·L_v`             |
/// | `decoder-da`   | `L_r − βλ·L_d + α_dec·L_dec`           |
/// | `multitask-da` | `L_r + w_ml·L_ML − βλ·α_task·L_task`   |
///
/// Every part the variant references must be present.
pub fn compose_loss(parts: &LossParts<f64>, weights: &LossWeights, lambda: f64, variant: Variant) -> Result<f64> {
    check_unused(parts, variant)?;
    for ((name, part), used) in parts.named().into_iter().zip(uses(variant)) {
        if used && part.is_none() {
            return Err(Error::Config(format!("{} needs a {name} loss", variant.name())));
        }
    }
    let reversal = weights.beta * lambda;
    let d = parts.discriminator.unwrap_or(0.0);
    let r = parts.regression.unwrap_or(0.0);
    Ok(match variant {
        Variant::Base => r,
        Variant::BaseDa => r - reversal * d,
        Variant::VaeDa => r - reversal * d + weights.alpha_vae * parts.vae.unwrap_or(0.0),
        Variant::DecoderDa => r - reversal * d + weights.alpha_dec * parts.decoder.unwrap_or(0.0),
        Variant::MultitaskDa => {
            r + weights.ml_weight * parts.masked_lm.unwrap_or(0.0) - reversal * weights.alpha_task * d
        }
    })
}

/// Scale applied by the gradient-reversal layer in front of the discriminator.
pub fn reversal_scale(weights: &LossWeights, lambda: f64) -> f64 {
    weights.beta * lambda
}

/// Differentiable counterpart of [`compose_loss`]. The discriminator part
/// must already sit behind `grad_reverse(·, βλ)`, so it enters with a plus
/// sign: shared parameters then receive `∂L_r − βλ·∂L_d` while the
/// discriminator's own parameters receive `+∂L_d`. Absent parts are skipped,
/// since a single example rarely carries every term.
pub fn training_loss(g: &mut Graph, parts: &LossParts<Var>, weights: &LossWeights, variant: Variant) -> Result<Var> {
    check_unused(parts, variant)?;
    let disc_weight = if variant == Variant::MultitaskDa { weights.alpha_task } else { 1.0 };
    let terms = [
        (parts.regression, 1.0),
        (parts.discriminator, disc_weight),
        (parts.vae, weights.alpha_vae),
        (parts.decoder, weights.alpha_dec),
        (parts.masked_lm, weights.ml_weight),
    ];
    let mut total: Option<Var> = None;
    for (part, w) in terms {
        let Some(v) = part else { continue };
        let v = if w == 1.0 { v } else { g.scale(v, w)? };
        total = Some(match total {
            Some(t) => g.add(t, v)?,
            None => v,
        });
    }
    total.ok_or_else(|| Error::Contract("no loss terms to combine".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(g: &mut Graph, v: Vec<f64>) -> Var {
        g.input(Tensor::vector(v)).unwrap()
    }

    #[test]
    fn regression_examples() {
        let mut g = Graph::detached();
        for kind in [LossKind::L1, LossKind::Mse] {
            let p = input(&mut g, vec![0.3, 0.6]);
            let l = regression_loss(&mut g, p, &[0.3, 0.6], kind).unwrap();
            assert_eq!(g.scalar(l), 0.0);
            let p = input(&mut g, vec![0.0, 1.0]);
            let l = regression_loss(&mut g, p, &[1.0, 0.0], kind).unwrap();
            assert_eq!(g.scalar(l), 1.0);
        }
        let p = input(&mut g, vec![0.2, 0.4, 0.9]);
        let l1 = regression_loss(&mut g, p, &[0.1, 0.5, 0.7], LossKind::L1).unwrap();
        let mse = regression_loss(&mut g, p, &[0.1, 0.5, 0.7], LossKind::Mse).unwrap();
        assert!((g.scalar(l1) - 0.4 / 3.0).abs() < 1e-12);
        assert!((g.scalar(mse) - 0.02).abs() < 1e-12);
        assert!(matches!(regression_loss(&mut g, p, &[], LossKind::L1), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::detached();
        let u = input(&mut g, vec![0.0; 3]);
        let l = cross_entropy(&mut g, u, &[1]).unwrap();
        assert!((g.scalar(l) - 1.09861228866811).abs() < 1e-12);
        let peak = input(&mut g, vec![50.0, 0.0, 0.0]);
        let l = cross_entropy(&mut g, peak, &[0]).unwrap();
        assert!(g.scalar(l) < 1e-20);
        assert!(matches!(cross_entropy(&mut g, peak, &[3]), Err(Error::Contract(_))));

        let logits = g.input(Tensor::matrix(&[vec![0.2, -1.0, 0.7]]).unwrap()).unwrap();
        let ce = cross_entropy(&mut g, logits, &[2]).unwrap();
        let dec = super::super::decoder::decoder_loss(&mut g, logits, &[2], usize::MAX, None).unwrap();
        assert_eq!(g.scalar(ce), g.scalar(dec));
    }

    #[test]
    fn cross_entropy_batch_mean() {
        let mut g = Graph::detached();
        let logits = g.input(Tensor::matrix(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap()).unwrap();
        let l = cross_entropy(&mut g, logits, &[0, 1]).unwrap();
        assert!((g.scalar(l) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn objective_examples() {
        let w = LossWeights::default();
        let p = LossParts { regression: Some(1.0), discriminator: Some(0.5), ..Default::default() };
        assert!((compose_loss(&p, &w, 0.5, Variant::BaseDa).unwrap() - 0.95).abs() < 1e-15);
        let v = LossParts { vae: Some(2.0), ..p };
        assert!((compose_loss(&v, &w, 0.5, Variant::VaeDa).unwrap() - 1.15).abs() < 1e-15);
        assert_eq!(compose_loss(&p, &w, 0.0, Variant::BaseDa).unwrap(), 1.0);
    }

    #[test]
    fn missing_or_foreign_parts_rejected() {
        let w = LossWeights::default();
        let p = LossParts { regression: Some(1.0), discriminator: Some(0.5), ..Default::default() };
        assert!(matches!(compose_loss(&p, &w, 0.5, Variant::VaeDa), Err(Error::Config(_))));
        assert!(matches!(compose_loss(&p, &w, 0.5, Variant::Base), Err(Error::Config(_))));
        let r = LossParts { regression: Some(1.0), ..Default::default() };
        assert!(matches!(compose_loss(&r, &w, 0.5, Variant::BaseDa), Err(Error::Config(_))));
    }

    #[test]
    fn linear_in_each_part_and_degenerate_weights() {
        let w = LossWeights::default();
        let alone = LossParts { regression: Some(0.0), discriminator: Some(0.0), vae: Some(1.3), ..Default::default() };
        let one = compose_loss(&alone, &w, 0.3, Variant::VaeDa).unwrap();
        let two = compose_loss(&LossParts { vae: Some(2.6), ..alone }, &w, 0.3, Variant::VaeDa).unwrap();
        assert_eq!(two, 2.0 * one);

        let p = LossParts { regression: Some(0.7), discriminator: Some(0.4), vae: Some(1.3), ..Default::default() };

        let zero = LossWeights { alpha_vae: 0.0, alpha_dec: 0.0, ..w.clone() };
        let eq1 = compose_loss(&LossParts { vae: None, ..p }, &zero, 0.3, Variant::BaseDa).unwrap();
        assert_eq!(compose_loss(&p, &zero, 0.3, Variant::VaeDa).unwrap(), eq1);
        let dec = LossParts { vae: None, decoder: Some(5.0), ..p };
        assert_eq!(compose_loss(&dec, &zero, 0.3, Variant::DecoderDa).unwrap(), eq1);
    }

    #[test]
    fn multitask_with_zero_reversal_is_sum_of_task_losses() {
        let w = LossWeights::default();
        let p = LossParts {
            regression: Some(0.31),
            discriminator: Some(0.69),
            masked_lm: Some(4.2),
            ..Default::default()
        };
        let total = compose_loss(&p, &w, 0.0, Variant::MultitaskDa).unwrap();
        assert!((total - (0.31 + 4.2)).abs() < 1e-12);
    }

    #[test]
    fn training_loss_weights_terms() {
        let w = LossWeights::default();
        let mut g = Graph::detached();
        let r = g.input(Tensor::scalar(1.0)).unwrap();
        let d = g.input(Tensor::scalar(0.5)).unwrap();
        let v = g.input(Tensor::scalar(2.0)).unwrap();
        let parts = LossParts { regression: Some(r), discriminator: Some(d), vae: Some(v), ..Default::default() };
        let t = training_loss(&mut g, &parts, &w, Variant::VaeDa).unwrap();
        assert!((g.scalar(t) - (1.0 + 0.5 + 0.2)).abs() < 1e-15);
        let only_d = LossParts { discriminator: Some(d), ..Default::default() };
        let t = training_loss(&mut g, &only_d, &w, Variant::MultitaskDa).unwrap();
        assert!((g.scalar(t) - 0.005).abs() < 1e-15);
        assert!(training_loss(&mut g, &parts, &w, Variant::BaseDa).is_err());
    }
}
