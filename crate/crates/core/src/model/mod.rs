//! The complexity model: character BiLSTM over the target, transformer over
//! the context, regression head, adversarial discriminator and the optional
//! VAE, reconstruction-decoder and masked-word branches.

mod decoder;
mod loss;
mod vae;

use rand::rngs::mock::StepRng;
use rand::Rng;

pub use decoder::{decoder_loss, DecoderOutput, ReconstructionDecoder};
pub use loss::{compose_loss, cross_entropy, regression_loss, reversal_scale, training_loss, LossParts};
pub use vae::{kl_divergence, vae_loss, Vae, VaeState};

use crate::autodiff::{Graph, ParamId, Var};
use crate::config::{ModelConfig, Variant};
use crate::corpus::EncodedExample;
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::nn::vocab::MASK;
use crate::nn::{BiLstm, Embedding, EncoderOutput, EncoderShape, Linear, Mlp3, Mode, ParamStore, TransformerEncoder};

/// Prefix of every discriminator parameter name.
pub const DISCRIMINATOR: &str = "discriminator";

/// Vocabulary and label-set sizes the parameters depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSizes {
    pub chars: usize,
    pub tokens: usize,
    /// Discriminator classes; ignored by the base variant.
    pub groups: usize,
}

/// Index view of one example. `keep` is false exactly at token padding.
#[derive(Clone, Copy, Debug)]
pub struct Inputs<'a> {
    pub chars: &'a [usize],
    pub tokens: &'a [usize],
    pub keep: &'a [bool],
}

/// Features of one example; `concat` joins `f_t`, `f_c` and, when present,
/// `f_v`, in that order.
#[derive(Clone, Debug)]
pub struct FeatureBundle {
    pub f_t: Var,
    pub f_c: Var,
    pub f_v: Option<Var>,
    pub concat: Var,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub prediction: Var,
    pub features: FeatureBundle,
    pub encoder: EncoderOutput,
    pub vae: Option<VaeState>,
}

#[derive(Clone, Debug)]
pub struct MaskedPrediction {
    /// `[V]` logits at the masked position.
    pub logits: Var,
    pub features: FeatureBundle,
    /// Token ids after masking.
    pub masked: Vec<usize>,
}

#[derive(Debug)]
pub struct CwiModel {
    pub store: ParamStore,
    pub config: ModelConfig,
    pub variant: Variant,
    pub sizes: ModelSizes,
    pub char_embedding: Embedding,
    pub char_encoder: BiLstm,
    pub encoder: TransformerEncoder,
    pub head: Mlp3,
    pub discriminator: Option<Mlp3>,
    pub vae: Option<Vae>,
    pub decoder: Option<ReconstructionDecoder>,
    pub mlm_head: Option<Linear>,
}

impl CwiModel {
    /// Parameters are initialised from `seed` and their names alone, so the
    /// shared modules start identical across variants.
    pub fn new(config: &ModelConfig, variant: Variant, sizes: ModelSizes, seed: u64) -> Result<Self> {
        if variant.adversarial() && sizes.groups < 2 {
            return Err(Error::Config(format!(
                "{} needs at least 2 discriminator classes, found {}",
                variant.name(),
                sizes.groups
            )));
        }
        let c = config;
        let mut store = ParamStore::new(seed);
        let char_embedding = Embedding::new(&mut store, "char_embedding", sizes.chars, c.char_embed_dim)?;
        let char_encoder = BiLstm::new(&mut store, "char_bilstm", c.char_embed_dim, c.char_hidden, c.dropout)?;
        let shape = EncoderShape {
            vocab: sizes.tokens,
            d_model: c.d_model,
            layers: c.layers,
            heads: c.heads,
            ff_dim: c.ff_dim,
            max_len: c.max_tokens,
        };
        let encoder = TransformerEncoder::new(&mut store, "encoder", shape, c.pooling)?;
        let vae = match variant {
            Variant::VaeDa => Some(Vae::new(&mut store, "vae", c.d_model, c.vae_hidden, c.z_dim)?),
            _ => None,
        };
        let features = char_encoder.output_dim() + c.d_model + vae.as_ref().map_or(0, Vae::z_dim);
        let [h1, h2] = c.head_hidden;
        let head = Mlp3::new(&mut store, "head", [features, h1, h2, 1], c.dropout)?;
        let discriminator = if variant.adversarial() {
            let [d1, d2] = c.disc_hidden;
            Some(Mlp3::new(&mut store, DISCRIMINATOR, [features, d1, d2, sizes.groups], 0.0)?)
        } else {
            None
        };
        let decoder = match variant {
            Variant::DecoderDa => Some(ReconstructionDecoder::new(
                &mut store,
                "decoder",
                c.d_model,
                c.decoder_hidden,
                c.decoder_proj,
                sizes.tokens,
                c.dropout,
            )?),
            _ => None,
        };
        let mlm_head = match variant {
            Variant::MultitaskDa => Some(Linear::new(&mut store, "mlm_head", c.d_model, sizes.tokens)?),
            _ => None,
        };
        Ok(CwiModel {
            store,
            config: c.clone(),
            variant,
            sizes,
            char_embedding,
            char_encoder,
            encoder,
            head,
            discriminator,
            vae,
            decoder,
            mlm_head,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.head.in_dim()
    }

    pub fn discriminator_params(&self) -> Vec<ParamId> {
        let prefix = format!("{DISCRIMINATOR}.");
        (0..self.store.len())
            .filter(|&id| self.store.name(id).starts_with(&prefix))
            .collect()
    }

    /// `F_t`: BiLSTM summary of the target characters, after dropout.
    pub fn target_features<R: Rng + ?Sized>(&self, g: &mut Graph, chars: &[usize], mode: Mode, rng: &mut R) -> Result<Var> {
        if chars.is_empty() {
            return Err(Error::Contract("target has no characters".into()));
        }
        let seq = self.char_embedding.forward(g, chars)?;
        self.char_encoder.encode(g, seq, mode, rng)
    }

    fn bundle<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        f_t: Var,
        encoder: &EncoderOutput,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(FeatureBundle, Option<VaeState>)> {
        let f_c = encoder.pooled;
        let vae = match &self.vae {
            Some(v) => Some(v.forward(g, f_c, mode, rng)?),
            None => None,
        };
        let f_v = vae.as_ref().map(|s| s.z);
        let mut parts = vec![f_t, f_c];
        parts.extend(f_v);
        let concat = g.concat_cols(&parts)?;
        Ok((FeatureBundle { f_t, f_c, f_v, concat }, vae))
    }

    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph, x: Inputs<'_>, mode: Mode, rng: &mut R) -> Result<Forward> {
        let f_t = self.target_features(g, x.chars, mode, rng)?;
        let encoder = self.encoder.encode(g, x.tokens, x.keep)?;
        let (features, vae) = self.bundle(g, f_t, &encoder, mode, rng)?;
        let prediction = self.head.forward(g, features.concat, mode, rng)?;
        Ok(Forward { prediction, features, encoder, vae })
    }

    /// Predicted complexity (unclamped, shape `[1]`) and the feature bundle.
    pub fn forward_regression<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        x: Inputs<'_>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, FeatureBundle)> {
        let out = self.forward(g, x, mode, rng)?;
        Ok((out.prediction, out.features))
    }

    /// Group logits for `features.concat` seen through a gradient-reversal
    /// layer of the given scale.
    pub fn discriminate(&self, g: &mut Graph, features: &FeatureBundle, reversal: f64) -> Result<Var> {
        let disc = self
            .discriminator
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no discriminator", self.variant.name())))?;
        let reversed = g.grad_reverse(features.concat, reversal)?;
        disc.forward(g, reversed, Mode::Eval, &mut StepRng::new(0, 0))
    }

    pub fn decode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        encoder: &EncoderOutput,
        tokens: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<DecoderOutput> {
        let dec = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no reconstruction decoder", self.variant.name())))?;
        dec.forward(g, encoder.hidden, tokens, &self.encoder.embedding, mode, rng)
    }

    /// Replaces `tokens[position]` with the mask id, encodes the sentence and
    /// returns vocabulary logits at that position. Features pair the target
    /// characters with the masked context.
    pub fn mask_and_predict<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        chars: &[usize],
        tokens: &[usize],
        position: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<MaskedPrediction> {
        let head = self
            .mlm_head
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no masked-word head", self.variant.name())))?;
        if position >= tokens.len() {
            return Err(Error::Contract(format!(
                "mask position {position} outside sentence of {} tokens",
                tokens.len()
            )));
        }
        let mut masked = tokens.to_vec();
        masked[position] = MASK;
        let keep = vec![true; masked.len()];
        let f_t = self.target_features(g, chars, mode, rng)?;
        let encoder = self.encoder.encode(g, &masked, &keep)?;
        let row = g.slice_rows(encoder.hidden, position, position + 1)?;
        let row = g.reshape(row, &[self.config.d_model])?;
        let logits = head.forward(g, row)?;
        let (features, _) = self.bundle(g, f_t, &encoder, mode, rng)?;
        Ok(MaskedPrediction { logits, features, masked })
    }

    /// Evaluation-mode predictions, unclamped, in input order.
    pub fn predict(&self, examples: &[EncodedExample], exec: Execution) -> Result<Vec<f64>> {
        try_map_indexed(exec, examples, |_, ex| {
            let mut g = self.store.graph();
            let keep = vec![true; ex.tokens.len()];
            let x = Inputs { chars: &ex.chars, tokens: &ex.tokens, keep: &keep };
            let (p, _) = self.forward_regression(&mut g, x, Mode::Eval, &mut StepRng::new(0, 0))?;
            Ok(g.scalar(p))
        })
    }

    /// Evaluation-mode discriminator logits (no reversal), in input order.
    pub fn discriminator_logits(&self, examples: &[EncodedExample], exec: Execution) -> Result<Vec<Vec<f64>>> {
        try_map_indexed(exec, examples, |_, ex| {
            let mut g = self.store.graph();
            let keep = vec![true; ex.tokens.len()];
            let x = Inputs { chars: &ex.chars, tokens: &ex.tokens, keep: &keep };
            let out = self.forward(&mut g, x, Mode::Eval, &mut StepRng::new(0, 0))?;
            let logits = self.discriminate(&mut g, &out.features, 0.0)?;
            Ok(g.value(logits).data().to_vec())
        })
    }
}

#[cfg(test)]
mod tests;
