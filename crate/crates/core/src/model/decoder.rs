use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::vocab::PAD;
use crate::nn::{dropout, Embedding, Gru, Linear, Mode, ParamStore};

/// Reconstructs the context token ids from the encoder states. At step `t`
/// the GRU reads the encoder state `h_t` next to the embedding of token
/// `t − 1` (padding id at `t = 0`), then two linear layers separated by
/// dropout produce vocabulary logits.
#[derive(Clone, Debug)]
pub struct ReconstructionDecoder {
    pub gru: Gru,
    pub project: Linear,
    pub output: Linear,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct DecoderOutput {
    /// `[n × V]`
    pub logits: Var,
    /// Activation between the two output layers, `[n × proj]`.
    pub representation: Var,
}

impl ReconstructionDecoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        hidden: usize,
        proj: usize,
        vocab: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(ReconstructionDecoder {
            gru: Gru::new(store, &format!("{name}.gru"), 2 * d_model, hidden)?,
            project: Linear::new(store, &format!("{name}.project"), hidden, proj)?,
            output: Linear::new(store, &format!("{name}.output"), proj, vocab)?,
            dropout,
        })
    }

    /// `hidden: [n × d_model]` encoder states for `tokens`; `embedding` is
    /// the encoder's token table.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        hidden: Var,
        tokens: &[usize],
        embedding: &Embedding,
        mode: Mode,
        rng: &mut R,
    ) -> Result<DecoderOutput> {
        let rows = g.shape(hidden)[0];
        if rows != tokens.len() {
            return Err(Error::dim("decoder", g.shape(hidden), &[tokens.len()]));
        }
        let previous: Vec<usize> = std::iter::once(PAD).chain(tokens[..rows - 1].iter().copied()).collect();
        let prev = embedding.forward(g, &previous)?;
        let input = g.concat_cols(&[hidden, prev])?;
        let states = self.gru.run(g, input)?;
        let h = self.project.forward(g, states)?;
        let representation = dropout(g, h, self.dropout, mode, rng)?;
        let logits = self.output.forward(g, representation)?;
        Ok(DecoderOutput { logits, representation })
    }
}

/// `Σ_n −w_{y_n} · log softmax(logits_n)[y_n]` with positions whose target
/// equals `ignore_index` contributing nothing. Class weights default to 1.
pub fn decoder_loss(
    g: &mut Graph,
    logits: Var,
    targets: &[usize],
    ignore_index: usize,
    class_weights: Option<&[f64]>,
) -> Result<Var> {
    let (rows, vocab) = g.value(logits).rows_cols();
    if rows != targets.len() {
        return Err(Error::dim("decoder_loss", g.shape(logits), &[targets.len()]));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= vocab && t != ignore_index) {
        return Err(Error::Vocabulary { index: bad, size: vocab });
    }
    if let Some(w) = class_weights {
        if w.len() != vocab {
            return Err(Error::dim("decoder_loss weights", &[w.len()], &[vocab]));
        }
    }
    let weights: Vec<f64> = targets
        .iter()
        .map(|&t| match (t == ignore_index, class_weights) {
            (true, _) => 0.0,
            (false, Some(w)) => w[t],
            (false, None) => 1.0,
        })
        .collect();
    let safe: Vec<usize> = targets.iter().map(|&t| if t < vocab { t } else { 0 }).collect();
    let logp = g.log_softmax(logits)?;
    g.nll(logp, &safe, &weights)
}
