use serde::{Deserialize, Serialize};

use super::linear::{Embedding, Linear};
use super::params::{Init, ParamStore};
use crate::autodiff::{Graph, ParamId, Tensor, Var};
use crate::error::{Error, Result};

/// How the encoder collapses its hidden states into one context vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// `tanh(W·h₀ + b)` over the first position.
    #[default]
    First,
    /// `tanh(W·mean(h) + b)` over the unpadded positions.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderShape {
    pub vocab: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
}

#[derive(Clone, Debug)]
struct LayerNormParams {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNormParams {
    fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gain: store.add(&format!("{name}.gain"), &[dim], Init::Ones)?,
            bias: store.add(&format!("{name}.bias"), &[dim], Init::Zeros)?,
        })
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain)?;
        let bias = g.param(self.bias)?;
        g.layer_norm(x, gain, bias, 1e-5)
    }
}

/// Post-norm block: self-attention and feed-forward sublayers, each wrapped
/// in a residual connection followed by layer normalization.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm1: LayerNormParams,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNormParams,
    heads: usize,
}

impl EncoderBlock {
    fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, ff: usize) -> Result<Self> {
        Ok(EncoderBlock {
            query: Linear::new(store, &format!("{name}.attn.query"), d, d)?,
            key: Linear::new(store, &format!("{name}.attn.key"), d, d)?,
            value: Linear::new(store, &format!("{name}.attn.value"), d, d)?,
            out: Linear::new(store, &format!("{name}.attn.out"), d, d)?,
            norm1: LayerNormParams::new(store, &format!("{name}.norm1"), d)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), d, ff)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), ff, d)?,
            norm2: LayerNormParams::new(store, &format!("{name}.norm2"), d)?,
            heads,
        })
    }

    fn forward(&self, g: &mut Graph, x: Var, keep: &[bool], attn: &mut Vec<Var>) -> Result<Var> {
        let d = self.query.out_dim;
        let dk = d / self.heads;
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, x)?;
        let v = self.value.forward(g, x)?;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut contexts = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, (h + 1) * dk)?;
            let kh = g.slice_cols(k, h * dk, (h + 1) * dk)?;
            let vh = g.slice_cols(v, h * dk, (h + 1) * dk)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let weights = g.masked_softmax(scores, keep)?;
            attn.push(weights);
            contexts.push(g.matmul(weights, vh)?);
        }
        let ctx = if contexts.len() == 1 {
            contexts[0]
        } else {
            g.concat_cols(&contexts)?
        };
        let attended = self.out.forward(g, ctx)?;
        let res = g.add(x, attended)?;
        let x1 = self.norm1.forward(g, res)?;
        let hidden = self.ff1.forward(g, x1)?;
        let hidden = g.relu(hidden)?;
        let ff = self.ff2.forward(g, hidden)?;
        let res = g.add(x1, ff)?;
        self.norm2.forward(g, res)
    }
}

/// Output of [`TransformerEncoder::encode`].
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[n × d_model]`
    pub hidden: Var,
    /// `[d_model]`
    pub pooled: Var,
    /// Row-stochastic attention maps, one per block and head.
    pub attention: Vec<Var>,
}

/// Small trainable context encoder: token embedding, sinusoidal positions,
/// a stack of [`EncoderBlock`]s and a tanh pooler.
#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    pub embedding: Embedding,
    blocks: Vec<EncoderBlock>,
    pooler: Linear,
    pub shape: EncoderShape,
    pub pooling: Pooling,
}

impl TransformerEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        shape: EncoderShape,
        pooling: Pooling,
    ) -> Result<Self> {
        if shape.heads == 0 || !shape.d_model.is_multiple_of(shape.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                shape.d_model, shape.heads
            )));
        }
        let embedding = Embedding::new(store, &format!("{name}.embedding"), shape.vocab, shape.d_model)?;
        let blocks = (0..shape.layers)
            .map(|i| EncoderBlock::new(store, &format!("{name}.block{i}"), shape.d_model, shape.heads, shape.ff_dim))
            .collect::<Result<_>>()?;
        let pooler = Linear::new(store, &format!("{name}.pooler"), shape.d_model, shape.d_model)?;
        Ok(TransformerEncoder {
            embedding,
            blocks,
            pooler,
            shape,
            pooling,
        })
    }

    pub fn d_model(&self) -> usize {
        self.shape.d_model
    }

    /// `keep[i]` is false exactly at padding positions; position 0 must be a
    /// real token.
    pub fn encode(&self, g: &mut Graph, tokens: &[usize], keep: &[bool]) -> Result<EncoderOutput> {
        let n = tokens.len();
        if n == 0 || n > self.shape.max_len {
            return Err(Error::Contract(format!(
                "token sequence of length {n} outside 1..={}",
                self.shape.max_len
            )));
        }
        if keep.len() != n {
            return Err(Error::dim("transformer mask", &[n], &[keep.len()]));
        }
        if !keep[0] {
            return Err(Error::Contract("first position must not be padding".into()));
        }
        let d = self.shape.d_model;
        let emb = self.embedding.forward(g, tokens)?;
        let emb = g.scale(emb, (d as f64).sqrt())?;
        let pos = g.input(sinusoidal_positions(n, d))?;
        let mut x = g.add(emb, pos)?;
        let mut attention = Vec::new();
        for block in &self.blocks {
            x = block.forward(g, x, keep, &mut attention)?;
        }
        let summary = match self.pooling {
            Pooling::First => g.slice_rows(x, 0, 1)?,
            Pooling::Mean => {
                let count = keep.iter().filter(|&&k| k).count() as f64;
                let w: Vec<f64> = keep.iter().map(|&k| if k { 1.0 / count } else { 0.0 }).collect();
                let w = g.input(Tensor::new(vec![1, n], w)?)?;
                g.matmul(w, x)?
            }
        };
        let summary = g.reshape(summary, &[d])?;
        let pooled = self.pooler.forward(g, summary)?;
        let pooled = g.tanh(pooled)?;
        Ok(EncoderOutput {
            hidden: x,
            pooled,
            attention,
        })
    }
}

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for p in 0..n {
        for j in 0..d {
            let rate = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let angle = p as f64 / rate;
            data[p * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![n, d], data).expect("positive sizes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::check_gradients;

    fn shape(layers: usize, heads: usize, d: usize) -> EncoderShape {
        EncoderShape {
            vocab: 12,
            d_model: d,
            layers,
            heads,
            ff_dim: 2 * d,
            max_len: 16,
        }
    }

    #[test]
    fn attention_rows_normalised_and_padding_ignored() {
        let mut store = ParamStore::new(1);
        let enc = TransformerEncoder::new(&mut store, "enc", shape(2, 4, 16), Pooling::First).unwrap();
        let mut g = store.graph();
        let keep = [true, true, true, false, false];
        let out = enc.encode(&mut g, &[5, 6, 7, 0, 0], &keep).unwrap();
        assert_eq!(out.attention.len(), 8);
        for &a in &out.attention {
            let t = g.value(a);
            for r in 0..5 {
                let row = t.row(r);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(row[3], 0.0);
                assert_eq!(row[4], 0.0);
            }
        }
    }

    #[test]
    fn pooled_output_independent_of_padding_content() {
        for pooling in [Pooling::First, Pooling::Mean] {
            let mut store = ParamStore::new(2);
            let enc = TransformerEncoder::new(&mut store, "enc", shape(2, 2, 8), pooling).unwrap();
            let pooled = |tokens: &[usize], keep: &[bool]| {
                let mut g = store.graph();
                let out = enc.encode(&mut g, tokens, keep).unwrap();
                g.value(out.pooled).clone()
            };
            let a = pooled(&[4], &[true]);
            let b = pooled(&[4, 0, 0, 0], &[true, false, false, false]);
            let c = pooled(&[4, 9, 3, 11], &[true, false, false, false]);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-10);
            }
            assert_eq!(b, c);
        }
    }

    #[test]
    fn rejects_overlong_and_misaligned_inputs() {
        let mut store = ParamStore::new(2);
        let enc = TransformerEncoder::new(&mut store, "enc", shape(1, 1, 8), Pooling::First).unwrap();
        let mut g = store.graph();
        assert!(matches!(
            enc.encode(&mut g, &[3; 17], &[true; 17]),
            Err(Error::Contract(_))
        ));
        assert!(enc.encode(&mut g, &[3, 4], &[true]).is_err());
        assert!(enc.encode(&mut g, &[0, 4], &[false, true]).is_err());
        assert!(TransformerEncoder::new(&mut store, "bad", shape(1, 3, 8), Pooling::First).is_err());
    }

    #[test]
    fn single_block_single_head_gradient_check() {
        for seed in 0..20 {
            let mut store = ParamStore::new(seed);
            let enc = TransformerEncoder::new(&mut store, "enc", shape(1, 1, 8), Pooling::First).unwrap();
            // Embeddings start tiny; widen them so the check is not dominated by positions.
            for v in store.get_mut("enc.embedding.table").unwrap().data_mut() {
                *v *= 20.0;
            }
            let mut params = store.values().to_vec();
            let report = check_gradients(&mut params, 1e-5, |g| {
                let out = enc.encode(g, &[3, 7, 1, 0], &[true, true, true, false])?;
                let sq = g.mul(out.pooled, out.pooled)?;
                let hs = g.sum(out.hidden)?;
                let ps = g.sum(sq)?;
                g.add(ps, hs)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn positions_alternate_sin_cos() {
        let pe = sinusoidal_positions(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.row(1)[0] - 1f64.sin()).abs() < 1e-15);
        assert!((pe.row(1)[3] - (1.0f64 / 100.0).cos()).abs() < 1e-15);
    }
}
