use rand::Rng;

use super::dropout::{dropout, Mode};
use super::params::{Init, ParamStore};
use crate::autodiff::{Graph, ParamId, Var};
use crate::error::{Error, Result};

/// Affine map `x·W + b` with `W: [in × out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Linear {
            weight: store.add(&format!("{name}.weight"), &[in_dim, out_dim], Init::GlorotUniform)?,
            bias: store.add(&format!("{name}.bias"), &[out_dim], Init::Zeros)?,
            in_dim,
            out_dim,
        })
    }

    /// Accepts a vector `[in]` (returns `[out]`) or a matrix `[n × in]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let w = g.param(self.weight)?;
        let b = g.param(self.bias)?;
        match shape.as_slice() {
            [n] if *n == self.in_dim => {
                let row = g.reshape(x, &[1, self.in_dim])?;
                let y = g.matmul(row, w)?;
                let y = g.add_row(y, b)?;
                g.reshape(y, &[self.out_dim])
            }
            [_, n] if *n == self.in_dim => {
                let y = g.matmul(x, w)?;
                g.add_row(y, b)
            }
            _ => Err(Error::dim("linear", &shape, &[self.in_dim, self.out_dim])),
        }
    }
}

/// Lookup table `[vocab × dim]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize) -> Result<Self> {
        Ok(Embedding {
            table: store.add(&format!("{name}.table"), &[vocab, dim], Init::Normal { std: 0.02 })?,
            vocab,
            dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, indices: &[usize]) -> Result<Var> {
        let table = g.param(self.table)?;
        g.gather(table, indices)
    }
}

/// Three affine layers with ReLU between them and optional dropout after the
/// first activation.
#[derive(Clone, Debug)]
pub struct Mlp3 {
    pub layers: [Linear; 3],
    pub dropout: f64,
}

impl Mlp3 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: [usize; 4],
        dropout: f64,
    ) -> Result<Self> {
        Ok(Mlp3 {
            layers: [
                Linear::new(store, &format!("{name}.0"), dims[0], dims[1])?,
                Linear::new(store, &format!("{name}.1"), dims[1], dims[2])?,
                Linear::new(store, &format!("{name}.2"), dims[2], dims[3])?,
            ],
            dropout,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[2].out_dim
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let width = *g.shape(x).last().unwrap_or(&0);
        if width != self.in_dim() {
            return Err(Error::dim("mlp", g.shape(x), &[self.in_dim()]));
        }
        let h = self.layers[0].forward(g, x)?;
        let h = g.relu(h)?;
        let h = dropout(g, h, self.dropout, mode, rng)?;
        let h = self.layers[1].forward(g, h)?;
        let h = g.relu(h)?;
        self.layers[2].forward(g, h)
    }
}
