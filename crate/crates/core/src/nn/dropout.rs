use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: in training, zero each element with probability `rate`
/// and scale survivors by `1 / (1 - rate)`. Identity in evaluation.
pub fn dropout<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = g.shape(x).to_vec();
    let n = g.value(x).len();
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mask = g.input(Tensor::new(shape, data)?)?;
    g.mul(x, mask)
}

/// Mask-only variant used to count survivors without a graph.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Result<Tensor> {
    let mut g = Graph::detached();
    let x = g.input(Tensor::ones(&[n]))?;
    let y = dropout(&mut g, x, rate, Mode::Train, rng)?;
    Ok(g.value(y).clone())
}
