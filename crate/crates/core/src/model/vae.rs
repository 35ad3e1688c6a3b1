use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, Mode, ParamStore};

/// Gaussian VAE over the context vector: `x → h → (μ, log σ²) → z → x̂`.
#[derive(Clone, Debug)]
pub struct Vae {
    pub encoder: Linear,
    pub mu: Linear,
    pub log_var: Linear,
    pub decoder_hidden: Linear,
    pub decoder_out: Linear,
}

/// `z = μ + exp(½·log σ²) ⊙ noise`; `noise` is kept for inspection.
#[derive(Clone, Debug)]
pub struct VaeState {
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
    pub reconstruction: Var,
    pub noise: Tensor,
}

impl Vae {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, z_dim: usize) -> Result<Self> {
        Ok(Vae {
            encoder: Linear::new(store, &format!("{name}.encoder"), input, hidden)?,
            mu: Linear::new(store, &format!("{name}.mu"), hidden, z_dim)?,
            log_var: Linear::new(store, &format!("{name}.log_var"), hidden, z_dim)?,
            decoder_hidden: Linear::new(store, &format!("{name}.decoder_hidden"), z_dim, hidden)?,
            decoder_out: Linear::new(store, &format!("{name}.decoder_out"), hidden, input)?,
        })
    }

    pub fn z_dim(&self) -> usize {
        self.mu.out_dim
    }

    /// Standard-normal noise in training, zero noise (`z = μ`) in evaluation.
    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph, x: Var, mode: Mode, rng: &mut R) -> Result<VaeState> {
        let noise = match mode {
            Mode::Train => Tensor::vector((0..self.z_dim()).map(|_| rng.sample(StandardNormal)).collect()),
            Mode::Eval => Tensor::zeros(&[self.z_dim()]),
        };
        self.forward_with_noise(g, x, noise)
    }

    pub fn forward_with_noise(&self, g: &mut Graph, x: Var, noise: Tensor) -> Result<VaeState> {
        if noise.shape() != [self.z_dim()] {
            return Err(Error::dim("vae noise", noise.shape(), &[self.z_dim()]));
        }
        let h = self.encoder.forward(g, x)?;
        let h = g.relu(h)?;
        let mu = self.mu.forward(g, h)?;
        let log_var = self.log_var.forward(g, h)?;
        let half = g.scale(log_var, 0.5)?;
        let sigma = g.exp(half)?;
        let eps = g.input(noise.clone())?;
        let spread = g.mul(sigma, eps)?;
        let z = g.add(mu, spread)?;
        let d = self.decoder_hidden.forward(g, z)?;
        let d = g.relu(d)?;
        let reconstruction = self.decoder_out.forward(g, d)?;
        Ok(VaeState {
            mu,
            log_var,
            z,
            reconstruction,
            noise,
        })
    }
}

/// `KL(N(μ, σ²) ‖ N(0, I)) + ½‖x − x̂‖²`: the negated evidence lower bound
/// under a unit-variance Gaussian decoder, up to a constant.
pub fn vae_loss(g: &mut Graph, state: &VaeState, x: Var) -> Result<Var> {
    if !g.value(state.log_var).is_finite() {
        return Err(Error::NonFinite { op: "vae log_var" });
    }
    let mu2 = g.mul(state.mu, state.mu)?;
    let var = g.exp(state.log_var)?;
    let t = g.add(mu2, var)?;
    let t = g.sub(t, state.log_var)?;
    let t = g.add_scalar(t, -1.0)?;
    let kl = g.sum(t)?;
    let kl = g.scale(kl, 0.5)?;
    let diff = g.sub(x, state.reconstruction)?;
    let sq = g.mul(diff, diff)?;
    let rec = g.sum(sq)?;
    let rec = g.scale(rec, 0.5)?;
    g.add(kl, rec)
}

/// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}
