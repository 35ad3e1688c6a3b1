use rand::Rng;

use super::dropout::{dropout, Mode};
use super::params::{Init, ParamStore};
use crate::autodiff::{Graph, ParamId, Tensor, Var};
use crate::error::{Error, Result};

/// LSTM cell with gate blocks ordered input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize) -> Result<Self> {
        Ok(LstmCell {
            w_input: store.add(&format!("{name}.w_input"), &[input_dim, 4 * hidden], Init::GlorotUniform)?,
            w_hidden: store.add(&format!("{name}.w_hidden"), &[hidden, 4 * hidden], Init::GlorotUniform)?,
            bias: store.add(&format!("{name}.bias"), &[4 * hidden], Init::Zeros)?,
            input_dim,
            hidden,
        })
    }

    /// Runs the cell over the rows of `seq` in the given order and returns
    /// the final hidden state `[1 × h]`.
    fn run(&self, g: &mut Graph, seq: Var, order: impl Iterator<Item = usize>) -> Result<Var> {
        let h = self.hidden;
        let w_in = g.param(self.w_input)?;
        let w_h = g.param(self.w_hidden)?;
        let b = g.param(self.bias)?;
        // Input projections for every position at once.
        let proj = g.matmul(seq, w_in)?;
        let proj = g.add_row(proj, b)?;

        let mut hidden = g.input(Tensor::zeros(&[1, h]))?;
        let mut cell = g.input(Tensor::zeros(&[1, h]))?;
        for t in order {
            let x_t = g.slice_rows(proj, t, t + 1)?;
            let rec = g.matmul(hidden, w_h)?;
            let z = g.add(x_t, rec)?;
            let i = g.slice_cols(z, 0, h)?;
            let i = g.sigmoid(i)?;
            let f = g.slice_cols(z, h, 2 * h)?;
            let f = g.sigmoid(f)?;
            let c_hat = g.slice_cols(z, 2 * h, 3 * h)?;
            let c_hat = g.tanh(c_hat)?;
            let o = g.slice_cols(z, 3 * h, 4 * h)?;
            let o = g.sigmoid(o)?;
            let keep = g.mul(f, cell)?;
            let write = g.mul(i, c_hat)?;
            cell = g.add(keep, write)?;
            let squashed = g.tanh(cell)?;
            hidden = g.mul(o, squashed)?;
        }
        Ok(hidden)
    }
}

/// Bidirectional LSTM producing the concatenation of the final forward and
/// final backward hidden states, followed by dropout.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
    pub dropout: f64,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(BiLstm {
            forward: LstmCell::new(store, &format!("{name}.fwd"), input_dim, hidden)?,
            backward: LstmCell::new(store, &format!("{name}.bwd"), input_dim, hidden)?,
            dropout,
        })
    }

    /// Both directions share one set of weights.
    pub fn tied(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize) -> Result<Self> {
        let cell = LstmCell::new(store, name, input_dim, hidden)?;
        Ok(BiLstm {
            forward: cell.clone(),
            backward: cell,
            dropout: 0.0,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    /// `seq: [n × d]` with `n ≥ 1`; returns a vector of length `2h`.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        seq: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let shape = g.shape(seq).to_vec();
        let n = match shape.as_slice() {
            [n, d] if *d == self.forward.input_dim => *n,
            _ => return Err(Error::dim("bilstm", &shape, &[0, self.forward.input_dim])),
        };
        if n == 0 {
            return Err(Error::Contract("bilstm on an empty sequence".into()));
        }
        let fwd = self.forward.run(g, seq, 0..n)?;
        let bwd = self.backward.run(g, seq, (0..n).rev())?;
        let both = g.concat_cols(&[fwd, bwd])?;
        let both = g.reshape(both, &[self.output_dim()])?;
        dropout(g, both, self.dropout, mode, rng)
    }
}

/// Gated recurrent unit:
/// `r = σ(xW_r + b_r + hU_r + c_r)`, `z = σ(xW_z + b_z + hU_z + c_z)`,
/// `n = tanh(xW_n + b_n + r ⊙ (hU_n + c_n))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Gru {
            w_input: store.add(&format!("{name}.w_input"), &[input_dim, 3 * hidden], Init::GlorotUniform)?,
            w_hidden: store.add(&format!("{name}.w_hidden"), &[hidden, 3 * hidden], Init::GlorotUniform)?,
            b_input: store.add(&format!("{name}.b_input"), &[3 * hidden], Init::Zeros)?,
            b_hidden: store.add(&format!("{name}.b_hidden"), &[3 * hidden], Init::Zeros)?,
            input_dim,
            hidden,
        })
    }

    /// One update. `hidden: [h]`, `input: [d]`; returns `[h]`.
    pub fn step(&self, g: &mut Graph, hidden: Var, input: Var) -> Result<Var> {
        if g.value(hidden).len() != self.hidden {
            return Err(Error::dim("gru_step", g.shape(hidden), &[self.hidden]));
        }
        if g.value(input).len() != self.input_dim {
            return Err(Error::dim("gru_step", g.shape(input), &[self.input_dim]));
        }
        let x = g.reshape(input, &[1, self.input_dim])?;
        let w_in = g.param(self.w_input)?;
        let b_in = g.param(self.b_input)?;
        let gx = g.matmul(x, w_in)?;
        let gx = g.add_row(gx, b_in)?;
        let h = g.reshape(hidden, &[1, self.hidden])?;
        let h_next = self.step_projected(g, h, gx)?;
        g.reshape(h_next, &[self.hidden])
    }

    /// Update from a precomputed input projection `gx: [1 × 3h]`; `h: [1 × h]`.
    pub(crate) fn step_projected(&self, g: &mut Graph, h: Var, gx: Var) -> Result<Var> {
        let n = self.hidden;
        let w_h = g.param(self.w_hidden)?;
        let b_h = g.param(self.b_hidden)?;
        let gh = g.matmul(h, w_h)?;
        let gh = g.add_row(gh, b_h)?;

        let xr = g.slice_cols(gx, 0, n)?;
        let hr = g.slice_cols(gh, 0, n)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;
        let xz = g.slice_cols(gx, n, 2 * n)?;
        let hz = g.slice_cols(gh, n, 2 * n)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z)?;
        let xn = g.slice_cols(gx, 2 * n, 3 * n)?;
        let hn = g.slice_cols(gh, 2 * n, 3 * n)?;
        let gated = g.mul(r, hn)?;
        let cand = g.add(xn, gated)?;
        let cand = g.tanh(cand)?;
        // (1 − z)·n + z·h  ==  n + z·(h − n)
        let delta = g.sub(h, cand)?;
        let carry = g.mul(z, delta)?;
        g.add(cand, carry)
    }

    /// Runs over the rows of `inputs: [n × d]` from a zero state and stacks
    /// every hidden state into `[n × h]`.
    pub fn run(&self, g: &mut Graph, inputs: Var) -> Result<Var> {
        let shape = g.shape(inputs).to_vec();
        let steps = match shape.as_slice() {
            [n, d] if *d == self.input_dim => *n,
            _ => return Err(Error::dim("gru", &shape, &[0, self.input_dim])),
        };
        let w_in = g.param(self.w_input)?;
        let b_in = g.param(self.b_input)?;
        let proj = g.matmul(inputs, w_in)?;
        let proj = g.add_row(proj, b_in)?;
        let mut h = g.input(Tensor::zeros(&[1, self.hidden]))?;
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let gx = g.slice_rows(proj, t, t + 1)?;
            h = self.step_projected(g, h, gx)?;
            states.push(h);
        }
        g.concat_rows(&states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn output_is_twice_hidden() {
        let mut store = ParamStore::new(0);
        let lstm = BiLstm::new(&mut store, "lstm", 8, 16, 0.1).unwrap();
        let mut g = store.graph();
        let seq = g.input(Tensor::full(&[5, 8], 0.1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = lstm.encode(&mut g, seq, Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.shape(out), &[32]);
    }

    #[test]
    fn tied_weights_on_palindrome_give_equal_halves() {
        let mut store = ParamStore::new(3);
        let lstm = BiLstm::tied(&mut store, "lstm", 4, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rows = vec![a.clone(), b.clone(), c, b, a];
        let mut g = store.graph();
        let seq = g.input(Tensor::matrix(&rows).unwrap()).unwrap();
        let out = lstm.encode(&mut g, seq, Mode::Eval, &mut rng).unwrap();
        let v = g.value(out).data();
        for j in 0..6 {
            assert!((v[j] - v[6 + j]).abs() < 1e-10);
        }
    }

    #[test]
    fn bilstm_gradient_check() {
        for seed in 0..20 {
            let mut store = ParamStore::new(seed);
            let lstm = BiLstm::new(&mut store, "lstm", 4, 5, 0.1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seq = random_matrix(3, 4, &mut rng);
            let mut params = store.values().to_vec();
            let report = check_gradients(&mut params, 1e-5, |g| {
                let s = g.input(seq.clone())?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let out = lstm.encode(g, s, Mode::Train, &mut rng)?;
                let sq = g.mul(out, out)?;
                g.sum(sq)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn gru_zero_fixed_point() {
        let mut store = ParamStore::new(0);
        let gru = Gru::new(&mut store, "gru", 3, 4).unwrap();
        for t in store.values_mut() {
            t.data_mut().fill(0.0);
        }
        let mut g = store.graph();
        let h = g.input(Tensor::zeros(&[4])).unwrap();
        let x = g.input(Tensor::zeros(&[3])).unwrap();
        let h2 = gru.step(&mut g, h, x).unwrap();
        assert_eq!(g.value(h2).data(), &[0.0; 4]);
    }

    #[test]
    fn gru_state_stays_bounded() {
        let mut store = ParamStore::new(1);
        let gru = Gru::new(&mut store, "gru", 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = store.graph();
        let mut h = g.input(Tensor::zeros(&[4])).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let x = g.input(Tensor::vector(x)).unwrap();
            h = gru.step(&mut g, h, x).unwrap();
        }
        let norm = g.value(h).sq_norm().sqrt();
        assert!(norm.is_finite() && norm <= 2.0);
    }

    #[test]
    fn gru_shape_mismatch() {
        let mut store = ParamStore::new(1);
        let gru = Gru::new(&mut store, "gru", 3, 4).unwrap();
        let mut g = store.graph();
        let h = g.input(Tensor::zeros(&[4])).unwrap();
        let x = g.input(Tensor::zeros(&[5])).unwrap();
        assert!(matches!(gru.step(&mut g, h, x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn gru_gradient_through_three_steps() {
        for seed in 0..20 {
            let mut store = ParamStore::new(seed);
            let gru = Gru::new(&mut store, "gru", 3, 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
            let xs = random_matrix(3, 3, &mut rng);
            let mut params = store.values().to_vec();
            let report = check_gradients(&mut params, 1e-5, |g| {
                let mut h = g.input(Tensor::zeros(&[4]))?;
                for t in 0..3 {
                    let x = g.input(Tensor::vector(xs.row(t).to_vec()))?;
                    h = gru.step(g, h, x)?;
                }
                let sq = g.mul(h, h)?;
                g.sum(sq)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn gru_run_matches_stepwise() {
        let mut store = ParamStore::new(6);
        let gru = Gru::new(&mut store, "gru", 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = random_matrix(4, 3, &mut rng);
        let mut g = store.graph();
        let inputs = g.input(xs.clone()).unwrap();
        let all = gru.run(&mut g, inputs).unwrap();
        let mut h = g.input(Tensor::zeros(&[4])).unwrap();
        for t in 0..4 {
            let x = g.input(Tensor::vector(xs.row(t).to_vec())).unwrap();
            h = gru.step(&mut g, h, x).unwrap();
            let row = g.value(all).row(t).to_vec();
            for (a, b) in row.iter().zip(g.value(h).data()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
