use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check::check_gradients;
use super::*;
use crate::error::Error;

fn mat(rows: &[Vec<f64>]) -> Tensor {
    Tensor::matrix(rows).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut g = Graph::detached();
    let i2 = g.input(mat(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
    let b = g.input(mat(&[vec![5.0, 6.0], vec![7.0, 8.0]])).unwrap();
    let a = g.input(mat(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
    let ib = g.matmul(i2, b).unwrap();
    assert_eq!(g.value(ib).data(), &[5.0, 6.0, 7.0, 8.0]);
    let ab = g.matmul(a, b).unwrap();
    assert_eq!(g.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::detached();
    let a = g.input(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.input(Tensor::zeros(&[2, 3])).unwrap();
    match g.matmul(a, b) {
        Err(Error::Dimension { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)];
    let report = check_gradients(&mut params, 1e-5, |g| {
        let a = g.param(0)?;
        let b = g.param(1)?;
        let ab = g.matmul(a, b)?;
        g.sum(ab)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn pointwise_fixed_points() {
    let mut g = Graph::detached();
    let z = g.input(Tensor::scalar(0.0)).unwrap();
    let s = g.elementwise(Elementwise::Sigmoid, &[z]).unwrap();
    let t = g.elementwise(Elementwise::Tanh, &[z]).unwrap();
    assert_eq!(g.scalar(s), 0.5);
    assert_eq!(g.scalar(t), 0.0);

    let x = g.input(Tensor::scalar(1.5)).unwrap();
    let e = g.exp(x).unwrap();
    let l = g.log(e).unwrap();
    assert!((g.scalar(l) - 1.5).abs() < 1e-12);
}

#[test]
fn pointwise_errors() {
    let mut g = Graph::detached();
    let x = g.input(Tensor::vector(vec![1.0, 0.0])).unwrap();
    assert!(matches!(g.log(x), Err(Error::Domain { .. })));
    let y = g.input(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
    assert!(matches!(
        g.elementwise(Elementwise::Add, &[x, y]),
        Err(Error::Dimension { .. })
    ));
    assert!(matches!(
        g.elementwise(Elementwise::Mul, &[x]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn non_finite_forward_value_aborts() {
    let mut g = Graph::detached();
    let x = g.input(Tensor::scalar(1000.0)).unwrap();
    assert!(matches!(g.exp(x), Err(Error::NonFinite { op: "exp" })));
    assert!(g.input(Tensor::scalar(f64::NAN)).is_err());
}

#[test]
fn softmax_uniform_and_large_inputs() {
    let mut g = Graph::detached();
    let x = g.input(Tensor::vector(vec![0.0; 4])).unwrap();
    let s = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.25; 4]);

    let big = g.input(Tensor::vector(vec![1000.0, 1000.0])).unwrap();
    let s = g.softmax(big, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_along_leading_axis() {
    let mut g = Graph::detached();
    let x = g.input(mat(&[vec![0.0, 1.0], vec![0.0, 3.0]])).unwrap();
    let s = g.softmax(x, 0).unwrap();
    let v = g.value(s).data();
    assert!((v[0] - 0.5).abs() < 1e-15);
    assert!((v[1] + v[3] - 1.0).abs() < 1e-12);
}

#[test]
fn masked_softmax_zeroes_masked_columns() {
    let mut g = Graph::detached();
    let x = g.input(mat(&[vec![3.0, -2.0, 50.0]])).unwrap();
    let s = g.masked_softmax(x, &[true, true, false]).unwrap();
    let v = g.value(s).data();
    assert_eq!(v[2], 0.0);
    assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
    assert!(g.masked_softmax(x, &[false, false, false]).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_normalised_and_shift_invariant(
        xs in prop::collection::vec(-30.0f64..30.0, 2..12),
        c in -500.0f64..500.0,
    ) {
        let mut g = Graph::detached();
        let x = g.input(Tensor::vector(xs.clone())).unwrap();
        let shifted = g.add_scalar(x, c).unwrap();
        let a = g.softmax(x, 0).unwrap();
        let b = g.softmax(shifted, 0).unwrap();
        let total: f64 = g.value(a).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(g.value(a).data().iter().all(|&v| v >= 0.0));
        for (p, q) in g.value(a).data().iter().zip(g.value(b).data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn grad_reverse_forward_is_bit_identical() {
    let mut g = Graph::detached();
    let x = g.input(Tensor::vector(vec![0.1, -3.7, 1e-300])).unwrap();
    let r = g.grad_reverse(x, 0.3).unwrap();
    assert_eq!(g.value(r), g.value(x));
}

#[test]
fn grad_reverse_negates_and_scales() {
    let upstream = Tensor::vector(vec![0.5, -2.0, 3.25]);
    for (scale, expected_factor) in [(1.0, -1.0), (0.2 * 0.379_948_962_255_224_9, -0.075_989_792_451_045)] {
        let mut g = Graph::detached();
        let x = g.input(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let r = g.grad_reverse(x, scale).unwrap();
        let w = g.input(upstream.clone()).unwrap();
        let prod = g.mul(r, w).unwrap();
        let loss = g.sum(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        for (got, up) in grads.get(x).data().iter().zip(upstream.data()) {
            assert!((got - expected_factor * up).abs() < 1e-12);
        }
    }
}

#[test]
fn grad_reverse_rejects_negative_scale() {
    let mut g = Graph::detached();
    let x = g.input(Tensor::scalar(1.0)).unwrap();
    assert!(matches!(g.grad_reverse(x, -0.1), Err(Error::Config(_))));
    assert!(g.grad_reverse(x, f64::NAN).is_err());
}

#[test]
fn backward_linear_and_quadratic() {
    let params = vec![Tensor::vector(vec![1.0, -2.0, 3.0])];
    let mut g = Graph::new(&params);
    let theta = g.param(0).unwrap();
    let s = g.sum(theta).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.param(0).unwrap().data(), &[1.0, 1.0, 1.0]);

    let sq = g.mul(theta, theta).unwrap();
    let loss = g.sum(sq).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(0).unwrap().data(), &[2.0, -4.0, 6.0]);
}

#[test]
fn backward_requires_scalar_and_zero_fills_untouched() {
    let params = vec![Tensor::vector(vec![1.0, 2.0]), Tensor::vector(vec![5.0])];
    let mut g = Graph::new(&params);
    let a = g.param(0).unwrap();
    let unused = g.param(1).unwrap();
    assert!(matches!(g.backward(a), Err(Error::Contract(_))));
    let loss = g.sum(a).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(unused).data(), &[0.0]);
    assert!(grads.param(1).is_none());
}

#[test]
fn repeated_backward_is_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = vec![random(&[3, 3], &mut rng)];
    let mut g = Graph::new(&params);
    let w = g.param(0).unwrap();
    let t = g.tanh(w).unwrap();
    let m = g.matmul(t, w).unwrap();
    let loss = g.mean(m).unwrap();
    assert_eq!(g.backward(loss).unwrap(), g.backward(loss).unwrap());
}

/// Scalar-valued composite exercising every registered op.
fn every_op(g: &mut Graph, seed: u64) -> crate::error::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let a = g.param(0)?; // 3x4
    let b = g.param(1)?; // 4x3
    let row = g.param(2)?; // 3
    let gain = g.param(3)?; // 4
    let bias = g.param(4)?; // 4
    let table = g.param(5)?; // 5x4

    let ab = g.matmul(a, b)?;
    let abt = g.transpose(ab)?;
    let added = g.add(ab, abt)?;
    let shifted = g.add_row(added, row)?;
    let sig = g.sigmoid(shifted)?;
    let th = g.tanh(shifted)?;
    let prod = g.mul(sig, th)?;
    let diff = g.sub(prod, sig)?;
    let r = g.relu(diff)?;
    let sm = g.softmax(shifted, 0)?;
    let sm1 = g.softmax(shifted, 1)?;
    let ms = g.masked_softmax(shifted, &[true, false, true])?;
    let ls = g.log_softmax(shifted)?;
    let nll = g.nll(ls, &[0, 2, 1], &[1.0, 0.5, 0.0])?;
    let ex = g.exp(sm)?;
    let lg = g.log(ex)?;
    let ab2 = g.abs(diff)?;
    let sc = g.scale(ab2, 1.7)?;
    let asc = g.add_scalar(sc, 0.3)?;
    // grad_reverse is left out: its backward intentionally disagrees with
    // finite differences. See reversal_identity_end_to_end.
    let gr = g.scale(asc, rng.gen_range(0.5..1.5))?;

    let ln = g.layer_norm(a, gain, bias, 1e-5)?;
    let gathered = g.gather(table, &[1, 3, 1])?;
    let mixed = g.mul(ln, gathered)?;
    let c = g.slice_cols(mixed, 1, 3)?;
    let rws = g.slice_rows(mixed, 0, 2)?;
    let rr = g.reshape(rws, &[8])?;
    let cc = g.concat_cols(&[c, r])?;
    let stacked = g.concat_rows(&[rr, rr])?;

    let mut total = g.sum(cc)?;
    for v in [stacked, lg, gr, sm1, ms] {
        let m = g.mean(v)?;
        let m2 = g.mul(m, m)?;
        total = g.add(total, m2)?;
    }
    g.add(total, nll)
}

#[test]
fn every_op_passes_finite_differences_over_twenty_seeds() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![
            random(&[3, 4], &mut rng),
            random(&[4, 3], &mut rng),
            random(&[3], &mut rng),
            random(&[4], &mut rng),
            random(&[4], &mut rng),
            random(&[5, 4], &mut rng),
        ];
        let report = check_gradients(&mut params, 1e-5, |g| every_op(g, seed)).unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn reversal_identity_end_to_end() {
    // h(grad_reverse(f(θ), s)) vs h(f(θ)) for f = tanh(θW), h = sum(x²).
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let params = vec![random(&[1, 4], &mut rng), random(&[4, 3], &mut rng)];
        let s: f64 = rng.gen_range(0.0..2.0);
        let grad = |reverse: bool| {
            let mut g = Graph::new(&params);
            let theta = g.param(0).unwrap();
            let w = g.param(1).unwrap();
            let lin = g.matmul(theta, w).unwrap();
            let mut f = g.tanh(lin).unwrap();
            if reverse {
                f = g.grad_reverse(f, s).unwrap();
            }
            let sq = g.mul(f, f).unwrap();
            let loss = g.sum(sq).unwrap();
            g.backward(loss).unwrap().param(0).unwrap().clone()
        };
        let plain = grad(false);
        let reversed = grad(true);
        for (r, p) in reversed.data().iter().zip(plain.data()) {
            assert!((r + s * p).abs() < 1e-10);
        }
    }
}

#[test]
fn gather_checks_range_and_scatters() {
    let params = vec![mat(&[vec![0.0, 0.0], vec![1.0, 1.0]])];
    let mut g = Graph::new(&params);
    let t = g.param(0).unwrap();
    let row = g.gather(t, &[0]).unwrap();
    assert_eq!(g.value(row).data(), &[0.0, 0.0]);
    assert!(matches!(
        g.gather(t, &[2]),
        Err(Error::Vocabulary { index: 2, size: 2 })
    ));
    let rows = g.gather(t, &[1, 1]).unwrap();
    let loss = g.sum(rows).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(0).unwrap().data(), &[0.0, 0.0, 2.0, 2.0]);
}
