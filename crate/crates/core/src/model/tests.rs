use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::autodiff::check::check_gradients;
use crate::autodiff::Tensor;
use crate::config::{LossKind, LossWeights};
use crate::exec::map_indexed;
use crate::nn::vocab::{CLS, PAD};

fn tiny() -> ModelConfig {
    ModelConfig {
        char_embed_dim: 3,
        char_hidden: 3,
        max_chars: 8,
        max_tokens: 8,
        d_model: 4,
        layers: 1,
        heads: 2,
        ff_dim: 6,
        head_hidden: [5, 3],
        disc_hidden: [5, 3],
        dropout: 0.1,
        vae_hidden: 4,
        z_dim: 2,
        decoder_hidden: 4,
        decoder_proj: 3,
        ..ModelConfig::default()
    }
}

const SIZES: ModelSizes = ModelSizes { chars: 9, tokens: 11, groups: 3 };

fn example() -> (Vec<usize>, Vec<usize>, Vec<bool>) {
    (vec![2, 5, 7, 3], vec![CLS, 6, 9, 4, 10], vec![true; 5])
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(99)
}

#[test]
fn zero_parameters_predict_final_bias() {
    let mut m = CwiModel::new(&tiny(), Variant::BaseDa, SIZES, 1).unwrap();
    for t in m.store.values_mut() {
        t.data_mut().fill(0.0);
    }
    let bias = m.head.layers[2].bias;
    m.store.values_mut()[bias].data_mut()[0] = 0.42;
    let (c, t, k) = example();
    let mut g = m.store.graph();
    let x = Inputs { chars: &c, tokens: &t, keep: &k };
    let (p, f) = m.forward_regression(&mut g, x, Mode::Eval, &mut rng()).unwrap();
    assert_eq!(g.scalar(p), 0.42);
    let logits = m.discriminate(&mut g, &f, 0.1).unwrap();
    assert_eq!(g.value(logits).data(), &[0.0; 3]);
    let probs = g.softmax(logits, 0).unwrap();
    for &v in g.value(probs).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn eval_mode_is_deterministic_and_train_mode_seeded() {
    let m = CwiModel::new(&tiny(), Variant::VaeDa, SIZES, 2).unwrap();
    let (c, t, k) = example();
    let x = Inputs { chars: &c, tokens: &t, keep: &k };
    let run = |mode, seed| {
        let mut g = m.store.graph();
        let (p, _) = m.forward_regression(&mut g, x, mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        g.scalar(p)
    };
    assert_eq!(run(Mode::Eval, 1), run(Mode::Eval, 2));
    assert_eq!(run(Mode::Train, 5), run(Mode::Train, 5));
}

#[test]
fn feature_bundle_order_and_width() {
    let (c, t, k) = example();
    for (variant, width) in [(Variant::BaseDa, 6 + 4), (Variant::VaeDa, 6 + 4 + 2)] {
        let m = CwiModel::new(&tiny(), variant, SIZES, 3).unwrap();
        let mut g = m.store.graph();
        let x = Inputs { chars: &c, tokens: &t, keep: &k };
        let (_, f) = m.forward_regression(&mut g, x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(g.shape(f.concat), [width]);
        let mut expected = g.value(f.f_t).data().to_vec();
        expected.extend_from_slice(g.value(f.f_c).data());
        if let Some(v) = f.f_v {
            expected.extend_from_slice(g.value(v).data());
        }
        assert_eq!(g.value(f.concat).data(), expected.as_slice());
        assert_eq!(f.f_v.is_some(), variant == Variant::VaeDa);
    }
}

#[test]
fn three_groups_three_logits_and_one_group_rejected() {
    let m = CwiModel::new(&tiny(), Variant::BaseDa, SIZES, 4).unwrap();
    let (c, t, k) = example();
    let mut g = m.store.graph();
    let (_, f) = m
        .forward_regression(&mut g, Inputs { chars: &c, tokens: &t, keep: &k }, Mode::Eval, &mut rng())
        .unwrap();
    let logits = m.discriminate(&mut g, &f, 0.0).unwrap();
    assert_eq!(g.shape(logits), [3]);
    let one = ModelSizes { groups: 1, ..SIZES };
    assert!(matches!(CwiModel::new(&tiny(), Variant::BaseDa, one, 4), Err(Error::Config(_))));
    assert!(CwiModel::new(&tiny(), Variant::Base, one, 4).is_ok());
}

#[test]
fn shared_modules_start_identical_across_variants() {
    let base = CwiModel::new(&tiny(), Variant::Base, SIZES, 7).unwrap();
    let da = CwiModel::new(&tiny(), Variant::BaseDa, SIZES, 7).unwrap();
    assert!(base.discriminator.is_none());
    for (id, name) in base.store.names().iter().enumerate() {
        assert_eq!(Some(&base.store.values()[id]), da.store.get(name), "{name}");
    }
    assert_eq!(da.discriminator_params().len(), 6);
}

#[test]
fn reversal_layer_negates_and_scales_upstream_gradient() {
    let m = CwiModel::new(&tiny(), Variant::BaseDa, SIZES, 5).unwrap();
    let disc = m.discriminator.as_ref().unwrap();
    let scale = 0.2 * lambda_at(8);
    let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();

    let mut g = m.store.graph();
    let input = g.input(Tensor::vector(x.clone())).unwrap();
    let f = FeatureBundle { f_t: input, f_c: input, f_v: None, concat: input };
    let logits = m.discriminate(&mut g, &f, scale).unwrap();
    let l = cross_entropy(&mut g, logits, &[2]).unwrap();
    let reversed = g.backward(l).unwrap().get(input);

    let mut h = m.store.graph();
    let input2 = h.input(Tensor::vector(x)).unwrap();
    let logits = disc.forward(&mut h, input2, Mode::Eval, &mut rng()).unwrap();
    let l = cross_entropy(&mut h, logits, &[2]).unwrap();
    let plain = h.backward(l).unwrap().get(input2);

    for (r, p) in reversed.data().iter().zip(plain.data()) {
        assert!((r + scale * p).abs() < 1e-12, "{r} vs {p}");
    }
}

fn lambda_at(epoch: u32) -> f64 {
    2.0 / (1.0 + (-0.1 * epoch as f64).exp()) - 1.0
}

/// Shared parameters receive `∂L_r − βλ·∂L_d`; discriminator parameters `+∂L_d`.
#[test]
fn gradient_decomposes_into_regression_and_reversed_discriminator() {
    let m = CwiModel::new(&tiny(), Variant::BaseDa, SIZES, 6).unwrap();
    let w = LossWeights::default();
    let scale = reversal_scale(&w, lambda_at(8));
    let (c, t, k) = example();
    let x = Inputs { chars: &c, tokens: &t, keep: &k };
    let disc_ids = m.discriminator_params();

    let mut g = m.store.graph();
    let (p, f) = m.forward_regression(&mut g, x, Mode::Train, &mut rng()).unwrap();
    let lr = regression_loss(&mut g, p, &[0.3], LossKind::L1).unwrap();
    let logits = m.discriminate(&mut g, &f, scale).unwrap();
    let ld = cross_entropy(&mut g, logits, &[1]).unwrap();
    let parts = LossParts { regression: Some(lr), discriminator: Some(ld), ..Default::default() };
    let total = training_loss(&mut g, &parts, &w, Variant::BaseDa).unwrap();
    let combined = g.backward(total).unwrap();

    let mut h = m.store.graph();
    let (p, f) = m.forward_regression(&mut h, x, Mode::Train, &mut rng()).unwrap();
    let lr = regression_loss(&mut h, p, &[0.3], LossKind::L1).unwrap();
    let d_r = h.backward(lr).unwrap();
    let logits = m.discriminator.as_ref().unwrap().forward(&mut h, f.concat, Mode::Eval, &mut rng()).unwrap();
    let ld = cross_entropy(&mut h, logits, &[1]).unwrap();
    let d_d = h.backward(ld).unwrap();

    let zeros = |id: ParamId| Tensor::zeros(m.store.values()[id].shape());
    for id in 0..m.store.len() {
        let got = combined.param(id).cloned().unwrap_or_else(|| zeros(id));
        let r = d_r.param(id).cloned().unwrap_or_else(|| zeros(id));
        let d = d_d.param(id).cloned().unwrap_or_else(|| zeros(id));
        let is_disc = disc_ids.contains(&id);
        for i in 0..got.len() {
            let expected = if is_disc { d.data()[i] } else { r.data()[i] - scale * d.data()[i] };
            assert!(
                (got.data()[i] - expected).abs() < 1e-10,
                "{}[{i}]: {} vs {expected}",
                m.store.name(id),
                got.data()[i]
            );
            if is_disc {
                assert_eq!(got.data()[i], d.data()[i]);
            }
        }
    }
}

#[test]
fn whole_model_passes_finite_differences() {
    for seed in 0..20 {
        let mut m = CwiModel::new(&tiny(), Variant::BaseDa, SIZES, seed).unwrap();
        m.config.dropout = 0.0;
        let (c, t, k) = example();
        let gold = ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..1.0);
        let mut params = m.store.values().to_vec();
        let report = check_gradients(&mut params, 1e-5, |g| {
            let x = Inputs { chars: &c, tokens: &t, keep: &k };
            let (p, f) = m.forward_regression(g, x, Mode::Eval, &mut rng())?;
            let lr = regression_loss(g, p, &[gold], LossKind::L1)?;
            let logits = m.discriminator.as_ref().unwrap().forward(g, f.concat, Mode::Eval, &mut rng())?;
            let ld = cross_entropy(g, logits, &[0])?;
            g.add(lr, ld)
        })
        .unwrap();
        let table = m.char_embedding.table;
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        assert!(report.worst.is_none_or(|(p, _)| p != table) || report.max_rel_error < 1e-6);
    }
}

#[test]
fn monte_carlo_kl_agrees_with_closed_form() {
    let cases: [(&[f64], &[f64]); 3] = [
        (&[1.0], &[0.0]),
        (&[0.0], &[std::f64::consts::LN_2]),
        (&[0.3, -0.8, 1.1, 0.0], &[0.5, -0.3, 0.2, -1.0]),
    ];
    for (mu, lv) in cases {
        let chunks: Vec<u64> = (0..100).collect();
        let per_chunk = 10_000;
        let sums = map_indexed(Execution::Parallel, &chunks, |_, &c| {
            let mut r = ChaCha8Rng::seed_from_u64(1000 + c);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..per_chunk {
                let mut log_ratio = 0.0;
                for (m, l) in mu.iter().zip(lv.iter()) {
                    let e: f64 = r.sample(StandardNormal);
                    let z = m + (0.5 * l).exp() * e;
                    // log q(z) − log p(z), constants cancel.
                    log_ratio += -0.5 * l - 0.5 * e * e + 0.5 * z * z;
                }
                s += log_ratio;
                s2 += log_ratio * log_ratio;
            }
            (s, s2)
        });
        let n = (chunks.len() * per_chunk) as f64;
        let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let mean = s / n;
        let se = ((s2 / n - mean * mean) / n).sqrt();
        let exact = kl_divergence(mu, lv);
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }
}

#[test]
fn masking_contract() {
    let m = CwiModel::new(&tiny(), Variant::MultitaskDa, ModelSizes { groups: 2, ..SIZES }, 8).unwrap();
    let (c, t, _) = example();
    let mut g = m.store.graph();
    let out = m.mask_and_predict(&mut g, &c, &t, 2, Mode::Eval, &mut rng()).unwrap();
    assert_eq!(out.masked[2], MASK);
    assert_eq!(&out.masked[..2], &t[..2]);
    assert_eq!(g.shape(out.logits), [SIZES.tokens]);
    assert_eq!(g.shape(out.features.concat), [10]);
    assert!(matches!(
        m.mask_and_predict(&mut g, &c, &t, 5, Mode::Eval, &mut rng()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn decoder_rows_follow_sequence_length() {
    let m = CwiModel::new(&tiny(), Variant::DecoderDa, SIZES, 9).unwrap();
    let c = [2, 3];
    let t = [CLS, 6, 9, PAD];
    let k = [true, true, true, false];
    let mut g = m.store.graph();
    let out = m.forward(&mut g, Inputs { chars: &c, tokens: &t, keep: &k }, Mode::Train, &mut rng()).unwrap();
    let dec = m.decode(&mut g, &out.encoder, &t, Mode::Train, &mut rng()).unwrap();
    assert_eq!(g.shape(dec.logits), [4, SIZES.tokens]);
    let l = decoder_loss(&mut g, dec.logits, &t, PAD, None).unwrap();
    assert!(g.scalar(l).is_finite() && g.scalar(l) > 0.0);
    assert!(m.decode(&mut g, &out.encoder, &t[..3], Mode::Train, &mut rng()).is_err());
}

#[test]
fn batch_predictions_match_across_execution() {
    let m = CwiModel::new(&tiny(), Variant::BaseDa, SIZES, 10).unwrap();
    let examples: Vec<EncodedExample> = (0..16)
        .map(|i| EncodedExample {
            chars: vec![2 + i % 5, 3, 4 + i % 3],
            tokens: vec![CLS, 4 + i % 7, 5],
            group: Some(i % 3),
            gold: 0.5,
            labeled: true,
        })
        .collect();
    let a = m.predict(&examples, Execution::Sequential).unwrap();
    let b = m.predict(&examples, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}
