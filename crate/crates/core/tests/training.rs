//! Training-loop contracts on small synthetic problems.

use emdloss::data::{generate_ordinal, Dataset, Split, SyntheticOrdinalSpec};
use emdloss::net::{
    checkpoint_from_str, checkpoint_to_string, sample_loss, train, DistanceSource, Head, LossKind, Mlp, ModelState,
    NetConfig, Phase, TrainConfig,
};
use emdloss::{Error, Target};

fn spec(num_classes: usize, spacing: f64, sigma: f64, flip: f64) -> SyntheticOrdinalSpec {
    SyntheticOrdinalSpec {
        num_classes,
        feature_dim: 4,
        samples_per_class: 40,
        center_spacing: spacing,
        noise_sigma: sigma,
        neighbor_flip_prob: flip,
        seed: 9,
    }
}

fn model(sizes: &[usize], head: Head, seed: u64) -> ModelState {
    ModelState::new(
        Mlp::new(NetConfig {
            layer_sizes: sizes.to_vec(),
            head,
            seed,
            weight_init_scale: 0.5,
        })
        .unwrap(),
    )
}

fn config(kind: LossKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::for_kind(kind)
    }
}

#[test]
fn xe_fits_a_separable_two_class_problem() {
    let (train_set, _) = generate_ordinal(&spec(2, 6.0, 0.5, 0.0)).unwrap();
    let (_, history) = train(model(&[4, 8, 2], Head::Softmax, 1), &train_set, None, &config(LossKind::Xe, 50), &DistanceSource::Ordinal { normalize: true }).unwrap();
    let first = history.records.iter().find(|r| r.train_aem == 1.0);
    assert!(first.is_some(), "train AEM never reached 1.0: {:?}", history.records.last());
}

#[test]
fn training_is_deterministic() {
    let (train_set, test_set) = generate_ordinal(&spec(4, 2.0, 1.0, 0.1)).unwrap();
    for kind in [LossKind::Xe, LossKind::Emd, LossKind::Xemd2, LossKind::Aemd] {
        let run = || {
            let source = if kind.is_hybrid() { DistanceSource::Learned } else { DistanceSource::Ordinal { normalize: true } };
            train(model(&[4, 6, 4], Head::Softmax, 3), &train_set, Some(&test_set), &config(kind, 6), &source).unwrap()
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1.records, h2.records, "{kind}");
        assert_eq!(m1, m2, "{kind}");
    }
}

#[test]
fn zero_momentum_full_batch_is_plain_gradient_descent() {
    let (train_set, _) = generate_ordinal(&spec(3, 2.0, 1.0, 0.0)).unwrap();
    let start = model(&[4, 5, 3], Head::Softmax, 4);
    let lr = 0.05;
    let cfg = TrainConfig {
        learning_rate: lr,
        momentum: 0.0,
        batch_size: train_set.len(),
        ..config(LossKind::Emd, 1)
    };
    let (trained, _) = train(start.clone(), &train_set, None, &cfg, &DistanceSource::Ordinal { normalize: true }).unwrap();

    let net = &start.net;
    let mut grad = net.zeros_like();
    for (x, &label) in train_set.features.iter().zip(&train_set.labels) {
        let pass = net.forward(x).unwrap();
        let loss = sample_loss(&pass, Target::new(label, 3).unwrap(), Phase::OrderedEmd).unwrap();
        for (g, s) in grad.iter_mut().zip(net.backward(&pass, &loss.grad_logits, 0.0).unwrap()) {
            g.params_mut().zip(s.params()).for_each(|(a, b)| *a += b);
        }
    }
    let n = train_set.len() as f64;
    for ((before, after), g) in net.layers().iter().zip(trained.net.layers()).zip(&grad) {
        for ((b, a), gv) in before.params().zip(after.params()).zip(g.params()) {
            let expected = b - lr * gv / n;
            assert!((a - expected).abs() < 1e-12, "{a} vs {expected}");
        }
    }
}

#[test]
fn emd_loss_decreases_monotonically_at_small_step() {
    let (train_set, _) = generate_ordinal(&spec(5, 1.5, 1.0, 0.1)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        momentum: 0.0,
        batch_size: train_set.len(),
        ..config(LossKind::Emd, 40)
    };
    let (_, history) = train(model(&[4, 8, 5], Head::Softmax, 5), &train_set, None, &cfg, &DistanceSource::Ordinal { normalize: true }).unwrap();
    for w in history.records.windows(2) {
        assert!(w[1].loss_reg < w[0].loss_reg, "epoch {}: {} -> {}", w[1].epoch, w[0].loss_reg, w[1].loss_reg);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (train_set, _) = generate_ordinal(&spec(4, 2.0, 1.0, 0.1)).unwrap();
    let (trained, _) = train(model(&[4, 6, 4], Head::Softmax, 6), &train_set, None, &config(LossKind::Xemd1, 6), &DistanceSource::Learned).unwrap();
    let text = checkpoint_to_string(&trained).unwrap();
    let back = checkpoint_from_str(&text).unwrap();
    let bits = |m: &ModelState| -> Vec<u64> {
        m.net.layers().iter().chain(&m.velocity).flat_map(|l| l.params().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    };
    assert_eq!(bits(&trained), bits(&back));
    assert_eq!(back, trained);
    assert_eq!(checkpoint_to_string(&back).unwrap(), text);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run_for_xe() {
    let (train_set, _) = generate_ordinal(&spec(3, 2.0, 1.0, 0.1)).unwrap();
    let src = DistanceSource::Ordinal { normalize: true };
    let (full, _) = train(model(&[4, 6, 3], Head::Softmax, 7), &train_set, None, &config(LossKind::Xe, 4), &src).unwrap();
    let (half, _) = train(model(&[4, 6, 3], Head::Softmax, 7), &train_set, None, &config(LossKind::Xe, 2), &src).unwrap();
    let restored = checkpoint_from_str(&checkpoint_to_string(&half).unwrap()).unwrap();
    let (resumed, h) = train(restored, &train_set, None, &config(LossKind::Xe, 2), &src).unwrap();
    assert_eq!(h.records[0].epoch, 3);
    // the shuffle stream restarts, so only the epoch counter must agree
    assert_eq!(resumed.epoch, full.epoch);
}

#[test]
fn regression_head_trains_and_decodes_in_range() {
    let (train_set, test_set) = generate_ordinal(&spec(5, 2.0, 0.5, 0.0)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        ..config(LossKind::Reg, 20)
    };
    let (_, history) = train(model(&[4, 8, 1], Head::Linear, 8), &train_set, Some(&test_set), &cfg, &DistanceSource::Ordinal { normalize: true }).unwrap();
    let last = history.records.last().unwrap();
    assert_eq!(last.loss_xe, 0.0);
    assert!(last.test_aeo.unwrap() > 0.8, "{last:?}");
}

#[test]
fn learned_distances_need_every_class() {
    let (full, _) = generate_ordinal(&spec(3, 2.0, 1.0, 0.0)).unwrap();
    let keep: Vec<usize> = (0..full.len()).filter(|&i| full.labels[i] != 2).collect();
    let partial = Dataset::new(
        keep.iter().map(|&i| full.features[i].clone()).collect(),
        keep.iter().map(|&i| full.labels[i]).collect(),
        3,
        Split::Train,
    )
    .unwrap();
    let err = train(model(&[4, 6, 3], Head::Softmax, 9), &partial, None, &config(LossKind::Xemd2, 2), &DistanceSource::Learned).unwrap_err();
    assert!(matches!(err, Error::InsufficientData { class: 2 }), "{err}");
}

#[test]
fn mismatched_heads_are_rejected() {
    let (train_set, _) = generate_ordinal(&spec(3, 2.0, 1.0, 0.0)).unwrap();
    let src = DistanceSource::Ordinal { normalize: true };
    assert!(train(model(&[4, 3], Head::Softmax, 1), &train_set, None, &config(LossKind::Reg, 1), &src).is_err());
    assert!(train(model(&[4, 1], Head::Linear, 1), &train_set, None, &config(LossKind::Xe, 1), &src).is_err());
}
