//! Loss, optimiser and epoch-loop contracts.

mod common;

use std::ops::ControlFlow;

use common::{central_difference, random_tensor, rel_err, rng, synthetic_splits};
use fusionet_core::autodiff::Graph;
use fusionet_core::params::ParamSet;
use fusionet_core::training::{bce_loss, train, Adam, Example, TrainConfig};
use fusionet_core::{Dims, Error, FusionKind, Model, ModelConfig, Scalar, Tensor};

fn loss_of_probs(p: [f64; 2], label: usize) -> f64 {
    let mut g = Graph::new();
    let probs = g.constant(Tensor::row(p.to_vec()));
    let loss = bce_loss(&mut g, probs, label).unwrap();
    g.value(loss).data()[0]
}

#[test]
fn cross_entropy_values() {
    assert!((loss_of_probs([0.5, 0.5], 0) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((loss_of_probs([0.5, 0.5], 1) - std::f64::consts::LN_2).abs() < 1e-15);
    // Clamped at the boundary rather than infinite.
    assert!((loss_of_probs([0.0, 1.0], 1) - 1e-7).abs() < 1e-12);
    assert!((loss_of_probs([0.0, 1.0], 0) - (-(1e-7f64).ln())).abs() < 1e-9);
    let mut g = Graph::<f64>::new();
    let probs = g.constant(Tensor::row(vec![0.5, 0.5]));
    assert!(bce_loss(&mut g, probs, 2).is_err());
}

fn logits_loss(logits: &[f64], label: usize) -> f64 {
    let mut g = Graph::new();
    let z = g.constant(Tensor::row(logits.to_vec()));
    let p = g.softmax(z).unwrap();
    let loss = bce_loss(&mut g, p, label).unwrap();
    g.value(loss).data()[0]
}

#[test]
fn logit_gradient_is_probabilities_minus_one_hot() {
    let mut r = rng(40);
    for trial in 0..20 {
        let label = trial % 2;
        let logits = random_tensor(&mut r, &[1, 2], -3.0, 3.0);
        let mut g = Graph::new();
        let z = g.variable(logits.clone());
        let p = g.softmax(z).unwrap();
        let loss = bce_loss(&mut g, p, label).unwrap();
        let probs = g.value(p).data().to_vec();
        g.backward(loss).unwrap();
        let grad = g.grad(z).unwrap().data().to_vec();
        for k in 0..2 {
            let expected = probs[k] - if k == label { 1.0 } else { 0.0 };
            assert!((grad[k] - expected).abs() < 1e-12);
            let numeric = central_difference(
                |x| {
                    let mut l = logits.data().to_vec();
                    l[k] = x;
                    logits_loss(&l, label)
                },
                logits.data()[k],
            );
            assert!(rel_err(grad[k], numeric) < 1e-6);
        }
    }
}

fn two_params() -> ParamSet<f64> {
    let mut p = ParamSet::new();
    p.push("a", Tensor::row(vec![0.3, -0.7]));
    p.push("b", Tensor::row(vec![1.5]));
    p
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut p = two_params();
    let before = p.values().to_vec();
    let mut adam = Adam::new(&p, 1e-3);
    adam.step(p.values_mut(), &[Some(Tensor::zeros(&[1, 2])), None]);
    assert_eq!(p.values(), before.as_slice());
    assert_eq!(adam.steps(), 1);
}

#[test]
fn only_parameters_with_gradient_move() {
    let mut p = two_params();
    let before = p.values().to_vec();
    let mut adam = Adam::new(&p, 1e-3);
    adam.step(p.values_mut(), &[Some(Tensor::row(vec![0.0, 2.0])), None]);
    assert_eq!(p.values()[0].data()[0], before[0].data()[0]);
    assert_ne!(p.values()[0].data()[1], before[0].data()[1]);
    assert_eq!(p.values()[1], before[1]);
}

#[test]
fn constant_gradient_steps_approach_learning_rate_times_sign() {
    let lr = 1e-3;
    let mut p = two_params();
    let mut adam = Adam::new(&p, lr);
    let grads = [Some(Tensor::row(vec![0.25, -4.0])), Some(Tensor::row(vec![1e-3]))];
    let mut last = p.values().to_vec();
    for _ in 0..1000 {
        last = p.values().to_vec();
        adam.step(p.values_mut(), &grads);
    }
    let deltas = [
        p.values()[0].data()[0] - last[0].data()[0],
        p.values()[0].data()[1] - last[0].data()[1],
        p.values()[1].data()[0] - last[1].data()[0],
    ];
    let signs = [-1.0, 1.0, -1.0];
    for (d, s) in deltas.iter().zip(signs) {
        assert!((d - s * lr).abs() < 1e-7 * lr.max(1.0), "{d}");
    }
}

#[test]
fn first_step_ignores_gradient_scale() {
    let mut p = ParamSet::<f64>::new();
    p.push("x", Tensor::row(vec![0.0, 0.0]));
    let mut adam = Adam::new(&p, 1e-3);
    adam.step(p.values_mut(), &[Some(Tensor::row(vec![0.37, 0.74]))]);
    let moved = p.values()[0].data();
    // Equal up to the epsilon in the denominator: lr·eps·|1/g1 − 1/g2|.
    let eps_bound = 1e-3 * 1e-8 * (1.0 / 0.37 - 1.0 / 0.74);
    assert!((moved[0] - moved[1]).abs() <= eps_bound * 1.01);
    assert!((moved[0] + 1e-3).abs() < 1e-9);
}

fn small_config(kind: FusionKind, vocab: usize) -> ModelConfig {
    ModelConfig {
        fusion: kind,
        dims: Dims {
            visual: 6,
            hidden: 3,
            seq_len: 60,
            attention: 4,
            embed: 5,
            conv: [2, 3],
        },
        vocab_size: vocab,
        mask_padding: false,
    }
}

/// Shrinks images to 16×16 by nearest-neighbour sampling so loop tests run fast.
fn shrink(examples: &[Example<f32>]) -> Vec<Example<f32>> {
    use fusionet_core::training::ImageData;
    examples
        .iter()
        .map(|ex| {
            let ImageData::Pixels(img) = &ex.image else {
                unreachable!()
            };
            let mut px = Vec::with_capacity(16 * 16 * 3);
            for y in 0..16 {
                for x in 0..16 {
                    let (sy, sx) = (y * 150 / 16, x * 150 / 16);
                    px.extend_from_slice(&img.data()[(sy * 150 + sx) * 3..][..3]);
                }
            }
            Example {
                image: ImageData::Pixels(Tensor::new(vec![16, 16, 3], px).unwrap()),
                ..ex.clone()
            }
        })
        .collect()
}

#[test]
fn zero_epochs_return_the_initialisation() {
    let data = synthetic_splits(32, 3);
    let (train_set, val) = (shrink(&data.train), shrink(&data.validation));
    let model = Model::<f32>::new(small_config(FusionKind::McaScf, data.vocab_size), 5).unwrap();
    let mut calls = 0;
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let out = train(&cfg, model.clone(), &train_set, &val, |_, _| {
        calls += 1;
        ControlFlow::Continue(())
    })
    .unwrap();
    assert_eq!(calls, 1);
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.log[0].epoch, 0);
    assert_eq!(out.best_epoch, 0);
    assert_eq!(out.best.params().values(), model.params().values());
}

#[test]
fn training_is_deterministic_and_keeps_the_running_best() {
    let data = synthetic_splits(32, 3);
    let (train_set, val) = (shrink(&data.train), shrink(&data.validation));
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 4,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || {
        let model = Model::<f32>::new(small_config(FusionKind::McaScf, data.vocab_size), 5).unwrap();
        train(&cfg, model, &train_set, &val, |_, _| ControlFlow::Continue(())).unwrap()
    };
    let (a, b) = (run(), run());
    let bits = |m: &Model<f32>| {
        m.params()
            .values()
            .iter()
            .flat_map(|t| t.data().iter().map(|x| x.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a.best), bits(&b.best));
    assert_eq!(bits(&a.last), bits(&b.last));
    assert_eq!(a.log, b.log);

    assert_eq!(a.log.len(), 4);
    let mut running = f64::NEG_INFINITY;
    for rec in &a.log {
        assert_eq!(rec.improved, rec.val_accuracy > running);
        running = running.max(rec.val_accuracy);
    }
    assert_eq!(a.best_metric, running);
    assert!(a.log[a.best_epoch - 1].improved);
}

#[test]
fn callback_can_stop_early() {
    let data = synthetic_splits(32, 3);
    let (train_set, val) = (shrink(&data.train), shrink(&data.validation));
    let model = Model::<f32>::new(small_config(FusionKind::Late, data.vocab_size), 5).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let out = train(&cfg, model, &train_set, &val, |rec, _| {
        if rec.epoch == 2 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert_eq!(out.log.len(), 2);
}

#[test]
fn non_finite_values_abort_with_a_location() {
    let data = synthetic_splits(32, 3);
    let (train_set, val) = (shrink(&data.train), shrink(&data.validation));
    let mut model = Model::<f32>::new(small_config(FusionKind::McaScf, data.vocab_size), 5).unwrap();
    let id = model.params().find("visual.dense.weight").unwrap();
    model.params_mut().get_mut(id).data_mut()[0] = f32::INFINITY;
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let err = train(&cfg, model, &train_set, &val, |_, _| ControlFlow::Continue(())).unwrap_err();
    assert!(matches!(err, Error::NumericFault { epoch: 1, batch: 0, .. }), "{err}");
}

#[test]
fn empty_splits_and_bad_config_are_rejected() {
    let data = synthetic_splits(32, 3);
    let train_set = shrink(&data.train);
    let model = Model::<f32>::new(small_config(FusionKind::McaScf, data.vocab_size), 5).unwrap();
    let cfg = TrainConfig::default();
    assert!(matches!(
        train(&cfg, model.clone(), &[], &train_set, |_, _| ControlFlow::Continue(())),
        Err(Error::Empty(_))
    ));
    assert!(matches!(
        train(&cfg, model.clone(), &train_set, &[], |_, _| ControlFlow::Continue(())),
        Err(Error::Empty(_))
    ));
    let bad = TrainConfig {
        learning_rate: 0.0,
        ..cfg
    };
    assert!(matches!(
        train(&bad, model, &train_set, &train_set, |_, _| ControlFlow::Continue(())),
        Err(Error::Config(_))
    ));
}

fn mean_loss<T: Scalar>(model: &Model<T>, set: &[Example<T>]) -> f64 {
    let mut total = 0.0;
    for ex in set {
        let p = model.predict(ex.sample()).unwrap();
        total += -p[ex.label].to_f64_lossy().clamp(1e-7, 1.0 - 1e-7).ln();
    }
    total / set.len() as f64
}

/// Full-size MCA-SCF on the n = 64 synthetic set.
#[test]
fn xor_training_loss_drops_and_train_set_is_fit() {
    let data = synthetic_splits(64, 7);
    let config = ModelConfig {
        fusion: FusionKind::McaScf,
        dims: Dims::default(),
        vocab_size: data.vocab_size,
        mask_padding: false,
    };
    let model = Model::<f32>::new(config, 7).unwrap();
    let initial = mean_loss(&model, &data.train);
    let cfg = TrainConfig {
        epochs: 200,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut loss_at_5 = None;
    let mut fit_at = None;
    train(&cfg, model, &data.train, &data.validation, |rec, m| {
        if rec.epoch == 5 {
            loss_at_5 = Some(mean_loss(m, &data.train));
        }
        if rec.train_accuracy.unwrap() >= 0.95 {
            fit_at = Some(rec.epoch);
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })
    .unwrap();
    let loss_at_5 = loss_at_5.expect("ran at least 5 epochs");
    eprintln!("initial loss {initial:.6}, after 5 epochs {loss_at_5:.6}, fit at epoch {fit_at:?}");
    assert!(loss_at_5 < initial);
    assert!(fit_at.is_some());
}
