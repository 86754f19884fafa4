mod common;

use common::{overfit_config, synth_set};
use smilenet::network::mean_cross_entropy;
use smilenet::rng::{stream_rng, Stream};
use smilenet::train::{
    classification_rate, mean_and_sample_std, repeat_experiment, sgd_momentum_step, train,
    DataSplits, Momentum,
};
use smilenet::{Error, Mode, Network, Tensor, TrainConfig};

fn splits(n: usize, seed: u64) -> DataSplits {
    DataSplits {
        train: synth_set(n, 16, seed),
        val: synth_set(10, 16, seed + 100),
        test: synth_set(10, 16, seed + 200),
    }
}

#[test]
fn overfits_twenty_samples_within_200_epochs() {
    let epoch = common::overfit_epoch(3);
    assert!(
        matches!(epoch, Some(e) if e <= 200),
        "reached 100% at {epoch:?}"
    );
}

#[test]
fn identical_seeds_give_identical_parameters_and_reports() {
    let data = splits(30, 1);
    let cfg = TrainConfig {
        batch_size: 7,
        epochs: 3,
        seed: 9,
        ..Default::default()
    };
    let arch = smilenet::ArchitectureConfig {
        dropout_rate: 0.5,
        ..overfit_config()
    };
    let run = || train(Network::build(arch.clone(), 9).unwrap(), &data, &cfg, None).unwrap();
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a.params(), b.params());
    let strip = |r: &smilenet::TrainReport| -> Vec<_> {
        r.epochs
            .iter()
            .map(|e| (e.train_loss.to_bits(), e.val_acc, e.test_acc))
            .collect()
    };
    assert_eq!(strip(&ra), strip(&rb));

    let other = TrainConfig {
        seed: 10,
        ..cfg.clone()
    };
    let (c, _) = train(
        Network::build(arch.clone(), 9).unwrap(),
        &data,
        &other,
        None,
    )
    .unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = splits(20, 2);
    let net = Network::build(overfit_config(), 4).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        batch_size: 6,
        epochs: 5,
        ..Default::default()
    };
    let (trained, _) = train(net.clone(), &data, &cfg, None).unwrap();
    assert_eq!(trained.params(), net.params());
}

#[test]
fn zero_epochs_returns_initial_network() {
    let data = splits(10, 3);
    let net = Network::build(overfit_config(), 5).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..Default::default()
    };
    let (trained, report) = train(net.clone(), &data, &cfg, None).unwrap();
    assert_eq!(trained.params(), net.params());
    assert!(report.epochs.is_empty());
}

/// Repeated small steps on one fixed batch never raise its loss.
#[test]
fn small_steps_do_not_increase_batch_loss() {
    let set = synth_set(16, 16, 6);
    let idx: Vec<usize> = (0..16).collect();
    let (batch, labels) = set.batch(&idx).unwrap();
    let mut net = Network::build(overfit_config(), 6).unwrap();
    let mut momentum = Momentum::new(&net).unwrap();
    let mut rng = stream_rng(0, Stream::Dropout, 0);
    let mut prev = f64::INFINITY;
    for _ in 0..20 {
        let (probs, cache) = net.forward(&batch, Mode::Train, &mut rng).unwrap();
        let loss = mean_cross_entropy(&probs, &labels).unwrap();
        assert!(loss <= prev, "loss rose from {prev} to {loss}");
        prev = loss;
        let grads = net.backward(&cache, &labels).unwrap();
        momentum.step(net.params_mut(), &grads, 0.001, 0.0).unwrap();
    }
}

#[test]
fn momentum_steps_match_hand_values() {
    let mut w = Tensor::zeros(&[1]);
    let mut v = Tensor::zeros(&[1]);
    let g = Tensor::filled(&[1], 1.0);
    sgd_momentum_step(&mut w, &g, &mut v, 0.01, 0.9).unwrap();
    assert!((v.data()[0] + 0.01).abs() < 1e-15 && (w.data()[0] + 0.01).abs() < 1e-15);
    sgd_momentum_step(&mut w, &g, &mut v, 0.01, 0.9).unwrap();
    assert!((v.data()[0] + 0.019).abs() < 1e-15);
    assert!((w.data()[0] + 0.029).abs() < 1e-15);
}

#[test]
fn momentum_velocity_closed_form() {
    let (alpha, mu, g) = (0.05, 0.7, 0.3);
    let mut w = Tensor::zeros(&[3]);
    let mut v = Tensor::zeros(&[3]);
    let grad = Tensor::filled(&[3], g);
    for k in 1..=25 {
        sgd_momentum_step(&mut w, &grad, &mut v, alpha, mu).unwrap();
        let expected = -alpha * g * (1.0 - mu.powi(k)) / (1.0 - mu);
        assert!(v.data().iter().all(|x| (x - expected).abs() < 1e-12));
    }
}

#[test]
fn zero_momentum_is_plain_sgd() {
    let mut w = Tensor::filled(&[2], 1.0);
    let mut v = Tensor::zeros(&[2]);
    let g = Tensor::new(vec![2], vec![2.0, -4.0]).unwrap();
    sgd_momentum_step(&mut w, &g, &mut v, 0.5, 0.0).unwrap();
    assert_eq!(w.data(), [0.0, 3.0]);
}

#[test]
fn momentum_shape_mismatch() {
    let mut w = Tensor::zeros(&[2]);
    let mut v = Tensor::zeros(&[3]);
    let g = Tensor::zeros(&[2]);
    assert!(matches!(
        sgd_momentum_step(&mut w, &g, &mut v, 0.1, 0.9),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn classification_rate_examples() {
    assert_eq!(
        classification_rate(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(),
        0.75
    );
    assert_eq!(classification_rate(&[1, 0], &[1, 0]).unwrap(), 1.0);
    assert_eq!(classification_rate(&[1, 0], &[0, 1]).unwrap(), 0.0);
    assert!(classification_rate(&[1], &[1, 0]).is_err());
    assert!(classification_rate(&[], &[]).is_err());
}

#[test]
fn sample_std_by_hand() {
    let (m, s) = mean_and_sample_std(&[0.99, 0.99, 0.99]).unwrap();
    assert!((m - 0.99).abs() < 1e-12);
    assert_eq!(s, 0.0);
    let (m, s) = mean_and_sample_std(&[0.98, 1.00]).unwrap();
    assert!((m - 0.99).abs() < 1e-12);
    assert!((s - 0.02 / 2f64.sqrt()).abs() < 1e-12);
    // 2, 4, 4, 4, 5, 5, 7, 9: mean 5, squared deviations sum to 32.
    let (m, s) = mean_and_sample_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
    assert!((m - 5.0).abs() < 1e-12);
    assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
}

#[test]
fn repeat_needs_two_runs_and_distinct_seeds() {
    assert!(repeat_experiment(1, 0, |_, _| Ok(1.0)).is_err());
    let seeds = std::sync::Mutex::new(Vec::new());
    let stats = repeat_experiment(4, 0, |i, s| {
        seeds.lock().unwrap().push(s);
        Ok([0.9, 0.95, 1.0, 0.95][i])
    })
    .unwrap();
    let mut seeds = seeds.into_inner().unwrap();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 4);
    assert!((stats.mean - 0.95).abs() < 1e-12);
}

#[test]
fn non_finite_loss_reports_epoch_and_batch() {
    let data = splits(12, 7);
    let mut net = Network::build(overfit_config(), 7).unwrap();
    net.params_mut().dense[1].bias.data_mut()[0] = f64::NAN;
    let cfg = TrainConfig {
        batch_size: 4,
        epochs: 3,
        ..Default::default()
    };
    match train(net, &data, &cfg, None) {
        Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (1, 1)),
        other => panic!(
            "expected NonFiniteLoss, got {:?}",
            other.map(|(_, r)| r.best_epoch)
        ),
    }
}
