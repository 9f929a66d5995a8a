mod common;

use rand::seq::SliceRandom;

use tradeoff::mnist::{DataSplits, Dataset};
use tradeoff::netspec::{presets, NetSpec};
use tradeoff::rng;
use tradeoff::search::median;
use tradeoff::trainer::{train, train_model, TrainConfig};

fn splits(train: usize, test: usize) -> DataSplits {
    let data = common::load();
    DataSplits::new(
        data.train.slice(0..train).unwrap(),
        data.validation.slice(0..100).unwrap(),
        data.test.slice(0..test).unwrap(),
    )
    .unwrap()
}

fn mean(xs: &[(usize, f64)]) -> f64 {
    xs.iter().map(|&(_, l)| l).sum::<f64>() / xs.len() as f64
}

#[test]
fn every_preset_reduces_its_loss() {
    let data = splits(5_000, 100);
    for (spec, iterations) in [
        (presets::baseline(), 30),
        (presets::iteration1(), 30),
        (presets::optimized(), 300),
    ] {
        let config = TrainConfig {
            iterations,
            seed: 5,
            ..TrainConfig::default()
        };
        let r = train(&spec, &data, &config).unwrap();
        let early = mean(&r.loss_trace[..5]);
        let late = mean(&r.loss_trace[iterations - 5..]);
        assert!(r.loss_trace.iter().all(|&(_, l)| l.is_finite() && l >= 0.0));
        assert!(late < early, "{}: loss {early} -> {late}", spec.name);
    }
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let data = splits(2_000, 500);
    let run = |seed| {
        let config = TrainConfig {
            iterations: 40,
            seed,
            ..TrainConfig::default()
        };
        let m = train_model(&presets::optimized(), &data, &config).unwrap();
        (
            m.checkpoint().to_bytes(),
            m.result.final_test_accuracy,
            m.result.loss_trace,
        )
    };
    let a = run(11);
    let b = run(11);
    assert_eq!(a, b);
    assert_ne!(a.0, run(12).0);
}

#[test]
fn untrained_networks_score_at_chance() {
    let data = splits(100, 10_000);
    let accs: Vec<f64> = (0..9)
        .map(|seed| {
            let config = TrainConfig {
                iterations: 0,
                seed,
                ..TrainConfig::default()
            };
            train(&presets::optimized(), &data, &config)
                .unwrap()
                .final_test_accuracy
        })
        .collect();
    let m = median(&accs);
    assert!((m - 0.1).abs() <= 0.02, "median {m} over {accs:?}");
}

#[test]
fn permuted_labels_leave_nothing_to_learn() {
    let data = common::load();
    let train_set = data.train.slice(0..5_000).unwrap();
    let test_set = data.test.slice(0..2_000).unwrap();
    let accs: Vec<f64> = (0..5)
        .map(|seed| {
            let mut classes: Vec<u8> = (0..train_set.len())
                .map(|i| train_set.class(i) as u8)
                .collect();
            classes.shuffle(&mut rng::stream(seed, "permute"));
            let shuffled =
                Dataset::from_class_indices(train_set.images().clone(), &classes).unwrap();
            let splits = DataSplits::new(
                shuffled,
                data.validation.slice(0..100).unwrap(),
                test_set.clone(),
            )
            .unwrap();
            let config = TrainConfig {
                iterations: 200,
                seed,
                ..TrainConfig::default()
            };
            train(&presets::optimized(), &splits, &config)
                .unwrap()
                .final_test_accuracy
        })
        .collect();
    // single runs scatter around chance; the median should not
    let m = median(&accs);
    assert!((m - 0.1).abs() <= 0.02, "median {m} over {accs:?}");
}

#[test]
fn mismatched_inputs_are_rejected() {
    let data = splits(100, 100);
    let text = "input h=14 w=14 c=1\nflatten\ndense out=10\n";
    let spec: NetSpec = tradeoff::netspec::parse_spec(text).unwrap();
    let config = TrainConfig {
        iterations: 1,
        ..TrainConfig::default()
    };
    assert!(train(&spec, &data, &config).is_err());
}
