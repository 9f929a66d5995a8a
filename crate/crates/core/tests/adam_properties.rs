use proptest::prelude::*;

use tradeoff::model::{Activation, NamedTensor, Network, ParamSet};
use tradeoff::netspec::presets;
use tradeoff::rng;
use tradeoff::trainer::{adam_step, init_params, AdamState, TrainConfig};
use tradeoff::{Error, Tensor};

fn scalar_set(values: &[f64]) -> ParamSet {
    ParamSet::new(vec![NamedTensor {
        name: "w".into(),
        tensor: Tensor::vector(values.to_vec()).unwrap(),
    }])
}

/// Parameter trajectory of one coordinate under `grads`.
fn run_adam(grads: &[f64], config: &TrainConfig) -> Vec<f64> {
    let mut params = scalar_set(&[0.0]);
    let mut state = AdamState::new(&params);
    let mut out = Vec::with_capacity(grads.len());
    for &g in grads {
        adam_step(&mut params, &scalar_set(&[g]), &mut state, config).unwrap();
        out.push(params.tensors()[0].tensor.data()[0]);
    }
    out
}

/// Step at time `t` from the explicit weighted sums rather than the moment
/// recursions.
fn oracle_step(grads: &[f64], t: usize, c: &TrainConfig) -> f64 {
    let (b1, b2) = (c.adam_beta1, c.adam_beta2);
    let mut m = 0.0;
    let mut v = 0.0;
    for (j, &g) in grads[..t].iter().enumerate() {
        let age = (t - 1 - j) as i32;
        m += (1.0 - b1) * b1.powi(age) * g;
        v += (1.0 - b2) * b2.powi(age) * g * g;
    }
    let m_hat = m / (1.0 - b1.powi(t as i32));
    let v_hat = v / (1.0 - b2.powi(t as i32));
    -c.learning_rate * m_hat / (v_hat.sqrt() + c.adam_epsilon)
}

/// Cauchy-Schwarz bound on |m_hat| / sqrt(v_hat) after `t` steps with any
/// gradients: sqrt(sum_j w_j^2 / u_j) for the normalized moment weights.
fn step_ratio_bound(t: usize, c: &TrainConfig) -> f64 {
    let (b1, b2) = (c.adam_beta1, c.adam_beta2);
    let n1 = 1.0 - b1.powi(t as i32);
    let n2 = 1.0 - b2.powi(t as i32);
    (0..t)
        .map(|j| {
            let w = (1.0 - b1) * b1.powi(j as i32) / n1;
            let u = (1.0 - b2) * b2.powi(j as i32) / n2;
            w * w / u
        })
        .sum::<f64>()
        .sqrt()
}

fn steps(trajectory: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    trajectory
        .iter()
        .map(|&p| {
            let d = p - prev;
            prev = p;
            d
        })
        .collect()
}

proptest! {
    #[test]
    fn matches_the_explicit_sum_oracle(grads in prop::collection::vec(-10.0f64..10.0, 1..60), lr in 1e-5f64..1e-1) {
        let config = TrainConfig { learning_rate: lr, ..TrainConfig::default() };
        let got = steps(&run_adam(&grads, &config));
        for (t, d) in got.iter().enumerate() {
            let want = oracle_step(&grads, t + 1, &config);
            prop_assert!((d - want).abs() <= 1e-12 * want.abs().max(lr), "t={} {} vs {}", t + 1, d, want);
        }
    }

    #[test]
    fn steps_stay_within_lr_when_gradient_magnitudes_do_not_grow(
        mut mags in prop::collection::vec(1e-6f64..100.0, 1..200),
        signs in prop::collection::vec(any::<bool>(), 200),
    ) {
        mags.sort_by(|a, b| b.total_cmp(a));
        let grads: Vec<f64> = mags.iter().zip(&signs).map(|(&m, &s)| if s { m } else { -m }).collect();
        let config = TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() };
        for d in steps(&run_adam(&grads, &config)) {
            prop_assert!(d.abs() <= config.learning_rate * (1.0 + 1e-12), "{d}");
        }
    }

    #[test]
    fn steps_respect_the_general_bound(grads in prop::collection::vec(-1e3f64..1e3, 1..300)) {
        let config = TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() };
        for (t, d) in steps(&run_adam(&grads, &config)).iter().enumerate() {
            let bound = config.learning_rate * step_ratio_bound(t + 1, &config);
            prop_assert!(d.abs() <= bound * (1.0 + 1e-12), "t={} {} > {}", t + 1, d, bound);
        }
    }
}

#[test]
fn first_step_has_magnitude_lr() {
    let config = TrainConfig::default();
    for g in [-3.0, -1e-3, 0.5, 42.0] {
        let d = run_adam(&[g], &config)[0];
        let want = -config.learning_rate * g / (g.abs() + config.adam_epsilon);
        assert!((d - want).abs() < 1e-18, "{g}: {d} vs {want}");
    }
}

#[test]
fn step_can_exceed_the_learning_rate_after_a_quiet_stretch() {
    let config = TrainConfig {
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let mut grads = vec![0.0; 1000];
    grads.push(1.0);
    let last = *steps(&run_adam(&grads, &config)).last().unwrap();
    let ratio = last.abs() / config.learning_rate;
    assert!(ratio > 2.4 && ratio < 2.6, "{ratio}");
    assert!(ratio <= step_ratio_bound(1001, &config));
}

#[test]
fn rejects_non_finite_gradients_without_touching_state() {
    let config = TrainConfig::default();
    let mut params = scalar_set(&[1.0, 2.0]);
    let mut state = AdamState::new(&params);
    let before = (params.clone(), state.clone());
    let err = adam_step(
        &mut params,
        &scalar_set(&[0.1, f64::NAN]),
        &mut state,
        &config,
    )
    .unwrap_err();
    assert!(
        matches!(err, Error::NonFiniteGradient { ref tensor } if tensor == "w"),
        "{err}"
    );
    assert_eq!((params, state), before);
}

#[test]
fn initialization_moments() {
    let network = Network::compile(&presets::optimized(), Activation::Relu).unwrap();
    for (mean, stddev) in [(0.0, 0.1), (0.5, 0.2)] {
        let config = TrainConfig {
            init_mean: mean,
            init_stddev: stddev,
            ..TrainConfig::default()
        };
        let params = init_params(&network, &config, &mut rng::stream(3, rng::INIT)).unwrap();
        let values: Vec<f64> = params
            .tensors()
            .iter()
            .flat_map(|t| t.tensor.data().iter().copied())
            .collect();
        assert!(values.len() >= 10_000);
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        assert!((m - mean).abs() < 0.01, "mean {m}");
        assert!((sd - stddev).abs() < 0.01, "stddev {sd}");
        // biases are drawn from the same distribution as the weights
        let bias = params.get("fc1.bias").unwrap().data();
        assert!(bias.iter().any(|&b| b != mean));
    }
}
