//! Adam training loop, parameter initialization and evaluation.

mod checkpoint;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::Checkpoint;

use crate::error::{Error, Result};
use crate::mnist::{DataSplits, Dataset};
use crate::model::{Activation, Mode, Network, ParamSet};
use crate::netspec::NetSpec;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub init_mean: f64,
    pub init_stddev: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Overrides the keep probability of every dropout layer.
    pub dropout_keep: Option<f64>,
    pub seed: u64,
    pub activation: Activation,
    /// Validation accuracy is recorded every `eval_every` iterations; 0 disables it.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 50,
            iterations: 20_000,
            init_mean: 0.0,
            init_stddev: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            dropout_keep: None,
            seed: 0,
            activation: Activation::Relu,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return fail(format!("Adam {name} must be in (0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon >= 0.0 && self.adam_epsilon.is_finite()) {
            return fail(format!(
                "Adam epsilon must be >= 0, got {}",
                self.adam_epsilon
            ));
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if !(self.init_stddev >= 0.0 && self.init_stddev.is_finite() && self.init_mean.is_finite())
        {
            return fail(format!(
                "init distribution N({}, {}) is invalid",
                self.init_mean, self.init_stddev
            ));
        }
        if let Some(k) = self.dropout_keep {
            if !(k > 0.0 && k <= 1.0) {
                return fail(format!(
                    "dropout keep probability must be in (0, 1], got {k}"
                ));
            }
        }
        Ok(())
    }

    pub fn network(&self, spec: &NetSpec) -> Result<Network> {
        Network::compile_with(spec, self.activation, self.dropout_keep)
    }
}

/// Every weight and bias drawn i.i.d. from `N(init_mean, init_stddev²)`.
pub fn init_params<R: Rng + ?Sized>(
    network: &Network,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<ParamSet> {
    let normal = Normal::new(config.init_mean, config.init_stddev)
        .map_err(|e| Error::InvalidArgument(format!("init distribution: {e}")))?;
    Ok(network.build_params(|| normal.sample(rng)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub timestep: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            timestep: 0,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked for NaN/Inf before
/// anything is modified.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::InvalidArgument(
            "gradient or optimizer state layout does not match the parameters".into(),
        ));
    }
    if let Some(bad) = grads.tensors().iter().find(|t| !t.tensor.all_finite()) {
        return Err(Error::NonFiniteGradient {
            tensor: bad.name.clone(),
        });
    }
    state.timestep += 1;
    let t = state.timestep as f64;
    let (b1, b2, eps, lr) = (
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
        config.learning_rate,
    );
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    let tensors = params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().iter_mut().zip(state.v.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        let p = p.tensor.data_mut();
        let m = m.tensor.data_mut();
        let v = v.tensor.data_mut();
        for (i, &gi) in g.tensor.data().iter().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub final_test_accuracy: f64,
    /// `(iteration, minibatch loss)`, iterations numbered from 1.
    pub loss_trace: Vec<(usize, f64)>,
    /// `(iteration, validation accuracy)`.
    pub eval_trace: Vec<(usize, f64)>,
    pub wall_time_seconds: f64,
}

/// Result plus the state needed to write a checkpoint.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub result: TrainResult,
    pub params: ParamSet,
    pub adam: AdamState,
    pub iteration: u64,
}

impl TrainedModel {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: self.adam.clone(),
            iteration: self.iteration,
        }
    }
}

/// Epoch-wise reshuffled sample order.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: rng::StreamRng,
}

impl BatchSampler {
    fn new(n: usize, rng: rng::StreamRng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next_batch(&mut self, size: usize, out: &mut Vec<usize>) {
        out.clear();
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
    }
}

fn gather(data: &Dataset, indices: &[usize], images: &mut Vec<f64>, classes: &mut Vec<usize>) {
    images.clear();
    classes.clear();
    for &i in indices {
        images.extend_from_slice(data.image(i));
        classes.push(data.class(i));
    }
}

fn check_input_shape(network: &Network, data: &Dataset) -> Result<()> {
    if network.input_shape() != data.sample_shape() {
        return Err(Error::InvalidArgument(format!(
            "network input {:?} does not match data samples {:?}",
            network.input_shape(),
            data.sample_shape()
        )));
    }
    Ok(())
}

/// Trains on `data.train` and scores the result on `data.test`.
pub fn train_model(
    spec: &NetSpec,
    data: &DataSplits,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    spec.check_classifier()?;
    let network = config.network(spec)?;
    check_input_shape(&network, &data.train)?;
    let started = Instant::now();

    let mut params = init_params(&network, config, &mut rng::stream(config.seed, rng::INIT))?;
    let mut adam = AdamState::new(&params);
    let mut grads = params.zeros_like();
    let mut sampler = BatchSampler::new(data.train.len(), rng::stream(config.seed, rng::SHUFFLE));
    let mut dropout_rng = rng::stream(config.seed, rng::DROPOUT);

    let mut loss_trace = Vec::with_capacity(config.iterations);
    let mut eval_trace = Vec::new();
    let (mut indices, mut images, mut classes, mut grad_logits) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let log_every = (config.iterations / 20).max(1);

    for iteration in 1..=config.iterations {
        sampler.next_batch(config.batch_size, &mut indices);
        gather(&data.train, &indices, &mut images, &mut classes);
        let tape = network.forward(
            &params,
            &images,
            indices.len(),
            Mode::Train,
            &mut dropout_rng,
        );
        let loss = network.loss(&tape, &classes, &mut grad_logits);
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration, loss });
        }
        grads.fill(0.0);
        network.backward(&params, &tape, &grad_logits, &mut grads);
        adam_step(&mut params, &grads, &mut adam, config)?;
        loss_trace.push((iteration, loss));

        if config.eval_every > 0 && iteration % config.eval_every == 0 {
            eval_trace.push((
                iteration,
                evaluate_network(&network, &params, &data.validation)?,
            ));
        }
        if iteration % log_every == 0 {
            log::info!(
                "iteration {iteration}/{}: loss {loss:.4}",
                config.iterations
            );
        }
    }

    let final_test_accuracy = evaluate_network(&network, &params, &data.test)?;
    Ok(TrainedModel {
        result: TrainResult {
            final_test_accuracy,
            loss_trace,
            eval_trace,
            wall_time_seconds: started.elapsed().as_secs_f64(),
        },
        params,
        adam,
        iteration: config.iterations as u64,
    })
}

pub fn train(spec: &NetSpec, data: &DataSplits, config: &TrainConfig) -> Result<TrainResult> {
    train_model(spec, data, config).map(|m| m.result)
}

const EVAL_BATCH: usize = 100;

/// Argmax accuracy with dropout disabled.
pub fn evaluate_network(network: &Network, params: &ParamSet, data: &Dataset) -> Result<f64> {
    network.check_params(params)?;
    check_input_shape(network, data)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate an empty dataset".into(),
        ));
    }
    let per = data.sample_len();
    let images = data.images().data();
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(data.len());
        let predicted = network.predict(params, &images[start * per..end * per], end - start);
        correct += predicted
            .iter()
            .enumerate()
            .filter(|&(i, &p)| p == data.class(start + i))
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Accuracy of `params` on `data` under the default activation.
pub fn evaluate(spec: &NetSpec, params: &ParamSet, data: &Dataset) -> Result<f64> {
    evaluate_network(
        &Network::compile(spec, Activation::default())?,
        params,
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NamedTensor;
    use crate::tensor::Tensor;

    fn scalar_set(v: f64) -> ParamSet {
        ParamSet::new(vec![NamedTensor {
            name: "p".into(),
            tensor: Tensor::from_slice(&[1], &[v]).unwrap(),
        }])
    }

    #[test]
    fn defaults_are_the_training_protocol() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.learning_rate, c.batch_size, c.iterations),
            (1e-4, 50, 20_000)
        );
        assert_eq!((c.init_mean, c.init_stddev), (0.0, 0.1));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                adam_beta1: 1.0,
                ..Default::default()
            },
            TrainConfig {
                adam_beta2: 0.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                dropout_keep: Some(0.0),
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_set(0.3);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &scalar_set(0.0), &mut s, &TrainConfig::default()).unwrap();
        assert_eq!(p.tensors()[0].tensor.data(), &[0.3]);
        assert_eq!(s.timestep, 1);
    }

    #[test]
    fn nan_gradient_names_the_tensor() {
        let mut p = scalar_set(0.3);
        let mut s = AdamState::new(&p);
        let err = adam_step(
            &mut p,
            &scalar_set(f64::NAN),
            &mut s,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref tensor } if tensor == "p"));
        assert_eq!(s.timestep, 0);
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = BatchSampler::new(10, rng::stream(1, rng::SHUFFLE));
        let mut batch = Vec::new();
        let mut seen = Vec::new();
        for _ in 0..5 {
            s.next_batch(4, &mut batch);
            seen.extend_from_slice(&batch);
        }
        let mut first: Vec<_> = seen[..10].to_vec();
        first.sort();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        let mut second: Vec<_> = seen[10..20].to_vec();
        second.sort();
        assert_eq!(second, (0..10).collect::<Vec<_>>());
    }
}
