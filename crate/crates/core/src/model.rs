//! A [`NetSpec`] compiled into a batched forward/backward pipeline.
//!
//! Activations for a minibatch are stored as one contiguous buffer per stage,
//! sample-major. ReLU is fused into the producing conv/dense stage, so the
//! stored stage output is the post-activation value.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::netspec::{LayerSpec, NetSpec};
use crate::ops::{self, DropoutMask};
use crate::tensor::Tensor;

/// Nonlinearity applied after every conv layer and every dense layer except
/// the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" | "none" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation '{other}' (expected relu or identity)"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Weights and biases of every parameterized layer, in layer order:
/// `conv1.weights`, `conv1.bias`, `fc1.weights`, ...
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tensors: Vec<NamedTensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<NamedTensor>) -> Self {
        Self { tensors }
    }

    /// A zero-filled set with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    tensor: Tensor::zeros(t.tensor.shape()),
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.tensor)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count, biases included.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.tensor.fill(value);
        }
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape())
    }

    fn layer(&self, index: usize) -> (&[f64], &[f64]) {
        (
            self.tensors[2 * index].tensor.data(),
            self.tensors[2 * index + 1].tensor.data(),
        )
    }

    fn layer_mut(&mut self, index: usize) -> (&mut [f64], &mut [f64]) {
        let [w, b] = &mut self.tensors[2 * index..2 * index + 2] else {
            unreachable!("parameter layers hold a weight and a bias tensor")
        };
        (w.tensor.data_mut(), b.tensor.data_mut())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum Stage {
    Conv {
        layer: usize,
        geo: ops::conv::ConvGeometry,
        relu: bool,
    },
    Pool {
        height: usize,
        width: usize,
        channels: usize,
        window: usize,
    },
    Dense {
        layer: usize,
        n_in: usize,
        n_out: usize,
        relu: bool,
    },
    Dropout {
        keep_prob: f64,
    },
}

/// Shape of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamShape {
    pub layer: String,
    pub weights: Vec<usize>,
    pub bias: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Network {
    stages: Vec<Stage>,
    /// Output length of each stage; index 0 is the input.
    lens: Vec<usize>,
    param_shapes: Vec<ParamShape>,
    input_shape: Vec<usize>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    masks: Vec<Option<DropoutMask>>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Logits, `batch × classes`.
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has an input buffer")
    }

    /// ReLU on/off states and pooling winners. Finite-difference probes that
    /// change this pattern straddle a kink or a tie.
    pub fn pattern(&self) -> (Vec<bool>, Vec<usize>) {
        let signs = self.acts[1..].iter().flatten().map(|&v| v > 0.0).collect();
        let winners = self.argmax.iter().flatten().copied().collect();
        (signs, winners)
    }
}

impl Network {
    pub fn compile(spec: &NetSpec, activation: Activation) -> Result<Self> {
        Self::compile_with(spec, activation, None)
    }

    /// `keep_override` replaces the keep probability of every dropout layer.
    pub fn compile_with(
        spec: &NetSpec,
        activation: Activation,
        keep_override: Option<f64>,
    ) -> Result<Self> {
        let shapes = spec.layer_shapes()?;
        let last_param = spec.layers.iter().rposition(LayerSpec::has_params);
        let relu_on = activation == Activation::Relu;
        let mut stages = Vec::new();
        let mut lens = vec![shapes[0].output.iter().product()];
        let mut param_shapes = Vec::new();
        for (index, (layer, shape)) in spec.layers.iter().zip(&shapes).enumerate().skip(1) {
            let stage = match *layer {
                LayerSpec::Input { .. } => unreachable!("structure check allows one input"),
                LayerSpec::Flatten => continue,
                LayerSpec::Conv {
                    kernel,
                    out_channels,
                } => {
                    let &[h, w, c] = &shape.input[..] else {
                        unreachable!("shape propagation checked conv input rank")
                    };
                    param_shapes.push(ParamShape {
                        layer: shape.name.clone(),
                        weights: vec![kernel, kernel, c, out_channels],
                        bias: vec![out_channels],
                    });
                    Stage::Conv {
                        layer: param_shapes.len() - 1,
                        geo: ops::conv::ConvGeometry {
                            height: h,
                            width: w,
                            in_channels: c,
                            out_channels,
                            kernel_h: kernel,
                            kernel_w: kernel,
                        },
                        relu: relu_on,
                    }
                }
                LayerSpec::MaxPool { window } => {
                    let &[height, width, channels] = &shape.input[..] else {
                        unreachable!("shape propagation checked pool input rank")
                    };
                    Stage::Pool {
                        height,
                        width,
                        channels,
                        window,
                    }
                }
                LayerSpec::Dense { out_features } => {
                    let n_in = shape.input[0];
                    param_shapes.push(ParamShape {
                        layer: shape.name.clone(),
                        weights: vec![n_in, out_features],
                        bias: vec![out_features],
                    });
                    Stage::Dense {
                        layer: param_shapes.len() - 1,
                        n_in,
                        n_out: out_features,
                        relu: relu_on && Some(index) != last_param,
                    }
                }
                LayerSpec::Dropout { keep_prob } => {
                    let keep_prob = keep_override.unwrap_or(keep_prob);
                    ops::activation::check_keep_prob(keep_prob)?;
                    Stage::Dropout { keep_prob }
                }
            };
            stages.push(stage);
            lens.push(shape.output.iter().product());
        }
        Ok(Self {
            stages,
            lens,
            param_shapes,
            input_shape: shapes[0].output.clone(),
        })
    }

    pub fn param_shapes(&self) -> &[ParamShape] {
        &self.param_shapes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.lens[0]
    }

    pub fn output_len(&self) -> usize {
        *self.lens.last().expect("at least the input length")
    }

    /// Builds a parameter set by filling every tensor from `fill`, weights
    /// before bias, layer by layer.
    pub fn build_params(&self, mut fill: impl FnMut() -> f64) -> ParamSet {
        let mut tensors = Vec::new();
        for p in &self.param_shapes {
            for (suffix, shape) in [("weights", &p.weights), ("bias", &p.bias)] {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| fill()).collect();
                tensors.push(NamedTensor {
                    name: format!("{}.{suffix}", p.layer),
                    tensor: Tensor::new(shape.clone(), data).expect("length matches shape"),
                });
            }
        }
        ParamSet::new(tensors)
    }

    pub fn zero_params(&self) -> ParamSet {
        self.build_params(|| 0.0)
    }

    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.same_layout(&self.zero_params()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "parameter set does not match the network's layers".into(),
            ))
        }
    }

    /// Runs `batch` samples stored contiguously in `input`. Dropout draws
    /// from `rng` only in training mode.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        params: &ParamSet,
        input: &[f64],
        batch: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Tape {
        assert_eq!(input.len(), batch * self.input_len(), "input buffer length");
        let mut acts = Vec::with_capacity(self.stages.len() + 1);
        acts.push(input.to_vec());
        let mut argmax = Vec::new();
        let mut masks = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            let (in_len, out_len) = (self.lens[s], self.lens[s + 1]);
            let x = &acts[s];
            let mut out = vec![0.0; batch * out_len];
            let mut mask = None;
            match *stage {
                Stage::Conv { layer, geo, relu } => {
                    let (w, b) = params.layer(layer);
                    for (xi, yi) in x.chunks_exact(in_len).zip(out.chunks_exact_mut(out_len)) {
                        ops::conv::forward_into(geo, xi, w, b, yi);
                    }
                    if relu {
                        ops::activation::relu_in_place(&mut out);
                    }
                }
                Stage::Pool {
                    height,
                    width,
                    channels,
                    window,
                } => {
                    let mut idx = vec![0; batch * out_len];
                    for ((xi, yi), ai) in x
                        .chunks_exact(in_len)
                        .zip(out.chunks_exact_mut(out_len))
                        .zip(idx.chunks_exact_mut(out_len))
                    {
                        ops::pool::forward_into(height, width, channels, window, xi, yi, ai);
                    }
                    argmax.push(idx);
                }
                Stage::Dense {
                    layer,
                    n_in,
                    n_out,
                    relu,
                } => {
                    let (w, b) = params.layer(layer);
                    ops::dense::forward_batch(batch, n_in, n_out, x, w, b, &mut out);
                    if relu {
                        ops::activation::relu_in_place(&mut out);
                    }
                }
                Stage::Dropout { keep_prob } => {
                    out.copy_from_slice(x);
                    if mode == Mode::Train {
                        let m = DropoutMask::sample(out.len(), keep_prob, rng);
                        m.apply(&mut out);
                        mask = Some(m);
                    }
                }
            }
            masks.push(mask);
            acts.push(out);
        }
        Tape {
            batch,
            acts,
            argmax,
            masks,
        }
    }

    /// Backpropagates `grad_output` (gradient of the loss with respect to the
    /// logits) and accumulates parameter gradients into `grads`.
    pub fn backward(
        &self,
        params: &ParamSet,
        tape: &Tape,
        grad_output: &[f64],
        grads: &mut ParamSet,
    ) {
        let batch = tape.batch;
        let mut g = grad_output.to_vec();
        let first_param_stage = self
            .stages
            .iter()
            .position(|s| matches!(s, Stage::Conv { .. } | Stage::Dense { .. }));
        let mut pool_slot = tape.argmax.len();
        for (s, stage) in self.stages.iter().enumerate().rev() {
            if first_param_stage.is_some_and(|f| s < f) {
                break;
            }
            let (in_len, out_len) = (self.lens[s], self.lens[s + 1]);
            let needs_input_grad = first_param_stage != Some(s);
            let x = &tape.acts[s];
            match *stage {
                Stage::Conv { layer, geo, relu } => {
                    if relu {
                        ops::activation::relu_mask_grad(&tape.acts[s + 1], &mut g);
                    }
                    let (w, _) = params.layer(layer);
                    let (gw, gb) = grads.layer_mut(layer);
                    let mut gi = needs_input_grad.then(|| vec![0.0; batch * in_len]);
                    for b in 0..batch {
                        ops::conv::backward_accumulate(
                            geo,
                            &x[b * in_len..][..in_len],
                            w,
                            &g[b * out_len..][..out_len],
                            gw,
                            gb,
                            gi.as_mut().map(|v| &mut v[b * in_len..][..in_len]),
                        );
                    }
                    g = gi.unwrap_or_default();
                }
                Stage::Pool { .. } => {
                    pool_slot -= 1;
                    let idx = &tape.argmax[pool_slot];
                    let mut gi = vec![0.0; batch * in_len];
                    for b in 0..batch {
                        ops::pool::backward_accumulate(
                            &g[b * out_len..][..out_len],
                            &idx[b * out_len..][..out_len],
                            &mut gi[b * in_len..][..in_len],
                        );
                    }
                    g = gi;
                }
                Stage::Dense {
                    layer,
                    n_in,
                    n_out,
                    relu,
                } => {
                    if relu {
                        ops::activation::relu_mask_grad(&tape.acts[s + 1], &mut g);
                    }
                    let (w, _) = params.layer(layer);
                    let (gw, gb) = grads.layer_mut(layer);
                    let mut gi = needs_input_grad.then(|| vec![0.0; batch * in_len]);
                    ops::dense::backward_batch(
                        batch,
                        n_in,
                        n_out,
                        x,
                        w,
                        &g,
                        gw,
                        gb,
                        gi.as_deref_mut(),
                    );
                    g = gi.unwrap_or_default();
                }
                Stage::Dropout { .. } => {
                    if let Some(mask) = &tape.masks[s] {
                        mask.apply(&mut g);
                    }
                }
            }
        }
    }

    /// Mean softmax cross-entropy over the batch; writes the matching logit
    /// gradient (already divided by the batch size) into `grad`.
    pub fn loss(&self, tape: &Tape, classes: &[usize], grad: &mut Vec<f64>) -> f64 {
        let k = self.output_len();
        let batch = tape.batch;
        assert_eq!(classes.len(), batch, "one class per sample");
        grad.clear();
        grad.resize(batch * k, 0.0);
        let mut total = 0.0;
        for ((logits, g), &class) in tape
            .output()
            .chunks_exact(k)
            .zip(grad.chunks_exact_mut(k))
            .zip(classes)
        {
            total += ops::loss::xent_into(logits, class, g);
        }
        let inv = 1.0 / batch as f64;
        for v in grad.iter_mut() {
            *v *= inv;
        }
        total * inv
    }

    /// Index of the largest logit per sample; ties go to the lowest index.
    pub fn predict(&self, params: &ParamSet, input: &[f64], batch: usize) -> Vec<usize> {
        // evaluation mode draws nothing from the stream
        let mut unused = crate::rng::stream(0, crate::rng::DROPOUT);
        let tape = self.forward(params, input, batch, Mode::Eval, &mut unused);
        tape.output()
            .chunks_exact(self.output_len())
            .map(argmax_first)
            .collect()
    }
}

pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::netspec::{parse_spec, presets};

    #[test]
    fn param_layout_follows_layers() {
        let net = Network::compile(&presets::baseline(), Activation::Relu).unwrap();
        let names: Vec<_> = net
            .zero_params()
            .tensors()
            .iter()
            .map(|t| t.name.clone())
            .collect();
        assert_eq!(
            names,
            [
                "conv1.weights",
                "conv1.bias",
                "conv2.weights",
                "conv2.bias",
                "fc1.weights",
                "fc1.bias",
                "fc2.weights",
                "fc2.bias"
            ]
        );
        let shapes: Vec<_> = net
            .param_shapes()
            .iter()
            .map(|p| p.weights.clone())
            .collect();
        assert_eq!(
            shapes,
            [
                vec![5, 5, 1, 32],
                vec![5, 5, 32, 64],
                vec![3136, 1024],
                vec![1024, 10]
            ]
        );
    }

    #[test]
    fn matches_single_sample_kernels() {
        let spec = parse_spec(
            "input h=4 w=4 c=2\nconv k=3 out=3\nmaxpool window=2\nflatten\ndense out=5\ndense out=10\n",
        )
        .unwrap();
        let net = Network::compile(&spec, Activation::Relu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = net.build_params(|| rng.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..32)
            .map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.3)
            .collect();

        let conv = ops::ConvParams::new(
            params.tensors()[0].tensor.clone(),
            params.tensors()[1].tensor.clone(),
        )
        .unwrap();
        let h = ops::relu(
            &ops::conv2d_forward(&Tensor::from_slice(&[4, 4, 2], &x).unwrap(), &conv).unwrap(),
        );
        let (p, _) = ops::maxpool_forward(&h, 2).unwrap();
        let flat = p.reshape(vec![12]).unwrap();
        let d1 = ops::DenseParams::new(
            params.tensors()[2].tensor.clone(),
            params.tensors()[3].tensor.clone(),
        )
        .unwrap();
        let h = ops::relu(&ops::dense_forward(&flat, &d1).unwrap());
        let d2 = ops::DenseParams::new(
            params.tensors()[4].tensor.clone(),
            params.tensors()[5].tensor.clone(),
        )
        .unwrap();
        let logits = ops::dense_forward(&h, &d2).unwrap();

        let tape = net.forward(&params, &x, 1, Mode::Eval, &mut rng);
        for (a, b) in tape.output().iter().zip(logits.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_ignores_dropout_and_rng() {
        let net = Network::compile(&presets::optimized(), Activation::Relu).unwrap();
        let mut init = ChaCha8Rng::seed_from_u64(3);
        let params = net.build_params(|| init.random_range(-0.1..0.1));
        let x = vec![0.5; 784];
        let a = net.forward(
            &params,
            &x,
            1,
            Mode::Eval,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let b = net.forward(
            &params,
            &x,
            1,
            Mode::Eval,
            &mut ChaCha8Rng::seed_from_u64(2),
        );
        assert_eq!(a.output(), b.output());
    }

    #[test]
    fn keep_override_is_validated() {
        assert!(Network::compile_with(&presets::optimized(), Activation::Relu, Some(0.0)).is_err());
        assert!(Network::compile_with(&presets::optimized(), Activation::Relu, Some(1.0)).is_ok());
    }

    #[test]
    fn argmax_ties_go_first() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_first(&[0.0; 10]), 0);
    }
}
