//! Finite-difference verification of every analytical gradient.
//!
//! Each case draws a random small shape, builds the scalar objective
//! `L = Σ r ⊙ f(x)` for a random projection `r` (the loss itself for softmax
//! and the full network), and compares every input and parameter gradient
//! entry against a central difference.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Activation, Mode, Network, ParamSet};
use crate::netspec::{LayerSpec, NetSpec};
use crate::ops::{self, ConvParams, DenseParams};
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LayerKind {
    Conv,
    MaxPool,
    Dense,
    Relu,
    Softmax,
    Network,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Conv,
        LayerKind::MaxPool,
        LayerKind::Dense,
        LayerKind::Relu,
        LayerKind::Softmax,
        LayerKind::Network,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Dense => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Softmax => "softmax",
            LayerKind::Network => "network",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown layer '{s}' (expected one of conv, maxpool, dense, relu, softmax, network)"
                ))
            })
    }
}

/// Deliberate bugs for exercising the checker itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates every gradient produced by the conv backward pass.
    ConvBackwardSignFlip,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv-sign-flip" => Ok(Fault::ConvBackwardSignFlip),
            other => Err(Error::InvalidArgument(format!("unknown fault '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub layers: Vec<LayerKind>,
    pub cases: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            layers: LayerKind::ALL.to_vec(),
            cases: 20,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            fault: None,
        }
    }
}

/// Denominator floor so that entries whose true gradient is zero are judged
/// by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub layer: LayerKind,
    pub cases: usize,
    pub entries_checked: usize,
    /// Entries whose probe crossed a ReLU kink or a pooling tie.
    pub entries_skipped: usize,
    pub max_rel_error: f64,
    /// Location of the worst entry, e.g. `case 3 (4x4x2 k3 out2) weights[7]`.
    pub worst: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub layers: Vec<LayerReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.passed)
    }

    pub fn failing_layers(&self) -> Vec<LayerKind> {
        self.layers
            .iter()
            .filter(|l| !l.passed)
            .map(|l| l.layer)
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.layers {
            out.push_str(&format!(
                "{:<8} {:>3} cases {:>6} entries ({} skipped)  max rel err {:.3e}  {}\n",
                l.layer.name(),
                l.cases,
                l.entries_checked,
                l.entries_skipped,
                l.max_rel_error,
                if l.passed { "PASS" } else { "FAIL" }
            ));
            if !l.passed {
                out.push_str(&format!("         worst entry: {}\n", l.worst));
            }
        }
        out.push_str(&format!(
            "{} (tolerance {:e})\n",
            if self.passed() {
                "all layers pass"
            } else {
                "gradient check FAILED"
            },
            self.tolerance
        ));
        out
    }
}

struct Stats {
    max_rel: f64,
    worst: String,
    checked: usize,
    skipped: usize,
}

impl Stats {
    fn new() -> Self {
        Self {
            max_rel: 0.0,
            worst: String::from("none"),
            checked: 0,
            skipped: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        let rel = relative_error(analytic, numeric);
        self.checked += 1;
        if rel > self.max_rel || rel.is_nan() {
            self.max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
            self.worst = format!("{} (analytic {analytic:.6e}, numeric {numeric:.6e})", at());
        }
    }
}

/// Central differences of `objective` over every entry of `x`. The objective
/// returns `None` when a probe changes the piecewise-linear regime.
fn probe(
    stats: &mut Stats,
    label: &str,
    x: &mut [f64],
    analytic: &[f64],
    step: f64,
    objective: &mut dyn FnMut(&[f64]) -> Option<f64>,
) {
    for i in 0..x.len() {
        let saved = x[i];
        x[i] = saved + step;
        let plus = objective(x);
        x[i] = saved - step;
        let minus = objective(x);
        x[i] = saved;
        match (plus, minus) {
            (Some(p), Some(m)) => stats.record(analytic[i], (p - m) / (2.0 * step), || {
                format!("{label}[{i}]")
            }),
            _ => stats.skipped += 1,
        }
    }
}

fn uniform(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_slice(shape, data).expect("generated data matches its shape")
}

fn flip(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = -*v;
    }
}

fn check_conv(
    rng: &mut StreamRng,
    case: usize,
    cfg: &GradcheckConfig,
    stats: &mut Stats,
) -> Result<()> {
    let (h, w, cin, cout, k) = if case == 0 {
        (4, 4, 2, 2, 3)
    } else {
        (
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(1..=5),
        )
    };
    let label = format!("case {case} ({h}x{w}x{cin} k{k} out{cout})");
    let mut x = uniform(rng, h * w * cin);
    let mut wts = uniform(rng, k * k * cin * cout);
    let mut bias = uniform(rng, cout);
    let r = uniform(rng, h * w * cout);
    let wshape = [k, k, cin, cout];

    let forward = |x: &[f64], wts: &[f64], bias: &[f64]| -> f64 {
        let p = ConvParams::new(tensor(&wshape, wts), tensor(&[cout], bias)).expect("valid params");
        let y = ops::conv2d_forward(&tensor(&[h, w, cin], x), &p).expect("valid conv");
        dot(y.data(), &r)
    };
    let params = ConvParams::new(tensor(&wshape, &wts), tensor(&[cout], &bias))?;
    let (mut gx, mut gp) = ops::conv2d_backward(
        &tensor(&[h, w, cin], &x),
        &params,
        &tensor(&[h, w, cout], &r),
    )?;
    if cfg.fault == Some(Fault::ConvBackwardSignFlip) {
        flip(&mut gx);
        flip(gp.weights_mut());
        flip(gp.bias_mut());
    }

    let (w0, b0) = (wts.clone(), bias.clone());
    probe(
        stats,
        &format!("{label} input"),
        &mut x,
        gx.data(),
        cfg.step,
        &mut |x| Some(forward(x, &w0, &b0)),
    );
    let x0 = x.clone();
    probe(
        stats,
        &format!("{label} weights"),
        &mut wts,
        gp.weights().data(),
        cfg.step,
        &mut |wv| Some(forward(&x0, wv, &b0)),
    );
    probe(
        stats,
        &format!("{label} bias"),
        &mut bias,
        gp.bias().data(),
        cfg.step,
        &mut |bv| Some(forward(&x0, &w0, bv)),
    );
    Ok(())
}

/// Distinct values at least 0.01 apart, so no pooling window has a tie
/// within probing distance.
fn tie_free(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    v.shuffle(rng);
    v
}

fn check_maxpool(
    rng: &mut StreamRng,
    case: usize,
    cfg: &GradcheckConfig,
    stats: &mut Stats,
) -> Result<()> {
    let window: usize = if case == 0 {
        2
    } else {
        rng.random_range(1..=3)
    };
    let (h, w, c) = if case == 0 {
        (4, 4, 1)
    } else {
        (
            window * rng.random_range(1..=6 / window),
            window * rng.random_range(1..=6 / window),
            rng.random_range(1..=4),
        )
    };
    let label = format!("case {case} ({h}x{w}x{c} window {window})");
    let mut x = tie_free(rng, h * w * c);
    let (y, argmax) = ops::maxpool_forward(&tensor(&[h, w, c], &x), window)?;
    let r = uniform(rng, y.len());
    let gx = ops::maxpool_backward(&tensor(y.shape(), &r), &argmax)?;
    probe(
        stats,
        &format!("{label} input"),
        &mut x,
        gx.data(),
        cfg.step,
        &mut |x| {
            let (y, a) = ops::maxpool_forward(&tensor(&[h, w, c], x), window).expect("valid pool");
            (a == argmax).then(|| dot(y.data(), &r))
        },
    );
    Ok(())
}

fn check_dense(
    rng: &mut StreamRng,
    case: usize,
    cfg: &GradcheckConfig,
    stats: &mut Stats,
) -> Result<()> {
    let (n_in, n_out) = if case == 0 {
        (5, 3)
    } else {
        (rng.random_range(1..=36), rng.random_range(1..=12))
    };
    let label = format!("case {case} ({n_in}->{n_out})");
    let mut x = uniform(rng, n_in);
    let mut wts = uniform(rng, n_in * n_out);
    let mut bias = uniform(rng, n_out);
    let r = uniform(rng, n_out);
    let forward = |x: &[f64], wts: &[f64], bias: &[f64]| -> f64 {
        let p = DenseParams::new(tensor(&[n_in, n_out], wts), tensor(&[n_out], bias))
            .expect("valid params");
        dot(
            ops::dense_forward(&tensor(&[n_in], x), &p)
                .expect("valid dense")
                .data(),
            &r,
        )
    };
    let params = DenseParams::new(tensor(&[n_in, n_out], &wts), tensor(&[n_out], &bias))?;
    let (gx, gp) = ops::dense_backward(&tensor(&[n_in], &x), &params, &tensor(&[n_out], &r))?;
    let (w0, b0) = (wts.clone(), bias.clone());
    probe(
        stats,
        &format!("{label} input"),
        &mut x,
        gx.data(),
        cfg.step,
        &mut |x| Some(forward(x, &w0, &b0)),
    );
    let x0 = x.clone();
    probe(
        stats,
        &format!("{label} weights"),
        &mut wts,
        gp.weights().data(),
        cfg.step,
        &mut |wv| Some(forward(&x0, wv, &b0)),
    );
    probe(
        stats,
        &format!("{label} bias"),
        &mut bias,
        gp.bias().data(),
        cfg.step,
        &mut |bv| Some(forward(&x0, &w0, bv)),
    );
    Ok(())
}

fn check_relu(
    rng: &mut StreamRng,
    case: usize,
    cfg: &GradcheckConfig,
    stats: &mut Stats,
) -> Result<()> {
    let n = rng.random_range(1..=36);
    // magnitudes kept well clear of the kink at 0
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.01..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    let r = uniform(rng, n);
    let gx = ops::relu_backward(&tensor(&[n], &x), &tensor(&[n], &r))?;
    probe(
        stats,
        &format!("case {case} (len {n}) input"),
        &mut x,
        gx.data(),
        cfg.step,
        &mut |x| Some(dot(ops::relu(&tensor(&[n], x)).data(), &r)),
    );
    Ok(())
}

fn check_softmax(
    rng: &mut StreamRng,
    case: usize,
    cfg: &GradcheckConfig,
    stats: &mut Stats,
) -> Result<()> {
    let mut logits: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
    let class = rng.random_range(0..10);
    let mut label = vec![0.0; 10];
    label[class] = 1.0;
    let label = tensor(&[10], &label);
    let (_, g) = ops::softmax_xent(&tensor(&[10], &logits), &label)?;
    probe(
        stats,
        &format!("case {case} (class {class}) logits"),
        &mut logits,
        g.data(),
        cfg.step,
        &mut |z| {
            Some(
                ops::softmax_xent(&tensor(&[10], z), &label)
                    .expect("one-hot label")
                    .0,
            )
        },
    );
    Ok(())
}

fn random_network_spec(rng: &mut StreamRng) -> NetSpec {
    let window = rng.random_range(1..=3);
    let side = window * rng.random_range(1..=6 / window);
    let layers = vec![
        LayerSpec::Input {
            height: side,
            width: side,
            channels: rng.random_range(1..=2),
        },
        LayerSpec::Conv {
            kernel: rng.random_range(1..=3),
            out_channels: rng.random_range(1..=3),
        },
        LayerSpec::MaxPool { window },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            out_features: rng.random_range(2..=6),
        },
        LayerSpec::Dropout { keep_prob: 0.7 },
        LayerSpec::Dense { out_features: 10 },
    ];
    NetSpec::new("gradcheck", layers).expect("generated spec is well formed")
}

fn check_network(
    rng: &mut StreamRng,
    case: usize,
    cfg: &GradcheckConfig,
    stats: &mut Stats,
) -> Result<()> {
    let spec = random_network_spec(rng);
    let net = Network::compile(&spec, Activation::Relu)?;
    let batch = rng.random_range(1..=3);
    let input = uniform(rng, batch * net.input_len());
    let classes: Vec<usize> = (0..batch).map(|_| rng.random_range(0..10)).collect();
    let mut params = net.build_params(|| rng.random_range(-0.5..0.5));
    let dropout_rng = rng::stream(rng.random(), rng::DROPOUT);

    let mut grad_logits = Vec::new();
    let base = net.forward(
        &params,
        &input,
        batch,
        Mode::Train,
        &mut dropout_rng.clone(),
    );
    net.loss(&base, &classes, &mut grad_logits);
    let mut grads = params.zeros_like();
    net.backward(&params, &base, &grad_logits, &mut grads);
    let pattern = base.pattern();

    let shape = spec
        .input_shape()
        .map(|[h, w, c]| format!("{h}x{w}x{c}"))
        .unwrap_or_default();
    for ti in 0..params.len() {
        let name = params.tensors()[ti].name.clone();
        let analytic = grads.tensors()[ti].tensor.data().to_vec();
        for i in 0..analytic.len() {
            let saved = params.tensors()[ti].tensor.data()[i];
            let eval = |v: f64, params: &mut ParamSet| {
                params.tensors_mut()[ti].tensor.data_mut()[i] = v;
                let tape =
                    net.forward(params, &input, batch, Mode::Train, &mut dropout_rng.clone());
                let mut scratch = Vec::new();
                (tape.pattern() == pattern).then(|| net.loss(&tape, &classes, &mut scratch))
            };
            let plus = eval(saved + cfg.step, &mut params);
            let minus = eval(saved - cfg.step, &mut params);
            params.tensors_mut()[ti].tensor.data_mut()[i] = saved;
            match (plus, minus) {
                (Some(p), Some(m)) => stats.record(analytic[i], (p - m) / (2.0 * cfg.step), || {
                    format!("case {case} ({shape}, batch {batch}) {name}[{i}]")
                }),
                _ => stats.skipped += 1,
            }
        }
    }
    Ok(())
}

type CaseFn = fn(&mut StreamRng, usize, &GradcheckConfig, &mut Stats) -> Result<()>;

pub fn run(config: &GradcheckConfig) -> Result<GradcheckReport> {
    if config.cases == 0 {
        return Err(Error::InvalidArgument(
            "gradient check needs at least one case".into(),
        ));
    }
    let mut layers = Vec::new();
    for &layer in &config.layers {
        let f: CaseFn = match layer {
            LayerKind::Conv => check_conv,
            LayerKind::MaxPool => check_maxpool,
            LayerKind::Dense => check_dense,
            LayerKind::Relu => check_relu,
            LayerKind::Softmax => check_softmax,
            LayerKind::Network => check_network,
        };
        let mut rng = rng::stream(config.seed, &format!("gradcheck.{}", layer.name()));
        let mut stats = Stats::new();
        for case in 0..config.cases {
            f(&mut rng, case, config, &mut stats)?;
        }
        layers.push(LayerReport {
            layer,
            cases: config.cases,
            entries_checked: stats.checked,
            entries_skipped: stats.skipped,
            max_rel_error: stats.max_rel,
            worst: stats.worst,
            passed: stats.checked > 0 && stats.max_rel <= config.tolerance,
        });
    }
    Ok(GradcheckReport {
        tolerance: config.tolerance,
        layers,
    })
}
