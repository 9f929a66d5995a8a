//! The three reference architectures.

use super::{LayerSpec, NetSpec};

pub const DEFAULT_KEEP_PROB: f64 = 0.5;

fn mnist_input() -> LayerSpec {
    LayerSpec::Input {
        height: 28,
        width: 28,
        channels: 1,
    }
}

fn classifier_head(hidden: usize) -> [LayerSpec; 4] {
    [
        LayerSpec::Flatten,
        LayerSpec::Dense {
            out_features: hidden,
        },
        LayerSpec::Dropout {
            keep_prob: DEFAULT_KEEP_PROB,
        },
        LayerSpec::Dense { out_features: 10 },
    ]
}

/// conv5x5x32 → pool2 → conv5x5x64 → pool2 → fc1024 → dropout → fc10.
pub fn baseline() -> NetSpec {
    let mut layers = vec![
        mnist_input(),
        LayerSpec::Conv {
            kernel: 5,
            out_channels: 32,
        },
        LayerSpec::MaxPool { window: 2 },
        LayerSpec::Conv {
            kernel: 5,
            out_channels: 64,
        },
        LayerSpec::MaxPool { window: 2 },
    ];
    layers.extend(classifier_head(1024));
    NetSpec {
        name: "baseline".into(),
        layers,
    }
}

/// Baseline with the second conv/pool pair removed.
pub fn iteration1() -> NetSpec {
    let mut layers = vec![
        mnist_input(),
        LayerSpec::Conv {
            kernel: 5,
            out_channels: 32,
        },
        LayerSpec::MaxPool { window: 2 },
    ];
    layers.extend(classifier_head(1024));
    NetSpec {
        name: "iteration1".into(),
        layers,
    }
}

/// conv5x5x2 → pool4 → fc128 → dropout → fc10.
pub fn optimized() -> NetSpec {
    let mut layers = vec![
        mnist_input(),
        LayerSpec::Conv {
            kernel: 5,
            out_channels: 2,
        },
        LayerSpec::MaxPool { window: 4 },
    ];
    layers.extend(classifier_head(128));
    NetSpec {
        name: "optimized".into(),
        layers,
    }
}

pub fn by_name(name: &str) -> Option<NetSpec> {
    match name {
        "baseline" => Some(baseline()),
        "iteration1" => Some(iteration1()),
        "optimized" => Some(optimized()),
        _ => None,
    }
}

pub const NAMES: [&str; 3] = ["baseline", "iteration1", "optimized"];
