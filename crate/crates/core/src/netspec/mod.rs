//! Architecture descriptions and their shape algebra.
//!
//! A [`NetSpec`] is a pure chain of layers starting at an input layer.
//! Convolutions are stride 1 with SAME padding (spatial extent preserved);
//! max pooling uses stride equal to its window and requires exact
//! divisibility; dense layers require a flattened (rank-1) input.

mod complexity;
pub mod presets;
pub mod reference;
mod text;

use std::fmt;

pub use complexity::{
    count_memory, count_params, diff_reports, ComplexityReport, Convention, LayerRow, ReportDiff,
};
pub use text::{parse_spec, serialize_spec};

use crate::error::{Error, Result};
use crate::tensor::ShapeDisplay;

/// Number of output classes every trainable network must end with.
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Input {
        height: usize,
        width: usize,
        channels: usize,
    },
    Conv {
        kernel: usize,
        out_channels: usize,
    },
    MaxPool {
        window: usize,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
    Dropout {
        keep_prob: f64,
    },
}

impl LayerSpec {
    pub fn keyword(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "input",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    pub fn type_label(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "Image",
            LayerSpec::Conv { .. } => "Convolution",
            LayerSpec::MaxPool { .. } => "Max Pooling",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Dense { .. } => "Fully Connected",
            LayerSpec::Dropout { .. } => "Dropout",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    /// Flatten and dropout reuse their input buffer and allocate no new activations.
    pub fn allocates_activations(&self) -> bool {
        !matches!(self, LayerSpec::Flatten | LayerSpec::Dropout { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

/// One layer after shape propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerShape {
    pub name: String,
    /// Incoming shape; equal to `output` for the input layer.
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl NetSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            layers,
        };
        spec.check_structure()?;
        Ok(spec)
    }

    /// Exactly one input layer, in first position, with positive extents.
    pub fn check_structure(&self) -> Result<()> {
        match self.layers.first() {
            None => return Err(Error::InvalidArgument("spec has no layers".into())),
            Some(LayerSpec::Input { .. }) => {}
            Some(other) => {
                return Err(Error::InvalidArgument(format!(
                    "first layer must be input, found {}",
                    other.keyword()
                )))
            }
        }
        for (index, layer) in self.layers.iter().enumerate() {
            let bad = match *layer {
                LayerSpec::Input { .. } if index > 0 => Some("input layer may only appear first"),
                LayerSpec::Input {
                    height,
                    width,
                    channels,
                } if height == 0 || width == 0 || channels == 0 => Some("extents must be positive"),
                LayerSpec::Conv {
                    kernel,
                    out_channels,
                } if kernel == 0 || out_channels == 0 => Some("extents must be positive"),
                LayerSpec::MaxPool { window: 0 } => Some("window must be positive"),
                LayerSpec::Dense { out_features: 0 } => Some("extents must be positive"),
                LayerSpec::Dropout { keep_prob } if !(keep_prob > 0.0 && keep_prob <= 1.0) => {
                    Some("keep probability must be in (0, 1]")
                }
                _ => None,
            };
            if let Some(message) = bad {
                return Err(Error::Layer {
                    index,
                    name: self.layer_names()[index].clone(),
                    message: message.into(),
                });
            }
        }
        Ok(())
    }

    /// Conventional row names: `input`, `conv1`, `pool1`, `fc1`, `dropout1`, ...
    pub fn layer_names(&self) -> Vec<String> {
        let mut counts = [0usize; 6];
        self.layers
            .iter()
            .map(|layer| {
                let (slot, stem) = match layer {
                    LayerSpec::Input { .. } => return "input".to_string(),
                    LayerSpec::Conv { .. } => (0, "conv"),
                    LayerSpec::MaxPool { .. } => (1, "pool"),
                    LayerSpec::Flatten => (2, "flatten"),
                    LayerSpec::Dense { .. } => (3, "fc"),
                    LayerSpec::Dropout { .. } => (4, "dropout"),
                };
                counts[slot] += 1;
                format!("{stem}{}", counts[slot])
            })
            .collect()
    }

    pub fn input_shape(&self) -> Option<[usize; 3]> {
        match self.layers.first() {
            Some(&LayerSpec::Input {
                height,
                width,
                channels,
            }) => Some([height, width, channels]),
            _ => None,
        }
    }

    /// Shape propagation with per-layer names.
    pub fn layer_shapes(&self) -> Result<Vec<LayerShape>> {
        self.check_structure()?;
        let names = self.layer_names();
        let mut shapes: Vec<LayerShape> = Vec::with_capacity(self.layers.len());
        let mut current: Vec<usize> = Vec::new();
        for (index, (layer, name)) in self.layers.iter().zip(names).enumerate() {
            let fail = |message: String| Error::Layer {
                index,
                name: name.clone(),
                message,
            };
            let next = match *layer {
                LayerSpec::Input {
                    height,
                    width,
                    channels,
                } => vec![height, width, channels],
                LayerSpec::Conv { out_channels, .. } => match current[..] {
                    [h, w, _] => vec![h, w, out_channels],
                    _ => {
                        return Err(fail(format!(
                            "convolution needs an HxWxC input, got {}",
                            ShapeDisplay(&current)
                        )))
                    }
                },
                LayerSpec::MaxPool { window } => match current[..] {
                    [h, w, c] if h % window == 0 && w % window == 0 => {
                        vec![h / window, w / window, c]
                    }
                    [h, w, _] => {
                        return Err(fail(format!(
                            "{h}x{w} input is not divisible by pooling window {window}"
                        )))
                    }
                    _ => {
                        return Err(fail(format!(
                            "pooling needs an HxWxC input, got {}",
                            ShapeDisplay(&current)
                        )))
                    }
                },
                LayerSpec::Flatten => vec![current.iter().product()],
                LayerSpec::Dense { out_features } => {
                    if current.len() != 1 {
                        return Err(fail(format!(
                            "dense layer needs a flattened input, got {} (add `flatten`)",
                            ShapeDisplay(&current)
                        )));
                    }
                    vec![out_features]
                }
                LayerSpec::Dropout { .. } => current.clone(),
            };
            shapes.push(LayerShape {
                name,
                input: if index == 0 { next.clone() } else { current },
                output: next.clone(),
            });
            current = next;
        }
        Ok(shapes)
    }

    /// Requires the chain to end in a dense layer with [`NUM_CLASSES`] outputs.
    pub fn check_classifier(&self) -> Result<()> {
        self.layer_shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Dense { out_features }) if *out_features == NUM_CLASSES => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "spec '{}' must end in a dense layer of width {NUM_CLASSES}",
                self.name
            ))),
        }
    }

    /// Stable textual identity of the architecture (name excluded).
    pub fn fingerprint(&self) -> String {
        self.layers
            .iter()
            .map(text::layer_line)
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Output shape of every layer in order.
pub fn propagate_shapes(spec: &NetSpec) -> Result<Vec<Vec<usize>>> {
    Ok(spec.layer_shapes()?.into_iter().map(|s| s.output).collect())
}

impl fmt::Display for NetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_spec(self))
    }
}

#[cfg(test)]
mod tests {
    use super::presets;
    use super::*;

    fn table_shapes(spec: &NetSpec) -> Vec<Vec<usize>> {
        spec.layer_shapes()
            .unwrap()
            .into_iter()
            .zip(&spec.layers)
            .filter(|(_, l)| l.allocates_activations())
            .map(|(s, _)| s.output)
            .collect()
    }

    #[test]
    fn baseline_shapes() {
        let expected: Vec<Vec<usize>> = vec![
            vec![28, 28, 1],
            vec![28, 28, 32],
            vec![14, 14, 32],
            vec![14, 14, 64],
            vec![7, 7, 64],
            vec![1024],
            vec![10],
        ];
        assert_eq!(table_shapes(&presets::baseline()), expected);
    }

    #[test]
    fn optimized_shapes() {
        let expected: Vec<Vec<usize>> = vec![
            vec![28, 28, 1],
            vec![28, 28, 2],
            vec![7, 7, 2],
            vec![128],
            vec![10],
        ];
        assert_eq!(table_shapes(&presets::optimized()), expected);
    }

    #[test]
    fn input_only() {
        let spec = NetSpec::new(
            "bare",
            vec![LayerSpec::Input {
                height: 28,
                width: 28,
                channels: 1,
            }],
        )
        .unwrap();
        assert_eq!(propagate_shapes(&spec).unwrap(), vec![vec![28, 28, 1]]);
        assert!(spec.check_classifier().is_err());
    }

    #[test]
    fn names_follow_table_convention() {
        assert_eq!(
            presets::baseline().layer_names(),
            ["input", "conv1", "pool1", "conv2", "pool2", "flatten1", "fc1", "dropout1", "fc2"]
        );
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let mut spec = presets::optimized();
        spec.layers[2] = LayerSpec::MaxPool { window: 3 };
        let err = spec.layer_shapes().unwrap_err();
        assert!(
            matches!(err, Error::Layer { index: 2, ref name, .. } if name == "pool1"),
            "{err}"
        );

        let mut spec = presets::optimized();
        spec.layers.remove(3); // flatten
        let err = spec.layer_shapes().unwrap_err().to_string();
        assert!(err.contains("flatten"), "{err}");

        let mut spec = presets::optimized();
        spec.layers.insert(
            4,
            LayerSpec::Conv {
                kernel: 3,
                out_channels: 2,
            },
        );
        assert!(spec.layer_shapes().is_err());
    }

    #[test]
    fn structure_checks() {
        let input = LayerSpec::Input {
            height: 4,
            width: 4,
            channels: 1,
        };
        assert!(NetSpec::new("x", vec![]).is_err());
        assert!(NetSpec::new("x", vec![LayerSpec::Flatten, input.clone()]).is_err());
        assert!(NetSpec::new("x", vec![input.clone(), input.clone()]).is_err());
        assert!(NetSpec::new("x", vec![input, LayerSpec::Dropout { keep_prob: 0.0 }]).is_err());
    }
}
