//! Line-oriented spec format.
//!
//! ```text
//! name: baseline
//! input h=28 w=28 c=1
//! conv k=5 out=32
//! maxpool window=2
//! flatten
//! dense out=1024
//! dropout keep=0.5
//! dense out=10
//! ```
//!
//! `#` starts a comment line. The `name:` line is optional and must precede
//! the first layer.

use std::collections::BTreeMap;

use super::{LayerSpec, NetSpec};
use crate::error::{Error, Result};

pub(crate) fn layer_line(layer: &LayerSpec) -> String {
    match *layer {
        LayerSpec::Input {
            height,
            width,
            channels,
        } => format!("input h={height} w={width} c={channels}"),
        LayerSpec::Conv {
            kernel,
            out_channels,
        } => format!("conv k={kernel} out={out_channels}"),
        LayerSpec::MaxPool { window } => format!("maxpool window={window}"),
        LayerSpec::Flatten => "flatten".to_string(),
        LayerSpec::Dense { out_features } => format!("dense out={out_features}"),
        LayerSpec::Dropout { keep_prob } => format!("dropout keep={keep_prob}"),
    }
}

pub fn serialize_spec(spec: &NetSpec) -> String {
    let mut out = String::new();
    if !spec.name.is_empty() {
        out.push_str("name: ");
        out.push_str(&spec.name);
        out.push('\n');
    }
    for layer in &spec.layers {
        out.push_str(&layer_line(layer));
        out.push('\n');
    }
    out
}

struct Fields<'a> {
    line: usize,
    kind: &'a str,
    values: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, kind: &'a str, tokens: impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for token in tokens {
            let (key, value) = token.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected key=value, found '{token}'"),
            })?;
            if values.insert(key, value).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate field '{key}'"),
                });
            }
        }
        Ok(Self { line, kind, values })
    }

    fn raw(&mut self, key: &str) -> Result<&'a str> {
        self.values.remove(key).ok_or_else(|| Error::Parse {
            line: self.line,
            message: format!("{} layer is missing field '{key}'", self.kind),
        })
    }

    fn extent(&mut self, key: &str) -> Result<usize> {
        let raw = self.raw(key)?;
        match raw.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::Parse {
                line: self.line,
                message: format!("field '{key}' must be a positive integer, found '{raw}'"),
            }),
        }
    }

    fn real(&mut self, key: &str) -> Result<f64> {
        let raw = self.raw(key)?;
        raw.parse::<f64>().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("field '{key}' must be a number, found '{raw}'"),
        })
    }

    fn finish(self) -> Result<()> {
        match self.values.keys().next() {
            None => Ok(()),
            Some(extra) => Err(Error::Parse {
                line: self.line,
                message: format!("unknown field '{extra}' for {} layer", self.kind),
            }),
        }
    }
}

pub fn parse_spec(text: &str) -> Result<NetSpec> {
    let mut name: Option<String> = None;
    let mut layers = Vec::new();
    let mut line_of = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("name:") {
            if !layers.is_empty() || name.is_some() {
                return Err(Error::Parse {
                    line,
                    message: "name: must be a single line before the first layer".into(),
                });
            }
            name = Some(rest.trim().to_string());
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let kind = tokens.next().unwrap_or_default();
        let mut fields = Fields::parse(line, kind, tokens)?;
        let layer = match kind {
            "input" => LayerSpec::Input {
                height: fields.extent("h")?,
                width: fields.extent("w")?,
                channels: fields.extent("c")?,
            },
            "conv" => LayerSpec::Conv {
                kernel: fields.extent("k")?,
                out_channels: fields.extent("out")?,
            },
            "maxpool" => LayerSpec::MaxPool {
                window: fields.extent("window")?,
            },
            "flatten" => LayerSpec::Flatten,
            "dense" => LayerSpec::Dense {
                out_features: fields.extent("out")?,
            },
            "dropout" => LayerSpec::Dropout {
                keep_prob: fields.real("keep")?,
            },
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown layer kind '{other}'"),
                })
            }
        };
        fields.finish()?;
        layers.push(layer);
        line_of.push(line);
    }

    if layers.is_empty() {
        return Err(Error::Parse {
            line: last_line,
            message: "spec contains no layers".into(),
        });
    }
    let spec = NetSpec {
        name: name.unwrap_or_default(),
        layers,
    };
    spec.check_structure().map_err(|e| {
        let (line, message) = match e {
            Error::Layer { index, message, .. } => (line_of[index], message),
            other => (line_of[0], other.to_string()),
        };
        Error::Parse { line, message }
    })?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::super::presets;
    use super::*;

    #[test]
    fn round_trip_presets() {
        for spec in [
            presets::baseline(),
            presets::iteration1(),
            presets::optimized(),
        ] {
            assert_eq!(parse_spec(&serialize_spec(&spec)).unwrap(), spec);
        }
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = "# a net\nname: tiny\n\ninput h=4 w=4 c=1\n  # inner\nflatten\ndense out=10\n";
        let spec = parse_spec(text).unwrap();
        assert_eq!(spec.name, "tiny");
        assert_eq!(spec.layers.len(), 3);
    }

    #[test]
    fn indivisible_pool_parses_but_does_not_propagate() {
        let text = "input h=28 w=28 c=1\nconv k=5 out=32\nmaxpool window=3\n";
        let spec = parse_spec(text).unwrap();
        assert!(spec.layer_shapes().is_err());
    }

    fn parse_err_line(text: &str) -> (usize, String) {
        match parse_spec(text) {
            Err(Error::Parse { line, message }) => (line, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn diagnostics_carry_line_numbers() {
        let (line, msg) = parse_err_line("input h=28 w=28 c=1\nsoftmax\n");
        assert_eq!(line, 2);
        assert!(msg.contains("unknown layer kind"), "{msg}");

        let (line, msg) = parse_err_line("input h=28 w=28 c=1\n\nconv k=5\n");
        assert_eq!(line, 3);
        assert!(msg.contains("missing field 'out'"), "{msg}");

        let (line, msg) = parse_err_line("input h=28 w=2.5 c=1\n");
        assert_eq!(line, 1);
        assert!(msg.contains("positive integer"), "{msg}");

        let (line, _) = parse_err_line("input h=28 w=28 c=1\nconv k=5 out=3 stride=2\n");
        assert_eq!(line, 2);

        let (line, msg) = parse_err_line("input h=28 w=28 c=1\ninput h=1 w=1 c=1\n");
        assert_eq!(line, 2);
        assert!(msg.contains("first"), "{msg}");
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(parse_spec("").is_err());
        assert!(parse_spec("# only a comment\nname: x\n").is_err());
    }
}
