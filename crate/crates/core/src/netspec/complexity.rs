//! Per-layer activation-memory and parameter ledgers.
//!
//! Memory is counted in elements (the product of a layer's output extents).
//! Flatten and dropout rows are listed with zero memory because they do not
//! allocate a new activation buffer.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::{LayerSpec, NetSpec};
use crate::error::{Error, Result};
use crate::tensor::ShapeDisplay;

/// Parameter counting convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convention {
    /// Weights only: conv `kh·kw·c_in·c_out`, dense `in·out`. Matches the
    /// published ledgers, which omit biases.
    #[default]
    WeightsOnly,
    /// Weights plus one bias per output channel / feature.
    WithBiases,
}

impl Convention {
    pub fn as_str(self) -> &'static str {
        match self {
            Convention::WeightsOnly => "weights-only",
            Convention::WithBiases => "with-biases",
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weights-only" | "weights_only" => Ok(Convention::WeightsOnly),
            "with-biases" | "with_biases" => Ok(Convention::WithBiases),
            other => Err(Error::InvalidArgument(format!(
                "unknown convention '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub name: String,
    pub kind: &'static str,
    /// e.g. `5x5x1` for a conv over one input channel, `2x2` for pooling.
    pub filter: String,
    pub output_shape: Vec<usize>,
    pub memory: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub spec_name: String,
    pub convention: Convention,
    pub rows: Vec<LayerRow>,
    pub total_memory: u64,
    pub total_params: u64,
}

/// Per-layer parameter counts, in layer order.
pub fn count_params(spec: &NetSpec, convention: Convention) -> Result<Vec<u64>> {
    let shapes = spec.layer_shapes()?;
    Ok(spec
        .layers
        .iter()
        .zip(&shapes)
        .map(|(layer, shape)| {
            let fan_in: u64 = shape.input.iter().map(|&e| e as u64).product();
            let (weights, biases) = match *layer {
                LayerSpec::Conv {
                    kernel,
                    out_channels,
                } => {
                    let c_in = *shape.input.last().unwrap_or(&1) as u64;
                    let k = kernel as u64;
                    (k * k * c_in * out_channels as u64, out_channels as u64)
                }
                LayerSpec::Dense { out_features } => {
                    (fan_in * out_features as u64, out_features as u64)
                }
                _ => (0, 0),
            };
            match convention {
                Convention::WeightsOnly => weights,
                Convention::WithBiases => weights + biases,
            }
        })
        .collect())
}

/// Per-layer activation memory in elements, in layer order.
pub fn count_memory(spec: &NetSpec) -> Result<Vec<u64>> {
    let shapes = spec.layer_shapes()?;
    Ok(spec
        .layers
        .iter()
        .zip(&shapes)
        .map(|(layer, shape)| {
            if layer.allocates_activations() {
                shape.output.iter().map(|&e| e as u64).product()
            } else {
                0
            }
        })
        .collect())
}

impl ComplexityReport {
    pub fn analyze(spec: &NetSpec, convention: Convention) -> Result<Self> {
        let shapes = spec.layer_shapes()?;
        let params = count_params(spec, convention)?;
        let memory = count_memory(spec)?;
        let rows: Vec<LayerRow> = spec
            .layers
            .iter()
            .zip(shapes)
            .zip(params.into_iter().zip(memory))
            .map(|((layer, shape), (params, memory))| LayerRow {
                filter: match *layer {
                    LayerSpec::Conv { kernel, .. } => {
                        format!("{kernel}x{kernel}x{}", shape.input.last().unwrap_or(&1))
                    }
                    LayerSpec::MaxPool { window } => format!("{window}x{window}"),
                    _ => String::new(),
                },
                name: shape.name,
                kind: layer.type_label(),
                output_shape: shape.output,
                memory,
                params,
            })
            .collect();
        Ok(Self {
            spec_name: spec.name.clone(),
            convention,
            total_memory: rows.iter().map(|r| r.memory).sum(),
            total_params: rows.iter().map(|r| r.params).sum(),
            rows,
        })
    }

    pub fn row(&self, name: &str) -> Option<&LayerRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Aligned text table. `bytes_per_element` rescales the memory column.
    pub fn render_table(&self, bytes_per_element: Option<u64>) -> String {
        let scale = bytes_per_element.unwrap_or(1);
        let mem_header = if bytes_per_element.is_some() {
            "Memory (bytes)"
        } else {
            "Memory"
        };
        let header = [
            "Name",
            "Type",
            "Filter",
            "Output Size",
            mem_header,
            "#Params",
        ];
        let mut cells: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.name.clone(),
                    r.kind.to_string(),
                    r.filter.clone(),
                    ShapeDisplay(&r.output_shape).to_string(),
                    group_thousands(r.memory * scale),
                    group_thousands(r.params),
                ]
            })
            .collect();
        cells.push([
            "total".into(),
            String::new(),
            String::new(),
            String::new(),
            group_thousands(self.total_memory * scale),
            group_thousands(self.total_params),
        ]);
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "{} ({} convention)", self.spec_name, self.convention);
        let line = |out: &mut String, row: &[String]| {
            for (i, (c, w)) in row.iter().zip(widths).enumerate() {
                // numeric columns right-aligned
                if i >= 4 {
                    let _ = write!(out, "{c:>w$}");
                } else {
                    let _ = write!(out, "{c:<w$}");
                }
                out.push_str(if i + 1 < row.len() { "  " } else { "\n" });
            }
        };
        line(&mut out, &header.map(String::from));
        let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        let _ = writeln!(out, "{}", "-".repeat(rule));
        let (body, total) = cells.split_at(cells.len() - 1);
        for row in body {
            line(&mut out, row);
        }
        let _ = writeln!(out, "{}", "-".repeat(rule));
        line(&mut out, &total[0]);
        out
    }

    /// Machine-readable `key=value` lines.
    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "spec={}", self.spec_name);
        let _ = writeln!(out, "convention={}", self.convention);
        for r in &self.rows {
            let _ = writeln!(out, "row.{}.type={}", r.name, r.kind);
            let _ = writeln!(
                out,
                "row.{}.output={}",
                r.name,
                ShapeDisplay(&r.output_shape)
            );
            let _ = writeln!(out, "row.{}.memory={}", r.name, r.memory);
            let _ = writeln!(out, "row.{}.params={}", r.name, r.params);
        }
        let _ = writeln!(out, "total.memory={}", self.total_memory);
        let _ = writeln!(out, "total.params={}", self.total_params);
        out
    }
}

/// `3273504` → `3,273,504`.
pub(crate) fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Totals comparison of two reports (`a` relative to `b`).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportDiff {
    pub params_a: u64,
    pub params_b: u64,
    pub memory_a: u64,
    pub memory_b: u64,
    /// `a / b`; `None` when `b` is zero.
    pub params_ratio: Option<f64>,
    pub memory_ratio: Option<f64>,
    pub params_delta: i64,
    pub memory_delta: i64,
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b != 0).then(|| a as f64 / b as f64)
}

pub fn diff_reports(a: &ComplexityReport, b: &ComplexityReport) -> ReportDiff {
    ReportDiff {
        params_a: a.total_params,
        params_b: b.total_params,
        memory_a: a.total_memory,
        memory_b: b.total_memory,
        params_ratio: ratio(a.total_params, b.total_params),
        memory_ratio: ratio(a.total_memory, b.total_memory),
        params_delta: a.total_params as i64 - b.total_params as i64,
        memory_delta: a.total_memory as i64 - b.total_memory as i64,
    }
}

impl fmt::Display for ReportDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |r: Option<f64>| r.map_or("n/a".to_string(), |r| format!("{r:.2}x"));
        writeln!(
            f,
            "params: {} vs {} (ratio {}, delta {})",
            group_thousands(self.params_a),
            group_thousands(self.params_b),
            show(self.params_ratio),
            self.params_delta
        )?;
        writeln!(
            f,
            "memory: {} vs {} (ratio {}, delta {})",
            group_thousands(self.memory_a),
            group_thousands(self.memory_b),
            show(self.memory_ratio),
            self.memory_delta
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::presets;
    use super::*;

    #[test]
    fn baseline_cells() {
        let r = ComplexityReport::analyze(&presets::baseline(), Convention::WeightsOnly).unwrap();
        assert_eq!(r.row("conv1").unwrap().params, 800);
        assert_eq!(r.row("conv1").unwrap().memory, 25_088);
        assert_eq!(r.row("conv1").unwrap().filter, "5x5x1");
        assert_eq!(r.row("conv2").unwrap().filter, "5x5x32");
        assert_eq!(r.row("input").unwrap().memory, 784);
        assert_eq!(r.row("flatten1").unwrap().memory, 0);
        assert_eq!(r.row("dropout1").unwrap().params, 0);
        assert_eq!(r.total_params, 3_273_504);
        assert_eq!(r.total_memory, 48_858);
    }

    #[test]
    fn optimized_cells() {
        let r = ComplexityReport::analyze(&presets::optimized(), Convention::WeightsOnly).unwrap();
        assert_eq!(r.row("fc1").unwrap().params, 12_544);
        assert_eq!(r.total_params, 13_874);
        assert_eq!(r.total_memory, 2_588);
    }

    #[test]
    fn biases_add_output_widths() {
        let spec = presets::optimized();
        let bare = ComplexityReport::analyze(&spec, Convention::WeightsOnly).unwrap();
        let full = ComplexityReport::analyze(&spec, Convention::WithBiases).unwrap();
        assert_eq!(full.total_params - bare.total_params, 2 + 128 + 10);
    }

    #[test]
    fn diff_of_equal_reports() {
        let r = ComplexityReport::analyze(&presets::baseline(), Convention::WeightsOnly).unwrap();
        let d = diff_reports(&r, &r);
        assert_eq!(d.params_ratio, Some(1.0));
        assert_eq!(d.memory_ratio, Some(1.0));
        assert_eq!((d.params_delta, d.memory_delta), (0, 0));
    }

    #[test]
    fn diff_guards_zero_denominator() {
        let spec = NetSpec::new(
            "input-only",
            vec![LayerSpec::Input {
                height: 2,
                width: 2,
                channels: 1,
            }],
        )
        .unwrap();
        let zero = ComplexityReport::analyze(&spec, Convention::WeightsOnly).unwrap();
        let base =
            ComplexityReport::analyze(&presets::baseline(), Convention::WeightsOnly).unwrap();
        let d = diff_reports(&base, &zero);
        assert_eq!(d.params_ratio, None);
        assert_eq!(d.memory_ratio, Some(48_858.0 / 4.0));
    }

    #[test]
    fn thousands_grouping() {
        assert_eq!(group_thousands(0), "0");
        assert_eq!(group_thousands(800), "800");
        assert_eq!(group_thousands(51_200), "51,200");
        assert_eq!(group_thousands(3_273_504), "3,273,504");
    }

    #[test]
    fn renders_both_formats() {
        let r = ComplexityReport::analyze(&presets::optimized(), Convention::WeightsOnly).unwrap();
        let table = r.render_table(None);
        assert!(
            table.contains("13,874") && table.contains("2,588"),
            "{table}"
        );
        let kv = r.render_kv();
        assert!(kv.contains("row.pool1.memory=98\n"));
        assert!(kv.contains("total.params=13874\n"));
        assert!(r.render_table(Some(8)).contains("20,704"));
    }
}
