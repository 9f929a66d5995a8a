//! Threshold-constrained architecture search.
//!
//! A [`SearchPlan`] lists knob stages (drop the second conv, fc1 width, conv1
//! kernel/depth, pooling window). The greedy driver trains every candidate of
//! a stage against the configuration carried out of the previous stage; the
//! carried value is either pinned in the plan or chosen automatically. The
//! minimal model meeting the accuracy threshold is then selected from all
//! results, and the size/accuracy frontier is derived from them.

mod frontier;
mod oracle;
mod plan;
mod sweep;

use std::fmt;

pub use frontier::{build_frontier, export_curves, select_minimal, FrontierPoint, CURVE_DEPTHS};
pub use oracle::{AccuracyOracle, Outcome, PublishedOracle, TrainedOracle};
pub use plan::{parse_plan, Carry, Extra, SearchPlan, Stage};
pub use sweep::{
    median, run_plan, run_sweep, CandidateResult, Ledger, LedgerRecord, SearchOutcome,
};

use crate::error::{Error, Result};
use crate::netspec::{LayerSpec, NetSpec};

/// One architecture edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Knob {
    /// Remove the second conv layer and the pooling layer right after it.
    DropConv2(bool),
    /// Width of the first dense layer.
    Fc1Width(usize),
    Conv1 {
        kernel: usize,
        depth: usize,
    },
    /// Window of the first pooling layer.
    PoolWindow(usize),
}

impl Knob {
    pub fn stage_name(&self) -> &'static str {
        match self {
            Knob::DropConv2(_) => "drop_conv2",
            Knob::Fc1Width(_) => "fc1_width",
            Knob::Conv1 { .. } => "conv1",
            Knob::PoolWindow(_) => "pool_window",
        }
    }

    pub fn value_string(&self) -> String {
        match *self {
            Knob::DropConv2(b) => b.to_string(),
            Knob::Fc1Width(n) => n.to_string(),
            Knob::Conv1 { kernel, depth } => format!("{kernel}x{kernel}x{depth}"),
            Knob::PoolWindow(k) => k.to_string(),
        }
    }

    /// Parses a value for the knob family named `stage`.
    pub fn parse(stage: &str, value: &str) -> Result<Knob> {
        let bad = || Error::InvalidArgument(format!("invalid value '{value}' for knob {stage}"));
        let positive = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(bad);
        match stage {
            "drop_conv2" => value.parse().map(Knob::DropConv2).map_err(|_| bad()),
            "fc1_width" => positive(value).map(Knob::Fc1Width),
            "pool_window" => positive(value).map(Knob::PoolWindow),
            "conv1" => {
                let parts: Vec<&str> = value.split('x').collect();
                match parts[..] {
                    [k1, k2, d] if k1 == k2 => Ok(Knob::Conv1 {
                        kernel: positive(k1)?,
                        depth: positive(d)?,
                    }),
                    _ => Err(bad()),
                }
            }
            other => Err(Error::InvalidArgument(format!(
                "unknown knob '{other}' (expected drop_conv2, fc1_width, conv1 or pool_window)"
            ))),
        }
    }

    /// Applies the edit; `Err` carries the reason the edit is incompatible.
    pub fn apply(&self, spec: &NetSpec) -> std::result::Result<NetSpec, String> {
        let mut out = spec.clone();
        let layers = &mut out.layers;
        let nth = |layers: &[LayerSpec], want: fn(&LayerSpec) -> bool, n: usize| {
            layers
                .iter()
                .enumerate()
                .filter(|(_, l)| want(l))
                .nth(n)
                .map(|(i, _)| i)
        };
        let is_conv = |l: &LayerSpec| matches!(l, LayerSpec::Conv { .. });
        let is_pool = |l: &LayerSpec| matches!(l, LayerSpec::MaxPool { .. });
        let is_dense = |l: &LayerSpec| matches!(l, LayerSpec::Dense { .. });
        match *self {
            Knob::DropConv2(false) => {}
            Knob::DropConv2(true) => {
                let i = nth(layers, is_conv, 1).ok_or("spec has no second convolution")?;
                let pool_follows = matches!(layers.get(i + 1), Some(LayerSpec::MaxPool { .. }));
                layers.drain(i..i + 1 + usize::from(pool_follows));
            }
            Knob::Fc1Width(n) => {
                let dense_count = layers.iter().filter(|l| is_dense(l)).count();
                if dense_count < 2 {
                    return Err("spec has no hidden dense layer".into());
                }
                let i = nth(layers, is_dense, 0).expect("counted above");
                layers[i] = LayerSpec::Dense { out_features: n };
            }
            Knob::Conv1 { kernel, depth } => {
                let i = nth(layers, is_conv, 0).ok_or("spec has no convolution")?;
                layers[i] = LayerSpec::Conv {
                    kernel,
                    out_channels: depth,
                };
            }
            Knob::PoolWindow(window) => {
                let i = nth(layers, is_pool, 0).ok_or("spec has no pooling layer")?;
                layers[i] = LayerSpec::MaxPool { window };
            }
        }
        out.layer_shapes().map_err(|e| e.to_string())?;
        Ok(out)
    }
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.stage_name(), self.value_string())
    }
}

/// A spec under evaluation with its stable identifier, e.g. `fc1_width:128`.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub stage: String,
    pub knob: String,
    pub spec: NetSpec,
}

fn candidate(id: String, stage: &str, knob: String, mut spec: NetSpec) -> Candidate {
    spec.name = id.clone();
    Candidate {
        id,
        stage: stage.to_string(),
        knob,
        spec,
    }
}

/// Candidates of one stage applied to `current`. Incompatible values are
/// skipped with a logged reason.
pub fn enumerate_stage(current: &NetSpec, stage: &Stage) -> Vec<Candidate> {
    let mut out = Vec::new();
    for knob in &stage.values {
        match knob.apply(current) {
            Ok(spec) => out.push(candidate(
                knob.to_string(),
                knob.stage_name(),
                knob.value_string(),
                spec,
            )),
            Err(reason) => log::warn!("skipping candidate {knob}: {reason}"),
        }
    }
    out
}

/// Applies the knobs of an extra candidate to `current`.
pub fn enumerate_extra(current: &NetSpec, extra: &Extra) -> Option<Candidate> {
    let mut spec = current.clone();
    for knob in &extra.knobs {
        match knob.apply(&spec) {
            Ok(next) => spec = next,
            Err(reason) => {
                log::warn!("skipping extra candidate {}: {reason}", extra.label);
                return None;
            }
        }
    }
    let knobs = extra
        .knobs
        .iter()
        .map(Knob::to_string)
        .collect::<Vec<_>>()
        .join("+");
    Some(candidate(
        format!("extra:{}", extra.label),
        "extra",
        knobs,
        spec,
    ))
}

/// Every candidate of the plan without evaluating anything.
///
/// Greedy plans need a pinned carry on every stage except the last; with an
/// automatic carry the next stage depends on results, so use [`run_plan`].
/// Exhaustive plans enumerate the full product of stage values.
pub fn enumerate_candidates(plan: &SearchPlan) -> Result<Vec<Candidate>> {
    if plan.exhaustive {
        return Ok(enumerate_exhaustive(plan));
    }
    if plan.stages.is_empty() {
        return Ok(vec![candidate(
            "base".into(),
            "base",
            String::new(),
            plan.base.clone(),
        )]);
    }
    let mut current = plan.base.clone();
    let mut out = Vec::new();
    for (i, stage) in plan.stages.iter().enumerate() {
        out.extend(enumerate_stage(&current, stage));
        if i + 1 == plan.stages.len() && plan.extras.is_empty() {
            break;
        }
        let Carry::Pinned(knob) = stage.carry else {
            return Err(Error::InvalidArgument(format!(
                "stage {} carries its best candidate automatically; candidates after it depend on results",
                stage.knob_name
            )));
        };
        current = knob.apply(&current).map_err(|r| {
            Error::InvalidArgument(format!("pinned carry {knob} is incompatible: {r}"))
        })?;
    }
    out.extend(
        plan.extras
            .iter()
            .filter_map(|e| enumerate_extra(&current, e)),
    );
    Ok(out)
}

fn enumerate_exhaustive(plan: &SearchPlan) -> Vec<Candidate> {
    let mut partial: Vec<(Vec<Knob>, NetSpec)> = vec![(Vec::new(), plan.base.clone())];
    for stage in &plan.stages {
        let mut next = Vec::new();
        for (knobs, spec) in &partial {
            for knob in &stage.values {
                match knob.apply(spec) {
                    Ok(s) => {
                        let mut k = knobs.clone();
                        k.push(*knob);
                        next.push((k, s));
                    }
                    Err(reason) => {
                        let path: Vec<String> = knobs.iter().map(Knob::to_string).collect();
                        log::warn!("skipping {}+{knob}: {reason}", path.join("+"));
                    }
                }
            }
        }
        partial = next;
    }
    partial
        .into_iter()
        .map(|(knobs, spec)| {
            let id = if knobs.is_empty() {
                "base".to_string()
            } else {
                knobs
                    .iter()
                    .map(Knob::to_string)
                    .collect::<Vec<_>>()
                    .join("+")
            };
            candidate(id.clone(), "exhaustive", id, spec)
        })
        .collect()
}
