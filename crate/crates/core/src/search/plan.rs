//! Search plan text format.
//!
//! ```text
//! name: reference
//! base: baseline
//! threshold: 0.95
//! seeds: 1,2,3
//! iterations: 2000
//! stage: drop_conv2 values=false,true carry=true
//! stage: fc1_width values=1024,512,256,128,64,32 carry=128
//! stage: conv1 kernels=5,3,1 depths=32,16,8,4,2 carry=5x5x2
//! stage: pool_window values=2,4 carry=auto
//! extra: 3x3-final conv1=3x3x2
//! ```
//!
//! `base` is a preset name or a spec file path relative to the plan. Schedule
//! keys (`iterations`, `batch`, `lr`, `keep`, `activation`) override the
//! training defaults. Stages must appear in the order shown, each at most once.

use std::collections::BTreeMap;
use std::path::Path;

use super::Knob;
use crate::error::{Error, Result};
use crate::netspec::{parse_spec, presets, NetSpec};
use crate::trainer::TrainConfig;

const STAGE_ORDER: [&str; 4] = ["drop_conv2", "fc1_width", "conv1", "pool_window"];

/// Which value leaves a stage and becomes the base of the next one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Carry {
    Pinned(Knob),
    /// Smallest candidate meeting the threshold, else the most accurate.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub knob_name: String,
    pub values: Vec<Knob>,
    pub carry: Carry,
}

/// A candidate evaluated on the final configuration, outside the stage grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Extra {
    pub label: String,
    pub knobs: Vec<Knob>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchPlan {
    pub name: String,
    pub base: NetSpec,
    pub threshold: f64,
    pub stages: Vec<Stage>,
    pub extras: Vec<Extra>,
    pub schedule: TrainConfig,
    pub seeds: Vec<u64>,
    pub exhaustive: bool,
}

impl SearchPlan {
    /// A plan with no stages over `base`.
    pub fn new(base: NetSpec, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(Self {
            name: String::new(),
            base,
            threshold,
            stages: Vec::new(),
            extras: Vec::new(),
            schedule: TrainConfig::default(),
            seeds: vec![0],
            exhaustive: false,
        })
    }
}

pub(crate) fn check_threshold(threshold: f64) -> Result<()> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "threshold must be in [0, 1], got {threshold}"
        )))
    }
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn fields(line: usize, tokens: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for t in tokens {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| perr(line, format!("expected key=value, found '{t}'")))?;
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(perr(line, format!("duplicate field '{k}'")));
        }
    }
    Ok(out)
}

fn list(line: usize, raw: &str, what: &str) -> Result<Vec<String>> {
    let items: Vec<String> = raw
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(perr(line, format!("{what} list is empty")));
    }
    Ok(items)
}

fn knob(line: usize, stage: &str, value: &str) -> Result<Knob> {
    Knob::parse(stage, value).map_err(|e| perr(line, e.to_string()))
}

fn parse_stage(line: usize, rest: &str) -> Result<Stage> {
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    let Some((&name, tokens)) = tokens.split_first() else {
        return Err(perr(line, "stage needs a knob name"));
    };
    let mut f = fields(line, tokens)?;
    let values = if name == "conv1" {
        let kernels = f
            .remove("kernels")
            .ok_or_else(|| perr(line, "conv1 stage needs kernels="))?;
        let depths = f
            .remove("depths")
            .ok_or_else(|| perr(line, "conv1 stage needs depths="))?;
        let depths = list(line, &depths, "depth")?;
        let mut v = Vec::new();
        for k in list(line, &kernels, "kernel")? {
            for d in &depths {
                v.push(knob(line, name, &format!("{k}x{k}x{d}"))?);
            }
        }
        v
    } else {
        let raw = f
            .remove("values")
            .ok_or_else(|| perr(line, format!("{name} stage needs values=")))?;
        list(line, &raw, "value")?
            .iter()
            .map(|v| knob(line, name, v))
            .collect::<Result<_>>()?
    };
    let carry = match f.remove("carry").as_deref() {
        None | Some("auto") => Carry::Auto,
        Some(v) => Carry::Pinned(knob(line, name, v)?),
    };
    if let Some(extra) = f.keys().next() {
        return Err(perr(
            line,
            format!("unknown field '{extra}' for stage {name}"),
        ));
    }
    Ok(Stage {
        knob_name: name.to_string(),
        values,
        carry,
    })
}

fn parse_extra(line: usize, rest: &str) -> Result<Extra> {
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    let Some((&label, tokens)) = tokens.split_first() else {
        return Err(perr(line, "extra needs a label"));
    };
    if tokens.is_empty() {
        return Err(perr(line, format!("extra {label} lists no knobs")));
    }
    let knobs = tokens
        .iter()
        .map(|t| {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| perr(line, format!("expected knob=value, found '{t}'")))?;
            knob(line, k, v)
        })
        .collect::<Result<_>>()?;
    Ok(Extra {
        label: label.to_string(),
        knobs,
    })
}

fn number<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| perr(line, format!("'{key}' has invalid value '{value}'")))
}

fn resolve_base(line: usize, value: &str, base_dir: Option<&Path>) -> Result<NetSpec> {
    if let Some(spec) = presets::by_name(value) {
        return Ok(spec);
    }
    let path = base_dir.map_or_else(|| Path::new(value).to_path_buf(), |d| d.join(value));
    let text = std::fs::read_to_string(&path).map_err(|e| {
        perr(
            line,
            format!("base '{value}' is neither a preset nor a readable spec file: {e}"),
        )
    })?;
    parse_spec(&text).map_err(|e| perr(line, format!("base spec {}: {e}", path.display())))
}

/// Parses a plan; relative `base:` paths resolve against `base_dir`.
pub fn parse_plan(text: &str, base_dir: Option<&Path>) -> Result<SearchPlan> {
    let mut name = String::new();
    let mut base = None;
    let mut threshold = None;
    let mut seeds = vec![0];
    let mut schedule = TrainConfig::default();
    let mut stages: Vec<Stage> = Vec::new();
    let mut extras = Vec::new();
    let mut exhaustive = false;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once(':')
            .ok_or_else(|| perr(line, format!("expected 'key: value', found '{trimmed}'")))?;
        let value = value.trim();
        match key.trim() {
            "name" => name = value.to_string(),
            "base" => base = Some(resolve_base(line, value, base_dir)?),
            "threshold" => {
                let t: f64 = number(line, "threshold", value)?;
                check_threshold(t).map_err(|e| perr(line, e.to_string()))?;
                threshold = Some(t);
            }
            "seeds" => {
                seeds = list(line, value, "seed")?
                    .iter()
                    .map(|s| number(line, "seeds", s))
                    .collect::<Result<_>>()?
            }
            "iterations" => schedule.iterations = number(line, key, value)?,
            "batch" => schedule.batch_size = number(line, key, value)?,
            "lr" => schedule.learning_rate = number(line, key, value)?,
            "keep" => schedule.dropout_keep = Some(number(line, key, value)?),
            "activation" => {
                schedule.activation = value
                    .parse()
                    .map_err(|e: Error| perr(line, e.to_string()))?
            }
            "exhaustive" => exhaustive = number(line, key, value)?,
            "stage" => {
                let stage = parse_stage(line, value)?;
                let pos = STAGE_ORDER
                    .iter()
                    .position(|s| *s == stage.knob_name)
                    .ok_or_else(|| perr(line, format!("unknown stage '{}'", stage.knob_name)))?;
                if let Some(prev) = stages.last() {
                    let prev_pos = STAGE_ORDER.iter().position(|s| *s == prev.knob_name);
                    if prev_pos >= Some(pos) {
                        return Err(perr(
                            line,
                            format!(
                                "stage {} must come before {} (order: {})",
                                stage.knob_name,
                                prev.knob_name,
                                STAGE_ORDER.join(", ")
                            ),
                        ));
                    }
                }
                stages.push(stage);
            }
            "extra" => extras.push(parse_extra(line, value)?),
            other => return Err(perr(line, format!("unknown plan key '{other}'"))),
        }
    }
    schedule
        .validate()
        .map_err(|e| Error::InvalidArgument(format!("plan schedule: {e}")))?;
    Ok(SearchPlan {
        name,
        base: base.ok_or_else(|| Error::InvalidArgument("plan has no 'base:' line".into()))?,
        threshold: threshold
            .ok_or_else(|| Error::InvalidArgument("plan has no 'threshold:' line".into()))?,
        stages,
        extras,
        schedule,
        seeds,
        exhaustive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAN: &str = "name: t\nbase: baseline\nthreshold: 0.95\nseeds: 4,5\niterations: 10\n\
        stage: drop_conv2 values=false,true carry=true\n\
        stage: conv1 kernels=5,1 depths=8,2\n\
        extra: tiny conv1=1x1x1 pool_window=4\n";

    #[test]
    fn parses_stages_and_schedule() {
        let plan = parse_plan(PLAN, None).unwrap();
        assert_eq!(plan.seeds, [4, 5]);
        assert_eq!(plan.schedule.iterations, 10);
        assert_eq!(plan.stages[0].carry, Carry::Pinned(Knob::DropConv2(true)));
        assert_eq!(plan.stages[1].carry, Carry::Auto);
        let ids: Vec<String> = plan.stages[1].values.iter().map(Knob::to_string).collect();
        assert_eq!(
            ids,
            ["conv1:5x5x8", "conv1:5x5x2", "conv1:1x1x8", "conv1:1x1x2"]
        );
        assert_eq!(plan.extras[0].knobs.len(), 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = |text: &str| match parse_plan(text, None) {
            Err(Error::Parse { line, message }) => (line, message),
            other => panic!("{other:?}"),
        };
        assert_eq!(err("base: baseline\nthreshold: 1.5\n").0, 2);
        assert_eq!(err("base: baseline\nstage: fc1_width values=\n").0, 2);
        let (line, msg) =
            err("base: baseline\nstage: conv1 kernels=5 depths=2\nstage: fc1_width values=8\n");
        assert_eq!(line, 3);
        assert!(msg.contains("must come before"), "{msg}");
        assert!(parse_plan("threshold: 0.5\n", None)
            .unwrap_err()
            .to_string()
            .contains("base"));
        assert_eq!(err("base: nosuch.spec\n").0, 1);
    }
}
