//! Minimal-model selection and the size/accuracy frontier.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::sweep::CandidateResult;
use super::Knob;
use crate::error::{Error, Result};

/// Filter depths reported by the curve export, deepest first.
pub const CURVE_DEPTHS: [usize; 5] = [32, 16, 8, 4, 2];

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub size: u64,
    pub accuracy: f64,
    pub id: String,
}

fn smaller(a: &CandidateResult, b: &CandidateResult) -> Ordering {
    (a.params, a.memory, &a.id).cmp(&(b.params, b.memory, &b.id))
}

fn most_accurate(results: &[CandidateResult]) -> Option<&CandidateResult> {
    results.iter().max_by(|a, b| {
        a.accuracy
            .total_cmp(&b.accuracy)
            .then_with(|| smaller(b, a))
    })
}

/// Smallest result meeting the threshold, falling back to the most accurate.
pub(crate) fn auto_carry(results: &[CandidateResult], threshold: f64) -> Option<&CandidateResult> {
    results
        .iter()
        .filter(|r| r.accuracy >= threshold)
        .min_by(|a, b| smaller(a, b))
        .or_else(|| most_accurate(results))
}

/// The result with the fewest parameters among those with accuracy at or
/// above `threshold`. Ties go to less memory, then to the lexically first id.
pub fn select_minimal(results: &[CandidateResult], threshold: f64) -> Result<&CandidateResult> {
    super::plan::check_threshold(threshold)?;
    let best = most_accurate(results)
        .ok_or_else(|| Error::InvalidArgument("no candidates to select from".into()))?;
    results
        .iter()
        .filter(|r| r.accuracy >= threshold)
        .min_by(|a, b| smaller(a, b))
        .ok_or_else(|| Error::Infeasible {
            threshold,
            best_accuracy: best.accuracy,
            best_id: best.id.clone(),
        })
}

/// Pareto staircase: sorted by size, each point strictly more accurate than
/// every smaller one.
pub fn build_frontier(results: &[CandidateResult]) -> Vec<FrontierPoint> {
    let mut sorted: Vec<&CandidateResult> = results.iter().collect();
    sorted.sort_by(|a, b| smaller(a, b).then_with(|| b.accuracy.total_cmp(&a.accuracy)));
    let mut out: Vec<FrontierPoint> = Vec::new();
    for r in sorted {
        let dominated = out.last().is_some_and(|p| r.accuracy <= p.accuracy);
        if dominated {
            continue;
        }
        if out.last().is_some_and(|p| p.size == r.params) {
            out.pop();
        }
        out.push(FrontierPoint {
            size: r.params,
            accuracy: r.accuracy,
            id: r.id.clone(),
        });
    }
    out
}

/// Accuracy (percent) by conv1 depth and kernel as CSV. Only conv1 stage
/// results contribute; missing cells are left blank.
pub fn export_curves(results: &[CandidateResult]) -> String {
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for r in results.iter().filter(|r| r.stage == "conv1") {
        if let Ok(Knob::Conv1 { kernel, depth }) = Knob::parse("conv1", &r.knob) {
            cells.insert((kernel, depth), r.accuracy);
        }
    }
    let mut kernels: Vec<usize> = vec![5, 3, 1];
    for &(k, _) in cells.keys() {
        if !kernels.contains(&k) {
            kernels.push(k);
        }
    }
    kernels.sort_unstable_by(|a, b| b.cmp(a));
    let mut depths: Vec<usize> = cells.keys().map(|&(_, d)| d).collect();
    depths.sort_unstable_by(|a, b| b.cmp(a));
    depths.dedup();

    let mut out = String::from("depth");
    for k in &kernels {
        out.push_str(&format!(",{k}x{k}"));
    }
    out.push('\n');
    for d in depths {
        out.push_str(&d.to_string());
        for &k in &kernels {
            out.push(',');
            if let Some(a) = cells.get(&(k, d)) {
                out.push_str(&format!("{:.2}", a * 100.0));
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::presets;

    fn result(id: &str, params: u64, accuracy: f64) -> CandidateResult {
        let (stage, knob) = id.split_once(':').unwrap_or(("", id));
        CandidateResult {
            id: id.into(),
            stage: stage.into(),
            knob: knob.into(),
            spec: presets::optimized(),
            params,
            memory: 0,
            accuracy,
            seeds: vec![0],
            seed_accuracies: vec![accuracy],
            schedule_id: "t".into(),
            diverged: false,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn selection_and_infeasibility() {
        let rs = vec![
            result("a", 10, 0.9),
            result("b", 5, 0.95),
            result("c", 20, 0.99),
        ];
        assert_eq!(select_minimal(&rs, 0.95).unwrap().id, "b");
        assert_eq!(select_minimal(&rs, 0.96).unwrap().id, "c");
        match select_minimal(&rs, 1.0) {
            Err(Error::Infeasible { best_id, .. }) => assert_eq!(best_id, "c"),
            other => panic!("{other:?}"),
        }
        assert!(select_minimal(&[], 0.5).is_err());
    }

    #[test]
    fn frontier_is_a_staircase() {
        let rs = vec![
            result("a", 10, 0.9),
            result("b", 5, 0.95),
            result("c", 20, 0.99),
            result("d", 20, 0.97),
            result("e", 30, 0.98),
        ];
        let f = build_frontier(&rs);
        let ids: Vec<&str> = f.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
    }

    #[test]
    fn curves_layout() {
        let rs = vec![
            result("conv1:5x5x32", 1, 0.986),
            result("conv1:1x1x2", 1, 0.9428),
            result("fc1_width:128", 1, 0.5),
        ];
        assert_eq!(
            export_curves(&rs),
            "depth,5x5,3x3,1x1\n32,98.60,,\n2,,,94.28\n"
        );
        assert_eq!(export_curves(&[]), "depth,5x5,3x3,1x1\n");
    }
}
