//! Published layer ledgers for the three reference architectures, used as
//! golden fixtures by `analyze --expect-golden`.
//!
//! Expected values are the products printed in each cell (written out as the
//! same products here), not the accountant's output. Cells whose printed text
//! is internally inconsistent carry the corrected value plus a note and are
//! reported as flagged rather than matched.

use super::{presets, ComplexityReport, NetSpec};
use crate::tensor::ShapeDisplay;

#[derive(Debug, Clone)]
pub struct ReferenceRow {
    pub name: &'static str,
    pub output: &'static str,
    pub memory_printed: &'static str,
    pub memory: u64,
    pub params_printed: &'static str,
    pub params: u64,
    /// Set when the printed memory expression disagrees with the row's shape.
    pub memory_note: Option<&'static str>,
}

#[derive(Debug, Clone)]
pub struct ReferenceTotal {
    pub column: Column,
    pub printed: &'static str,
    /// Exact column sum; the printed text is a rounded display value.
    pub exact: u64,
    pub note: Option<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Memory,
    Params,
}

#[derive(Debug, Clone)]
pub struct ReferenceLedger {
    pub key: &'static str,
    pub title: &'static str,
    pub rows: Vec<ReferenceRow>,
    pub totals: Vec<ReferenceTotal>,
}

impl ReferenceLedger {
    pub fn spec(&self) -> NetSpec {
        presets::by_name(self.key).expect("every ledger has a preset")
    }
}

const fn row(
    name: &'static str,
    output: &'static str,
    memory_printed: &'static str,
    memory: u64,
    params_printed: &'static str,
    params: u64,
) -> ReferenceRow {
    ReferenceRow {
        name,
        output,
        memory_printed,
        memory,
        params_printed,
        params,
        memory_note: None,
    }
}

fn input_row() -> ReferenceRow {
    row("input", "28x28x1", "28*28*1 =0.784K", 28 * 28 * 1, "0", 0)
}

pub fn baseline() -> ReferenceLedger {
    let rows = vec![
        input_row(),
        row(
            "conv1",
            "28x28x32",
            "28*28*32 =25K",
            28 * 28 * 32,
            "(5*5*1)*32 =800",
            5 * 5 * 32,
        ),
        row(
            "pool1",
            "14x14x32",
            "14*14*32 =6.272K",
            14 * 14 * 32,
            "0",
            0,
        ),
        row(
            "conv2",
            "14x14x64",
            "14*14*64 =12.5K",
            14 * 14 * 64,
            "(5*5*32)*64 =51,200",
            5 * 5 * 32 * 64,
        ),
        row("pool2", "7x7x64", "7*7*64 =3.1K", 7 * 7 * 64, "0", 0),
        row(
            "fc1",
            "1024",
            "1024",
            1024,
            "(7*7*64)*1024 =3,211,264",
            7 * 7 * 64 * 1024,
        ),
        row("fc2", "10", "10", 10, "1024*10 =10,240", 1024 * 10),
    ];
    let memory_sum = rows.iter().map(|r| r.memory).sum();
    let params_sum = rows.iter().map(|r| r.params).sum();
    ReferenceLedger {
        key: "baseline",
        title: "Baseline network",
        rows,
        totals: vec![
            ReferenceTotal {
                column: Column::Memory,
                printed: "48.68K",
                exact: memory_sum,
                note: Some(
                    "printed total 48.68K (48.65K in the comparison table) disagrees with the \
                     exact column sum 48,858",
                ),
            },
            ReferenceTotal {
                column: Column::Params,
                printed: "3.27M",
                exact: params_sum,
                note: None,
            },
        ],
    }
}

pub fn iteration1() -> ReferenceLedger {
    ReferenceLedger {
        key: "iteration1",
        title: "Second convolution removed",
        rows: vec![
            input_row(),
            row(
                "conv1",
                "28x28x32",
                "28*28*32 =25K",
                28 * 28 * 32,
                "(5*5*1)*32 =800",
                5 * 5 * 32,
            ),
            row(
                "pool1",
                "14x14x32",
                "14*14*32 =6.272K",
                14 * 14 * 32,
                "0",
                0,
            ),
            row(
                "fc1",
                "1024",
                "1024",
                1024,
                "(14*14*32)*1024 =6,422,528",
                14 * 14 * 32 * 1024,
            ),
            row("fc2", "10", "10", 10, "1024*10 =10,240", 1024 * 10),
        ],
        totals: vec![],
    }
}

pub fn optimized() -> ReferenceLedger {
    let mut pool1 = row("pool1", "7x7x2", "7*7*4 =98", 7 * 7 * 2, "0", 0);
    pool1.memory_note =
        Some("printed expression 7*7*4 contradicts the 7x7x2 output; 98 = 7*7*2 is used");
    let rows = vec![
        input_row(),
        row(
            "conv1",
            "28x28x2",
            "28*28*2 =1.5K",
            28 * 28 * 2,
            "(5*5*1)*2 =50",
            5 * 5 * 2,
        ),
        pool1,
        row(
            "fc1",
            "128",
            "128",
            128,
            "(7*7*2)*128 =12.5K",
            7 * 7 * 2 * 128,
        ),
        row("fc2", "10", "10", 10, "128*10 =1.2K", 128 * 10),
    ];
    let memory_sum = rows.iter().map(|r| r.memory).sum();
    let params_sum = rows.iter().map(|r| r.params).sum();
    ReferenceLedger {
        key: "optimized",
        title: "Optimized network",
        rows,
        totals: vec![
            ReferenceTotal {
                column: Column::Memory,
                printed: "2.5K",
                exact: memory_sum,
                note: Some("printed total 2.5K disagrees with the exact column sum 2,588"),
            },
            ReferenceTotal {
                column: Column::Params,
                printed: "13.8K",
                exact: params_sum,
                note: None,
            },
        ],
    }
}

pub fn ledger(key: &str) -> Option<ReferenceLedger> {
    match key {
        "baseline" => Some(baseline()),
        "iteration1" => Some(iteration1()),
        "optimized" => Some(optimized()),
        _ => None,
    }
}

/// Rounded totals as printed in the baseline-vs-optimized comparison.
pub mod comparison {
    pub const BASELINE_PARAMS_PRINTED: &str = "3.27M";
    pub const OPTIMIZED_PARAMS_PRINTED: &str = "13.8K";
    pub const BASELINE_MEMORY_ROUNDED: u64 = 48_650;
    pub const OPTIMIZED_MEMORY_ROUNDED: u64 = 2_500;
    /// Reduction factors quoted for the optimized network.
    pub const PARAMS_REDUCTION_QUOTED: f64 = 236.0;
    pub const MEMORY_REDUCTION_QUOTED: f64 = 19.5;
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Match,
    /// Value equals the documented correction of an inconsistent printed cell.
    Flagged(&'static str),
    Mismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellCheck {
    pub cell: String,
    pub printed: String,
    pub expected: String,
    pub actual: String,
    pub status: CellStatus,
}

impl CellCheck {
    fn new(
        cell: String,
        printed: &str,
        expected: String,
        actual: String,
        note: Option<&'static str>,
    ) -> Self {
        let status = match (expected == actual, note) {
            (false, _) => CellStatus::Mismatch,
            (true, Some(n)) => CellStatus::Flagged(n),
            (true, None) => CellStatus::Match,
        };
        Self {
            cell,
            printed: printed.to_string(),
            expected,
            actual,
            status,
        }
    }
}

/// Compares every cell of `ledger` against `report`.
pub fn check(report: &ComplexityReport, ledger: &ReferenceLedger) -> Vec<CellCheck> {
    let mut checks = Vec::new();
    for r in &ledger.rows {
        let actual = report.row(r.name);
        let get = |f: &dyn Fn(&super::LayerRow) -> String| {
            actual.map_or_else(|| "<missing row>".to_string(), f)
        };
        checks.push(CellCheck::new(
            format!("{}.output", r.name),
            r.output,
            r.output.to_string(),
            get(&|a| ShapeDisplay(&a.output_shape).to_string()),
            None,
        ));
        checks.push(CellCheck::new(
            format!("{}.memory", r.name),
            r.memory_printed,
            r.memory.to_string(),
            get(&|a| a.memory.to_string()),
            r.memory_note,
        ));
        checks.push(CellCheck::new(
            format!("{}.params", r.name),
            r.params_printed,
            r.params.to_string(),
            get(&|a| a.params.to_string()),
            None,
        ));
    }
    for t in &ledger.totals {
        let (cell, actual) = match t.column {
            Column::Memory => ("total.memory", report.total_memory),
            Column::Params => ("total.params", report.total_params),
        };
        checks.push(CellCheck::new(
            cell.to_string(),
            t.printed,
            t.exact.to_string(),
            actual.to_string(),
            t.note,
        ));
    }
    checks
}

pub fn render_checks(checks: &[CellCheck]) -> String {
    let mut out = String::new();
    for c in checks {
        let status = match &c.status {
            CellStatus::Match => "ok".to_string(),
            CellStatus::Flagged(note) => format!("flagged: {note}"),
            CellStatus::Mismatch => "MISMATCH".to_string(),
        };
        out.push_str(&format!(
            "{:<16} printed {:<28} expected {:>9} actual {:>9}  {status}\n",
            c.cell, c.printed, c.expected, c.actual
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::Convention;
    use super::*;

    #[test]
    fn every_ledger_matches_its_preset() {
        for key in presets::NAMES {
            let ledger = ledger(key).unwrap();
            let report =
                ComplexityReport::analyze(&ledger.spec(), Convention::WeightsOnly).unwrap();
            let checks = check(&report, &ledger);
            let bad: Vec<_> = checks
                .iter()
                .filter(|c| c.status == CellStatus::Mismatch)
                .collect();
            assert!(bad.is_empty(), "{key}: {bad:?}");
        }
    }

    #[test]
    fn documented_inconsistencies_are_flagged() {
        let report =
            ComplexityReport::analyze(&presets::optimized(), Convention::WeightsOnly).unwrap();
        let checks = check(&report, &optimized());
        let flagged: Vec<_> = checks
            .iter()
            .filter(|c| matches!(c.status, CellStatus::Flagged(_)))
            .map(|c| c.cell.as_str())
            .collect();
        assert_eq!(flagged, ["pool1.memory", "total.memory"]);
    }

    #[test]
    fn wrong_architecture_mismatches() {
        let report =
            ComplexityReport::analyze(&presets::iteration1(), Convention::WeightsOnly).unwrap();
        let checks = check(&report, &baseline());
        assert!(checks.iter().any(|c| c.status == CellStatus::Mismatch));
    }
}
