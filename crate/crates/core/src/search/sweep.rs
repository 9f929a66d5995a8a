//! Candidate evaluation, the append-only results ledger, and the greedy driver.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use super::frontier::auto_carry;
use super::plan::Carry;
use super::{
    enumerate_candidates, enumerate_extra, enumerate_stage, AccuracyOracle, Candidate, SearchPlan,
};
use crate::error::{Error, Result};
use crate::netspec::{ComplexityReport, Convention, NetSpec};

/// One (candidate, seed) evaluation as persisted in the ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRecord {
    pub id: String,
    pub stage: String,
    pub knob: String,
    /// Architecture fingerprint.
    pub spec: String,
    pub params: u64,
    pub memory: u64,
    pub accuracy: f64,
    pub seed: u64,
    pub schedule: String,
    pub wall: f64,
    pub diverged: bool,
}

impl LedgerRecord {
    pub fn to_line(&self) -> String {
        format!(
            "id={}\tstage={}\tknob={}\tspec={}\tparams={}\tmemory={}\taccuracy={}\tseed={}\tschedule={}\twall={:.3}\tdiverged={}",
            self.id,
            self.stage,
            self.knob,
            self.spec,
            self.params,
            self.memory,
            self.accuracy,
            self.seed,
            self.schedule,
            self.wall,
            self.diverged
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for part in line.split('\t') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("ledger field '{part}' is not key=value")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("ledger record lacks '{k}'")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Format(format!("ledger field {k}='{v}' is malformed")))
        }
        Ok(Self {
            id: get("id")?.to_string(),
            stage: get("stage")?.to_string(),
            knob: get("knob")?.to_string(),
            spec: get("spec")?.to_string(),
            params: num("params", get("params")?)?,
            memory: num("memory", get("memory")?)?,
            accuracy: num("accuracy", get("accuracy")?)?,
            seed: num("seed", get("seed")?)?,
            schedule: get("schedule")?.to_string(),
            wall: num("wall", get("wall")?)?,
            diverged: num("diverged", get("diverged")?)?,
        })
    }
}

/// Append-only record store. When backed by a file, every record is flushed
/// as soon as it is written, so an interrupted sweep resumes where it stopped.
#[derive(Debug, Default)]
pub struct Ledger {
    path: Option<PathBuf>,
    file: Option<File>,
    records: Vec<LedgerRecord>,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a ledger file and loads its records. A final line
    /// without a newline is an interrupted write and is discarded.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            let complete = match text.rfind('\n') {
                Some(i) => &text[..=i],
                None => "",
            };
            if complete.len() != text.len() {
                log::warn!("{}: dropping incomplete last record", path.display());
                fs::write(&path, complete)?;
            }
            for (i, line) in complete.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                records.push(LedgerRecord::parse_line(line).map_err(|e| {
                    Error::Format(format!("{} line {}: {e}", path.display(), i + 1))
                })?);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path: Some(path),
            file: Some(file),
            records,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn find(&self, id: &str, seed: u64, schedule: &str) -> Option<&LedgerRecord> {
        self.records
            .iter()
            .find(|r| r.id == id && r.seed == seed && r.schedule == schedule)
    }

    pub fn append(&mut self, record: LedgerRecord) -> Result<()> {
        if let Some(f) = self.file.as_mut() {
            writeln!(f, "{}", record.to_line())?;
            f.flush()?;
        }
        self.records.push(record);
        Ok(())
    }
}

/// Accuracy of one candidate aggregated over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub id: String,
    pub stage: String,
    pub knob: String,
    pub spec: NetSpec,
    /// Weights-only parameter count.
    pub params: u64,
    /// Activation memory in elements.
    pub memory: u64,
    /// Median over seeds.
    pub accuracy: f64,
    pub seeds: Vec<u64>,
    pub seed_accuracies: Vec<f64>,
    pub schedule_id: String,
    pub diverged: bool,
    pub wall_seconds: f64,
}

/// Median; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn record_for(c: &Candidate, seed: u64, schedule: &str, o: super::Outcome) -> Result<LedgerRecord> {
    let report = ComplexityReport::analyze(&c.spec, Convention::WeightsOnly)?;
    Ok(LedgerRecord {
        id: c.id.clone(),
        stage: c.stage.clone(),
        knob: c.knob.clone(),
        spec: c.spec.fingerprint(),
        params: report.total_params,
        memory: report.total_memory,
        accuracy: o.accuracy,
        seed,
        schedule: schedule.to_string(),
        wall: o.wall_seconds,
        diverged: o.diverged,
    })
}

/// Evaluates every candidate under every seed, reusing ledger entries with
/// the same (id, seed, schedule). With `workers > 1` evaluations run in
/// parallel; records are still appended in candidate-then-seed order.
pub fn run_sweep(
    candidates: &[Candidate],
    oracle: &dyn AccuracyOracle,
    seeds: &[u64],
    ledger: &mut Ledger,
    workers: usize,
) -> Result<Vec<CandidateResult>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one seed".into(),
        ));
    }
    let schedule = oracle.schedule_id();
    let jobs: Vec<(usize, u64)> = candidates
        .iter()
        .enumerate()
        .flat_map(|(ci, _)| seeds.iter().map(move |&s| (ci, s)))
        .filter(|&(ci, s)| ledger.find(&candidates[ci].id, s, &schedule).is_none())
        .collect();

    if workers <= 1 || jobs.len() <= 1 {
        for &(ci, seed) in &jobs {
            let c = &candidates[ci];
            log::info!("evaluating {} seed {seed}", c.id);
            let outcome = oracle.evaluate(c, seed)?;
            ledger.append(record_for(c, seed, &schedule, outcome)?)?;
        }
    } else {
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel();
        let mut first_error = None;
        std::thread::scope(|scope| {
            for _ in 0..workers.min(jobs.len()) {
                let tx = tx.clone();
                let (next, jobs) = (&next, &jobs);
                scope.spawn(move || loop {
                    let j = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(ci, seed)) = jobs.get(j) else {
                        break;
                    };
                    let c = &candidates[ci];
                    let r = oracle.evaluate(c, seed);
                    if tx.send((j, r)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let mut pending = BTreeMap::new();
            let mut flushed = 0;
            for (j, r) in rx {
                pending.insert(j, r);
                while let Some(r) = pending.remove(&flushed) {
                    let (ci, seed) = jobs[flushed];
                    let c = &candidates[ci];
                    let appended =
                        r.and_then(|o| ledger.append(record_for(c, seed, &schedule, o)?));
                    if let Err(e) = appended {
                        first_error.get_or_insert(e);
                    }
                    flushed += 1;
                }
            }
        });
        if let Some(e) = first_error {
            return Err(e);
        }
    }

    candidates
        .iter()
        .map(|c| {
            let records: Vec<&LedgerRecord> = seeds
                .iter()
                .map(|&s| {
                    ledger
                        .find(&c.id, s, &schedule)
                        .expect("every job was recorded")
                })
                .collect();
            let accs: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
            Ok(CandidateResult {
                id: c.id.clone(),
                stage: c.stage.clone(),
                knob: c.knob.clone(),
                spec: c.spec.clone(),
                params: records[0].params,
                memory: records[0].memory,
                accuracy: median(&accs),
                seeds: seeds.to_vec(),
                seed_accuracies: accs,
                schedule_id: schedule.clone(),
                diverged: records.iter().any(|r| r.diverged),
                wall_seconds: records.iter().map(|r| r.wall).sum(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub results: Vec<CandidateResult>,
    /// `(stage, carried candidate id)` in stage order.
    pub path: Vec<(String, String)>,
    /// Configuration after the last stage.
    pub final_spec: NetSpec,
}

/// Runs the plan: greedy stage by stage, or the full lattice when the plan is
/// exhaustive.
pub fn run_plan(
    plan: &SearchPlan,
    oracle: &dyn AccuracyOracle,
    ledger: &mut Ledger,
    workers: usize,
) -> Result<SearchOutcome> {
    if plan.exhaustive || plan.stages.is_empty() {
        let candidates = enumerate_candidates(plan)?;
        let results = run_sweep(&candidates, oracle, &plan.seeds, ledger, workers)?;
        return Ok(SearchOutcome {
            results,
            path: Vec::new(),
            final_spec: plan.base.clone(),
        });
    }
    let mut current = plan.base.clone();
    let mut results = Vec::new();
    let mut path = Vec::new();
    for stage in &plan.stages {
        let candidates = enumerate_stage(&current, stage);
        let stage_results = run_sweep(&candidates, oracle, &plan.seeds, ledger, workers)?;
        let carried = match stage.carry {
            Carry::Pinned(knob) => {
                let spec = knob.apply(&current).map_err(|r| {
                    Error::InvalidArgument(format!("pinned carry {knob} is incompatible: {r}"))
                })?;
                (knob.to_string(), spec)
            }
            Carry::Auto => {
                let Some(best) = auto_carry(&stage_results, plan.threshold) else {
                    return Err(Error::InvalidArgument(format!(
                        "stage {} produced no compatible candidates",
                        stage.knob_name
                    )));
                };
                (best.id.clone(), best.spec.clone())
            }
        };
        log::info!("stage {} carries {}", stage.knob_name, carried.0);
        path.push((stage.knob_name.clone(), carried.0));
        current = carried.1;
        results.extend(stage_results);
    }
    let extras: Vec<Candidate> = plan
        .extras
        .iter()
        .filter_map(|e| enumerate_extra(&current, e))
        .collect();
    results.extend(run_sweep(&extras, oracle, &plan.seeds, ledger, workers)?);
    current.name = String::new();
    Ok(SearchOutcome {
        results,
        path,
        final_spec: current,
    })
}
