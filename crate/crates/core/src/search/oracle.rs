//! Sources of candidate accuracy: real training runs or a fixed table.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use super::{Candidate, Knob};
use crate::error::{Error, Result};
use crate::mnist::DataSplits;
use crate::netspec::{presets, NetSpec};
use crate::rng;
use crate::trainer::{self, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub accuracy: f64,
    pub diverged: bool,
    pub wall_seconds: f64,
}

pub trait AccuracyOracle: Sync {
    /// Identifies the schedule so ledger entries from different schedules
    /// never mix.
    fn schedule_id(&self) -> String;

    fn evaluate(&self, candidate: &Candidate, seed: u64) -> Result<Outcome>;
}

/// Trains each candidate with the plan schedule. The training seed is derived
/// from the sweep seed and the architecture, so identical architectures
/// reached through different stages share one run.
pub struct TrainedOracle<'a> {
    data: &'a DataSplits,
    schedule: TrainConfig,
    cache: Mutex<HashMap<(String, u64), Outcome>>,
}

impl<'a> TrainedOracle<'a> {
    pub fn new(data: &'a DataSplits, schedule: TrainConfig) -> Self {
        Self {
            data,
            schedule,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn train_seed(spec: &NetSpec, seed: u64) -> u64 {
        rng::derive_seed(seed, &format!("candidate:{}", spec.fingerprint()))
    }
}

impl AccuracyOracle for TrainedOracle<'_> {
    fn schedule_id(&self) -> String {
        let s = &self.schedule;
        let mut id = format!("it{}-b{}-lr{}", s.iterations, s.batch_size, s.learning_rate);
        if let Some(k) = s.dropout_keep {
            id.push_str(&format!("-keep{k}"));
        }
        if s.activation != Default::default() {
            id.push_str(&format!("-{}", s.activation));
        }
        if (s.init_mean, s.init_stddev) != (0.0, 0.1) {
            id.push_str(&format!("-init{}:{}", s.init_mean, s.init_stddev));
        }
        id
    }

    fn evaluate(&self, candidate: &Candidate, seed: u64) -> Result<Outcome> {
        let key = (candidate.spec.fingerprint(), seed);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*hit);
        }
        let config = TrainConfig {
            seed: Self::train_seed(&candidate.spec, seed),
            ..self.schedule.clone()
        };
        let started = Instant::now();
        let outcome = match trainer::train(&candidate.spec, self.data, &config) {
            Ok(r) => Outcome {
                accuracy: r.final_test_accuracy,
                diverged: false,
                wall_seconds: r.wall_time_seconds,
            },
            Err(e @ (Error::Divergence { .. } | Error::NonFiniteGradient { .. })) => {
                log::warn!("candidate {} diverged: {e}", candidate.id);
                Outcome {
                    accuracy: 0.0,
                    diverged: true,
                    wall_seconds: started.elapsed().as_secs_f64(),
                }
            }
            Err(e) => return Err(e),
        };
        self.cache.lock().expect("cache lock").insert(key, outcome);
        Ok(outcome)
    }
}

/// Published single-run test accuracies, keyed by candidate id.
pub const PUBLISHED: &[(&str, f64)] = &[
    ("drop_conv2:false", 0.9929),
    ("drop_conv2:true", 0.9927),
    ("fc1_width:1024", 0.9927),
    ("fc1_width:512", 0.9925),
    ("fc1_width:256", 0.9921),
    ("fc1_width:128", 0.991),
    ("fc1_width:64", 0.989),
    ("fc1_width:32", 0.987),
    ("conv1:5x5x32", 0.986),
    ("conv1:5x5x16", 0.985),
    ("conv1:5x5x8", 0.982),
    ("conv1:5x5x4", 0.978),
    ("conv1:5x5x2", 0.9738),
    ("conv1:3x3x32", 0.98),
    ("conv1:3x3x16", 0.9779),
    ("conv1:3x3x8", 0.975),
    ("conv1:3x3x4", 0.966),
    ("conv1:3x3x2", 0.962),
    ("conv1:1x1x32", 0.9588),
    ("conv1:1x1x16", 0.959),
    ("conv1:1x1x8", 0.95),
    ("conv1:1x1x4", 0.9438),
    ("conv1:1x1x2", 0.9428),
    ("pool_window:2", 0.9738),
    ("pool_window:4", 0.9581),
    ("extra:3x3-final", 0.9366),
];

/// Table lookups instead of training: by candidate id first, then by
/// architecture for candidates reached under other ids.
pub struct PublishedOracle {
    by_id: HashMap<String, f64>,
    by_fingerprint: HashMap<String, f64>,
}

impl PublishedOracle {
    pub fn new() -> Self {
        let by_id: HashMap<String, f64> =
            PUBLISHED.iter().map(|&(k, v)| (k.to_string(), v)).collect();
        let mut by_fingerprint = HashMap::new();
        // The published runs follow one path: conv2 dropped, fc1 swept, then
        // conv1 swept at fc1 = 128, then pooling at 5x5x2.
        let mut context = presets::baseline();
        for carry in [
            Knob::DropConv2(true),
            Knob::Fc1Width(128),
            Knob::Conv1 {
                kernel: 5,
                depth: 2,
            },
            Knob::PoolWindow(4),
        ] {
            for &(id, acc) in PUBLISHED {
                let Some((stage, value)) = id.split_once(':') else {
                    continue;
                };
                if stage != carry.stage_name() {
                    continue;
                }
                let knob = Knob::parse(stage, value).expect("table ids are valid knobs");
                if let Ok(spec) = knob.apply(&context) {
                    by_fingerprint.entry(spec.fingerprint()).or_insert(acc);
                }
            }
            context = carry.apply(&context).expect("reference path is consistent");
        }
        let final_3x3 = Knob::Conv1 {
            kernel: 3,
            depth: 2,
        }
        .apply(&context)
        .expect("3x3 fits the final network");
        by_fingerprint
            .entry(final_3x3.fingerprint())
            .or_insert(by_id["extra:3x3-final"]);
        Self {
            by_id,
            by_fingerprint,
        }
    }

    pub fn lookup(&self, candidate: &Candidate) -> Option<f64> {
        self.by_id
            .get(&candidate.id)
            .or_else(|| self.by_fingerprint.get(&candidate.spec.fingerprint()))
            .copied()
    }
}

impl Default for PublishedOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl AccuracyOracle for PublishedOracle {
    fn schedule_id(&self) -> String {
        "published".into()
    }

    fn evaluate(&self, candidate: &Candidate, _seed: u64) -> Result<Outcome> {
        let accuracy = self.lookup(candidate).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no published accuracy for candidate {} ({})",
                candidate.id,
                candidate.spec.fingerprint()
            ))
        })?;
        Ok(Outcome {
            accuracy,
            diverged: false,
            wall_seconds: 0.0,
        })
    }
}
