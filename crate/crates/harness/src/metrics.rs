//! Per-run metrics and their CSV / JSON emission.

use std::fs;
use std::path::Path;
use std::time::Duration;

use acq_core::acquisition::{AcquisitionState, Equivalence};
use acq_core::model::Constraint;
use acq_core::oracle::{Phase, QueryLogEntry};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunConvergence {
    Full,
    Premature,
    Timeout,
}

/// Times are in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub queries: usize,
    pub t_gen_mean: f64,
    pub t_mean: f64,
    pub t_max: f64,
    pub t_total: f64,
    pub convergence: RunConvergence,
    pub learned: usize,
    pub top_level: usize,
    pub find_scope: usize,
    pub find_c: usize,
    pub equivalence: Option<Equivalence>,
    pub failed: bool,
    pub diagnostics: String,
}

impl RunMetrics {
    pub fn from_state(
        seed: u64,
        st: &AcquisitionState,
        total: Duration,
        convergence: RunConvergence,
    ) -> Self {
        let log = &st.log;
        let gens: Vec<f64> = log
            .iter()
            .filter(|q| q.phase == Phase::TopLevel)
            .map(|q| q.gen_ms / 1e3)
            .collect();
        let waits: Vec<f64> = log.iter().map(|q| q.wait_ms / 1e3).collect();
        RunMetrics {
            seed,
            queries: log.len(),
            t_gen_mean: mean(&gens),
            t_mean: mean(&waits),
            t_max: waits.iter().copied().fold(0.0, f64::max),
            t_total: total.as_secs_f64(),
            convergence,
            learned: st.learned.len(),
            top_level: st.phase_count(Phase::TopLevel),
            find_scope: st.phase_count(Phase::FindScope),
            find_c: st.phase_count(Phase::FindC),
            equivalence: None,
            failed: false,
            diagnostics: String::new(),
        }
    }

    /// A run counts as a success when it converged fully and its learned
    /// network was shown equivalent to the target.
    pub fn succeeded(&self) -> bool {
        !self.failed
            && self.convergence == RunConvergence::Full
            && self.equivalence == Some(Equivalence::Equivalent)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Mean over runs; `convergence_rate` is the fraction of FULL runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub queries: f64,
    pub t_gen_mean: f64,
    pub t_mean: f64,
    pub t_max: f64,
    pub t_total: f64,
    pub learned: f64,
    pub convergence_rate: f64,
    pub failed: usize,
}

pub fn aggregate(runs: &[RunMetrics]) -> Aggregate {
    let col = |f: &dyn Fn(&RunMetrics) -> f64| mean(&runs.iter().map(f).collect::<Vec<_>>());
    Aggregate {
        runs: runs.len(),
        queries: col(&|r| r.queries as f64),
        t_gen_mean: col(&|r| r.t_gen_mean),
        t_mean: col(&|r| r.t_mean),
        t_max: col(&|r| r.t_max),
        t_total: col(&|r| r.t_total),
        learned: col(&|r| r.learned as f64),
        convergence_rate: col(&|r| (r.convergence == RunConvergence::Full) as u8 as f64),
        failed: runs.iter().filter(|r| r.failed).count(),
    }
}

/// Everything kept about one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub metrics: RunMetrics,
    pub learned: Vec<Constraint>,
    pub log: Vec<QueryLogEntry>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    row: &'a str,
    seed: String,
    queries: f64,
    t_gen_mean: f64,
    t_mean: f64,
    t_max: f64,
    t_total: f64,
    learned: f64,
    convergence: String,
    equivalence: String,
    top_level: String,
    find_scope: String,
    find_c: String,
    failed: String,
}

/// Header of the metrics CSV, in column order.
pub const CSV_HEADER: [&str; 14] = [
    "row",
    "seed",
    "queries",
    "t_gen_mean",
    "t_mean",
    "t_max",
    "t_total",
    "learned",
    "convergence",
    "equivalence",
    "top_level",
    "find_scope",
    "find_c",
    "failed",
];

pub fn write_csv(path: &Path, runs: &[RunMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in runs {
        w.serialize(CsvRow {
            row: "run",
            seed: r.seed.to_string(),
            queries: r.queries as f64,
            t_gen_mean: r.t_gen_mean,
            t_mean: r.t_mean,
            t_max: r.t_max,
            t_total: r.t_total,
            learned: r.learned as f64,
            convergence: format!("{:?}", r.convergence).to_uppercase(),
            equivalence: r
                .equivalence
                .map(|e| format!("{e:?}").to_uppercase())
                .unwrap_or_default(),
            top_level: r.top_level.to_string(),
            find_scope: r.find_scope.to_string(),
            find_c: r.find_c.to_string(),
            failed: r.failed.to_string(),
        })?;
    }
    let a = aggregate(runs);
    w.serialize(CsvRow {
        row: "mean",
        seed: String::new(),
        queries: a.queries,
        t_gen_mean: a.t_gen_mean,
        t_mean: a.t_mean,
        t_max: a.t_max,
        t_total: a.t_total,
        learned: a.learned,
        convergence: format!("{:.3}", a.convergence_rate),
        equivalence: String::new(),
        top_level: String::new(),
        find_scope: String::new(),
        find_c: String::new(),
        failed: a.failed.to_string(),
    })?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub aggregate: Aggregate,
    pub runs: Vec<RunRecord>,
}

pub fn write_json(path: &Path, config: &ExperimentConfig, runs: &[RunRecord]) -> Result<()> {
    let metrics: Vec<RunMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    let report = Report {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        aggregate: aggregate(&metrics),
        runs: runs.to_vec(),
    };
    fs::write(path, serde_json::to_vec_pretty(&report)?)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn read_json(path: &Path) -> Result<Report> {
    let r: Report = serde_json::from_slice(&fs::read(path)?)?;
    if r.schema_version != SCHEMA_VERSION {
        anyhow::bail!("unsupported report schema {}", r.schema_version);
    }
    Ok(r)
}
