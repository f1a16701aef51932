//! Running the experiment matrix with simulated oracles.

use std::time::{Duration, Instant};

use acq_core::acquisition::{verify_equivalence, Acquisition, Convergence, Equivalence};
use acq_core::benchmarks::{self, BenchmarkInstance};
use acq_core::error::{AcqError, OracleError};
use acq_core::model::{Assignment, ConstraintNetwork};
use acq_core::oracle::{Answer, Oracle, Phase, SimulatedOracle};
use acq_core::solver::Limits;
use anyhow::Result;

use crate::config::{Algorithm, ExperimentConfig};
use crate::metrics::{RunConvergence, RunMetrics, RunRecord};

pub fn instance(cfg: &ExperimentConfig) -> Result<BenchmarkInstance> {
    Ok(benchmarks::by_name(&cfg.benchmark, cfg.instance_seed)?)
}

pub fn build_acquisition(inst: &BenchmarkInstance, cfg: &ExperimentConfig, seed: u64) -> Acquisition {
    let learner = cfg.learner(seed);
    match cfg.algorithm {
        Algorithm::Mquacq2 => Acquisition::direct(
            inst.vocabulary.clone(),
            inst.language.clone(),
            learner,
            ConstraintNetwork::new(),
        ),
        Algorithm::GrowacqMquacq2 => Acquisition::grow(
            inst.vocabulary.clone(),
            inst.language.clone(),
            learner,
            ConstraintNetwork::new(),
            cfg.variable_order.arrange(&inst.vocabulary, seed),
        ),
    }
}

/// Refuses to answer once the run cap has passed.
struct Capped<O> {
    inner: O,
    deadline: Option<Instant>,
    expired: bool,
}

impl<O: Oracle> Oracle for Capped<O> {
    fn ask(&mut self, e: &Assignment, phase: Phase) -> Result<Answer, OracleError> {
        if self.deadline.is_some_and(|d| Instant::now() >= d) {
            self.expired = true;
            return Err(OracleError::SessionClosed);
        }
        self.inner.ask(e, phase)
    }
}

/// One end-to-end run with a simulated oracle, followed by verification.
pub fn run_seed(inst: &BenchmarkInstance, cfg: &ExperimentConfig, seed: u64) -> RunRecord {
    let mut acq = build_acquisition(inst, cfg, seed);
    let mut oracle = Capped {
        inner: SimulatedOracle::new(&inst.target),
        deadline: cfg.run_cap_ms.map(|ms| Instant::now() + Duration::from_millis(ms)),
        expired: false,
    };
    let start = Instant::now();
    let outcome = acq.run(&mut oracle);
    let total = start.elapsed();
    let (convergence, error) = match outcome {
        Ok(Convergence::Premature) => (RunConvergence::Premature, None),
        Ok(_) => (RunConvergence::Full, None),
        Err(AcqError::Oracle(_)) if oracle.expired => (RunConvergence::Timeout, None),
        Err(e) => (RunConvergence::Premature, Some(e.to_string())),
    };
    let mut m = RunMetrics::from_state(seed, &acq.state, total, convergence);
    if let Some(e) = error {
        m.failed = true;
        m.diagnostics = e;
    } else if convergence == RunConvergence::Full {
        let limits = Limits::time(Duration::from_millis(cfg.verify_limit_ms));
        match verify_equivalence(&inst.vocabulary, &acq.state.learned, &inst.target, limits) {
            Ok(eq) => {
                m.equivalence = Some(eq);
                if eq == Equivalence::Different {
                    m.failed = true;
                    m.diagnostics = "learned network differs from the target".into();
                }
            }
            Err(e) => {
                m.failed = true;
                m.diagnostics = format!("verification error: {e}");
            }
        }
    }
    RunRecord {
        metrics: m,
        learned: acq.state.learned.iter().cloned().collect(),
        log: acq.state.log,
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let inst = instance(cfg)?;
    Ok(cfg.seeds.iter().map(|&s| run_seed(&inst, cfg, s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GeneratorKind;
    use acq_core::qgen::WorkBudget;

    #[test]
    fn tiny_instance_converges() {
        let inst = benchmarks::random_comparisons(5, 3, 4, 9).unwrap();
        let mut cfg = ExperimentConfig {
            seeds: vec![1],
            ..Default::default()
        };
        cfg.pqgen.budget = WorkBudget::Nodes(2000);
        for alg in [Algorithm::Mquacq2, Algorithm::GrowacqMquacq2] {
            cfg.algorithm = alg;
            let r = run_seed(&inst, &cfg, 1);
            assert!(r.metrics.succeeded(), "{:?}", r.metrics);
        }
    }

    #[test]
    fn run_cap_reports_timeout() {
        let inst = benchmarks::murder().unwrap();
        let cfg = ExperimentConfig {
            run_cap_ms: Some(0),
            generator: GeneratorKind::Pqgen,
            ..Default::default()
        };
        let r = run_seed(&inst, &cfg, 0);
        assert_eq!(r.metrics.convergence, RunConvergence::Timeout);
        assert!(!r.metrics.succeeded());
    }
}
