//! Experiment definitions.

use std::path::PathBuf;

use acq_core::acquisition::{Generator, LearnerConfig, VariableOrder};
use acq_core::qgen::{DirectConfig, ObjectiveKind, PqGenConfig, TqGenConfig};
use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Algorithm {
    Mquacq2,
    GrowacqMquacq2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GeneratorKind {
    Pqgen,
    Tqgen,
    Direct,
}

/// One row of the experiment matrix, run once per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub benchmark: String,
    /// Seed of the instance generator (random and job-shop instances).
    pub instance_seed: u64,
    pub algorithm: Algorithm,
    pub objective: ObjectiveKind,
    pub generator: GeneratorKind,
    pub pqgen: PqGenConfig,
    pub tqgen: TqGenConfig,
    pub direct: DirectConfig,
    pub structure: bool,
    pub variable_order: VariableOrder,
    pub seeds: Vec<u64>,
    /// Wall-clock cap on a whole run; exceeding it records TIMEOUT.
    pub run_cap_ms: Option<u64>,
    /// Per-constraint limit of the final equivalence check.
    pub verify_limit_ms: u64,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            benchmark: "murder".into(),
            instance_seed: 0,
            algorithm: Algorithm::GrowacqMquacq2,
            objective: ObjectiveKind::MaxViolation,
            generator: GeneratorKind::Pqgen,
            pqgen: PqGenConfig::default(),
            tqgen: TqGenConfig::default(),
            direct: DirectConfig::default(),
            structure: true,
            variable_order: VariableOrder::Given,
            seeds: (0..10).collect(),
            run_cap_ms: None,
            verify_limit_ms: 60_000,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("no seeds given");
        }
        if self.generator != GeneratorKind::Pqgen && self.objective != ObjectiveKind::MaxViolation {
            bail!("the guided objective needs the PQGEN generator");
        }
        if self.generator == GeneratorKind::Tqgen {
            self.tqgen.validate()?;
        }
        if self.pqgen.size_limit == 0 {
            bail!("pqgen size limit must be positive");
        }
        Ok(())
    }

    pub fn learner(&self, seed: u64) -> LearnerConfig {
        let generator = match self.generator {
            GeneratorKind::Pqgen => Generator::PqGen(PqGenConfig {
                objective: self.objective,
                ..self.pqgen
            }),
            GeneratorKind::Tqgen => Generator::TqGen(self.tqgen),
            GeneratorKind::Direct => Generator::Direct(self.direct),
        };
        LearnerConfig {
            generator,
            structure: self.structure,
            seed,
        }
    }

    /// Short label used in file names and reports.
    pub fn label(&self) -> String {
        let alg = match self.algorithm {
            Algorithm::Mquacq2 => "mquacq2",
            Algorithm::GrowacqMquacq2 => "growacq",
        };
        let obj = match self.objective {
            ObjectiveKind::MaxViolation => "maxviol",
            ObjectiveKind::Guided => "guided",
        };
        let gen = match self.generator {
            GeneratorKind::Pqgen => "pqgen",
            GeneratorKind::Tqgen => "tqgen",
            GeneratorKind::Direct => "direct",
        };
        format!("{}-{alg}-{gen}-{obj}", self.benchmark)
    }
}
