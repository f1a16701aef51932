//! Answer sources for membership queries.

use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::bias::Bias;
use crate::error::OracleError;
use crate::model::{Assignment, ConstraintNetwork};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn is_yes(self) -> bool {
        self == Answer::Yes
    }
}

/// Which part of the learner posed a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    TopLevel,
    FindScope,
    FindC,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::TopLevel, Phase::FindScope, Phase::FindC];
}

/// Learner state shown to the oracle before each query.
#[derive(Clone, Copy, Debug)]
pub struct Progress<'a> {
    pub learned: &'a ConstraintNetwork,
    pub bias_remaining: usize,
    pub queries: usize,
}

pub trait Oracle {
    /// Whether `e` is a partial solution of the hidden network.
    fn ask(&mut self, e: &Assignment, phase: Phase) -> Result<Answer, OracleError>;

    fn observe(&mut self, _progress: &Progress<'_>) {}
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    fn ask(&mut self, e: &Assignment, phase: Phase) -> Result<Answer, OracleError> {
        (**self).ask(e, phase)
    }

    fn observe(&mut self, progress: &Progress<'_>) {
        (**self).observe(progress)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryLogEntry {
    pub assignment: Assignment,
    pub answer: Answer,
    pub phase: Phase,
    /// Generation time in milliseconds; zero outside top-level queries.
    pub gen_ms: f64,
    /// Time since the previous answer was received, in milliseconds.
    pub wait_ms: f64,
}

/// Answers from a hidden target network: yes iff no target constraint
/// rejects the query.
#[derive(Clone, Debug)]
pub struct SimulatedOracle {
    target: Bias,
    asked: u64,
}

impl SimulatedOracle {
    pub fn new(target: &ConstraintNetwork) -> Self {
        SimulatedOracle {
            target: target.iter().cloned().collect(),
            asked: 0,
        }
    }

    pub fn asked(&self) -> u64 {
        self.asked
    }

    pub fn answer(&self, e: &Assignment) -> Answer {
        if self.target.kappa_len(e) == 0 {
            Answer::Yes
        } else {
            Answer::No
        }
    }
}

impl Oracle for SimulatedOracle {
    fn ask(&mut self, e: &Assignment, _phase: Phase) -> Result<Answer, OracleError> {
        self.asked += 1;
        Ok(self.answer(e))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub id: u64,
    pub assignment: Assignment,
    pub phase: Phase,
}

/// Oracle side of a rendezvous with an external answerer. Each `ask` sends
/// one query and blocks until its answer arrives.
pub struct ChannelOracle {
    queries: mpsc::SyncSender<PendingQuery>,
    answers: mpsc::Receiver<Answer>,
    next_id: u64,
}

/// Answerer side of [`channel`].
pub struct OracleEndpoint {
    pub queries: mpsc::Receiver<PendingQuery>,
    pub answers: mpsc::SyncSender<Answer>,
}

pub fn channel() -> (ChannelOracle, OracleEndpoint) {
    let (qtx, qrx) = mpsc::sync_channel(1);
    let (atx, arx) = mpsc::sync_channel(1);
    (
        ChannelOracle {
            queries: qtx,
            answers: arx,
            next_id: 0,
        },
        OracleEndpoint {
            queries: qrx,
            answers: atx,
        },
    )
}

impl Oracle for ChannelOracle {
    fn ask(&mut self, e: &Assignment, phase: Phase) -> Result<Answer, OracleError> {
        let q = PendingQuery {
            id: self.next_id,
            assignment: e.clone(),
            phase,
        };
        self.next_id += 1;
        self.queries.send(q).map_err(|_| OracleError::SessionClosed)?;
        self.answers.recv().map_err(|_| OracleError::SessionClosed)
    }
}
