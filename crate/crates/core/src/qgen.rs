//! Query generation: projection-based generation, the shrinking-subset
//! baseline, plain full-vocabulary generation, and the violation objectives.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bias::Bias;
use crate::error::{AcqError, SolverError};
use crate::model::{Assignment, Constraint, ConstraintNetwork, RelationKind, Var, Vocabulary};
use crate::solver::{self, LinearViolationObjective, Limits, SolveRequest, SolveStatus};

/// Search effort allowance: wall-clock milliseconds, or solver nodes for
/// runs that must replay identically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkBudget {
    Millis(u64),
    Nodes(u64),
}

impl WorkBudget {
    pub fn limits(self) -> Limits {
        match self {
            WorkBudget::Millis(ms) => Limits::time(Duration::from_millis(ms)),
            WorkBudget::Nodes(n) => Limits::nodes(n),
        }
    }

    fn remaining(self, elapsed: Duration, nodes: u64) -> Option<WorkBudget> {
        match self {
            WorkBudget::Millis(ms) => {
                let used = elapsed.as_millis() as u64;
                (used < ms).then(|| WorkBudget::Millis(ms - used))
            }
            WorkBudget::Nodes(n) => (nodes < n).then(|| WorkBudget::Nodes(n - nodes)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectiveKind {
    MaxViolation,
    Guided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PqGenConfig {
    pub size_limit: usize,
    pub budget: WorkBudget,
    pub objective: ObjectiveKind,
    /// Node budget of the first attempt at the violation search, before
    /// falling back to one implication check per candidate.
    #[serde(default = "default_probe_nodes")]
    pub probe_nodes: u64,
}

fn default_probe_nodes() -> u64 {
    20_000
}

impl Default for PqGenConfig {
    fn default() -> Self {
        PqGenConfig {
            size_limit: 5000,
            budget: WorkBudget::Millis(1000),
            objective: ObjectiveKind::MaxViolation,
            probe_nodes: default_probe_nodes(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TqGenConfig {
    pub alpha: f64,
    pub tau_ms: u64,
    pub t_global_ms: u64,
    pub adjust: bool,
    pub growth: f64,
}

impl Default for TqGenConfig {
    fn default() -> Self {
        TqGenConfig {
            alpha: 0.8,
            tau_ms: 200,
            t_global_ms: 2000,
            adjust: true,
            growth: 1.5,
        }
    }
}

impl TqGenConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SolverError::Config(format!("alpha {} not in (0,1)", self.alpha)));
        }
        if self.tau_ms == 0 || self.tau_ms > self.t_global_ms {
            return Err(SolverError::Config("need 0 < tau <= t_global".into()));
        }
        Ok(())
    }
}

/// Full-vocabulary generation with a per-query cap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectConfig {
    pub cap: WorkBudget,
}

impl Default for DirectConfig {
    fn default() -> Self {
        DirectConfig {
            cap: WorkBudget::Millis(3_600_000),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationCounts {
    pub learned: u64,
    pub removed: u64,
}

/// Per-relation counts of learned and removed candidates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationStats {
    counts: BTreeMap<RelationKind, RelationCounts>,
}

impl RelationStats {
    pub fn new() -> Self {
        RelationStats::default()
    }

    pub fn counts(&self, kind: RelationKind) -> RelationCounts {
        self.counts.get(&kind).copied().unwrap_or_default()
    }

    /// `P[c ∈ C_T]` for the relation kind; zero before any removal.
    pub fn probability(&self, kind: RelationKind) -> f64 {
        let c = self.counts(kind);
        if c.removed == 0 {
            0.0
        } else {
            c.learned as f64 / c.removed as f64
        }
    }

    /// Records one removal step. Every learned constraint must be among the
    /// removed ones.
    pub fn update(&mut self, removed: &[Constraint], learned: &[Constraint]) -> Result<(), AcqError> {
        for l in learned {
            if !removed.contains(l) {
                return Err(AcqError::Stats(format!("{l} learned but not removed")));
            }
        }
        for c in removed {
            self.counts.entry(c.relation().kind()).or_default().removed += 1;
        }
        for c in learned {
            self.counts.entry(c.relation().kind()).or_default().learned += 1;
        }
        Ok(())
    }
}

/// The oracle model: predicts membership in the target when
/// `1 / P <= ln |Y|`.
pub fn predicts_member(stats: &RelationStats, kind: RelationKind, y_size: usize) -> bool {
    let p = stats.probability(kind);
    p > 0.0 && 1.0 / p <= (y_size.max(1) as f64).ln()
}

pub fn objective_weights<'a>(
    candidates: impl IntoIterator<Item = &'a Constraint>,
    kind: ObjectiveKind,
    stats: &RelationStats,
    gamma_size: usize,
    y_size: usize,
) -> LinearViolationObjective {
    let mut member = BTreeMap::new();
    let terms = candidates
        .into_iter()
        .map(|c| {
            let w = match kind {
                ObjectiveKind::MaxViolation => 1,
                ObjectiveKind::Guided => {
                    let k = c.relation().kind();
                    let m = *member
                        .entry(k)
                        .or_insert_with(|| predicts_member(stats, k, y_size));
                    if m {
                        1 - gamma_size as i64
                    } else {
                        1
                    }
                }
            };
            (c.clone(), w)
        })
        .collect();
    LinearViolationObjective::new(terms)
}

/// Everything a generator reads from the acquisition state.
pub struct GenContext<'a> {
    pub vocab: &'a Vocabulary,
    pub learned: &'a ConstraintNetwork,
    /// Proven-implied candidates kept as hard constraints.
    pub residual: &'a ConstraintNetwork,
    pub bias: &'a Bias,
    pub stats: &'a RelationStats,
    pub gamma_size: usize,
    pub seed: u64,
}

impl GenContext<'_> {
    fn hard_within(&self, y: &BTreeSet<Var>) -> Vec<&Constraint> {
        self.learned
            .iter()
            .chain(self.residual.iter())
            .filter(|c| c.scope_within(|v| y.contains(&v)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GenOutcome {
    Query(Assignment),
    /// No irredundant query exists.
    Converged,
    /// Gave up without proof.
    Premature,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub outcome: GenOutcome,
    pub elapsed: Duration,
    pub nodes: u64,
    /// Candidates proven implied by the learned network along the way.
    pub implied: Vec<Constraint>,
}

/// Projection-based generation.
pub fn pq_gen(ctx: &GenContext<'_>, cfg: &PqGenConfig) -> Result<Generated, SolverError> {
    let start = Instant::now();
    let mut nodes = 0;
    let done = |outcome, nodes, implied| Generated {
        outcome,
        elapsed: start.elapsed(),
        nodes,
        implied,
    };
    if ctx.bias.is_empty() {
        return Ok(done(GenOutcome::Converged, 0, Vec::new()));
    }
    let y = ctx.bias.vars();
    let hard = ctx.hard_within(&y);

    if ctx.bias.len() > cfg.size_limit {
        let out = solver::solve(
            &SolveRequest::new(ctx.vocab, y.iter().copied())
                .hard(hard.iter().copied())
                .limits(cfg.budget.limits())
                .seed(ctx.seed),
        )?;
        nodes += out.nodes;
        if let Some(e) = out.assignment {
            if ctx.bias.kappa_len(&e) > 0 {
                return Ok(done(GenOutcome::Query(e), nodes, Vec::new()));
            }
        }
    }

    // One search over the whole disjunction is fast when a violation exists,
    // but refuting it needs every implied candidate decided at once. After
    // the probe budget the candidates are checked one at a time instead.
    let watch: Vec<&Constraint> = ctx.bias.iter().collect();
    let out = solver::solve(
        &SolveRequest::new(ctx.vocab, y.iter().copied())
            .hard(hard.iter().copied())
            .violate_one_of(watch.iter().copied())
            .limits(Limits::nodes(cfg.probe_nodes))
            .seed(ctx.seed.wrapping_add(1)),
    )?;
    nodes += out.nodes;
    let mut implied = Vec::new();
    let e = match (out.status, out.assignment) {
        (SolveStatus::Unsat, _) => return Ok(done(GenOutcome::Converged, nodes, implied)),
        (_, Some(e)) => e,
        (_, None) => {
            let net: ConstraintNetwork = hard.iter().map(|c| (*c).clone()).collect();
            let mut witness = None;
            for c in &watch {
                match solver::find_violation(ctx.vocab, &net, c, Limits::none())? {
                    Some(Some(e)) => {
                        witness = Some(e);
                        break;
                    }
                    _ => implied.push((*c).clone()),
                }
            }
            let Some(mut e) = witness else {
                return Ok(done(GenOutcome::Converged, nodes, implied));
            };
            // Variables outside the network are unconstrained.
            for &x in &y {
                if e.get(x).is_none() {
                    e.set(x, ctx.vocab.domain(x).values()[0]);
                }
            }
            e
        }
    };

    if let Some(rest) = cfg.budget.remaining(start.elapsed(), nodes) {
        let obj = objective_weights(
            watch.iter().copied(),
            cfg.objective,
            ctx.stats,
            ctx.gamma_size,
            y.len(),
        );
        let out = solver::solve_optimize(
            &SolveRequest::new(ctx.vocab, y.iter().copied())
                .hard(hard.iter().copied())
                .violate_one_of(watch.iter().copied())
                .objective(&obj)
                .limits(rest.limits())
                .seed(ctx.seed.wrapping_add(2)),
        )?;
        nodes += out.nodes;
        if let Some(e2) = out.assignment {
            return Ok(done(GenOutcome::Query(e2), nodes, implied));
        }
    }
    Ok(done(GenOutcome::Query(e), nodes, implied))
}

/// Shrinking-subset generation over `y`.
pub fn tq_gen(
    ctx: &GenContext<'_>,
    y: &BTreeSet<Var>,
    cfg: &TqGenConfig,
) -> Result<Generated, SolverError> {
    cfg.validate()?;
    let start = Instant::now();
    let global = Duration::from_millis(cfg.t_global_ms);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let all: Vec<Var> = y.iter().copied().collect();
    let min_size = ctx
        .bias
        .iter()
        .map(|c| c.arity())
        .min()
        .unwrap_or(2)
        .min(all.len().max(1));
    let mut size = all.len();
    let mut tau = cfg.tau_ms as f64;
    let mut nodes = 0;
    loop {
        let elapsed = start.elapsed();
        if elapsed >= global {
            return Ok(Generated {
                outcome: GenOutcome::Premature,
                elapsed,
                nodes,
                implied: Vec::new(),
            });
        }
        let full = size == all.len();
        let sub: BTreeSet<Var> = if full {
            y.clone()
        } else {
            all.choose_multiple(&mut rng, size).copied().collect()
        };
        let watch: Vec<Constraint> = ctx.bias.restrict(&sub);
        let status = if watch.is_empty() {
            SolveStatus::Unsat
        } else {
            let budget = Duration::from_millis(tau as u64).min(global - elapsed);
            let out = solver::solve(
                &SolveRequest::new(ctx.vocab, sub.iter().copied())
                    .hard(ctx.hard_within(&sub))
                    .violate_one_of(watch.iter())
                    .limits(Limits::time(budget))
                    .seed(ctx.seed.wrapping_add(nodes)),
            )?;
            nodes += out.nodes;
            if let Some(e) = out.assignment {
                return Ok(Generated {
                    outcome: GenOutcome::Query(e),
                    elapsed: start.elapsed(),
                    nodes,
                    implied: Vec::new(),
                });
            }
            out.status
        };
        if status == SolveStatus::Unsat && full && ctx.bias.restrict(y).len() == ctx.bias.len() {
            return Ok(Generated {
                outcome: GenOutcome::Converged,
                elapsed: start.elapsed(),
                nodes,
                implied: Vec::new(),
            });
        }
        if status != SolveStatus::Unsat && cfg.adjust {
            tau *= cfg.growth;
        }
        size = ((size as f64 * cfg.alpha).ceil() as usize).max(min_size);
    }
}

/// Generation over all of `y` without projection, maximizing violations
/// within the cap.
pub fn direct_gen(
    ctx: &GenContext<'_>,
    y: &BTreeSet<Var>,
    cfg: &DirectConfig,
) -> Result<Generated, SolverError> {
    let start = Instant::now();
    let watch: Vec<Constraint> = ctx.bias.restrict(y);
    let obj = objective_weights(
        watch.iter(),
        ObjectiveKind::MaxViolation,
        ctx.stats,
        ctx.gamma_size,
        y.len(),
    );
    let out = solver::solve_optimize(
        &SolveRequest::new(ctx.vocab, y.iter().copied())
            .hard(ctx.hard_within(y))
            .violate_one_of(watch.iter())
            .objective(&obj)
            .limits(cfg.cap.limits())
            .seed(ctx.seed),
    )?;
    let outcome = match (out.status, out.assignment) {
        (_, Some(e)) => GenOutcome::Query(e),
        (SolveStatus::Unsat, None) if watch.len() == ctx.bias.len() => GenOutcome::Converged,
        _ => GenOutcome::Premature,
    };
    Ok(Generated {
        outcome,
        elapsed: start.elapsed(),
        nodes: out.nodes,
        implied: Vec::new(),
    })
}
