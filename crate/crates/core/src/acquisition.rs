//! The learners: MQuAcq-2 over a fixed variable set, and the growing
//! meta-learner that feeds it one variable at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bias::{Bias, Language};
use crate::error::{AcqError, SolverError};
use crate::model::{Assignment, Constraint, ConstraintNetwork, Relation, Var, Vocabulary};
use crate::oracle::{Answer, Oracle, Phase, Progress, QueryLogEntry};
use crate::qgen::{
    self, DirectConfig, GenContext, GenOutcome, PqGenConfig, RelationStats, TqGenConfig,
};
use crate::solver::{self, Limits};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Convergence {
    Full,
    Premature,
    Running,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    PqGen(PqGenConfig),
    TqGen(TqGenConfig),
    Direct(DirectConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub generator: Generator,
    /// Ask about missing edges of dense learned cliques.
    pub structure: bool,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            generator: Generator::PqGen(PqGenConfig::default()),
            structure: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VariableOrder {
    Given,
    SeededRandom,
}

impl VariableOrder {
    pub fn arrange(self, vocab: &Vocabulary, seed: u64) -> Vec<Var> {
        let mut vs: Vec<Var> = vocab.vars().collect();
        if self == VariableOrder::SeededRandom {
            vs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15));
        }
        vs
    }
}

/// Whether the learner works on the whole vocabulary at once or grows it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Direct,
    Grow { order: Vec<Var>, next: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AcquisitionState {
    pub learned: ConstraintNetwork,
    /// Candidates proven implied when a slice converged; hard for later
    /// query generation, never reported as learned.
    pub residual: ConstraintNetwork,
    pub bias: Bias,
    pub stats: RelationStats,
    pub log: Vec<QueryLogEntry>,
    pub converged: Convergence,
    pub y: BTreeSet<Var>,
    pub generations: u64,
}

impl AcquisitionState {
    pub fn query_count(&self) -> usize {
        self.log.len()
    }

    pub fn phase_count(&self, phase: Phase) -> usize {
        self.log.iter().filter(|q| q.phase == phase).count()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Acquisition {
    pub vocab: Vocabulary,
    pub lang: Language,
    pub cfg: LearnerConfig,
    pub mode: Mode,
    pub c_in: ConstraintNetwork,
    pub state: AcquisitionState,
}

const QUASI_CLIQUE_DENSITY: f64 = 0.8;
const FINDC_TUPLE_LIMIT: u64 = 100_000;

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Acquisition {
    /// MQuAcq-2 over the whole vocabulary with the full bias.
    pub fn direct(
        vocab: Vocabulary,
        lang: Language,
        cfg: LearnerConfig,
        c_in: ConstraintNetwork,
    ) -> Self {
        let y: BTreeSet<Var> = vocab.vars().collect();
        let mut bias = Bias::full(&lang, &y);
        for c in c_in.iter() {
            bias.remove(c);
        }
        Acquisition {
            vocab,
            lang,
            cfg,
            mode: Mode::Direct,
            state: AcquisitionState {
                learned: c_in.clone(),
                residual: ConstraintNetwork::new(),
                bias,
                stats: RelationStats::new(),
                log: Vec::new(),
                converged: Convergence::Running,
                y,
                generations: 0,
            },
            c_in,
        }
    }

    /// Growing acquisition with MQuAcq-2 as the inner learner.
    pub fn grow(
        vocab: Vocabulary,
        lang: Language,
        cfg: LearnerConfig,
        c_in: ConstraintNetwork,
        order: Vec<Var>,
    ) -> Self {
        Acquisition {
            vocab,
            lang,
            cfg,
            mode: Mode::Grow { order, next: 0 },
            state: AcquisitionState {
                learned: ConstraintNetwork::new(),
                residual: ConstraintNetwork::new(),
                bias: Bias::new(),
                stats: RelationStats::new(),
                log: Vec::new(),
                converged: Convergence::Running,
                y: BTreeSet::new(),
                generations: 0,
            },
            c_in,
        }
    }

    /// Runs (or resumes) until convergence. On an oracle error the state
    /// stays consistent and the run can be resumed later.
    pub fn run(&mut self, oracle: &mut dyn Oracle) -> Result<Convergence, AcqError> {
        let mut session = Session {
            acq: self,
            oracle,
            last_return: Instant::now(),
        };
        session.run()
    }

    pub fn learned(&self) -> &ConstraintNetwork {
        &self.state.learned
    }

    /// Runs FindScope alone on `e`, which the oracle must reject, and
    /// returns the located scope. Positive answers shrink the bias as usual.
    pub fn locate_scope(
        &mut self,
        e: &Assignment,
        oracle: &mut dyn Oracle,
    ) -> Result<Vec<Var>, AcqError> {
        let mut session = Session {
            acq: self,
            oracle,
            last_return: Instant::now(),
        };
        let y: Vec<Var> = e.vars().collect();
        session.find_scope(e, &[], &y, false)
    }
}

struct Session<'a> {
    acq: &'a mut Acquisition,
    oracle: &'a mut dyn Oracle,
    last_return: Instant,
}

impl Session<'_> {
    fn run(&mut self) -> Result<Convergence, AcqError> {
        if self.acq.state.converged != Convergence::Running {
            return Ok(self.acq.state.converged);
        }
        loop {
            if self.mquacq2()? == Convergence::Premature {
                self.acq.state.converged = Convergence::Premature;
                return Ok(Convergence::Premature);
            }
            let x = match &mut self.acq.mode {
                Mode::Direct => None,
                Mode::Grow { order, next } => {
                    let x = order.get(*next).copied();
                    if x.is_some() {
                        *next += 1;
                    }
                    x
                }
            };
            let Some(x) = x else {
                self.acq.state.converged = Convergence::Full;
                return Ok(Convergence::Full);
            };
            let st = &mut self.acq.state;
            st.y.insert(x);
            let c_in_y = self.acq.c_in.restrict(&st.y);
            st.learned.extend(c_in_y.iter().cloned());
            let mut b = Bias::incremental(&self.acq.lang, &st.y, x);
            for c in st.learned.iter().chain(st.residual.iter()) {
                b.remove(c);
            }
            st.bias = b;
        }
    }

    fn next_seed(&mut self) -> u64 {
        self.acq.state.generations += 1;
        mix(self.acq.cfg.seed, self.acq.state.generations)
    }

    fn generate(&mut self) -> Result<(GenOutcome, Duration), AcqError> {
        let seed = self.next_seed();
        let st = &self.acq.state;
        let ctx = GenContext {
            vocab: &self.acq.vocab,
            learned: &st.learned,
            residual: &st.residual,
            bias: &st.bias,
            stats: &st.stats,
            gamma_size: self.acq.lang.scope_capacity(),
            seed,
        };
        let g = match &self.acq.cfg.generator {
            Generator::PqGen(cfg) => qgen::pq_gen(&ctx, cfg)?,
            Generator::TqGen(cfg) => qgen::tq_gen(&ctx, &st.y, cfg)?,
            Generator::Direct(cfg) => qgen::direct_gen(&ctx, &st.y, cfg)?,
        };
        if !g.implied.is_empty() {
            let st = &mut self.acq.state;
            for c in &g.implied {
                st.bias.remove(c);
            }
            st.stats.update(&g.implied, &[])?;
            st.residual.extend(g.implied);
        }
        Ok((g.outcome, g.elapsed))
    }

    /// MQuAcq-2 on the current variable set and bias slice.
    fn mquacq2(&mut self) -> Result<Convergence, AcqError> {
        loop {
            if self.acq.state.bias.is_empty() {
                return Ok(Convergence::Full);
            }
            let (outcome, elapsed) = self.generate()?;
            match outcome {
                GenOutcome::Converged => {
                    let st = &mut self.acq.state;
                    let rest: Vec<Constraint> = st.bias.iter().cloned().collect();
                    st.stats.update(&rest, &[])?;
                    st.residual.extend(rest);
                    st.bias = Bias::new();
                    return Ok(Convergence::Full);
                }
                GenOutcome::Premature => return Ok(Convergence::Premature),
                GenOutcome::Query(e) => self.process(e, elapsed)?,
            }
        }
    }

    fn process(&mut self, e: Assignment, gen: Duration) -> Result<(), AcqError> {
        let mut y: BTreeSet<Var> = e.vars().collect();
        let mut first = true;
        loop {
            let ey = e.project(&y);
            if self.acq.state.bias.kappa_len(&ey) == 0 {
                return Ok(());
            }
            let (phase, g) = if first {
                (Phase::TopLevel, gen)
            } else {
                (Phase::FindScope, Duration::ZERO)
            };
            first = false;
            if self.ask(&ey, phase, g)?.is_yes() {
                self.remove_violated(&ey)?;
                return Ok(());
            }
            let yv: Vec<Var> = y.iter().copied().collect();
            let scope = self.find_scope(&ey, &[], &yv, false)?;
            if scope.is_empty() {
                return Err(AcqError::Protocol(format!("no scope found in negative query {ey}")));
            }
            let learned = self.find_c(&ey, &scope)?;
            if self.acq.cfg.structure {
                self.exploit_structure(&learned)?;
            }
            // Drop variables until the remaining part of e satisfies the
            // learned network again.
            let drop = self.least_involved(&ey, &scope);
            y.remove(&drop);
            loop {
                let ey = e.project(&y);
                let st = &self.acq.state;
                let Some(bad) = st
                    .learned
                    .iter()
                    .chain(st.residual.iter())
                    .find(|c| c.rejects(&ey))
                    .cloned()
                else {
                    break;
                };
                let v = self.least_involved(&ey, bad.scope());
                y.remove(&v);
            }
        }
    }

    fn least_involved(&self, e: &Assignment, candidates: &[Var]) -> Var {
        let kappa = self.acq.state.bias.kappa(e);
        *candidates
            .iter()
            .min_by_key(|v| (kappa.iter().filter(|c| c.involves(**v)).count(), **v))
            .expect("non-empty scope")
    }

    fn ask(&mut self, e: &Assignment, phase: Phase, gen: Duration) -> Result<Answer, AcqError> {
        let st = &self.acq.state;
        if st.bias.kappa_len(e) == 0 {
            return Err(AcqError::Protocol(format!("query {e} rejects no candidate")));
        }
        if let Some(c) = st.learned.iter().chain(st.residual.iter()).find(|c| c.rejects(e)) {
            return Err(AcqError::Protocol(format!("query {e} violates learned {c}")));
        }
        self.oracle.observe(&Progress {
            learned: &st.learned,
            bias_remaining: st.bias.len(),
            queries: st.log.len(),
        });
        let answer = self.oracle.ask(e, phase)?;
        let now = Instant::now();
        let wait = now.duration_since(self.last_return);
        self.last_return = now;
        self.acq.state.log.push(QueryLogEntry {
            assignment: e.clone(),
            answer,
            phase,
            gen_ms: gen.as_secs_f64() * 1e3,
            wait_ms: wait.as_secs_f64() * 1e3,
        });
        Ok(answer)
    }

    fn remove_violated(&mut self, e: &Assignment) -> Result<Vec<Constraint>, AcqError> {
        let st = &mut self.acq.state;
        let removed = st.bias.remove_violated(e);
        st.stats.update(&removed, &[])?;
        Ok(removed)
    }

    /// Locates a minimal scope of a violated target constraint inside
    /// `e_{R ∪ Y}`, which must be a known negative.
    fn find_scope(
        &mut self,
        e: &Assignment,
        r: &[Var],
        y: &[Var],
        check: bool,
    ) -> Result<Vec<Var>, AcqError> {
        if check {
            let er = e.project(r);
            let kr = self.acq.state.bias.kappa_len(&er);
            if kr > 0 {
                let all: Vec<Var> = r.iter().chain(y).copied().collect();
                let kall = self.acq.state.bias.kappa_len(&e.project(&all));
                if kr == kall {
                    return Ok(Vec::new());
                }
                if self.ask(&er, Phase::FindScope, Duration::ZERO)?.is_yes() {
                    self.remove_violated(&er)?;
                } else {
                    return Ok(Vec::new());
                }
            }
        }
        if y.len() == 1 {
            return Ok(y.to_vec());
        }
        let half = y.len().div_ceil(2);
        let (y1, y2) = y.split_at(half);
        let r1: Vec<Var> = r.iter().chain(y1).copied().collect();
        let s1 = self.find_scope(e, &r1, y2, true)?;
        let r2: Vec<Var> = r.iter().chain(&s1).copied().collect();
        let s2 = self.find_scope(e, &r2, y1, !s1.is_empty())?;
        let mut s: Vec<Var> = s1.into_iter().chain(s2).collect();
        s.sort_unstable();
        Ok(s)
    }

    /// Identifies the target relation on `scope`, given that `e_scope` is
    /// negative. Returns everything learned along the way.
    fn find_c(&mut self, e: &Assignment, scope: &[Var]) -> Result<Vec<Constraint>, AcqError> {
        let es = e.project(scope);
        let mut delta: Vec<Constraint> = self
            .acq
            .state
            .bias
            .on_scope(scope)
            .into_iter()
            .filter(|c| c.rejects(&es))
            .collect();
        if delta.is_empty() {
            return Err(AcqError::Protocol(format!(
                "no candidate on scope {scope:?} explains the negative answer to {es}"
            )));
        }
        let mut learned = Vec::new();
        let mut round = 0u64;
        while delta.len() > 1 {
            round += 1;
            let Some(t) = self.splitting_tuple(scope, &delta, round) else {
                break;
            };
            if self.ask(&t, Phase::FindC, Duration::ZERO)?.is_yes() {
                let removed = self.remove_violated(&t)?;
                delta.retain(|c| !removed.contains(c));
                continue;
            }
            if scope.len() > 2 {
                let sub = self
                    .acq
                    .state
                    .bias
                    .kappa(&t)
                    .iter()
                    .any(|c| c.arity() < scope.len());
                if sub {
                    let s2 = self.find_scope(&t, &[], scope, false)?;
                    if !s2.is_empty() && s2.len() < scope.len() {
                        learned.extend(self.find_c(&t, &s2)?);
                        continue;
                    }
                }
            }
            delta.retain(|c| c.rejects(&t));
            if delta.is_empty() {
                return Err(AcqError::Protocol(format!(
                    "candidates on {scope:?} collapsed"
                )));
            }
        }
        // The survivors agree on every tuple allowed by the learned network,
        // so one representative stands for all of them.
        delta.sort();
        let rep = delta[0].clone();
        let st = &mut self.acq.state;
        for c in &delta {
            st.bias.remove(c);
        }
        st.stats.update(&delta, std::slice::from_ref(&rep))?;
        st.learned.insert(rep.clone());
        learned.push(rep);
        Ok(learned)
    }

    /// A tuple over `scope` allowed by the learned network that rejects a
    /// strict non-empty subset of `delta`; fewest rejected members first,
    /// then most rejected candidates overall.
    fn splitting_tuple(&self, scope: &[Var], delta: &[Constraint], round: u64) -> Option<Assignment> {
        let st = &self.acq.state;
        let set: BTreeSet<Var> = scope.iter().copied().collect();
        let hard: Vec<&Constraint> = st
            .learned
            .iter()
            .chain(st.residual.iter())
            .filter(|c| c.scope_within(|v| set.contains(&v)))
            .collect();
        let on_scope = st.bias.on_scope(scope);
        let salt = mix(self.acq.cfg.seed, st.generations ^ (round << 32));
        let mut best: Option<((usize, usize, u64), Assignment)> = None;
        let mut consider = |t: Assignment, tag: u64| {
            if hard.iter().any(|c| c.rejects(&t)) {
                return;
            }
            let kd = delta.iter().filter(|c| c.rejects(&t)).count();
            if kd == 0 || kd == delta.len() {
                return;
            }
            let kb = on_scope.iter().filter(|c| c.rejects(&t)).count();
            let key = (kd, usize::MAX - kb, mix(salt, tag));
            if best.as_ref().is_none_or(|(k, _)| key < *k) {
                best = Some((key, t));
            }
        };
        let domains: Vec<&[i32]> = scope.iter().map(|v| self.acq.vocab.domain(*v).values()).collect();
        let product: u64 = domains.iter().map(|d| d.len() as u64).product();
        if product <= FINDC_TUPLE_LIMIT {
            let mut idx = vec![0usize; scope.len()];
            for tag in 0..product {
                let t: Assignment = scope
                    .iter()
                    .zip(&idx)
                    .zip(&domains)
                    .map(|((v, &i), d)| (*v, d[i]))
                    .collect();
                consider(t, tag);
                for p in 0..idx.len() {
                    idx[p] += 1;
                    if idx[p] < domains[p].len() {
                        break;
                    }
                    idx[p] = 0;
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(salt);
            for tag in 0..FINDC_TUPLE_LIMIT {
                let t: Assignment = scope
                    .iter()
                    .zip(&domains)
                    .map(|(v, d)| (*v, *d.choose(&mut rng).expect("non-empty domain")))
                    .collect();
                consider(t, tag);
            }
        }
        best.map(|(_, t)| t)
    }

    /// Asks about the missing edges of a dense quasi-clique of learned
    /// symmetric constraints around each newly learned one.
    fn exploit_structure(&mut self, fresh: &[Constraint]) -> Result<(), AcqError> {
        let mut work: Vec<Constraint> = fresh.to_vec();
        while let Some(c) = work.pop() {
            let r = c.relation();
            if !matches!(r, Relation::Eq | Relation::Neq) || !self.acq.state.learned.contains(&c) {
                continue;
            }
            for (z, w) in self.missing_edges(r, c.scope()[0], c.scope()[1]) {
                let cand = Constraint::binary(r, z, w);
                if !self.acq.state.bias.contains(&cand) {
                    continue;
                }
                let Some(t) = self.violating_pair(&cand) else {
                    continue;
                };
                if self.ask(&t, Phase::FindC, Duration::ZERO)?.is_yes() {
                    self.remove_violated(&t)?;
                } else {
                    let scope = [z.min(w), z.max(w)];
                    work.extend(self.find_c(&t, &scope)?);
                }
            }
        }
        Ok(())
    }

    fn missing_edges(&self, r: Relation, u: Var, v: Var) -> Vec<(Var, Var)> {
        let mut adj: BTreeMap<Var, BTreeSet<Var>> = BTreeMap::new();
        for c in self.acq.state.learned.iter().filter(|c| c.relation() == r) {
            let (a, b) = (c.scope()[0], c.scope()[1]);
            adj.entry(a).or_default().insert(b);
            adj.entry(b).or_default().insert(a);
        }
        let linked = |a: Var, b: Var| adj.get(&a).is_some_and(|s| s.contains(&b));
        let mut k: Vec<Var> = vec![u, v];
        let mut edges = 1usize;
        loop {
            let mut best: Option<(usize, Var)> = None;
            let pool: BTreeSet<Var> = k
                .iter()
                .flat_map(|a| adj.get(a).into_iter().flatten().copied())
                .filter(|w| !k.contains(w))
                .collect();
            for w in pool {
                let n = k.iter().filter(|&&a| linked(a, w)).count();
                if best.is_none_or(|(bn, _)| n > bn) {
                    best = Some((n, w));
                }
            }
            let Some((n, w)) = best else { break };
            let size = k.len() + 1;
            let density = (edges + n) as f64 / (size * (size - 1) / 2) as f64;
            if density < QUASI_CLIQUE_DENSITY {
                break;
            }
            k.push(w);
            edges += n;
        }
        let mut out = Vec::new();
        for i in 0..k.len() {
            for j in i + 1..k.len() {
                if !linked(k[i], k[j]) {
                    out.push((k[i].min(k[j]), k[i].max(k[j])));
                }
            }
        }
        out
    }

    /// A two-variable tuple allowed by the learned network that violates
    /// `cand`, violating as few other candidates as possible.
    fn violating_pair(&self, cand: &Constraint) -> Option<Assignment> {
        let st = &self.acq.state;
        let (a, b) = (cand.scope()[0], cand.scope()[1]);
        let key = [a.min(b), a.max(b)];
        let on_scope = st.bias.on_scope(&key);
        let hard: Vec<&Constraint> = st
            .learned
            .iter()
            .chain(st.residual.iter())
            .filter(|c| c.scope_within(|v| v == a || v == b))
            .collect();
        let mut best: Option<(usize, Assignment)> = None;
        for &va in self.acq.vocab.domain(a).values() {
            for &vb in self.acq.vocab.domain(b).values() {
                let t: Assignment = [(a, va), (b, vb)].into_iter().collect();
                if !cand.rejects(&t) || hard.iter().any(|c| c.rejects(&t)) {
                    continue;
                }
                let k = on_scope.iter().filter(|c| c.rejects(&t)).count();
                if best.as_ref().is_none_or(|(bk, _)| k < *bk) {
                    best = Some((k, t));
                }
            }
        }
        best.map(|(_, t)| t)
    }
}

/// Outcome of an equivalence check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Equivalence {
    Equivalent,
    Different,
    Inconclusive,
}

/// `sol(learned) = sol(target)`, by mutual implication.
pub fn verify_equivalence(
    vocab: &Vocabulary,
    learned: &ConstraintNetwork,
    target: &ConstraintNetwork,
    limits: Limits,
) -> Result<Equivalence, SolverError> {
    let mut inconclusive = false;
    for (from, to) in [(learned, target), (target, learned)] {
        for c in to.iter() {
            match solver::is_implied_with(vocab, from, c, limits)? {
                Some(true) => {}
                Some(false) => return Ok(Equivalence::Different),
                None => inconclusive = true,
            }
        }
    }
    Ok(if inconclusive {
        Equivalence::Inconclusive
    } else {
        Equivalence::Equivalent
    })
}
