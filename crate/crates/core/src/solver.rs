//! Finite-domain backtracking solver used for query generation and
//! implication checks.
//!
//! Domains are bitsets (at most 64 values per variable). Hard binary
//! constraints are kept arc consistent during search; higher-arity hard
//! constraints are forward checked. Candidate constraints are grouped by
//! scope: a group watcher enforces that at least one watched candidate stays
//! violable, and the same groups carry the violation-objective tables used
//! for branch-and-bound.

use std::time::{Duration, Instant};

use arrayvec::ArrayVec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::model::{Assignment, Constraint, ConstraintNetwork, Relation, Var, Vocabulary};

/// Maximisation objective `Σ weight(c) · [e violates c]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearViolationObjective {
    pub terms: Vec<(Constraint, i64)>,
}

impl LinearViolationObjective {
    pub fn new(terms: Vec<(Constraint, i64)>) -> Self {
        LinearViolationObjective { terms }
    }

    pub fn value(&self, e: &Assignment) -> i64 {
        self.terms
            .iter()
            .filter(|(c, _)| c.rejects(e))
            .map(|(_, w)| *w)
            .sum()
    }
}

/// Resource limits for one solver call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Limits {
    pub deadline: Option<Duration>,
    pub node_limit: Option<u64>,
}

impl Limits {
    pub fn none() -> Self {
        Limits::default()
    }

    pub fn time(d: Duration) -> Self {
        Limits {
            deadline: Some(d),
            node_limit: None,
        }
    }

    pub fn nodes(n: u64) -> Self {
        Limits {
            deadline: None,
            node_limit: Some(n),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveRequest<'a> {
    pub vocab: &'a Vocabulary,
    pub variables: Vec<Var>,
    pub hard: Vec<&'a Constraint>,
    pub require_violation_of: Option<Vec<&'a Constraint>>,
    pub objective: Option<&'a LinearViolationObjective>,
    pub limits: Limits,
    pub seed: u64,
}

impl<'a> SolveRequest<'a> {
    pub fn new(vocab: &'a Vocabulary, variables: impl IntoIterator<Item = Var>) -> Self {
        SolveRequest {
            vocab,
            variables: variables.into_iter().collect(),
            hard: Vec::new(),
            require_violation_of: None,
            objective: None,
            limits: Limits::none(),
            seed: 0,
        }
    }

    pub fn hard(mut self, cs: impl IntoIterator<Item = &'a Constraint>) -> Self {
        self.hard.extend(cs);
        self
    }

    pub fn violate_one_of(mut self, cs: impl IntoIterator<Item = &'a Constraint>) -> Self {
        self.require_violation_of = Some(cs.into_iter().collect());
        self
    }

    pub fn objective(mut self, obj: &'a LinearViolationObjective) -> Self {
        self.objective = Some(obj);
        self
    }

    pub fn limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    /// A solution (optimal, when optimizing) was found.
    Sat,
    /// The search space was exhausted without a solution.
    Unsat,
    /// Limits reached with an incumbent.
    TimeoutBest,
    /// Limits reached without any solution.
    TimeoutNone,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub assignment: Option<Assignment>,
    pub objective_value: Option<i64>,
    pub nodes: u64,
    /// Objective values of successive incumbents.
    pub incumbents: Vec<i64>,
}

impl SolveOutcome {
    pub fn is_unsat(&self) -> bool {
        self.status == SolveStatus::Unsat
    }
}

/// Solves (or optimizes, when an objective is given) the request.
pub fn solve(req: &SolveRequest<'_>) -> Result<SolveOutcome, SolverError> {
    let mut engine = Engine::compile(req)?;
    let outcome = engine.run();
    if let Some(e) = &outcome.assignment {
        for c in &req.hard {
            if c.rejects(e) {
                return Err(SolverError::Unsound(c.to_string()));
            }
        }
        if let Some(watch) = &req.require_violation_of {
            if !watch.iter().any(|c| c.rejects(e)) {
                return Err(SolverError::Unsound("violation disjunction".into()));
            }
        }
    }
    Ok(outcome)
}

/// Optimizing entry point; identical to [`solve`] but requires an objective.
pub fn solve_optimize(req: &SolveRequest<'_>) -> Result<SolveOutcome, SolverError> {
    if req.objective.is_none() {
        return Err(SolverError::Config("optimization requires an objective".into()));
    }
    solve(req)
}

/// Whether every solution of `net` satisfies `c`.
///
/// Only the connected component of the constraint graph around `var(c)` is
/// searched; the remainder matters only if it is unsatisfiable on its own.
pub fn is_implied(
    vocab: &Vocabulary,
    net: &ConstraintNetwork,
    c: &Constraint,
) -> Result<bool, SolverError> {
    is_implied_with(vocab, net, c, Limits::none()).map(|r| r.expect("no limits"))
}

/// As [`is_implied`], but `None` when the limits cut the proof short.
pub fn is_implied_with(
    vocab: &Vocabulary,
    net: &ConstraintNetwork,
    c: &Constraint,
    limits: Limits,
) -> Result<Option<bool>, SolverError> {
    Ok(find_violation(vocab, net, c, limits)?.map(|w| w.is_none()))
}

/// A solution of `net` that violates `c`, over the variables of `net` and
/// `c`. `Some(None)` proves `c` implied; `None` means the limits ran out.
pub fn find_violation(
    vocab: &Vocabulary,
    net: &ConstraintNetwork,
    c: &Constraint,
    limits: Limits,
) -> Result<Option<Option<Assignment>>, SolverError> {
    if net.contains(c) {
        return Ok(Some(None));
    }
    let (component, rest) = split_component(net, c.scope());
    let scope_of = |cs: &[&Constraint], extra: &[Var]| -> Vec<Var> {
        let mut vs: Vec<Var> = cs
            .iter()
            .flat_map(|k| k.scope().iter().copied())
            .chain(extra.iter().copied())
            .collect();
        vs.sort_unstable();
        vs.dedup();
        vs
    };
    let req = SolveRequest::new(vocab, scope_of(&component, c.scope()))
        .hard(component.iter().copied())
        .violate_one_of([c])
        .limits(limits);
    let out = solve(&req)?;
    let mut e = match (out.status, out.assignment) {
        (SolveStatus::Unsat, _) => return Ok(Some(None)),
        (_, Some(e)) => e,
        (_, None) => return Ok(None),
    };
    if rest.is_empty() {
        return Ok(Some(Some(e)));
    }
    let rest_req = SolveRequest::new(vocab, scope_of(&rest, &[]))
        .hard(rest.iter().copied())
        .limits(limits);
    let out = solve(&rest_req)?;
    match (out.status, out.assignment) {
        (SolveStatus::Unsat, _) => Ok(Some(None)),
        (_, Some(r)) => {
            for (x, v) in r.iter() {
                e.set(x, v);
            }
            Ok(Some(Some(e)))
        }
        (_, None) => Ok(None),
    }
}

/// Greedy clique cover of the hard `!=` graph, restricted to variables with
/// identical domains. Cliques of fewer than three variables are dropped.
fn neq_cliques(
    req: &SolveRequest<'_>,
    vals: &[Vec<i32>],
    local: &dyn Fn(&Constraint) -> Result<ArrayVec<u32, 4>, SolverError>,
) -> Result<Vec<Vec<u32>>, SolverError> {
    let n = vals.len();
    let mut adj: Vec<std::collections::BTreeSet<u32>> = vec![Default::default(); n];
    let mut edges = Vec::new();
    for c in &req.hard {
        if c.relation() != Relation::Neq {
            continue;
        }
        let sc = local(c)?;
        let (x, y) = (sc[0].min(sc[1]), sc[0].max(sc[1]));
        if vals[x as usize] != vals[y as usize] || !adj[x as usize].insert(y) {
            continue;
        }
        adj[y as usize].insert(x);
        edges.push((x, y));
    }
    let mut covered: std::collections::BTreeSet<(u32, u32)> = Default::default();
    let mut out = Vec::new();
    for &(x, y) in &edges {
        if covered.contains(&(x, y)) {
            continue;
        }
        let mut k = vec![x, y];
        let mut pool: Vec<u32> = adj[x as usize].intersection(&adj[y as usize]).copied().collect();
        while !pool.is_empty() {
            let (i, _) = pool
                .iter()
                .enumerate()
                .max_by_key(|(_, &w)| (pool.iter().filter(|u| adj[w as usize].contains(u)).count(), std::cmp::Reverse(w)))
                .expect("non-empty pool");
            let w = pool.swap_remove(i);
            k.push(w);
            pool.retain(|u| adj[w as usize].contains(u));
        }
        for i in 0..k.len() {
            for j in i + 1..k.len() {
                covered.insert((k[i].min(k[j]), k[i].max(k[j])));
            }
        }
        if k.len() >= 3 {
            k.sort_unstable();
            out.push(k);
        }
    }
    Ok(out)
}

fn split_component<'n>(
    net: &'n ConstraintNetwork,
    seed_vars: &[Var],
) -> (Vec<&'n Constraint>, Vec<&'n Constraint>) {
    let cs: Vec<&Constraint> = net.iter().collect();
    let mut reached: std::collections::BTreeSet<Var> = seed_vars.iter().copied().collect();
    let mut taken = vec![false; cs.len()];
    loop {
        let mut grew = false;
        for (i, k) in cs.iter().enumerate() {
            if !taken[i] && k.scope().iter().any(|v| reached.contains(v)) {
                taken[i] = true;
                grew = true;
                reached.extend(k.scope().iter().copied());
            }
        }
        if !grew {
            break;
        }
    }
    let mut comp = Vec::new();
    let mut rest = Vec::new();
    for (i, k) in cs.into_iter().enumerate() {
        if taken[i] {
            comp.push(k);
        } else {
            rest.push(k);
        }
    }
    (comp, rest)
}

/// Decisions in the first satisfaction run; later runs grow by half.
const RESTART_BASE: u64 = 512;

/// Larger products get an optimistic bound instead of an exact one.
const NARY_ENUM_LIMIT: u64 = 64;

#[inline]
fn bits(mut m: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let i = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(i)
        }
    })
}

struct HardBin {
    x: u32,
    y: u32,
    /// x value index -> mask of supported y values.
    fwd: Vec<u64>,
    /// y value index -> mask of supported x values.
    bwd: Vec<u64>,
}

struct HardNary {
    vars: ArrayVec<u32, 4>,
    rel: Relation,
    /// Satisfied exactly when `rel` is violated.
    negated: bool,
}

struct NaryMember {
    rel: Relation,
    /// For each scope position, the index into the group's variables.
    pos: ArrayVec<u8, 4>,
    watched: bool,
    weight: i64,
}

enum GroupKind {
    Bin {
        /// x value index -> mask of y values violating some watched member.
        viol: Vec<u64>,
        /// Row-major `dx * dy` table of violated weight, empty without objective.
        score: Vec<i64>,
        dy: usize,
    },
    Nary {
        members: Vec<NaryMember>,
    },
}

struct Group {
    vars: ArrayVec<u32, 4>,
    watched: bool,
    kind: GroupKind,
}

struct Mark {
    dom: usize,
    viol: usize,
    ub: usize,
}

enum Flow {
    Continue,
    Halt,
}

struct Engine {
    vars: Vec<Var>,
    vals: Vec<Vec<i32>>,
    dom: Vec<u64>,
    rank: Vec<u32>,
    perm_pos: Vec<Vec<u32>>,
    degree: Vec<u32>,
    bins: Vec<HardBin>,
    bin_adj: Vec<Vec<(u32, bool)>>,
    narys: Vec<HardNary>,
    nary_adj: Vec<Vec<u32>>,
    /// Cliques of hard `!=` over a shared domain, checked as all-different.
    cliques: Vec<Vec<u32>>,
    clique_adj: Vec<Vec<u32>>,
    clique_queued: Vec<bool>,
    clique_queue: Vec<u32>,
    groups: Vec<Group>,
    group_adj: Vec<Vec<u32>>,

    deadline: Option<Instant>,
    node_limit: Option<u64>,
    nodes: u64,
    limit_hit: bool,
    /// Node count at which the current satisfaction run gives up and restarts.
    cutoff: Option<u64>,
    cut: bool,
    rng: ChaCha8Rng,

    dom_trail: Vec<(u32, u64)>,
    queue: Vec<u32>,
    in_queue: Vec<bool>,
    changed: Vec<u32>,
    changed_flag: Vec<bool>,
    group_stamp: Vec<u32>,
    stamp: u32,

    watching: bool,
    violable: Vec<bool>,
    viol_trail: Vec<u32>,
    watch_count: usize,

    optimizing: bool,
    ub: Vec<i64>,
    ub_trail: Vec<(u32, i64)>,
    ub_total: i64,
    best: Option<(i64, Vec<u64>)>,
    incumbents: Vec<i64>,
    found: Option<Vec<u64>>,
}

impl Engine {
    fn compile(req: &SolveRequest<'_>) -> Result<Engine, SolverError> {
        let vocab = req.vocab;
        let mut vars = req.variables.clone();
        vars.sort_unstable();
        vars.dedup();
        let mut index = vec![u32::MAX; vocab.len()];
        for (i, v) in vars.iter().enumerate() {
            if !vocab.contains(*v) {
                return Err(SolverError::Config(format!("{v} is not in the vocabulary")));
            }
            index[v.index()] = i as u32;
        }
        let n = vars.len();
        let mut vals = Vec::with_capacity(n);
        let mut dom = Vec::with_capacity(n);
        for v in &vars {
            let d = vocab.domain(*v).values();
            if d.len() > 64 {
                return Err(SolverError::Config(format!(
                    "domain of {v} has {} values; at most 64 are supported",
                    d.len()
                )));
            }
            vals.push(d.to_vec());
            dom.push(if d.len() == 64 { u64::MAX } else { (1u64 << d.len()) - 1 });
        }
        let local = |c: &Constraint| -> Result<ArrayVec<u32, 4>, SolverError> {
            c.scope()
                .iter()
                .map(|v| {
                    index
                        .get(v.index())
                        .copied()
                        .filter(|&i| i != u32::MAX)
                        .ok_or_else(|| {
                            SolverError::Config(format!("scope of {c} is outside the variables"))
                        })
                })
                .collect()
        };

        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let mut rank: Vec<u32> = (0..n as u32).collect();
        rank.shuffle(&mut rng);
        let mut perm_pos = Vec::with_capacity(n);
        for v in &vals {
            let mut p: Vec<u8> = (0..v.len() as u8).collect();
            p.shuffle(&mut rng);
            let mut pos = vec![0u32; v.len()];
            for (k, &a) in p.iter().enumerate() {
                pos[a as usize] = k as u32;
            }
            perm_pos.push(pos);
        }

        let mut degree = vec![0u32; n];
        let mut bins = Vec::new();
        let mut bin_adj = vec![Vec::new(); n];
        let mut narys = Vec::new();
        let mut nary_adj = vec![Vec::new(); n];
        // A lone candidate that must be violated is posted as its negation so
        // that propagation sees it.
        let lone = match req.require_violation_of.as_deref() {
            Some([c]) => Some(c),
            _ => None,
        };
        let posted = req.hard.iter().map(|c| (c, false)).chain(lone.map(|c| (c, true)));
        for (c, negated) in posted {
            let sc = local(c)?;
            for &v in &sc {
                degree[v as usize] += 1;
            }
            if sc.len() == 2 {
                let (x, y) = (sc[0] as usize, sc[1] as usize);
                let mut fwd = vec![0u64; vals[x].len()];
                let mut bwd = vec![0u64; vals[y].len()];
                for (a, &va) in vals[x].iter().enumerate() {
                    for (b, &vb) in vals[y].iter().enumerate() {
                        if c.relation().holds2(va, vb) != negated {
                            fwd[a] |= 1 << b;
                            bwd[b] |= 1 << a;
                        }
                    }
                }
                let idx = bins.len() as u32;
                bin_adj[x].push((idx, true));
                bin_adj[y].push((idx, false));
                bins.push(HardBin {
                    x: x as u32,
                    y: y as u32,
                    fwd,
                    bwd,
                });
            } else {
                let idx = narys.len() as u32;
                for &v in &sc {
                    nary_adj[v as usize].push(idx);
                }
                narys.push(HardNary {
                    vars: sc,
                    rel: c.relation(),
                    negated,
                });
            }
        }

        let cliques = neq_cliques(req, &vals, &local)?;
        let mut clique_adj = vec![Vec::new(); n];
        for (k, q) in cliques.iter().enumerate() {
            for &v in q {
                clique_adj[v as usize].push(k as u32);
            }
        }

        // Candidate groups: watched constraints and objective terms share groups by scope.
        let watch = req.require_violation_of.as_deref().unwrap_or(&[]);
        let terms: &[(Constraint, i64)] = req.objective.map(|o| &o.terms[..]).unwrap_or(&[]);
        let mut keyed: Vec<(ArrayVec<u32, 4>, &Constraint, bool, i64)> = Vec::new();
        for c in watch {
            let mut key = local(c)?;
            key.sort_unstable();
            keyed.push((key, c, true, 0));
        }
        for (c, w) in terms {
            let mut key = local(c)?;
            key.sort_unstable();
            keyed.push((key, c, false, *w));
        }
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        let optimizing = req.objective.is_some();
        let mut groups = Vec::new();
        let mut group_adj = vec![Vec::new(); n];
        let mut start = 0;
        while start < keyed.len() {
            let mut end = start;
            while end < keyed.len() && keyed[end].0 == keyed[start].0 {
                end += 1;
            }
            let key = keyed[start].0.clone();
            let members = &keyed[start..end];
            let gidx = groups.len() as u32;
            for &v in &key {
                group_adj[v as usize].push(gidx);
                degree[v as usize] += 1;
            }
            let watched = members.iter().any(|m| m.2);
            let kind = if key.len() == 2 {
                let (x, y) = (key[0] as usize, key[1] as usize);
                let (dx, dy) = (vals[x].len(), vals[y].len());
                let mut viol = vec![0u64; dx];
                let mut score = if optimizing { vec![0i64; dx * dy] } else { Vec::new() };
                for m in members {
                    let c = m.1;
                    let forward = index[c.scope()[0].index()] as usize == x;
                    for a in 0..dx {
                        for b in 0..dy {
                            let ok = if forward {
                                c.relation().holds2(vals[x][a], vals[y][b])
                            } else {
                                c.relation().holds2(vals[y][b], vals[x][a])
                            };
                            if !ok {
                                if m.2 {
                                    viol[a] |= 1 << b;
                                } else if optimizing {
                                    score[a * dy + b] += m.3;
                                }
                            }
                        }
                    }
                }
                GroupKind::Bin { viol, score, dy }
            } else {
                let members = members
                    .iter()
                    .map(|m| {
                        let sc = local(m.1).expect("checked above");
                        let pos = sc
                            .iter()
                            .map(|v| key.iter().position(|k| k == v).unwrap() as u8)
                            .collect();
                        NaryMember {
                            rel: m.1.relation(),
                            pos,
                            watched: m.2,
                            weight: m.3,
                        }
                    })
                    .collect();
                GroupKind::Nary { members }
            };
            groups.push(Group {
                vars: key,
                watched,
                kind,
            });
            start = end;
        }
        let ng = groups.len();
        let deadline = req.limits.deadline.map(|d| Instant::now() + d);
        Ok(Engine {
            vars,
            vals,
            dom,
            rank,
            perm_pos,
            degree,
            bins,
            bin_adj,
            narys,
            nary_adj,
            clique_queued: vec![false; cliques.len()],
            clique_queue: Vec::new(),
            cliques,
            clique_adj,
            groups,
            group_adj,
            deadline,
            node_limit: req.limits.node_limit,
            nodes: 0,
            limit_hit: false,
            cutoff: None,
            cut: false,
            rng,
            dom_trail: Vec::new(),
            queue: Vec::new(),
            in_queue: vec![false; n],
            changed: Vec::new(),
            changed_flag: vec![false; n],
            group_stamp: vec![0; ng],
            stamp: 0,
            watching: req.require_violation_of.is_some(),
            violable: vec![false; ng],
            viol_trail: Vec::new(),
            watch_count: 0,
            optimizing,
            ub: vec![0; ng],
            ub_trail: Vec::new(),
            ub_total: 0,
            best: None,
            incumbents: Vec::new(),
            found: None,
        })
    }

    fn run(&mut self) -> SolveOutcome {
        let n = self.vars.len();
        for v in 0..n {
            self.queue.push(v as u32);
            self.in_queue[v] = true;
        }
        let root_ok = self.propagate_hard();
        self.changed.clear();
        self.changed_flag.iter_mut().for_each(|f| *f = false);
        if root_ok {
            for g in 0..self.groups.len() {
                if self.groups[g].watched {
                    let v = self.group_violable(g);
                    self.violable[g] = v;
                    if v {
                        self.watch_count += 1;
                    }
                }
                if self.optimizing {
                    let u = self.group_ub(g);
                    self.ub[g] = u;
                    self.ub_total += u;
                }
            }
        }
        let feasible_root = root_ok && (!self.watching || self.watch_count > 0);
        let exhausted = if !feasible_root {
            true
        } else if self.optimizing {
            matches!(self.search(), Flow::Continue)
        } else {
            self.search_with_restarts()
        };

        let (status, sol, value) = if self.optimizing {
            match self.best.take() {
                Some((val, d)) => {
                    let st = if exhausted && !self.limit_hit {
                        SolveStatus::Sat
                    } else {
                        SolveStatus::TimeoutBest
                    };
                    (st, Some(d), Some(val))
                }
                None if self.limit_hit => (SolveStatus::TimeoutNone, None, None),
                None => (SolveStatus::Unsat, None, None),
            }
        } else {
            match self.found.take() {
                Some(d) => (SolveStatus::Sat, Some(d), None),
                None if self.limit_hit => (SolveStatus::TimeoutNone, None, None),
                None => (SolveStatus::Unsat, None, None),
            }
        };
        let assignment = sol.map(|d| {
            d.iter()
                .enumerate()
                .map(|(i, m)| (self.vars[i], self.vals[i][m.trailing_zeros() as usize]))
                .collect()
        });
        SolveOutcome {
            status,
            assignment,
            objective_value: value,
            nodes: self.nodes,
            incumbents: std::mem::take(&mut self.incumbents),
        }
    }

    /// Satisfaction search in runs of growing length, each with fresh
    /// tie-breaks, so one unlucky early choice cannot stall the whole call.
    /// Every run is complete up to its cutoff, so exhaustion is still a proof.
    fn search_with_restarts(&mut self) -> bool {
        let mut len = RESTART_BASE;
        loop {
            self.cut = false;
            self.cutoff = Some(self.nodes + len);
            let flow = self.search();
            if !self.cut || self.found.is_some() || self.limit_hit {
                self.cutoff = None;
                return matches!(flow, Flow::Continue);
            }
            len += len / 2;
            self.reshuffle();
        }
    }

    fn reshuffle(&mut self) {
        self.rank.shuffle(&mut self.rng);
        for pos in &mut self.perm_pos {
            pos.shuffle(&mut self.rng);
        }
    }

    fn limits_reached(&mut self) -> bool {
        if self.limit_hit || self.cut {
            return true;
        }
        if self.cutoff.is_some_and(|c| self.nodes >= c) {
            self.cut = true;
            return true;
        }
        if let Some(l) = self.node_limit {
            if self.nodes >= l {
                self.limit_hit = true;
            }
        }
        if let Some(d) = self.deadline {
            if Instant::now() >= d {
                self.limit_hit = true;
            }
        }
        self.limit_hit
    }

    fn search(&mut self) -> Flow {
        if self.limits_reached() {
            return Flow::Halt;
        }
        let Some(x) = self.select_var() else {
            return self.leaf();
        };
        let order = self.value_order(x);
        for a in order {
            if self.limits_reached() {
                return Flow::Halt;
            }
            self.nodes += 1;
            let mark = self.mark();
            let ok = self.assign(x, a);
            if ok {
                if let Flow::Halt = self.search() {
                    self.undo(mark);
                    return Flow::Halt;
                }
            }
            self.undo(mark);
        }
        Flow::Continue
    }

    fn leaf(&mut self) -> Flow {
        if self.optimizing {
            let val = self.ub_total;
            if self.best.as_ref().is_none_or(|(b, _)| val > *b) {
                self.best = Some((val, self.dom.clone()));
                self.incumbents.push(val);
            }
            Flow::Continue
        } else {
            self.found = Some(self.dom.clone());
            Flow::Halt
        }
    }

    fn select_var(&self) -> Option<usize> {
        let mut best: Option<(u32, u32, u32, usize)> = None;
        for (v, &d) in self.dom.iter().enumerate() {
            let size = d.count_ones();
            if size <= 1 {
                continue;
            }
            let key = (size, u32::MAX - self.degree[v], self.rank[v], v);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        if let Some(b) = best {
            return Some(b.3);
        }
        // Singleton domains may still need propagation through an assignment.
        None
    }

    fn value_order(&self, x: usize) -> Vec<usize> {
        let mut vs: Vec<usize> = bits(self.dom[x]).collect();
        if self.optimizing {
            let mut scored: Vec<(i64, u32, usize)> = vs
                .iter()
                .map(|&a| (-self.value_gain(x, a), self.perm_pos[x][a], a))
                .collect();
            scored.sort_unstable();
            scored.into_iter().map(|s| s.2).collect()
        } else {
            vs.sort_unstable_by_key(|&a| self.perm_pos[x][a]);
            vs
        }
    }

    /// Optimistic objective contribution of binding `x` to value index `a`.
    fn value_gain(&self, x: usize, a: usize) -> i64 {
        let mut total = 0;
        for &g in &self.group_adj[x] {
            let grp = &self.groups[g as usize];
            if let GroupKind::Bin { score, dy, .. } = &grp.kind {
                let (gx, gy) = (grp.vars[0] as usize, grp.vars[1] as usize);
                let best = if gx == x {
                    bits(self.dom[gy]).map(|b| score[a * dy + b]).max()
                } else {
                    bits(self.dom[gx]).map(|b| score[b * dy + a]).max()
                };
                total += best.unwrap_or(0);
            }
        }
        total
    }

    fn mark(&self) -> Mark {
        Mark {
            dom: self.dom_trail.len(),
            viol: self.viol_trail.len(),
            ub: self.ub_trail.len(),
        }
    }

    fn undo(&mut self, m: Mark) {
        while self.dom_trail.len() > m.dom {
            let (v, old) = self.dom_trail.pop().unwrap();
            self.dom[v as usize] = old;
        }
        while self.viol_trail.len() > m.viol {
            let g = self.viol_trail.pop().unwrap();
            self.violable[g as usize] = true;
            self.watch_count += 1;
        }
        while self.ub_trail.len() > m.ub {
            let (g, old) = self.ub_trail.pop().unwrap();
            self.ub_total += old - self.ub[g as usize];
            self.ub[g as usize] = old;
        }
        for v in self.queue.drain(..) {
            self.in_queue[v as usize] = false;
        }
        for q in self.clique_queue.drain(..) {
            self.clique_queued[q as usize] = false;
        }
        for v in self.changed.drain(..) {
            self.changed_flag[v as usize] = false;
        }
    }

    fn set_dom(&mut self, v: usize, m: u64) -> bool {
        if m == self.dom[v] {
            return true;
        }
        self.dom_trail.push((v as u32, self.dom[v]));
        self.dom[v] = m;
        if !self.changed_flag[v] {
            self.changed_flag[v] = true;
            self.changed.push(v as u32);
        }
        if !self.in_queue[v] {
            self.in_queue[v] = true;
            self.queue.push(v as u32);
        }
        for k in 0..self.clique_adj[v].len() {
            let q = self.clique_adj[v][k];
            if !self.clique_queued[q as usize] {
                self.clique_queued[q as usize] = true;
                self.clique_queue.push(q);
            }
        }
        m != 0
    }

    fn assign(&mut self, x: usize, a: usize) -> bool {
        if !self.set_dom(x, 1u64 << a) {
            return false;
        }
        if !self.in_queue[x] {
            self.in_queue[x] = true;
            self.queue.push(x as u32);
        }
        if !self.propagate_hard() {
            return false;
        }
        self.update_groups()
    }

    fn propagate_hard(&mut self) -> bool {
        loop {
            if !self.propagate_local() {
                return false;
            }
            let Some(q) = self.clique_queue.pop() else {
                return true;
            };
            self.clique_queued[q as usize] = false;
            if !self.all_different(q as usize) {
                return false;
            }
        }
    }

    /// Pigeonhole check, plus hidden singles when the clique uses every
    /// value of its domain.
    fn all_different(&mut self, q: usize) -> bool {
        let k = self.cliques[q].len();
        let mut union = 0u64;
        let mut twice = 0u64;
        for &v in &self.cliques[q] {
            let d = self.dom[v as usize];
            twice |= union & d;
            union |= d;
        }
        let free = union.count_ones() as usize;
        if free < k {
            return false;
        }
        if free > k {
            return true;
        }
        let once = union & !twice;
        if once == 0 {
            return true;
        }
        for i in 0..k {
            let v = self.cliques[q][i] as usize;
            let d = self.dom[v];
            let only = d & once;
            if only != 0 && only != d {
                if only.count_ones() > 1 {
                    return false;
                }
                if !self.set_dom(v, only) {
                    return false;
                }
            }
        }
        true
    }

    fn propagate_local(&mut self) -> bool {
        while let Some(v) = self.queue.pop() {
            let v = v as usize;
            self.in_queue[v] = false;
            let dv = self.dom[v];
            for k in 0..self.bin_adj[v].len() {
                let (bi, v_is_x) = self.bin_adj[v][k];
                let b = &self.bins[bi as usize];
                let (w, table) = if v_is_x {
                    (b.y as usize, &b.bwd)
                } else {
                    (b.x as usize, &b.fwd)
                };
                let dw = self.dom[w];
                let mut keep = 0u64;
                for c in bits(dw) {
                    if table[c] & dv != 0 {
                        keep |= 1 << c;
                    }
                }
                if keep != dw && !self.set_dom(w, keep) {
                    return false;
                }
            }
            for k in 0..self.nary_adj[v].len() {
                let ni = self.nary_adj[v][k] as usize;
                if !self.check_nary(ni) {
                    return false;
                }
            }
        }
        true
    }

    fn check_nary(&mut self, ni: usize) -> bool {
        let c = &self.narys[ni];
        let mut open = None;
        let mut vals = [0i32; 4];
        for (p, &v) in c.vars.iter().enumerate() {
            let d = self.dom[v as usize];
            if d.count_ones() == 1 {
                vals[p] = self.vals[v as usize][d.trailing_zeros() as usize];
            } else if open.is_some() {
                return true;
            } else {
                open = Some(p);
            }
        }
        let arity = c.vars.len();
        let rel = c.rel;
        let neg = c.negated;
        match open {
            None => rel.holds(&vals[..arity]) != neg,
            Some(p) => {
                let v = c.vars[p] as usize;
                let mut keep = 0u64;
                for a in bits(self.dom[v]) {
                    vals[p] = self.vals[v][a];
                    if rel.holds(&vals[..arity]) != neg {
                        keep |= 1 << a;
                    }
                }
                self.set_dom(v, keep)
            }
        }
    }

    fn update_groups(&mut self) -> bool {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.group_stamp.iter_mut().for_each(|s| *s = 0);
            self.stamp = 1;
        }
        let changed = std::mem::take(&mut self.changed);
        for &v in &changed {
            self.changed_flag[v as usize] = false;
            for k in 0..self.group_adj[v as usize].len() {
                let g = self.group_adj[v as usize][k] as usize;
                if self.group_stamp[g] == self.stamp {
                    continue;
                }
                self.group_stamp[g] = self.stamp;
                if self.watching && self.violable[g] && !self.group_violable(g) {
                    self.violable[g] = false;
                    self.viol_trail.push(g as u32);
                    self.watch_count -= 1;
                }
                if self.optimizing {
                    let u = self.group_ub(g);
                    if u != self.ub[g] {
                        self.ub_trail.push((g as u32, self.ub[g]));
                        self.ub_total += u - self.ub[g];
                        self.ub[g] = u;
                    }
                }
            }
        }
        let mut changed = changed;
        changed.clear();
        self.changed = changed;
        if self.watching && self.watch_count == 0 {
            return false;
        }
        if self.optimizing {
            if let Some((b, _)) = &self.best {
                if self.ub_total <= *b {
                    return false;
                }
            }
        }
        true
    }

    fn group_violable(&self, g: usize) -> bool {
        let grp = &self.groups[g];
        match &grp.kind {
            GroupKind::Bin { viol, .. } => {
                let dy = self.dom[grp.vars[1] as usize];
                bits(self.dom[grp.vars[0] as usize]).any(|a| viol[a] & dy != 0)
            }
            GroupKind::Nary { members } => {
                let mut hit = false;
                let complete = self.enum_nary(&grp.vars, |vals| {
                    hit = members
                        .iter()
                        .any(|m| m.watched && !m.rel.holds(&project(vals, &m.pos)));
                    !hit
                });
                hit || !complete
            }
        }
    }

    fn group_ub(&self, g: usize) -> i64 {
        let grp = &self.groups[g];
        match &grp.kind {
            GroupKind::Bin { score, dy, .. } => {
                let dyv = self.dom[grp.vars[1] as usize];
                let mut best = i64::MIN;
                for a in bits(self.dom[grp.vars[0] as usize]) {
                    let row = &score[a * dy..(a + 1) * dy];
                    for b in bits(dyv) {
                        best = best.max(row[b]);
                    }
                }
                if best == i64::MIN {
                    0
                } else {
                    best
                }
            }
            GroupKind::Nary { members } => {
                let mut best = i64::MIN;
                let complete = self.enum_nary(&grp.vars, |vals| {
                    let s: i64 = members
                        .iter()
                        .filter(|m| !m.watched && !m.rel.holds(&project(vals, &m.pos)))
                        .map(|m| m.weight)
                        .sum();
                    best = best.max(s);
                    true
                });
                if complete {
                    if best == i64::MIN {
                        0
                    } else {
                        best
                    }
                } else {
                    members
                        .iter()
                        .filter(|m| !m.watched)
                        .map(|m| m.weight.max(0))
                        .sum()
                }
            }
        }
    }

    /// Calls `f` on every tuple of the product of the group's domains while it
    /// returns true. Returns false when the product is too large to enumerate.
    fn enum_nary(&self, vars: &[u32], mut f: impl FnMut(&[i32]) -> bool) -> bool {
        let size: u64 = vars
            .iter()
            .map(|&v| self.dom[v as usize].count_ones() as u64)
            .product();
        if size > NARY_ENUM_LIMIT {
            return false;
        }
        let k = vars.len();
        let mut doms = [0u64; 4];
        for (p, &v) in vars.iter().enumerate() {
            doms[p] = self.dom[v as usize];
            if doms[p] == 0 {
                return true;
            }
        }
        let mut cur = doms;
        let mut vals = [0i32; 4];
        loop {
            for p in 0..k {
                vals[p] = self.vals[vars[p] as usize][cur[p].trailing_zeros() as usize];
            }
            if !f(&vals[..k]) {
                return true;
            }
            let mut p = 0;
            loop {
                if p == k {
                    return true;
                }
                cur[p] &= cur[p] - 1;
                if cur[p] != 0 {
                    break;
                }
                cur[p] = doms[p];
                p += 1;
            }
        }
    }
}

#[inline]
fn project(vals: &[i32], pos: &[u8]) -> ArrayVec<i32, 4> {
    pos.iter().map(|&p| vals[p as usize]).collect()
}
