//! The constraint language and the candidate set built from it.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::model::{Assignment, Constraint, Relation, Var};

/// A constraint language Γ.
///
/// `OffsetEq(k)` templates are kept for `k >= 1` only; `OffsetEq(0)` is the
/// same relation as `Eq`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Language {
    relations: Vec<Relation>,
}

impl Language {
    pub fn new(relations: impl IntoIterator<Item = Relation>) -> Result<Self, ModelError> {
        let mut rs: Vec<Relation> = Vec::new();
        for r in relations {
            let r = match r {
                Relation::OffsetEq(k) if k < 0 => return Err(ModelError::NegativeOffset(k)),
                Relation::OffsetEq(0) => Relation::Eq,
                r => r,
            };
            if !rs.contains(&r) {
                rs.push(r);
            }
        }
        if rs.is_empty() {
            return Err(ModelError::EmptyLanguage);
        }
        Ok(Language { relations: rs })
    }

    /// `{>=, <=, <, >, !=, =}`.
    pub fn comparisons() -> Self {
        Language {
            relations: Relation::COMPARISONS.to_vec(),
        }
    }

    /// Comparisons plus `x + c = y` for `c` in `0..=max_offset`.
    pub fn with_offsets(max_offset: i32) -> Result<Self, ModelError> {
        Language::new(
            Relation::COMPARISONS
                .into_iter()
                .chain((0..=max_offset).map(Relation::OffsetEq)),
        )
    }

    /// Comparisons plus `|xi - xj| != |xk - xl|`.
    pub fn with_abs_diff() -> Self {
        let mut relations = Relation::COMPARISONS.to_vec();
        relations.push(Relation::AbsDiffNeq);
        Language { relations }
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn max_arity(&self) -> usize {
        self.relations.iter().map(|r| r.arity()).max().unwrap_or(2)
    }

    /// Candidates on one variable set (sorted, size 2 or 4).
    ///
    /// Quaternary candidates pair the first two and the last two variables of
    /// the set, so each 4-set contributes at most one `AbsDiffNeq`.
    pub fn candidates_on(&self, set: &[Var]) -> Vec<Constraint> {
        let mut out: Vec<Constraint> = Vec::new();
        for &r in &self.relations {
            if r.arity() != set.len() {
                continue;
            }
            let made: Vec<Constraint> = if set.len() == 2 {
                vec![
                    Constraint::new(r, &[set[0], set[1]]).expect("distinct pair"),
                    Constraint::new(r, &[set[1], set[0]]).expect("distinct pair"),
                ]
            } else {
                vec![Constraint::new(r, set).expect("distinct set")]
            };
            for c in made {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        out
    }

    /// Largest number of candidates sharing one scope; the `|Γ|` penalty of
    /// the guided objective.
    pub fn scope_capacity(&self) -> usize {
        let pair = self.candidates_on(&[Var(0), Var(1)]).len();
        let quad = self.candidates_on(&[Var(0), Var(1), Var(2), Var(3)]).len();
        pair.max(quad)
    }
}

/// The bias `B`: a set of canonical candidate constraints with a
/// per-variable index.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Constraint>", into = "Vec<Constraint>")]
pub struct Bias {
    slots: Vec<Constraint>,
    alive: Vec<bool>,
    lookup: HashMap<Constraint, u32>,
    by_var: Vec<Vec<u32>>,
    var_live: Vec<u32>,
    live: usize,
}

impl Bias {
    pub fn new() -> Self {
        Bias::default()
    }

    /// All candidates with relation in Γ and scope within `y`.
    pub fn full(lang: &Language, y: &BTreeSet<Var>) -> Bias {
        let vars: Vec<Var> = y.iter().copied().collect();
        let mut b = Bias::new();
        let n = vars.len();
        let arities: BTreeSet<usize> = lang.relations().iter().map(|r| r.arity()).collect();
        if arities.contains(&2) {
            for i in 0..n {
                for j in i + 1..n {
                    b.extend_binary(lang, vars[i], vars[j]);
                }
            }
        }
        if arities.contains(&4) {
            for_each_quad(&vars, None, |set| {
                for c in lang.candidates_on(set) {
                    if c.arity() == 4 {
                        b.insert(c);
                    }
                }
            });
        }
        b
    }

    /// The candidates over `y` whose scope contains `x_new`.
    pub fn incremental(lang: &Language, y: &BTreeSet<Var>, x_new: Var) -> Bias {
        let others: Vec<Var> = y.iter().copied().filter(|&v| v != x_new).collect();
        let mut b = Bias::new();
        if !y.contains(&x_new) {
            return b;
        }
        let arities: BTreeSet<usize> = lang.relations().iter().map(|r| r.arity()).collect();
        if arities.contains(&2) {
            for &o in &others {
                b.extend_binary(lang, o.min(x_new), o.max(x_new));
            }
        }
        if arities.contains(&4) {
            let mut all = others.clone();
            all.push(x_new);
            all.sort_unstable();
            for_each_quad(&all, Some(x_new), |set| {
                for c in lang.candidates_on(set) {
                    if c.arity() == 4 {
                        b.insert(c);
                    }
                }
            });
        }
        b
    }

    fn extend_binary(&mut self, lang: &Language, a: Var, b: Var) {
        for c in lang.candidates_on(&[a, b]) {
            self.insert(c);
        }
    }

    pub fn insert(&mut self, c: Constraint) -> bool {
        let c = c.canonical();
        if self.lookup.contains_key(&c) {
            return false;
        }
        let id = self.slots.len() as u32;
        for v in c.scope() {
            let i = v.index();
            if self.by_var.len() <= i {
                self.by_var.resize_with(i + 1, Vec::new);
                self.var_live.resize(i + 1, 0);
            }
            self.by_var[i].push(id);
            self.var_live[i] += 1;
        }
        self.lookup.insert(c.clone(), id);
        self.slots.push(c);
        self.alive.push(true);
        self.live += 1;
        true
    }

    pub fn remove(&mut self, c: &Constraint) -> bool {
        let c = c.canonical();
        match self.lookup.remove(&c) {
            Some(id) => {
                self.kill(id);
                true
            }
            None => false,
        }
    }

    fn kill(&mut self, id: u32) {
        let i = id as usize;
        if !self.alive[i] {
            return;
        }
        self.alive[i] = false;
        self.live -= 1;
        for v in self.slots[i].scope() {
            self.var_live[v.index()] -= 1;
        }
        if self.lookup.get(&self.slots[i]) == Some(&id) {
            self.lookup.remove(&self.slots[i]);
        }
        if self.slots.len() > 64 && self.live * 4 < self.slots.len() {
            self.compact();
        }
    }

    fn compact(&mut self) {
        let kept: Vec<Constraint> = self.iter().cloned().collect();
        *self = kept.into_iter().collect();
    }

    pub fn contains(&self, c: &Constraint) -> bool {
        self.lookup.contains_key(&c.canonical())
    }

    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> + '_ {
        self.slots
            .iter()
            .zip(&self.alive)
            .filter(|(_, a)| **a)
            .map(|(c, _)| c)
    }

    /// `⋃ var(c)` over the live candidates.
    pub fn vars(&self) -> BTreeSet<Var> {
        self.var_live
            .iter()
            .enumerate()
            .filter(|(_, n)| **n > 0)
            .map(|(i, _)| Var(i as u32))
            .collect()
    }

    /// Number of live candidates whose scope contains `x`.
    pub fn degree(&self, x: Var) -> usize {
        self.var_live.get(x.index()).copied().unwrap_or(0) as usize
    }

    /// Live candidates whose scope contains `x`.
    pub fn touching(&self, x: Var) -> impl Iterator<Item = &Constraint> + '_ {
        self.by_var
            .get(x.index())
            .map(|v| &v[..])
            .unwrap_or(&[])
            .iter()
            .filter(|&&id| self.alive[id as usize])
            .map(|&id| &self.slots[id as usize])
    }

    /// `B[Y]`.
    pub fn restrict(&self, y: &BTreeSet<Var>) -> Vec<Constraint> {
        self.iter()
            .filter(|c| c.scope_within(|v| y.contains(&v)))
            .cloned()
            .collect()
    }

    /// Live candidates whose variable set is exactly `key` (sorted).
    pub fn on_scope(&self, key: &[Var]) -> Vec<Constraint> {
        match key.first() {
            Some(&first) => self
                .touching(first)
                .filter(|c| c.scope_key().as_slice() == key)
                .cloned()
                .collect(),
            None => Vec::new(),
        }
    }

    fn kappa_ids(&self, e: &Assignment) -> Vec<u32> {
        let dense = e.dense(self.by_var.len());
        let mut out = Vec::new();
        for (v, _) in e.iter() {
            let Some(ids) = self.by_var.get(v.index()) else {
                continue;
            };
            for &id in ids {
                if !self.alive[id as usize] {
                    continue;
                }
                let c = &self.slots[id as usize];
                if c.scope().iter().min() == Some(&v) && c.rejects_dense(&dense) {
                    out.push(id);
                }
            }
        }
        out
    }

    /// `κ_B(e)`.
    pub fn kappa(&self, e: &Assignment) -> Vec<Constraint> {
        self.kappa_ids(e)
            .into_iter()
            .map(|id| self.slots[id as usize].clone())
            .collect()
    }

    /// `|κ_B(e)|`.
    pub fn kappa_len(&self, e: &Assignment) -> usize {
        self.kappa_ids(e).len()
    }

    /// Removes and returns `κ_B(e)`.
    pub fn remove_violated(&mut self, e: &Assignment) -> Vec<Constraint> {
        let ids = self.kappa_ids(e);
        let out: Vec<Constraint> = ids
            .iter()
            .map(|&id| self.slots[id as usize].clone())
            .collect();
        for c in &out {
            self.remove(c);
        }
        out
    }
}

fn for_each_quad(vars: &[Var], required: Option<Var>, mut f: impl FnMut(&[Var])) {
    let n = vars.len();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let set = [vars[a], vars[b], vars[c], vars[d]];
                    if required.is_none_or(|x| set.contains(&x)) {
                        f(&set);
                    }
                }
            }
        }
    }
}

impl FromIterator<Constraint> for Bias {
    fn from_iter<T: IntoIterator<Item = Constraint>>(iter: T) -> Self {
        let mut b = Bias::new();
        for c in iter {
            b.insert(c);
        }
        b
    }
}

impl From<Vec<Constraint>> for Bias {
    fn from(v: Vec<Constraint>) -> Self {
        v.into_iter().collect()
    }
}

impl From<Bias> for Vec<Constraint> {
    fn from(b: Bias) -> Self {
        b.iter().cloned().collect()
    }
}

impl PartialEq for Bias {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.iter().all(|c| other.contains(c))
    }
}
