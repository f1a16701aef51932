//! Variables, domains, relations, constraints, assignments and networks.
//!
//! Everything else in the crate is built on the two operators defined here:
//! the violation set [`ConstraintNetwork::kappa`] and the scope restriction
//! [`ConstraintNetwork::restrict`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// A decision variable, identified by its dense index in the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Var(pub u32);

impl Var {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// A finite set of integers, kept sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i32>", into = "Vec<i32>")]
pub struct Domain {
    values: Vec<i32>,
}

impl Domain {
    pub fn new(values: impl IntoIterator<Item = i32>) -> Result<Self, ModelError> {
        let mut values: Vec<i32> = values.into_iter().collect();
        values.sort_unstable();
        values.dedup();
        if values.is_empty() {
            return Err(ModelError::EmptyDomain);
        }
        Ok(Domain { values })
    }

    /// The inclusive range `lo..=hi`.
    pub fn range(lo: i32, hi: i32) -> Result<Self, ModelError> {
        Self::new(lo..=hi)
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, v: i32) -> bool {
        self.values.binary_search(&v).is_ok()
    }

    pub fn position(&self, v: i32) -> Option<usize> {
        self.values.binary_search(&v).ok()
    }

    pub fn min(&self) -> i32 {
        self.values[0]
    }

    pub fn max(&self) -> i32 {
        self.values[self.values.len() - 1]
    }
}

impl TryFrom<Vec<i32>> for Domain {
    type Error = ModelError;
    fn try_from(v: Vec<i32>) -> Result<Self, Self::Error> {
        Domain::new(v)
    }
}

impl From<Domain> for Vec<i32> {
    fn from(d: Domain) -> Self {
        d.values
    }
}

/// The shared vocabulary `(X, D)`: variables `0..n` and their domains.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    domains: Vec<Domain>,
}

impl Vocabulary {
    pub fn new(domains: Vec<Domain>) -> Self {
        Vocabulary { domains }
    }

    /// `n` variables sharing one domain.
    pub fn uniform(n: usize, domain: Domain) -> Self {
        Vocabulary {
            domains: vec![domain; n],
        }
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn vars(&self) -> impl ExactSizeIterator<Item = Var> + '_ {
        (0..self.domains.len() as u32).map(Var)
    }

    pub fn domain(&self, x: Var) -> &Domain {
        &self.domains[x.index()]
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn contains(&self, x: Var) -> bool {
        x.index() < self.domains.len()
    }
}

/// Relation kinds, used to pool statistics across the constants of
/// parameterized relations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RelationKind {
    Eq,
    Neq,
    Lt,
    Gt,
    Leq,
    Geq,
    AbsDiffNeq,
    OffsetEq,
}

impl RelationKind {
    pub const ALL: [RelationKind; 8] = [
        RelationKind::Eq,
        RelationKind::Neq,
        RelationKind::Lt,
        RelationKind::Gt,
        RelationKind::Leq,
        RelationKind::Geq,
        RelationKind::AbsDiffNeq,
        RelationKind::OffsetEq,
    ];
}

/// A relation template of the constraint language.
///
/// Binary comparisons read `x0 op x1`. `AbsDiffNeq` over `[a, b, c, d]` reads
/// `|a - b| != |c - d|`. `OffsetEq(k)` over `[a, b]` reads `a + k = b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Relation {
    Eq,
    Neq,
    Lt,
    Gt,
    Leq,
    Geq,
    AbsDiffNeq,
    OffsetEq(i32),
}

impl Relation {
    /// The six binary comparisons.
    pub const COMPARISONS: [Relation; 6] = [
        Relation::Geq,
        Relation::Leq,
        Relation::Lt,
        Relation::Gt,
        Relation::Neq,
        Relation::Eq,
    ];

    pub fn arity(self) -> usize {
        match self {
            Relation::AbsDiffNeq => 4,
            _ => 2,
        }
    }

    pub fn kind(self) -> RelationKind {
        match self {
            Relation::Eq => RelationKind::Eq,
            Relation::Neq => RelationKind::Neq,
            Relation::Lt => RelationKind::Lt,
            Relation::Gt => RelationKind::Gt,
            Relation::Leq => RelationKind::Leq,
            Relation::Geq => RelationKind::Geq,
            Relation::AbsDiffNeq => RelationKind::AbsDiffNeq,
            Relation::OffsetEq(_) => RelationKind::OffsetEq,
        }
    }

    /// Whether the tuple belongs to the relation. `vals.len()` must equal the arity.
    #[inline]
    pub fn holds(self, vals: &[i32]) -> bool {
        match self {
            Relation::Eq => vals[0] == vals[1],
            Relation::Neq => vals[0] != vals[1],
            Relation::Lt => vals[0] < vals[1],
            Relation::Gt => vals[0] > vals[1],
            Relation::Leq => vals[0] <= vals[1],
            Relation::Geq => vals[0] >= vals[1],
            Relation::AbsDiffNeq => {
                (vals[0] as i64 - vals[1] as i64).abs() != (vals[2] as i64 - vals[3] as i64).abs()
            }
            Relation::OffsetEq(k) => vals[0] as i64 + k as i64 == vals[1] as i64,
        }
    }

    /// Binary fast path.
    #[inline]
    pub fn holds2(self, a: i32, b: i32) -> bool {
        self.holds(&[a, b])
    }

    fn validate(self) -> Result<(), ModelError> {
        match self {
            Relation::OffsetEq(k) if k < 0 => Err(ModelError::NegativeOffset(k)),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::Eq => f.write_str("="),
            Relation::Neq => f.write_str("!="),
            Relation::Lt => f.write_str("<"),
            Relation::Gt => f.write_str(">"),
            Relation::Leq => f.write_str("<="),
            Relation::Geq => f.write_str(">="),
            Relation::AbsDiffNeq => f.write_str("|-|!=|-|"),
            Relation::OffsetEq(k) => write!(f, "+{k}="),
        }
    }
}

pub type Scope = ArrayVec<Var, 4>;

/// A constraint: a relation applied to an ordered scope.
///
/// Constructors validate arity and distinctness; [`Constraint::new`] also
/// canonicalizes, so two semantically identical constraints compare equal.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Constraint {
    relation: Relation,
    scope: Scope,
}

/// Outcome of checking a constraint against a partial assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accepts,
    Rejects,
    Undecided,
}

impl Constraint {
    /// Validated, canonical constraint.
    pub fn new(relation: Relation, scope: &[Var]) -> Result<Self, ModelError> {
        Ok(Self::raw(relation, scope)?.canonical())
    }

    /// Validated constraint kept in the given orientation.
    pub fn raw(relation: Relation, scope: &[Var]) -> Result<Self, ModelError> {
        relation.validate()?;
        if scope.len() != relation.arity() {
            return Err(ModelError::Arity {
                relation,
                expected: relation.arity(),
                got: scope.len(),
            });
        }
        for (i, a) in scope.iter().enumerate() {
            if scope[i + 1..].contains(a) {
                return Err(ModelError::RepeatedVariable(*a));
            }
        }
        Ok(Constraint {
            relation,
            scope: scope.iter().copied().collect(),
        })
    }

    /// Shorthand for binary constraints; panics on invalid input.
    pub fn binary(relation: Relation, a: Var, b: Var) -> Self {
        Self::new(relation, &[a, b]).expect("valid binary constraint")
    }

    pub fn relation(&self) -> Relation {
        self.relation
    }

    pub fn scope(&self) -> &[Var] {
        &self.scope
    }

    pub fn arity(&self) -> usize {
        self.scope.len()
    }

    pub fn involves(&self, x: Var) -> bool {
        self.scope.contains(&x)
    }

    /// Whether the scope is a subset of the given predicate.
    pub fn scope_within(&self, mut member: impl FnMut(Var) -> bool) -> bool {
        self.scope.iter().all(|&v| member(v))
    }

    /// Whether values for the scope (in scope order) satisfy the relation.
    #[inline]
    pub fn holds(&self, vals: &[i32]) -> bool {
        self.relation.holds(vals)
    }

    pub fn evaluate(&self, e: &Assignment) -> Verdict {
        let mut vals = [0i32; 4];
        for (slot, v) in vals.iter_mut().zip(self.scope.iter()) {
            match e.get(*v) {
                Some(x) => *slot = x,
                None => return Verdict::Undecided,
            }
        }
        if self.relation.holds(&vals[..self.scope.len()]) {
            Verdict::Accepts
        } else {
            Verdict::Rejects
        }
    }

    pub fn rejects(&self, e: &Assignment) -> bool {
        self.evaluate(e) == Verdict::Rejects
    }

    /// The canonical representative of this constraint's semantic class.
    pub fn canonical(&self) -> Constraint {
        let s = &self.scope;
        match self.relation {
            Relation::Eq | Relation::Neq => {
                let (a, b) = (s[0].min(s[1]), s[0].max(s[1]));
                Constraint::pair(self.relation, a, b)
            }
            Relation::Lt | Relation::Gt | Relation::Leq | Relation::Geq => {
                if s[0] < s[1] {
                    self.clone()
                } else {
                    let flipped = match self.relation {
                        Relation::Lt => Relation::Gt,
                        Relation::Gt => Relation::Lt,
                        Relation::Leq => Relation::Geq,
                        _ => Relation::Leq,
                    };
                    Constraint::pair(flipped, s[1], s[0])
                }
            }
            Relation::AbsDiffNeq => {
                let p = (s[0].min(s[1]), s[0].max(s[1]));
                let q = (s[2].min(s[3]), s[2].max(s[3]));
                let (p, q) = if p <= q { (p, q) } else { (q, p) };
                let scope: Scope = [p.0, p.1, q.0, q.1].into_iter().collect();
                Constraint {
                    relation: Relation::AbsDiffNeq,
                    scope,
                }
            }
            Relation::OffsetEq(0) => {
                Constraint::pair(Relation::Eq, s[0].min(s[1]), s[0].max(s[1]))
            }
            Relation::OffsetEq(_) => self.clone(),
        }
    }

    fn pair(relation: Relation, a: Var, b: Var) -> Constraint {
        let mut scope = Scope::new();
        scope.push(a);
        scope.push(b);
        Constraint { relation, scope }
    }

    /// Rejection test against a dense assignment indexed by variable.
    #[inline]
    pub fn rejects_dense(&self, e: &[Option<i32>]) -> bool {
        let mut vals = [0i32; 4];
        for (slot, v) in vals.iter_mut().zip(&self.scope) {
            match e.get(v.index()).copied().flatten() {
                Some(x) => *slot = x,
                None => return false,
            }
        }
        !self.relation.holds(&vals[..self.scope.len()])
    }

    /// Sorted scope, used to group candidates sharing the same variable set.
    pub fn scope_key(&self) -> Scope {
        let mut k = self.scope.clone();
        k.sort_unstable();
        k
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.scope;
        match self.relation {
            Relation::AbsDiffNeq => write!(f, "|{}-{}| != |{}-{}|", s[0], s[1], s[2], s[3]),
            Relation::OffsetEq(k) => write!(f, "{} + {} = {}", s[0], k, s[1]),
            r => write!(f, "{} {} {}", s[0], r, s[1]),
        }
    }
}

/// A partial assignment `e_Y`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    bindings: BTreeMap<Var, i32>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    /// Checks that every value lies in its variable's domain.
    pub fn checked(
        vocab: &Vocabulary,
        bindings: impl IntoIterator<Item = (Var, i32)>,
    ) -> Result<Self, ModelError> {
        let mut e = Assignment::new();
        for (x, v) in bindings {
            if !vocab.contains(x) {
                return Err(ModelError::UnknownVariable(x));
            }
            if !vocab.domain(x).contains(v) {
                return Err(ModelError::OutOfDomain { var: x, value: v });
            }
            e.bindings.insert(x, v);
        }
        Ok(e)
    }

    pub fn set(&mut self, x: Var, v: i32) {
        self.bindings.insert(x, v);
    }

    #[inline]
    pub fn get(&self, x: Var) -> Option<i32> {
        self.bindings.get(&x).copied()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn is_bound(&self, x: Var) -> bool {
        self.bindings.contains_key(&x)
    }

    /// The bound variables `Y`, ascending.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.bindings.keys().copied()
    }

    /// Bindings as a vector indexed by variable, `None` where unbound.
    pub fn dense(&self, n: usize) -> Vec<Option<i32>> {
        let n = n.max(self.bindings.keys().next_back().map_or(0, |v| v.index() + 1));
        let mut d = vec![None; n];
        for (v, x) in &self.bindings {
            d[v.index()] = Some(*x);
        }
        d
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, i32)> + '_ {
        self.bindings.iter().map(|(k, v)| (*k, *v))
    }

    /// The projection of `self` onto the given variables.
    pub fn project<'a>(&self, vars: impl IntoIterator<Item = &'a Var>) -> Assignment {
        let mut out = Assignment::new();
        for &x in vars {
            if let Some(v) = self.get(x) {
                out.bindings.insert(x, v);
            }
        }
        out
    }
}

impl FromIterator<(Var, i32)> for Assignment {
    fn from_iter<T: IntoIterator<Item = (Var, i32)>>(iter: T) -> Self {
        Assignment {
            bindings: iter.into_iter().collect(),
        }
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (x, v)) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{x}:{v}")?;
        }
        f.write_str("}")
    }
}

/// A set of canonical constraints.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintNetwork {
    constraints: BTreeSet<Constraint>,
}

impl ConstraintNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts the canonical form; returns false if already present.
    pub fn insert(&mut self, c: Constraint) -> bool {
        self.constraints.insert(c.canonical())
    }

    pub fn remove(&mut self, c: &Constraint) -> bool {
        self.constraints.remove(&c.canonical())
    }

    pub fn contains(&self, c: &Constraint) -> bool {
        self.constraints.contains(&c.canonical())
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> + '_ {
        self.constraints.iter()
    }

    pub fn extend(&mut self, other: impl IntoIterator<Item = Constraint>) {
        for c in other {
            self.insert(c);
        }
    }

    /// `κ_C(e)`: the constraints whose scope is bound by `e` and which `e` violates.
    pub fn kappa(&self, e: &Assignment) -> Vec<Constraint> {
        self.constraints
            .iter()
            .filter(|c| c.rejects(e))
            .cloned()
            .collect()
    }

    /// Whether `e` violates no constraint of the network.
    pub fn accepts(&self, e: &Assignment) -> bool {
        !self.constraints.iter().any(|c| c.rejects(e))
    }

    /// `C[Y]`: the constraints whose scope lies within `y`.
    pub fn restrict(&self, y: &BTreeSet<Var>) -> ConstraintNetwork {
        self.constraints
            .iter()
            .filter(|c| c.scope_within(|v| y.contains(&v)))
            .cloned()
            .collect()
    }

    /// Union of all scopes.
    pub fn vars(&self) -> BTreeSet<Var> {
        self.constraints
            .iter()
            .flat_map(|c| c.scope().iter().copied())
            .collect()
    }
}

impl FromIterator<Constraint> for ConstraintNetwork {
    fn from_iter<T: IntoIterator<Item = Constraint>>(iter: T) -> Self {
        let mut n = ConstraintNetwork::new();
        n.extend(iter);
        n
    }
}

impl<'a> IntoIterator for &'a ConstraintNetwork {
    type Item = &'a Constraint;
    type IntoIter = std::collections::btree_set::Iter<'a, Constraint>;
    fn into_iter(self) -> Self::IntoIter {
        self.constraints.iter()
    }
}
