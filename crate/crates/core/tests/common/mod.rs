//! Brute-force reference checks shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use acq_core::bias::Language;
use acq_core::model::{Assignment, Constraint, ConstraintNetwork, Domain, Relation, Var, Vocabulary};
use rand::seq::SliceRandom;
use rand::Rng;

/// Visits every complete assignment accepted by `net`, pruning on
/// constraints as soon as their scope is bound. Stops when `f` returns false.
pub fn for_each_solution(
    vocab: &Vocabulary,
    net: &ConstraintNetwork,
    mut f: impl FnMut(&[Option<i32>]) -> bool,
) {
    let n = vocab.len();
    // Constraints checked when their last variable gets bound.
    let mut at: Vec<Vec<Constraint>> = vec![Vec::new(); n];
    for c in net.iter() {
        let last = c.scope().iter().map(|v| v.index()).max().unwrap();
        at[last].push(c.clone());
    }
    let mut e = vec![None; n];
    fn rec(
        i: usize,
        vocab: &Vocabulary,
        at: &[Vec<Constraint>],
        e: &mut Vec<Option<i32>>,
        f: &mut dyn FnMut(&[Option<i32>]) -> bool,
    ) -> bool {
        if i == e.len() {
            return f(e);
        }
        for &v in vocab.domain(Var(i as u32)).values() {
            e[i] = Some(v);
            if at[i].iter().any(|c| c.rejects_dense(e)) {
                continue;
            }
            if !rec(i + 1, vocab, at, e, f) {
                e[i] = None;
                return false;
            }
        }
        e[i] = None;
        true
    }
    rec(0, vocab, &at, &mut e, &mut f);
}

pub fn accepts_dense(net: &ConstraintNetwork, e: &[Option<i32>]) -> bool {
    !net.iter().any(|c| c.rejects_dense(e))
}

/// sol(a) ⊆ sol(b).
pub fn subsumed(vocab: &Vocabulary, a: &ConstraintNetwork, b: &ConstraintNetwork) -> bool {
    let mut ok = true;
    for_each_solution(vocab, a, |e| {
        ok = accepts_dense(b, e);
        ok
    });
    ok
}

pub fn same_solutions(vocab: &Vocabulary, a: &ConstraintNetwork, b: &ConstraintNetwork) -> bool {
    subsumed(vocab, a, b) && subsumed(vocab, b, a)
}

pub fn has_solution(vocab: &Vocabulary, net: &ConstraintNetwork) -> bool {
    let mut found = false;
    for_each_solution(vocab, net, |_| {
        found = true;
        false
    });
    found
}

/// Every solution of `net` satisfies `c`.
pub fn implied(vocab: &Vocabulary, net: &ConstraintNetwork, c: &Constraint) -> bool {
    let mut ok = true;
    for_each_solution(vocab, net, |e| {
        ok = !c.rejects_dense(e);
        ok
    });
    ok
}

pub fn dense_to_assignment(e: &[Option<i32>]) -> Assignment {
    e.iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (Var(i as u32), v)))
        .collect()
}

pub fn vocab(n: usize, d: i32) -> Vocabulary {
    Vocabulary::uniform(n, Domain::range(1, d).unwrap())
}

/// Every candidate of `lang` over all variables, in a fixed order.
pub fn all_candidates(lang: &Language, n: usize) -> Vec<Constraint> {
    let vars: Vec<Var> = (0..n as u32).map(Var).collect();
    let y: BTreeSet<Var> = vars.iter().copied().collect();
    let mut cs: Vec<Constraint> = acq_core::bias::Bias::full(lang, &y).iter().cloned().collect();
    cs.sort();
    cs
}

/// A random network of `m` binary comparisons over `n` variables.
pub fn random_network(rng: &mut impl Rng, n: usize, m: usize) -> ConstraintNetwork {
    let mut pool = all_candidates(&Language::comparisons(), n);
    pool.shuffle(rng);
    pool.into_iter().take(m).collect()
}

/// A random network with at least one solution: every constraint holds on
/// a hidden assignment.
pub fn planted_network(rng: &mut impl Rng, vocab: &Vocabulary, m: usize) -> ConstraintNetwork {
    let n = vocab.len();
    let hidden: Vec<Option<i32>> = (0..n)
        .map(|i| Some(*vocab.domain(Var(i as u32)).values().choose(rng).unwrap()))
        .collect();
    let mut pool: Vec<Constraint> = all_candidates(&Language::comparisons(), n)
        .into_iter()
        .filter(|c| !c.rejects_dense(&hidden))
        .collect();
    pool.shuffle(rng);
    pool.into_iter().take(m).collect()
}

pub fn random_relation(rng: &mut impl Rng) -> Relation {
    *Relation::COMPARISONS.choose(rng).unwrap()
}
