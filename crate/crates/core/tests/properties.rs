mod common;

use std::collections::BTreeSet;

use acq_core::bias::{Bias, Language};
use acq_core::model::{Assignment, Constraint, Relation, Var};
use acq_core::oracle::SimulatedOracle;
use acq_core::solver::{self, LinearViolationObjective, SolveRequest, SolveStatus};
use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn full_assignment(rng: &mut impl Rng, n: usize, d: i32) -> Assignment {
    (0..n as u32).map(|i| (Var(i), rng.gen_range(1..=d))).collect()
}

fn random_subset(rng: &mut impl Rng, n: usize) -> BTreeSet<Var> {
    (0..n as u32).filter(|_| rng.gen_bool(0.5)).map(Var).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn canonical_form_keeps_meaning(
        r in 0usize..6,
        a in 0u32..5,
        b in 0u32..5,
        va in -3i32..4,
        vb in -3i32..4,
    ) {
        prop_assume!(a != b);
        let rel = Relation::COMPARISONS[r];
        let raw = Constraint::raw(rel, &[Var(a), Var(b)]).unwrap();
        let canon = raw.canonical();
        prop_assert!(canon.scope()[0] < canon.scope()[1]);
        let e: Assignment = [(Var(a), va), (Var(b), vb)].into_iter().collect();
        prop_assert_eq!(raw.rejects(&e), canon.rejects(&e));
        prop_assert_eq!(canon.canonical(), canon.clone());
    }

    #[test]
    fn abs_diff_canonical_form_keeps_meaning(
        vals in proptest::collection::vec(0i32..6, 4),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars: Vec<Var> = (0..4).map(Var).collect();
        vars.shuffle(&mut rng);
        let raw = Constraint::raw(Relation::AbsDiffNeq, &vars).unwrap();
        let e: Assignment = (0..4).map(|i| (Var(i), vals[i as usize])).collect();
        prop_assert_eq!(raw.rejects(&e), raw.canonical().rejects(&e));
    }

    #[test]
    fn kappa_grows_with_the_assignment(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: BTreeSet<Var> = (0..n as u32).map(Var).collect();
        let bias = Bias::full(&Language::comparisons(), &y);
        let e = full_assignment(&mut rng, n, 4);
        let part = e.project(&random_subset(&mut rng, n));
        let small: BTreeSet<Constraint> = bias.kappa(&part).into_iter().collect();
        let big: BTreeSet<Constraint> = bias.kappa(&e).into_iter().collect();
        prop_assert!(small.is_subset(&big));
        prop_assert_eq!(bias.kappa_len(&e), big.len());
    }

    #[test]
    fn restrict_composes(seed in any::<u64>(), n in 2usize..8, m in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(&mut rng, n, m);
        let a = random_subset(&mut rng, n);
        let b = random_subset(&mut rng, n);
        let ab: BTreeSet<Var> = a.intersection(&b).copied().collect();
        let lhs: BTreeSet<Constraint> = net.restrict(&a).restrict(&b).iter().cloned().collect();
        let rhs: BTreeSet<Constraint> = net.restrict(&ab).iter().cloned().collect();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn positive_answers_are_closed_under_projection(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let voc = vocab(n, 4);
        let target = planted_network(&mut rng, &voc, n);
        let oracle = SimulatedOracle::new(&target);
        let e = full_assignment(&mut rng, n, 4);
        let part = e.project(&random_subset(&mut rng, n));
        if oracle.answer(&e).is_yes() {
            prop_assert!(oracle.answer(&part).is_yes());
        }
        if !oracle.answer(&part).is_yes() {
            prop_assert!(!oracle.answer(&e).is_yes());
        }
    }

    #[test]
    fn solver_agrees_with_enumeration(seed in any::<u64>(), n in 2usize..6, m in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let voc = vocab(n, 3);
        let net = random_network(&mut rng, n, m);
        let out = solver::solve(
            &SolveRequest::new(&voc, voc.vars()).hard(net.iter()).seed(seed),
        ).unwrap();
        prop_assert_eq!(out.status == SolveStatus::Sat, has_solution(&voc, &net));
        if let Some(e) = &out.assignment {
            prop_assert!(net.accepts(e));
            prop_assert_eq!(e.len(), n);
        }
        let cands = all_candidates(&Language::comparisons(), n);
        let c = cands.choose(&mut rng).unwrap();
        prop_assert_eq!(solver::is_implied(&voc, &net, c).unwrap(), implied(&voc, &net, c));
    }

    #[test]
    fn dense_neq_graphs_agree_with_enumeration(seed in any::<u64>(), n in 3usize..8, d in 2i32..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let voc = vocab(n, d);
        let mut net = acq_core::model::ConstraintNetwork::new();
        for i in 0..n as u32 {
            for j in i + 1..n as u32 {
                if rng.gen_bool(0.75) {
                    net.insert(Constraint::binary(Relation::Neq, Var(i), Var(j)));
                } else if rng.gen_bool(0.2) {
                    net.insert(Constraint::binary(random_relation(&mut rng), Var(i), Var(j)));
                }
            }
        }
        let out = solver::solve(&SolveRequest::new(&voc, voc.vars()).hard(net.iter()).seed(seed)).unwrap();
        prop_assert_eq!(out.status == SolveStatus::Sat, has_solution(&voc, &net));
        let cands = all_candidates(&Language::comparisons(), n);
        for c in cands.choose_multiple(&mut rng, 4) {
            prop_assert_eq!(solver::is_implied(&voc, &net, c).unwrap(), implied(&voc, &net, c));
        }
    }

    #[test]
    fn optimum_matches_enumeration(seed in any::<u64>(), n in 2usize..5, m in 0usize..6, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let voc = vocab(n, 3);
        let net = random_network(&mut rng, n, m);
        let mut cands = all_candidates(&Language::comparisons(), n);
        cands.shuffle(&mut rng);
        let terms: Vec<(Constraint, i64)> = cands
            .into_iter()
            .take(k)
            .map(|c| (c, rng.gen_range(-3..=5)))
            .collect();
        let obj = LinearViolationObjective::new(terms);
        let mut best = None;
        for_each_solution(&voc, &net, |e| {
            let v = obj.value(&dense_to_assignment(e));
            best = Some(best.map_or(v, |b: i64| b.max(v)));
            true
        });
        let out = solver::solve_optimize(
            &SolveRequest::new(&voc, voc.vars()).hard(net.iter()).objective(&obj).seed(seed),
        ).unwrap();
        match best {
            None => prop_assert_eq!(out.status, SolveStatus::Unsat),
            Some(b) => {
                prop_assert_eq!(out.status, SolveStatus::Sat);
                prop_assert_eq!(out.objective_value, Some(b));
                prop_assert_eq!(obj.value(out.assignment.as_ref().unwrap()), b);
            }
        }
    }

    #[test]
    fn scaling_weights_keeps_the_argmax(seed in any::<u64>(), n in 2usize..6, scale in 1i64..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let voc = vocab(n, 4);
        let net = planted_network(&mut rng, &voc, n);
        let cands = all_candidates(&Language::comparisons(), n);
        let mut terms: Vec<(Constraint, i64)> = Vec::new();
        for c in &cands {
            if rng.gen_bool(0.4) {
                terms.push((c.clone(), rng.gen_range(-2..=3)));
            }
        }
        let scaled: Vec<(Constraint, i64)> = terms.iter().map(|(c, w)| (c.clone(), w * scale)).collect();
        let (o1, o2) = (LinearViolationObjective::new(terms), LinearViolationObjective::new(scaled));
        let solve = |o| {
            solver::solve_optimize(
                &SolveRequest::new(&voc, voc.vars()).hard(net.iter()).objective(o).seed(seed),
            )
            .unwrap()
        };
        let (a, b) = (solve(&o1), solve(&o2));
        prop_assert_eq!(&a.assignment, &b.assignment);
        prop_assert_eq!(a.objective_value.map(|v| v * scale), b.objective_value);
    }

    #[test]
    fn incremental_biases_partition_the_full_bias(seed in any::<u64>(), n in 1usize..9, quads in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lang = if quads { Language::with_abs_diff() } else { Language::comparisons() };
        let mut order: Vec<Var> = (0..n as u32).map(Var).collect();
        order.shuffle(&mut rng);
        let mut y = BTreeSet::new();
        let mut union = BTreeSet::new();
        let mut total = 0;
        for &x in &order {
            y.insert(x);
            let inc = Bias::incremental(&lang, &y, x);
            total += inc.len();
            union.extend(inc.iter().cloned());
        }
        let full: BTreeSet<Constraint> = Bias::full(&lang, &y).iter().cloned().collect();
        prop_assert_eq!(total, union.len());
        prop_assert_eq!(union, full);
    }
}
