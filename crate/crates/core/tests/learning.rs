mod common;

use std::collections::BTreeSet;

use acq_core::acquisition::{Acquisition, Convergence, LearnerConfig, VariableOrder};
use acq_core::bias::{Bias, Language};
use acq_core::model::{Assignment, ConstraintNetwork, Var};
use acq_core::oracle::{Answer, Oracle, Phase, SimulatedOracle};
use acq_core::qgen::{self, GenContext, GenOutcome, PqGenConfig, RelationStats, WorkBudget};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pq_cfg() -> PqGenConfig {
    PqGenConfig {
        budget: WorkBudget::Nodes(500),
        ..Default::default()
    }
}

fn learner(seed: u64) -> LearnerConfig {
    LearnerConfig {
        generator: acq_core::acquisition::Generator::PqGen(pq_cfg()),
        structure: true,
        seed,
    }
}

/// Answers like `inner` and counts the questions.
struct Counting<O> {
    inner: O,
    asked: usize,
}

impl<O: Oracle> Oracle for Counting<O> {
    fn ask(&mut self, e: &Assignment, phase: Phase) -> Result<Answer, acq_core::error::OracleError> {
        self.asked += 1;
        self.inner.ask(e, phase)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn no_premature_nil(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=6);
        let voc = vocab(n, rng.gen_range(2..=4));
        let m = rng.gen_range(0..=n + 2);
        let learned = planted_network(&mut rng, &voc, m);
        let mut bias: Bias = all_candidates(&Language::comparisons(), n)
            .into_iter()
            .filter(|c| !learned.contains(c) && rng.gen_bool(0.6))
            .collect();
        let residual = ConstraintNetwork::new();
        let stats = RelationStats::new();
        let mut round = 0;
        loop {
            round += 1;
            let ctx = GenContext {
                vocab: &voc,
                learned: &learned,
                residual: &residual,
                bias: &bias,
                stats: &stats,
                gamma_size: 6,
                seed: seed ^ round,
            };
            let g = qgen::pq_gen(&ctx, &pq_cfg()).unwrap();
            for c in &g.implied {
                prop_assert!(implied(&voc, &learned, c));
                bias.remove(c);
            }
            match g.outcome {
                GenOutcome::Query(e) => {
                    prop_assert!(learned.accepts(&e));
                    prop_assert!(bias.kappa_len(&e) > 0);
                    bias.remove_violated(&e);
                }
                GenOutcome::Converged => {
                    for c in bias.iter() {
                        prop_assert!(implied(&voc, &learned, c), "{} not implied", c);
                    }
                    break;
                }
                GenOutcome::Premature => prop_assert!(false, "premature outcome"),
            }
        }
    }

    #[test]
    fn grow_learns_an_equivalent_network(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=7);
        let voc = vocab(n, rng.gen_range(2..=4));
        let m = rng.gen_range(0..=2 * n);
        let target = planted_network(&mut rng, &voc, m);
        let order = VariableOrder::SeededRandom.arrange(&voc, seed);
        let mut acq = Acquisition::grow(
            voc.clone(),
            Language::comparisons(),
            learner(seed),
            ConstraintNetwork::new(),
            order,
        );
        let res = acq.run(&mut SimulatedOracle::new(&target)).unwrap();
        prop_assert_eq!(res, Convergence::Full);
        prop_assert!(same_solutions(&voc, acq.learned(), &target));
        prop_assert!(acq.learned().iter().all(|c| implied(&voc, &target, c)));
    }

    #[test]
    fn direct_learns_an_equivalent_network(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=6);
        let voc = vocab(n, rng.gen_range(2..=4));
        let m = rng.gen_range(0..=2 * n);
        let target = planted_network(&mut rng, &voc, m);
        let mut acq = Acquisition::direct(
            voc.clone(),
            Language::comparisons(),
            learner(seed),
            ConstraintNetwork::new(),
        );
        let res = acq.run(&mut SimulatedOracle::new(&target)).unwrap();
        prop_assert_eq!(res, Convergence::Full);
        prop_assert!(same_solutions(&voc, acq.learned(), &target));
    }
}

#[test]
fn find_scope_stays_within_its_query_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &size in &[16usize, 32] {
        let voc = vocab(size, 4);
        let target = planted_network(&mut rng, &voc, size);
        let fresh = Acquisition::direct(
            voc.clone(),
            Language::comparisons(),
            learner(0),
            ConstraintNetwork::new(),
        );
        let mut done = 0;
        while done < 20 {
            let e: Assignment = (0..size as u32).map(|i| (Var(i), rng.gen_range(1..=4))).collect();
            if target.accepts(&e) {
                continue;
            }
            let mut acq = fresh.clone();
            let mut oracle = Counting {
                inner: SimulatedOracle::new(&target),
                asked: 0,
            };
            let s = acq.locate_scope(&e, &mut oracle).unwrap();
            let scope: BTreeSet<Var> = s.iter().copied().collect();
            assert!(
                target.iter().any(|c| c.rejects(&e) && c.scope().iter().copied().collect::<BTreeSet<_>>() == scope),
                "located {s:?} is not the scope of a violated target constraint"
            );
            let log2 = (size as f64).log2().ceil() as usize;
            assert!(oracle.asked <= 2 * s.len() * log2 + s.len(), "{} queries for {s:?}", oracle.asked);
            done += 1;
        }
    }
}

#[test]
fn interrupted_run_resumes_from_a_snapshot() {
    let voc = vocab(6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let target = planted_network(&mut rng, &voc, 8);
    let order = VariableOrder::Given.arrange(&voc, 0);
    let fresh = Acquisition::grow(voc.clone(), Language::comparisons(), learner(3), ConstraintNetwork::new(), order);

    let mut whole = fresh.clone();
    whole.run(&mut SimulatedOracle::new(&target)).unwrap();

    /// Closes the session after `left` answers.
    struct Flaky<'a> {
        inner: SimulatedOracle,
        left: &'a mut usize,
    }
    impl Oracle for Flaky<'_> {
        fn ask(&mut self, e: &Assignment, phase: Phase) -> Result<Answer, acq_core::error::OracleError> {
            if *self.left == 0 {
                return Err(acq_core::error::OracleError::SessionClosed);
            }
            *self.left -= 1;
            self.inner.ask(e, phase)
        }
    }
    let mut split = fresh;
    let mut left = 7;
    assert!(split
        .run(&mut Flaky { inner: SimulatedOracle::new(&target), left: &mut left })
        .is_err());
    assert_eq!(split.state.log.len(), 7);
    let mut resumed = serde_json_round_trip(&split);
    assert_eq!(resumed.run(&mut SimulatedOracle::new(&target)).unwrap(), Convergence::Full);
    let asked = |a: &Acquisition| -> Vec<(Assignment, Answer)> {
        a.state.log[..7].iter().map(|q| (q.assignment.clone(), q.answer)).collect()
    };
    assert_eq!(asked(&resumed), asked(&whole));
    assert!(same_solutions(&voc, resumed.learned(), &target));
    assert!(same_solutions(&voc, whole.learned(), &target));
}

fn serde_json_round_trip(a: &Acquisition) -> Acquisition {
    serde_json::from_str(&serde_json::to_string(a).unwrap()).unwrap()
}
