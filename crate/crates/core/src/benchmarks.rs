//! Benchmark instances: vocabulary, hidden target and language.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bias::Language;
use crate::error::BenchmarkError;
use crate::model::{Assignment, Constraint, ConstraintNetwork, Domain, Relation, Var, Vocabulary};
use crate::solver::{self, SolveRequest, SolveStatus};

const JSUDOKU: &str = include_str!("../data/jsudoku.txt");
const MURDER: &str = include_str!("../data/murder.txt");

/// How a front end may draw queries over this vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Row-major cells; `shapes[i]` is the region of cell `i`.
    Grid { size: usize, shapes: Vec<u32> },
    /// Variables `2t` and `2t + 1` are the start and end of task `t`, tasks
    /// of job `j` being `j * machines .. (j + 1) * machines`.
    JobShop {
        jobs: usize,
        machines: usize,
        machine_of: Vec<usize>,
    },
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkInstance {
    pub name: String,
    pub vocabulary: Vocabulary,
    pub target: ConstraintNetwork,
    pub language: Language,
    pub expected_bias_size: Option<usize>,
    /// Bias size quoted for the original experiments, when it differs from
    /// what this language produces.
    pub reported_bias_size: Option<usize>,
    pub seed: Option<u64>,
    pub layout: Layout,
}

impl BenchmarkInstance {
    /// Number of candidates in the full bias over all variables.
    pub fn full_bias_size(&self) -> usize {
        let n = self.vocabulary.len();
        let pair = self.language.candidates_on(&[Var(0), Var(1)]).len();
        let quad = self
            .language
            .candidates_on(&[Var(0), Var(1), Var(2), Var(3)])
            .len();
        let c2 = n * n.saturating_sub(1) / 2;
        let c4 = if n < 4 {
            0
        } else {
            n * (n - 1) * (n - 2) * (n - 3) / 24
        };
        c2 * pair + c4 * quad
    }

    /// Every target constraint is a candidate of the language.
    pub fn check_representable(&self) -> Result<(), BenchmarkError> {
        for c in self.target.iter() {
            for v in c.scope() {
                if !self.vocabulary.contains(*v) {
                    return Err(BenchmarkError::Invalid(format!("{c} uses unknown {v}")));
                }
            }
            if !self.language.candidates_on(&c.scope_key()).contains(&c.canonical()) {
                return Err(BenchmarkError::Invalid(format!("{c} is not in the bias")));
            }
        }
        Ok(())
    }

    pub fn solve_target(&self, seed: u64) -> Result<Option<Assignment>, BenchmarkError> {
        let out = solver::solve(
            &SolveRequest::new(&self.vocabulary, self.vocabulary.vars())
                .hard(self.target.iter())
                .seed(seed),
        )?;
        Ok(match out.status {
            SolveStatus::Sat => out.assignment,
            _ => None,
        })
    }

    /// Representability, expected bias size and satisfiability.
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        self.check_representable()?;
        if let Some(n) = self.expected_bias_size {
            let got = self.full_bias_size();
            if got != n {
                return Err(BenchmarkError::Invalid(format!(
                    "{}: bias has {got} candidates, expected {n}",
                    self.name
                )));
            }
        }
        if self.solve_target(0)?.is_none() {
            return Err(BenchmarkError::Invalid(format!("{}: target unsatisfiable", self.name)));
        }
        Ok(())
    }

    /// Replaces the language, e.g. to restrict the comparison set.
    pub fn with_language(mut self, language: Language) -> Result<Self, BenchmarkError> {
        self.language = language;
        self.check_representable()?;
        self.expected_bias_size = Some(self.full_bias_size());
        Ok(self)
    }
}

fn parse_digits(line: &str) -> Result<Vec<u32>, BenchmarkError> {
    line.chars()
        .map(|c| {
            c.to_digit(10)
                .ok_or_else(|| BenchmarkError::Layout(format!("bad cell {c:?} in {line:?}")))
        })
        .collect()
}

/// Splits `# name` sections.
fn sections(text: &str) -> Vec<(&str, Vec<&str>)> {
    let mut out: Vec<(&str, Vec<&str>)> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(name) = line.strip_prefix('#') {
            out.push((name.trim(), Vec::new()));
        } else if let Some(last) = out.last_mut() {
            last.1.push(line);
        }
    }
    out
}

fn section<'a>(secs: &'a [(&str, Vec<&'a str>)], name: &str) -> Result<&'a [&'a str], BenchmarkError> {
    secs.iter()
        .find(|(n, _)| *n == name)
        .map(|(_, l)| l.as_slice())
        .ok_or_else(|| BenchmarkError::Layout(format!("missing section {name}")))
}

fn neq_clique(target: &mut ConstraintNetwork, vars: &[Var]) {
    for (i, &a) in vars.iter().enumerate() {
        for &b in &vars[i + 1..] {
            target.insert(Constraint::binary(Relation::Neq, a, b));
        }
    }
}

/// A square Sudoku-like grid from a region map: all-different rows, columns
/// and regions.
pub fn sudoku_from_regions(name: &str, text: &str) -> Result<BenchmarkInstance, BenchmarkError> {
    let secs = sections(text);
    let rows: Vec<Vec<u32>> = section(&secs, "regions")?
        .iter()
        .map(|l| parse_digits(l))
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(BenchmarkError::Layout(format!("region map is not {n}x{n}")));
    }
    let shapes: Vec<u32> = rows.concat();
    let mut counts = vec![0usize; n];
    for &s in &shapes {
        let slot = counts
            .get_mut(s as usize)
            .ok_or_else(|| BenchmarkError::Layout(format!("region id {s} out of range")))?;
        *slot += 1;
    }
    if counts.iter().any(|&c| c != n) {
        return Err(BenchmarkError::Layout(format!("regions must have {n} cells each")));
    }
    let cell = |r: usize, c: usize| Var((r * n + c) as u32);
    let mut target = ConstraintNetwork::new();
    for i in 0..n {
        neq_clique(&mut target, &(0..n).map(|c| cell(i, c)).collect::<Vec<_>>());
        neq_clique(&mut target, &(0..n).map(|r| cell(r, i)).collect::<Vec<_>>());
        let region: Vec<Var> = (0..n * n)
            .filter(|&k| shapes[k] == i as u32)
            .map(|k| Var(k as u32))
            .collect();
        neq_clique(&mut target, &region);
    }
    let vocabulary = Vocabulary::uniform(n * n, Domain::range(1, n as i32)?);
    let inst = BenchmarkInstance {
        name: name.to_string(),
        vocabulary,
        target,
        language: Language::comparisons(),
        expected_bias_size: None,
        reported_bias_size: None,
        seed: None,
        layout: Layout::Grid { size: n, shapes },
    };
    Ok(inst)
}

/// Jigsaw Sudoku: 81 cells, 811 distinct `!=` constraints.
pub fn jsudoku() -> Result<BenchmarkInstance, BenchmarkError> {
    let mut inst = sudoku_from_regions("jsudoku", JSUDOKU)?;
    inst.expected_bias_size = Some(19_440);
    Ok(inst)
}

/// The reference solution shipped with the Jigsaw layout.
pub fn jsudoku_solution() -> Result<Assignment, BenchmarkError> {
    let secs = sections(JSUDOKU);
    let digits: Vec<u32> = section(&secs, "solution")?
        .iter()
        .map(|l| parse_digits(l))
        .collect::<Result<Vec<_>, _>>()?
        .concat();
    Ok(digits
        .iter()
        .enumerate()
        .map(|(i, &d)| (Var(i as u32), d as i32))
        .collect())
}

/// 4x4 Sudoku with 2x2 boxes.
pub fn sudoku4() -> Result<BenchmarkInstance, BenchmarkError> {
    sudoku_from_regions("sudoku4", "# regions\n0011\n0011\n2233\n2233\n")
}

fn parse_relation(s: &str) -> Result<Relation, BenchmarkError> {
    Ok(match s {
        "=" => Relation::Eq,
        "!=" => Relation::Neq,
        "<" => Relation::Lt,
        ">" => Relation::Gt,
        "<=" => Relation::Leq,
        ">=" => Relation::Geq,
        _ => return Err(BenchmarkError::Layout(format!("unknown relation {s:?}"))),
    })
}

fn parse_var(s: &str) -> Result<Var, BenchmarkError> {
    s.parse::<u32>()
        .map(Var)
        .map_err(|_| BenchmarkError::Layout(format!("bad variable {s:?}")))
}

/// Murder puzzle: four all-different groups of five plus twelve binary
/// clues.
pub fn murder() -> Result<BenchmarkInstance, BenchmarkError> {
    let secs = sections(MURDER);
    let mut target = ConstraintNetwork::new();
    for line in section(&secs, "cliques")? {
        let vars: Vec<Var> = line
            .split_whitespace()
            .map(parse_var)
            .collect::<Result<_, _>>()?;
        neq_clique(&mut target, &vars);
    }
    for line in section(&secs, "extra")? {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [a, r, b] = parts[..] else {
            return Err(BenchmarkError::Layout(format!("bad clue {line:?}")));
        };
        target.insert(Constraint::new(parse_relation(r)?, &[parse_var(a)?, parse_var(b)?])?);
    }
    Ok(BenchmarkInstance {
        name: "murder".into(),
        vocabulary: Vocabulary::uniform(20, Domain::range(1, 5)?),
        target,
        language: Language::comparisons(),
        expected_bias_size: Some(1140),
        reported_bias_size: Some(760),
        seed: None,
        layout: Layout::Table,
    })
}

pub fn murder_solution() -> Result<Assignment, BenchmarkError> {
    let secs = sections(MURDER);
    let line = section(&secs, "solution")?
        .first()
        .ok_or_else(|| BenchmarkError::Layout("empty solution".into()))?;
    line.split_whitespace()
        .enumerate()
        .map(|(i, s)| {
            s.parse::<i32>()
                .map(|v| (Var(i as u32), v))
                .map_err(|_| BenchmarkError::Layout(format!("bad value {s:?}")))
        })
        .collect()
}

/// `edges` random `!=` constraints over `n` variables with domain `1..=d`.
///
/// Pairs are drawn among those that differ under a hidden random colouring,
/// so the target is satisfiable by construction.
pub fn random_neq(
    n: usize,
    d: i32,
    edges: usize,
    seed: u64,
) -> Result<BenchmarkInstance, BenchmarkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colour: Vec<i32> = (0..n).map(|_| rng.gen_range(1..=d)).collect();
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| colour[i] != colour[j])
        .collect();
    if pairs.len() < edges {
        return Err(BenchmarkError::Invalid(format!(
            "only {} admissible pairs for {edges} constraints",
            pairs.len()
        )));
    }
    pairs.shuffle(&mut rng);
    let target: ConstraintNetwork = pairs[..edges]
        .iter()
        .map(|&(i, j)| Constraint::binary(Relation::Neq, Var(i as u32), Var(j as u32)))
        .collect();
    Ok(BenchmarkInstance {
        name: format!("random-{n}-{d}-{edges}"),
        vocabulary: Vocabulary::uniform(n, Domain::range(1, d)?),
        target,
        language: Language::comparisons(),
        expected_bias_size: Some(n * (n - 1) / 2 * 6),
        reported_bias_size: None,
        seed: Some(seed),
        layout: Layout::Table,
    })
}

/// 100 variables, domains of size 5, 495 `!=` constraints.
pub fn random(seed: u64) -> Result<BenchmarkInstance, BenchmarkError> {
    let mut inst = random_neq(100, 5, 495, seed)?;
    inst.name = "random".into();
    inst.expected_bias_size = Some(29_700);
    inst.reported_bias_size = Some(19_800);
    Ok(inst)
}

/// A random network over the comparison language, for small-scale tests.
/// The target is satisfiable by construction: every constraint holds on a
/// hidden random assignment.
pub fn random_comparisons(
    n: usize,
    d: i32,
    constraints: usize,
    seed: u64,
) -> Result<BenchmarkInstance, BenchmarkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden: Vec<i32> = (0..n).map(|_| rng.gen_range(1..=d)).collect();
    let mut target = ConstraintNetwork::new();
    let mut scopes: BTreeSet<(usize, usize)> = BTreeSet::new();
    let max = n * (n - 1) / 2;
    let mut attempts = 0;
    while scopes.len() < constraints.min(max) && attempts < 100 * max.max(1) {
        attempts += 1;
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j || scopes.contains(&(i.min(j), i.max(j))) {
            continue;
        }
        let ok: Vec<Relation> = Relation::COMPARISONS
            .into_iter()
            .filter(|r| r.holds2(hidden[i], hidden[j]))
            .collect();
        let r = *ok.choose(&mut rng).expect("some comparison holds");
        scopes.insert((i.min(j), i.max(j)));
        target.insert(Constraint::new(r, &[Var(i as u32), Var(j as u32)])?);
    }
    Ok(BenchmarkInstance {
        name: format!("micro-{n}-{d}-{seed}"),
        vocabulary: Vocabulary::uniform(n, Domain::range(1, d)?),
        target,
        language: Language::comparisons(),
        expected_bias_size: Some(max * 6),
        reported_bias_size: None,
        seed: Some(seed),
        layout: Layout::Table,
    })
}

/// A Golomb ruler with `marks` marks on `0..=length`, keeping only the
/// quaternary distance constraints over index-disjoint pairs.
pub fn golomb(marks: usize, length: i32) -> Result<BenchmarkInstance, BenchmarkError> {
    let mut target = ConstraintNetwork::new();
    for i in 0..marks {
        for j in i + 1..marks {
            for k in j + 1..marks {
                for l in k + 1..marks {
                    let s: Vec<Var> = [i, j, k, l].iter().map(|&v| Var(v as u32)).collect();
                    target.insert(Constraint::new(Relation::AbsDiffNeq, &s)?);
                }
            }
        }
    }
    let mut inst = BenchmarkInstance {
        name: format!("golomb{marks}"),
        vocabulary: Vocabulary::uniform(marks, Domain::range(0, length)?),
        target,
        language: Language::with_abs_diff(),
        expected_bias_size: None,
        reported_bias_size: None,
        seed: None,
        layout: Layout::Table,
    };
    inst.expected_bias_size = Some(inst.full_bias_size());
    Ok(inst)
}

/// 8 marks on `0..=34`: 70 quaternary target constraints, bias of 238.
pub fn golomb8() -> Result<BenchmarkInstance, BenchmarkError> {
    let mut inst = golomb(8, 34)?;
    inst.expected_bias_size = Some(238);
    Ok(inst)
}

/// Job-shop feasibility. Each job runs one task on every machine in a
/// seeded order; durations are drawn from `1..=max_duration`. The target
/// holds the durations (`s + d = e`), the job orders (`e <= s'`) and, for
/// each machine, the order of its tasks in a seeded greedy schedule.
pub fn jobshop(
    jobs: usize,
    machines: usize,
    horizon: i32,
    max_duration: i32,
    seed: u64,
) -> Result<BenchmarkInstance, BenchmarkError> {
    if jobs == 0 || machines == 0 || max_duration < 1 {
        return Err(BenchmarkError::Invalid("empty job-shop".into()));
    }
    let tasks = jobs * machines;
    let start = |t: usize| Var((2 * t) as u32);
    let end = |t: usize| Var((2 * t + 1) as u32);
    for attempt in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9e37)));
        let mut machine_of = vec![0usize; tasks];
        let mut dur = vec![0i32; tasks];
        for j in 0..jobs {
            let mut order: Vec<usize> = (0..machines).collect();
            order.shuffle(&mut rng);
            for (k, m) in order.into_iter().enumerate() {
                machine_of[j * machines + k] = m;
                dur[j * machines + k] = rng.gen_range(1..=max_duration);
            }
        }
        // Greedy list schedule: repeatedly place the pending task that can
        // start earliest, preferring jobs with more work left, then a seeded
        // job order.
        let mut next = vec![0usize; jobs];
        let mut job_free = vec![0i32; jobs];
        let mut machine_free = vec![0i32; machines];
        let mut on_machine: Vec<Vec<usize>> = vec![Vec::new(); machines];
        let mut makespan = 0;
        let mut priority: Vec<usize> = (0..jobs).collect();
        priority.shuffle(&mut rng);
        let earliest = |j: usize, next: &[usize], jf: &[i32], mf: &[i32]| {
            jf[j].max(mf[machine_of[j * machines + next[j]]])
        };
        while let Some(&j) = priority
            .iter()
            .filter(|&&j| next[j] < machines)
            .min_by_key(|&&j| {
                let left: i32 = dur[j * machines + next[j]..(j + 1) * machines].iter().sum();
                (earliest(j, &next, &job_free, &machine_free), -left)
            })
        {
            let t = j * machines + next[j];
            let m = machine_of[t];
            let s = earliest(j, &next, &job_free, &machine_free);
            let e = s + dur[t];
            job_free[j] = e;
            machine_free[m] = e;
            on_machine[m].push(t);
            makespan = makespan.max(e);
            next[j] += 1;
        }
        if makespan > horizon {
            continue;
        }
        let mut target = ConstraintNetwork::new();
        for t in 0..tasks {
            target.insert(Constraint::new(Relation::OffsetEq(dur[t]), &[start(t), end(t)])?);
        }
        for j in 0..jobs {
            for k in 1..machines {
                let t = j * machines + k;
                target.insert(Constraint::new(Relation::Leq, &[end(t - 1), start(t)])?);
            }
        }
        for seq in &on_machine {
            for w in seq.windows(2) {
                target.insert(Constraint::new(Relation::Leq, &[end(w[0]), start(w[1])])?);
            }
        }
        let language = Language::with_offsets(max_duration)?;
        let mut inst = BenchmarkInstance {
            name: format!("jobshop-{jobs}-{machines}-{horizon}"),
            vocabulary: Vocabulary::uniform(2 * tasks, Domain::range(0, horizon)?),
            target,
            language,
            expected_bias_size: None,
            reported_bias_size: None,
            seed: Some(seed),
            layout: Layout::JobShop {
                jobs,
                machines,
                machine_of,
            },
        };
        inst.expected_bias_size = Some(inst.full_bias_size());
        return Ok(inst);
    }
    Err(BenchmarkError::Invalid(format!(
        "no schedule of {jobs}x{machines} fits horizon {horizon}"
    )))
}

/// 10 jobs on 3 machines, horizon 15, unit durations: 60 variables and a
/// bias of 14,160.
pub fn jobshop_small(seed: u64) -> Result<BenchmarkInstance, BenchmarkError> {
    let mut inst = jobshop(10, 3, 15, 1, seed)?;
    inst.name = "jobshop".into();
    inst.expected_bias_size = Some(14_160);
    Ok(inst)
}

/// The instances used by the experiments, by name.
pub const NAMES: [&str; 6] = ["jsudoku", "murder", "random", "golomb8", "jobshop", "sudoku4"];

pub fn by_name(name: &str, seed: u64) -> Result<BenchmarkInstance, BenchmarkError> {
    match name {
        "jsudoku" => jsudoku(),
        "murder" => murder(),
        "random" => random(seed),
        "golomb8" | "golomb" => golomb8(),
        "jobshop" => jobshop_small(seed),
        "sudoku4" => sudoku4(),
        _ => Err(BenchmarkError::Invalid(format!("unknown benchmark {name:?}"))),
    }
}
