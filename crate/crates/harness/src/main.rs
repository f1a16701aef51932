use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use acq_core::acquisition::{verify_equivalence, Equivalence, VariableOrder};
use acq_core::benchmarks::{self, BenchmarkInstance};
use acq_core::model::{Constraint, ConstraintNetwork};
use acq_core::qgen::{ObjectiveKind, WorkBudget};
use acq_core::solver::Limits;
use acq_harness::checkpoint::Checkpoint;
use acq_harness::config::{Algorithm, ExperimentConfig, GeneratorKind};
use acq_harness::experiment::{self, build_acquisition};
use acq_harness::metrics::{aggregate, write_csv, write_json, RunMetrics};
use acq_harness::session;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "growacq", about = "Constraint acquisition experiments and sessions")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment configuration over all seeds.
    Bench(RunArgs),
    /// Run a single seed and print its metrics.
    Learn(RunArgs),
    /// Serve a human-oracle session over HTTP.
    Serve(ServeArgs),
    /// Check a learned network (JSON list of constraints) against a target.
    Verify {
        #[arg(long)]
        benchmark: String,
        #[arg(long, default_value_t = 0)]
        instance_seed: u64,
        #[arg(long)]
        learned: PathBuf,
        #[arg(long, default_value_t = 60_000)]
        limit_ms: u64,
    },
    /// Write a benchmark instance as JSON.
    Gen {
        #[arg(long)]
        benchmark: String,
        #[arg(long, default_value_t = 0)]
        instance_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgArg {
    Mquacq2,
    Growacq,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjArg {
    MaxViolation,
    Guided,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenArg {
    Pqgen,
    Tqgen,
    Direct,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Given,
    Random,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, default_value = "murder")]
    benchmark: String,
    #[arg(long, default_value_t = 0)]
    instance_seed: u64,
    #[arg(long, value_enum, default_value = "growacq")]
    algorithm: AlgArg,
    #[arg(long, value_enum, default_value = "max-violation")]
    objective: ObjArg,
    #[arg(long, value_enum, default_value = "pqgen")]
    generator: GenArg,
    /// PQ-Gen size limit l.
    #[arg(long, default_value_t = 5000)]
    size_limit: usize,
    /// PQ-Gen budget t in milliseconds.
    #[arg(long, default_value_t = 1000)]
    budget_ms: u64,
    /// PQ-Gen budget in solver nodes instead of milliseconds.
    #[arg(long)]
    budget_nodes: Option<u64>,
    #[arg(long, default_value_t = 200)]
    tau_ms: u64,
    #[arg(long, default_value_t = 2000)]
    t_global_ms: u64,
    /// Per-query cap of the direct generator, in milliseconds.
    #[arg(long, default_value_t = 3_600_000)]
    direct_cap_ms: u64,
    #[arg(long)]
    no_structure: bool,
    #[arg(long, value_enum, default_value = "given")]
    order: OrderArg,
    /// Seeds as a comma list or a half-open range `a..b`.
    #[arg(long, default_value = "0..10")]
    seeds: String,
    #[arg(long)]
    run_cap_ms: Option<u64>,
    #[arg(long, default_value_t = 60_000)]
    verify_limit_ms: u64,
    /// Output directory for metrics files.
    #[arg(long, env = "GROWACQ_OUT")]
    output: Option<PathBuf>,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed {x:?}")))
        .collect()
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig {
            benchmark: self.benchmark.clone(),
            instance_seed: self.instance_seed,
            algorithm: match self.algorithm {
                AlgArg::Mquacq2 => Algorithm::Mquacq2,
                AlgArg::Growacq => Algorithm::GrowacqMquacq2,
            },
            objective: match self.objective {
                ObjArg::MaxViolation => ObjectiveKind::MaxViolation,
                ObjArg::Guided => ObjectiveKind::Guided,
            },
            generator: match self.generator {
                GenArg::Pqgen => GeneratorKind::Pqgen,
                GenArg::Tqgen => GeneratorKind::Tqgen,
                GenArg::Direct => GeneratorKind::Direct,
            },
            structure: !self.no_structure,
            variable_order: match self.order {
                OrderArg::Given => VariableOrder::Given,
                OrderArg::Random => VariableOrder::SeededRandom,
            },
            seeds: parse_seeds(&self.seeds)?,
            run_cap_ms: self.run_cap_ms,
            verify_limit_ms: self.verify_limit_ms,
            output: self.output.clone(),
            ..Default::default()
        };
        c.pqgen.size_limit = self.size_limit;
        c.pqgen.budget = match self.budget_nodes {
            Some(n) => WorkBudget::Nodes(n),
            None => WorkBudget::Millis(self.budget_ms),
        };
        c.tqgen.tau_ms = self.tau_ms;
        c.tqgen.t_global_ms = self.t_global_ms;
        c.direct.cap = WorkBudget::Millis(self.direct_cap_ms);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "sudoku4")]
    benchmark: String,
    #[arg(long, default_value_t = 0)]
    instance_seed: u64,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "growacq")]
    algorithm: AlgArg,
    #[arg(long, value_enum, default_value = "guided")]
    objective: ObjArg,
    #[arg(long, default_value = "session-checkpoint.json")]
    checkpoint: PathBuf,
    /// Resume from a checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn print_metrics(label: &str, m: &RunMetrics) {
    println!(
        "{label} seed={} queries={} learned={} convergence={:?} equivalence={:?} t_gen={:.4}s t_mean={:.4}s t_max={:.3}s t_total={:.2}s{}",
        m.seed,
        m.queries,
        m.learned,
        m.convergence,
        m.equivalence,
        m.t_gen_mean,
        m.t_mean,
        m.t_max,
        m.t_total,
        if m.failed { format!(" FAILED: {}", m.diagnostics) } else { String::new() }
    );
}

fn bench(args: &RunArgs, single: bool) -> Result<bool> {
    let mut cfg = args.config()?;
    if single {
        cfg.seeds.truncate(1);
    }
    let label = cfg.label();
    let runs = experiment::run_experiment(&cfg)?;
    let metrics: Vec<RunMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    for m in &metrics {
        print_metrics(&label, m);
    }
    let a = aggregate(&metrics);
    println!(
        "{label} mean over {} runs: queries={:.1} t_gen={:.4}s t_mean={:.4}s t_max={:.3}s t_total={:.2}s convergence={:.0}%",
        a.runs,
        a.queries,
        a.t_gen_mean,
        a.t_mean,
        a.t_max,
        a.t_total,
        a.convergence_rate * 100.0
    );
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join(format!("{label}.csv")), &metrics)?;
        write_json(&dir.join(format!("{label}.json")), &cfg, &runs)?;
    }
    Ok(metrics.iter().all(RunMetrics::succeeded))
}

fn load_instance(name: &str, seed: u64) -> Result<BenchmarkInstance> {
    Ok(benchmarks::by_name(name, seed)?)
}

fn serve(args: &ServeArgs) -> Result<bool> {
    let inst = load_instance(&args.benchmark, args.instance_seed)?;
    let acq = match &args.resume {
        Some(p) => Checkpoint::load(p)?.acquisition,
        None => {
            let cfg = ExperimentConfig {
                benchmark: args.benchmark.clone(),
                algorithm: match args.algorithm {
                    AlgArg::Mquacq2 => Algorithm::Mquacq2,
                    AlgArg::Growacq => Algorithm::GrowacqMquacq2,
                },
                objective: match args.objective {
                    ObjArg::MaxViolation => ObjectiveKind::MaxViolation,
                    ObjArg::Guided => ObjectiveKind::Guided,
                },
                ..Default::default()
            };
            build_acquisition(&inst, &cfg, args.seed)
        }
    };
    let handle = session::start(
        acq,
        inst.layout.clone(),
        Some(args.benchmark.clone()),
        args.checkpoint.clone(),
        args.addr,
    )?;
    println!("session on http://{}", handle.addr);
    let acq = handle.join()?;
    println!(
        "session over: {:?}, {} constraints learned after {} queries",
        acq.state.converged,
        acq.state.learned.len(),
        acq.state.log.len()
    );
    Ok(true)
}

fn verify(benchmark: &str, seed: u64, learned: &PathBuf, limit_ms: u64) -> Result<bool> {
    let inst = load_instance(benchmark, seed)?;
    let cs: Vec<Constraint> = serde_json::from_slice(&fs::read(learned)?)?;
    let net: ConstraintNetwork = cs.into_iter().collect();
    let eq = verify_equivalence(
        &inst.vocabulary,
        &net,
        &inst.target,
        Limits::time(Duration::from_millis(limit_ms)),
    )?;
    println!("{eq:?}");
    Ok(eq == Equivalence::Equivalent)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Bench(a) => bench(a, false),
        Cmd::Learn(a) => bench(a, true),
        Cmd::Serve(a) => serve(a),
        Cmd::Verify {
            benchmark,
            instance_seed,
            learned,
            limit_ms,
        } => verify(benchmark, *instance_seed, learned, *limit_ms),
        Cmd::Gen {
            benchmark,
            instance_seed,
            out,
        } => load_instance(benchmark, *instance_seed).and_then(|inst| {
            inst.validate()?;
            fs::write(out, serde_json::to_vec_pretty(&inst)?)?;
            Ok(true)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 7").unwrap(), vec![4, 7]);
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from([
            "growacq", "bench", "--benchmark", "golomb8", "--objective", "guided", "--seeds", "0..2",
        ])
        .unwrap();
        let Cmd::Bench(a) = cli.cmd else { panic!() };
        let c = a.config().unwrap();
        assert_eq!(c.objective, ObjectiveKind::Guided);
        assert_eq!(c.seeds, vec![0, 1]);
    }
}
