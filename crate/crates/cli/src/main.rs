//! `excbf`: benchmark, simulate, precompute and check explicit CBF filters.
//!
//! Exit status: 0 success, 1 validation failure, 2 infeasible QP,
//! 3 enumeration budget exceeded.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use explicit_cbf::affine::{self, AffineError, AffineProblem};
use explicit_cbf::bench::{self, BenchConfig, BenchError};
use explicit_cbf::oracle::OracleError;
use explicit_cbf::runtime::{simulate, RuntimeError};
use explicit_cbf::scenario::{self, Scenario, ScenarioError};
use explicit_cbf::table::RegionTable;
use explicit_cbf::{Theta, Tolerances};
use nalgebra::DMatrix;

#[derive(Debug, Parser)]
#[command(name = "excbf", version, about = "Explicit control-barrier-function safety filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time the oracles on random feasible QPs.
    Bench(BenchArgs),
    /// Run a scenario in closed loop with the resource-aware filter.
    Simulate(SimulateArgs),
    /// Precompute the explicit piecewise-affine law of an affine scenario.
    Regions(RegionsArgs),
    /// Validate a scenario file without simulating.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Input dimensions, comma separated.
    #[arg(long = "m", value_delimiter = ',', default_value = "2,4,6,8,10")]
    m_list: Vec<usize>,
    /// Constraint counts, comma separated.
    #[arg(long = "p", value_delimiter = ',', default_value = "1,2,4,8")]
    p_list: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    scenario: PathBuf,
    #[arg(long, default_value = "activeset")]
    theta: Theta,
    /// Override the scenario's sampling period.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the scenario's horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Trajectory CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RegionsArgs {
    scenario: PathBuf,
    /// Region-table destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the affinity probe and the grid check.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// States compared against the oracle after precomputation.
    #[arg(long, default_value_t = 500)]
    samples: usize,
    /// Half-width of the sampling box around the initial state.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
}

#[derive(Debug, Args)]
struct CheckArgs {
    scenario: PathBuf,
    /// Seed for the sampled gradient checks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A message and the exit status it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

const VALIDATION: u8 = 1;
const INFEASIBLE: u8 = 2;
const BUDGET: u8 = 3;

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: VALIDATION,
            message: message.into(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Invalid(errs) => Failure::validation(format!("invalid scenario:\n  {}", errs.join("\n  "))),
            other => Failure::validation(other.to_string()),
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        Failure {
            code: BUDGET,
            message: e.to_string(),
        }
    }
}

impl From<AffineError> for Failure {
    fn from(e: AffineError) -> Self {
        match e {
            AffineError::Oracle(o) => o.into(),
            other => Failure::validation(other.to_string()),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Oracle(o) => o.into(),
            BenchError::NoFeasibleSample { .. } => Failure {
                code: INFEASIBLE,
                message: e.to_string(),
            },
            other => Failure::validation(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::validation(format!("cannot write {}: {e}", path.display()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| io_failure(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_failure(path, e))
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let cfg = BenchConfig {
        m_list: args.m_list,
        p_list: args.p_list,
        trials: args.trials,
        seed: args.seed,
    };
    let run = bench::run(&cfg, &Tolerances::default())?;
    if let Some(path) = &args.out {
        write_file(path, |w| bench::write_csv(&cfg, &run, w))?;
    }
    println!(
        "seed {}, {} trials per grid point, {} records, {} trials skipped for lack of a feasible draw",
        cfg.seed,
        cfg.trials,
        run.records.len(),
        run.skipped.len()
    );
    print!("{}", bench::summary_table(&bench::summarize(&run.records)));
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut sc = scenario::load(&args.scenario)?;
    if let Some(dt) = args.dt {
        sc.dt = dt;
    }
    if let Some(h) = args.horizon {
        sc.horizon = h;
    }
    let mut cfg = sc.simulation_config();
    cfg.theta = args.theta;
    let traj = simulate(&sc.problem, &sc.x0, &cfg).map_err(|e| {
        let step = |t: f64| (t / cfg.dt).round() as usize;
        match e {
            RuntimeError::Infeasible { time } | RuntimeError::Degenerate { time } => Failure {
                code: INFEASIBLE,
                message: format!("{e} (step {})", step(time)),
            },
            RuntimeError::Oracle(o) => o.into(),
            other => Failure::validation(other.to_string()),
        }
    })?;
    if let Some(path) = &args.out {
        write_file(path, |w| traj.write_csv(w))?;
    }
    print_summary(&sc, &traj, args.theta);
    Ok(())
}

fn print_summary(sc: &Scenario, traj: &explicit_cbf::runtime::Trajectory, theta: Theta) {
    println!("scenario {}", sc.name);
    println!("theta {theta}");
    println!("total_steps {}", traj.len());
    println!("theta_calls {}", traj.theta_calls());
    let worst = traj
        .barrier_values
        .iter()
        .flat_map(|h| h.iter().copied().enumerate())
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match worst {
        Some((i, v)) => println!("min_barrier {v:.6e} ({})", traj.barrier_names[i]),
        None => println!("min_barrier none"),
    }
    let inter = traj.intersample_min.iter().copied().fold(f64::INFINITY, f64::min);
    if inter.is_finite() {
        println!("min_barrier_intersample {inter:.6e}");
    }
    println!("mean_step_us {:.3}", traj.mean_step_nanos() / 1e3);
    match sc.worst_clearance(traj) {
        Some((name, v)) => println!("worst_clearance {v:.6e} ({name})"),
        None => println!("worst_clearance none"),
    }
}

fn cmd_regions(args: RegionsArgs) -> Result<(), Failure> {
    let sc = scenario::load(&args.scenario)?;
    if !sc.affine {
        return Err(Failure::validation(format!(
            "scenario {} is not affine in the state; explicit regions are unavailable",
            sc.name
        )));
    }
    let tol = Tolerances::default();
    let problem = AffineProblem::from_filter_problem(&sc.problem, 0.0, args.seed)?;
    let laws = affine::enumerate_regions(&problem, &tol)?;
    let lipschitz = affine::lipschitz_constant(&laws, |_| true).unwrap_or(f64::NAN);
    let check = affine::grid_check(&problem, &laws, &sc.x0, args.radius, args.samples, args.seed, &tol)?;
    let table = RegionTable {
        state_dim: problem.state_dim(),
        input_dim: problem.input_dim(),
        row_count: problem.row_count(),
        lipschitz,
        regions: laws,
    };
    if let Some(path) = &args.out {
        write_file(path, |w| w.write_all(table.to_text().as_bytes()))?;
    }
    let empty = table.regions.iter().filter(|l| l.empty).count();
    println!("scenario {}", sc.name);
    println!("dims n={} m={} p={}", table.state_dim, table.input_dim, table.row_count);
    println!("regions {} ({} non-empty, {} empty)", table.regions.len(), table.regions.len() - empty, empty);
    println!("lipschitz {lipschitz}");
    for (k, law) in table.regions.iter().enumerate() {
        println!(
            "  region {k} set {{{}}} {} norm {:.6}",
            law.index_set.to_csv_field(),
            if law.empty { "empty" } else { "non-empty" },
            law.spectral_norm()
        );
    }
    println!(
        "grid_check compared {} skipped {} max_gap {:.3e}",
        check.compared, check.skipped, check.max_gap
    );
    if check.max_gap > 1e-6 {
        return Err(Failure::validation(format!(
            "explicit law disagrees with the oracle by {:.3e}",
            check.max_gap
        )));
    }
    Ok(())
}

fn cmd_check(args: CheckArgs) -> Result<(), Failure> {
    let cfg = scenario::load_config(&args.scenario)?;
    let mut failed = 0;
    let mut report = |name: &str, result: Result<(), String>| match result {
        Ok(()) => println!("PASS {name}"),
        Err(msg) => {
            failed += 1;
            println!("FAIL {name}: {msg}");
        }
    };

    let errs = scenario::audit(&cfg);
    let audited = errs.is_empty();
    report("dimension audit", if audited { Ok(()) } else { Err(errs.join("; ")) });

    let weight = scenario::check_weight(&cfg);
    let weight_ok = weight.is_ok();
    report("weight positive definite", weight);

    if !audited {
        report("construction", Err("skipped, dimension audit failed".into()));
        report("gradient", Err("skipped, dimension audit failed".into()));
    } else {
        // A bad weight is already reported; check the rest with the identity.
        let override_weight = (!weight_ok).then(|| {
            let m = scenario::input_dim(&cfg).unwrap_or(0);
            DMatrix::identity(m, m)
        });
        match scenario::build_with_weight(&cfg, override_weight) {
            Ok(sc) => {
                report("construction", Ok(()));
                let failures = sc.self_check(args.seed);
                report(
                    "gradient",
                    if failures.is_empty() {
                        Ok(())
                    } else {
                        Err(failures.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
                    },
                );
            }
            Err(e) => {
                report("construction", Err(e.to_string()));
                report("gradient", Err("skipped, construction failed".into()));
            }
        }
    }
    if failed > 0 {
        Err(Failure::validation(format!("{failed} check(s) failed")))
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    // Usage errors are validation failures; clap's own code would read as infeasible.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Bench(a) => cmd_bench(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Regions(a) => cmd_regions(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
