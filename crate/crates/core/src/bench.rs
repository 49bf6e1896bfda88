//! Random-QP timing harness comparing the oracle realizations.
//!
//! Every trial draws one feasible QP and times four ways of computing its
//! optimizer. A trial only yields records when all four agree on the control
//! to within [`AGREEMENT_TOL`] and on the checksum.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::affine::{enumerate_regions, eval_affine, AffineError, AffineProblem};
use crate::oracle::{
    feasibility_probe, subset_count, theta_active_set, theta_enumerate, OracleError, Status, Theta, SUBSET_BUDGET,
};
use crate::qp::{ActiveSet, ConstraintSet, Tolerances, WeightMatrix};
use crate::runtime::{step_qp, FilterState, RuntimeError};

pub const AGREEMENT_TOL: f64 = 1e-6;

/// Resamples allowed before a trial is declared ungeneratable.
pub const MAX_RESAMPLES: usize = 100;

pub const DISTRIBUTION: &str = "b_ij ~ N(0,1); a_i ~ U[-1,1]; k = r*d with d uniform on the unit sphere, r ~ U[0,2]; R = I; \
     resample (up to 100 times) when the QP is infeasible or the oracle reports degenerate constraints";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    SolverEnumerate,
    SolverActiveSet,
    Explicit,
    ResourceAware,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::SolverEnumerate,
        Method::SolverActiveSet,
        Method::Explicit,
        Method::ResourceAware,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::SolverEnumerate => "solver_enumerate",
            Method::SolverActiveSet => "solver_active_set",
            Method::Explicit => "explicit",
            Method::ResourceAware => "resource_aware",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub m: usize,
    pub p: usize,
    pub trial: usize,
    pub method: Method,
    pub setup_nanos: u64,
    pub solve_nanos: u64,
    pub active_set: ActiveSet,
    pub checksum: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("m = {m} must be at least 1")]
    ZeroDimension { m: usize },
    #[error("seed {seed}, m = {m}, p = {p}, trial {trial}: no usable QP after {MAX_RESAMPLES} resamples")]
    NoFeasibleSample { seed: u64, m: usize, p: usize, trial: usize },
    #[error("seed {seed}, m = {m}, p = {p}, trial {trial}: {detail}")]
    Disagreement {
        seed: u64,
        m: usize,
        p: usize,
        trial: usize,
        detail: String,
    },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// One random instance with the number of draws it took.
#[derive(Debug, Clone)]
pub struct RandomQp {
    /// Row normals stored as columns (`m x p`).
    pub b: DMatrix<f64>,
    pub a: DVector<f64>,
    pub nominal: DVector<f64>,
    pub draws: usize,
}

/// Per-trial generator; independent of how trials are scheduled.
pub fn trial_rng(seed: u64, m: usize, p: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((m as u64) << 48) ^ ((p as u64) << 32) ^ trial as u64);
    rng
}

fn draw(rng: &mut ChaCha8Rng, m: usize, p: usize) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let b = DMatrix::from_fn(m, p, |_, _| StandardNormal.sample(rng));
    let a = DVector::from_fn(p, |_, _| rng.random_range(-1.0..=1.0));
    let mut d: DVector<f64> = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
    while d.norm() < 1e-12 {
        d = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
    }
    let r = rng.random_range(0.0..=2.0);
    (b, a, d.normalize() * r)
}

/// Draw until the QP is feasible and the active-set oracle certifies it.
pub fn random_qp(seed: u64, m: usize, p: usize, trial: usize, tol: &Tolerances) -> Result<RandomQp, BenchError> {
    let mut rng = trial_rng(seed, m, p, trial);
    let w = WeightMatrix::identity(m);
    for draws in 1..=MAX_RESAMPLES {
        let (b, a, nominal) = draw(&mut rng, m, p);
        let c = ConstraintSet::new(b.clone(), a.clone()).expect("shapes agree");
        if !feasibility_probe(&c, &nominal, &w).feasible {
            continue;
        }
        if theta_active_set(&c, &nominal, &w, &ActiveSet::empty(), tol).status == Status::Optimal {
            return Ok(RandomQp { b, a, nominal, draws });
        }
    }
    Err(BenchError::NoFeasibleSample { seed, m, p, trial })
}

/// FNV-1a over the active indices and the control rounded to 1e-6.
pub fn checksum(set: &ActiveSet, control: &DVector<f64>) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &byte in bytes {
            h ^= u64::from(byte);
            h = h.wrapping_mul(PRIME);
        }
    };
    for &i in set.indices() {
        feed(&(i as u64).to_le_bytes());
    }
    feed(b"|");
    for &v in control.iter() {
        let q = (v * 1e6).round() as i64;
        feed(&q.to_le_bytes());
    }
    h
}

struct Outcome {
    setup_nanos: u64,
    solve_nanos: u64,
    control: DVector<f64>,
    set: ActiveSet,
}

fn elapsed(start: Instant) -> u64 {
    start.elapsed().as_nanos().min(u128::from(u64::MAX)) as u64
}

fn setup(qp: &RandomQp) -> (ConstraintSet, WeightMatrix) {
    (
        ConstraintSet::new(qp.b.clone(), qp.a.clone()).expect("shapes agree"),
        WeightMatrix::identity(qp.nominal.len()),
    )
}

fn run_method(method: Method, qp: &RandomQp, tol: &Tolerances) -> Result<Outcome, String> {
    let start = Instant::now();
    let (c, w) = setup(qp);
    match method {
        Method::SolverEnumerate | Method::SolverActiveSet => {
            let setup_nanos = elapsed(start);
            let start = Instant::now();
            let res = if method == Method::SolverEnumerate {
                theta_enumerate(&c, &qp.nominal, &w, tol).map_err(|e| e.to_string())?
            } else {
                theta_active_set(&c, &qp.nominal, &w, &ActiveSet::empty(), tol)
            };
            let solve_nanos = elapsed(start);
            if res.status != Status::Optimal {
                return Err(format!("{method} returned status {}", res.status));
            }
            Ok(Outcome {
                setup_nanos,
                solve_nanos,
                control: res.control,
                set: res.active_set,
            })
        }
        Method::Explicit => {
            let problem = AffineProblem::constant(&c, &qp.nominal, &w);
            let laws = enumerate_regions(&problem, tol).map_err(|e| e.to_string())?;
            let setup_nanos = elapsed(start);
            let x = DVector::zeros(1);
            let start = Instant::now();
            let (control, set) = eval_affine(&laws, &x, tol).map_err(|e: AffineError| e.to_string())?;
            let solve_nanos = elapsed(start);
            Ok(Outcome {
                setup_nanos,
                solve_nanos,
                control,
                set,
            })
        }
        Method::ResourceAware => {
            let mut state = FilterState::default();
            let guess = ActiveSet::empty();
            let setup_nanos = elapsed(start);
            let start = Instant::now();
            let out = step_qp(&mut state, &c, &qp.nominal, &w, &guess, Theta::ActiveSet, tol, 0.0)
                .map_err(|e: RuntimeError| e.to_string())?;
            let solve_nanos = elapsed(start);
            Ok(Outcome {
                setup_nanos,
                solve_nanos,
                control: out.decision,
                set: out.active_set,
            })
        }
    }
}

/// All four records of one trial, or the reason they disagree.
pub fn run_trial(seed: u64, m: usize, p: usize, trial: usize, tol: &Tolerances) -> Result<Vec<BenchRecord>, BenchError> {
    let subsets = subset_count(p, m.min(p));
    if subsets > SUBSET_BUDGET {
        return Err(OracleError::BudgetExceeded {
            subsets,
            budget: SUBSET_BUDGET,
        }
        .into());
    }
    let qp = random_qp(seed, m, p, trial, tol)?;
    let disagreement = |detail: String| BenchError::Disagreement {
        seed,
        m,
        p,
        trial,
        detail,
    };
    let mut outcomes = Vec::with_capacity(Method::ALL.len());
    for method in Method::ALL {
        // Warm run to exclude first-touch effects, then the timed run.
        run_method(method, &qp, tol).map_err(&disagreement)?;
        outcomes.push((method, run_method(method, &qp, tol).map_err(&disagreement)?));
    }
    let reference = &outcomes[0].1;
    let reference_sum = checksum(&reference.set, &reference.control);
    let mut records = Vec::with_capacity(outcomes.len());
    for (method, out) in &outcomes {
        let gap = (&out.control - &reference.control).amax();
        let sum = checksum(&out.set, &out.control);
        if gap > AGREEMENT_TOL || sum != reference_sum {
            return Err(disagreement(format!(
                "{method} gives u = {:?} on set {{{}}}, {} gives u = {:?} on set {{{}}} (gap {gap:.3e})",
                out.control.as_slice(),
                out.set.to_csv_field(),
                Method::SolverEnumerate,
                reference.control.as_slice(),
                reference.set.to_csv_field(),
            )));
        }
        records.push(BenchRecord {
            m,
            p,
            trial,
            method: *method,
            setup_nanos: out.setup_nanos,
            solve_nanos: out.solve_nanos,
            active_set: out.set.clone(),
            checksum: sum,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub m_list: Vec<usize>,
    pub p_list: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

/// Trial indices `0, 1, ...` are tried in parallel batches until `count` of
/// them succeed. Indices whose draws never gave a usable QP are skipped and
/// returned; more than `count` skips is an error.
pub fn fill_trials<T, F>(count: usize, f: F) -> Result<(Vec<T>, Vec<usize>), BenchError>
where
    T: Send,
    F: Fn(usize) -> Result<T, BenchError> + Sync,
{
    let mut done = Vec::with_capacity(count);
    let mut skipped = Vec::new();
    let mut next = 0;
    while done.len() < count {
        let batch: Vec<(usize, Result<T, BenchError>)> = (next..next + count - done.len())
            .into_par_iter()
            .map(|t| (t, f(t)))
            .collect();
        next += batch.len();
        for (t, r) in batch {
            match r {
                Ok(v) => done.push(v),
                Err(e @ BenchError::NoFeasibleSample { .. }) => {
                    skipped.push(t);
                    if skipped.len() > count {
                        return Err(e);
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok((done, skipped))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchOutput {
    /// In `(m, p, trial, method)` order.
    pub records: Vec<BenchRecord>,
    /// `(m, p, trial)` of trials dropped for lack of a usable draw.
    pub skipped: Vec<(usize, usize, usize)>,
}

/// Runs `cfg.trials` usable trials per grid point.
pub fn run(cfg: &BenchConfig, tol: &Tolerances) -> Result<BenchOutput, BenchError> {
    if cfg.trials == 0 {
        return Err(BenchError::NoTrials);
    }
    if let Some(&m) = cfg.m_list.iter().find(|&&m| m == 0) {
        return Err(BenchError::ZeroDimension { m });
    }
    let mut out = BenchOutput::default();
    for &m in &cfg.m_list {
        for &p in &cfg.p_list {
            let (chunks, skipped) = fill_trials(cfg.trials, |t| run_trial(cfg.seed, m, p, t, tol))?;
            out.records.extend(chunks.into_iter().flatten());
            out.skipped.extend(skipped.into_iter().map(|t| (m, p, t)));
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "m,p,trial,method,setup_ns,solve_ns,active_set,checksum";

/// Comment lines describing the run, then the header and one row per record.
pub fn write_csv<W: Write>(cfg: &BenchConfig, run: &BenchOutput, mut out: W) -> io::Result<()> {
    writeln!(out, "# explicit-cbf bench 1")?;
    writeln!(out, "# seed {}", cfg.seed)?;
    writeln!(out, "# trials {}", cfg.trials)?;
    writeln!(out, "# distribution {DISTRIBUTION}")?;
    for (m, p, t) in &run.skipped {
        writeln!(out, "# skipped m={m} p={p} trial={t}")?;
    }
    writeln!(out, "{CSV_HEADER}")?;
    for r in &run.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:016x}",
            r.m,
            r.p,
            r.trial,
            r.method,
            r.setup_nanos,
            r.solve_nanos,
            r.active_set.to_csv_field(),
            r.checksum
        )?;
    }
    Ok(())
}

/// Parses the rows written by [`write_csv`], skipping comments.
pub fn read_csv(text: &str) -> Result<Vec<BenchRecord>, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err("missing bench header".into()),
    }
    lines
        .map(|(i, line)| {
            let err = |what: &str| format!("line {}: bad {what}", i + 1);
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(err("field count"));
            }
            Ok(BenchRecord {
                m: f[0].parse().map_err(|_| err("m"))?,
                p: f[1].parse().map_err(|_| err("p"))?,
                trial: f[2].parse().map_err(|_| err("trial"))?,
                method: f[3].parse().map_err(|_| err("method"))?,
                setup_nanos: f[4].parse().map_err(|_| err("setup_ns"))?,
                solve_nanos: f[5].parse().map_err(|_| err("solve_ns"))?,
                active_set: ActiveSet::parse_csv_field(f[6]).map_err(|_| err("active_set"))?,
                checksum: u64::from_str_radix(f[7], 16).map_err(|_| err("checksum"))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std_dev: f64,
}

impl Stats {
    /// Sample mean and standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_dev: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub m: usize,
    pub p: usize,
    pub method: Method,
    pub solve: Stats,
    /// Setup plus solve.
    pub total: Stats,
}

/// Mean and standard deviation per `(m, p, method)`, in first-seen order.
pub fn summarize(records: &[BenchRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, usize, Method)> = Vec::new();
    for r in records {
        let key = (r.m, r.p, r.method);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(m, p, method)| {
            let rows: Vec<&BenchRecord> = records.iter().filter(|r| (r.m, r.p, r.method) == (m, p, method)).collect();
            let solve: Vec<f64> = rows.iter().map(|r| r.solve_nanos as f64).collect();
            let total: Vec<f64> = rows.iter().map(|r| (r.setup_nanos + r.solve_nanos) as f64).collect();
            SummaryRow {
                m,
                p,
                method,
                solve: Stats::of(&solve),
                total: Stats::of(&total),
            }
        })
        .collect()
}

/// Fixed-width table of [`summarize`] output, times in microseconds.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:>3} {:>3} {:<18} {:>12} {:>12} {:>12} {:>12}\n",
        "m", "p", "method", "solve_us", "solve_sd", "total_us", "total_sd"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>3} {:>3} {:<18} {:>12.3} {:>12.3} {:>12.3} {:>12.3}\n",
            r.m,
            r.p,
            r.method,
            r.solve.mean / 1e3,
            r.solve.std_dev / 1e3,
            r.total.mean / 1e3,
            r.total.std_dev / 1e3
        ));
    }
    out
}
