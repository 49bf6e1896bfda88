//! Resource-aware evaluation: reuse the cached active set while the state
//! stays in its region, and call the oracle only on a region change.
//!
//! Every step returns exactly the control a fresh solve would: membership of
//! `R_I` certifies that the closed-form candidate is the unique optimum.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::time::Instant;

use nalgebra::DVector;
use thiserror::Error;

use crate::frontend::FilterProblem;
use crate::oracle::{OracleError, Status, Theta};
use crate::qp::{ActiveSet, ConstraintSet, Tolerances, WeightMatrix};
use crate::region::{membership, Reason};

/// Mutable state carried between steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterState {
    pub cached_set: ActiveSet,
    pub theta_calls: usize,
    pub total_steps: usize,
    pub last_reason: Option<Reason>,
}

/// Supplies the index set tested before falling back to the oracle.
pub trait GuessProvider {
    fn guess(&mut self, state: &FilterState, x: &DVector<f64>, t: f64) -> ActiveSet;
}

/// Guess the set that was optimal at the previous step.
#[derive(Debug, Clone, Copy, Default)]
pub struct PreviousActiveSet;

impl GuessProvider for PreviousActiveSet {
    fn guess(&mut self, state: &FilterState, _x: &DVector<f64>, _t: f64) -> ActiveSet {
        state.cached_set.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Optimal decision vector (inputs followed by any slacks).
    pub decision: DVector<f64>,
    pub active_set: ActiveSet,
    pub theta_called: bool,
    /// Outcome of the membership test on the guess.
    pub reason: Reason,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("filter QP is infeasible at t = {time}")]
    Infeasible { time: f64 },
    #[error("oracle could not certify an optimum at t = {time} (degenerate constraints)")]
    Degenerate { time: f64 },
    #[error("state became non-finite at step {step} (t = {time})")]
    NonFiniteState { step: usize, time: f64 },
    #[error("horizon {horizon} and step {dt} give no samples")]
    InvalidHorizon { horizon: f64, dt: f64 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// One step on raw QP data with an explicit guess.
#[allow(clippy::too_many_arguments)]
pub fn step_qp(
    state: &mut FilterState,
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
    guess: &ActiveSet,
    theta: Theta,
    tol: &Tolerances,
    time: f64,
) -> Result<StepOutput, RuntimeError> {
    state.total_steps += 1;
    let test = membership(constraints, nominal, weight, guess, tol);
    state.last_reason = Some(test.reason);
    if test.in_region() {
        let cand = test.candidate.expect("member implies a candidate");
        #[cfg(debug_assertions)]
        if crate::audit::enabled() {
            crate::audit::record(&crate::qp::kkt_residuals(&cand, constraints, nominal, weight));
        }
        state.cached_set = guess.clone();
        return Ok(StepOutput {
            decision: cand.control,
            active_set: guess.clone(),
            theta_called: false,
            reason: Reason::Member,
        });
    }
    state.theta_calls += 1;
    let res = theta.solve(constraints, nominal, weight, guess, tol)?;
    match res.status {
        Status::Optimal => {
            state.cached_set = res.active_set.clone();
            Ok(StepOutput {
                decision: res.control,
                active_set: res.active_set,
                theta_called: true,
                reason: test.reason,
            })
        }
        Status::Infeasible => Err(RuntimeError::Infeasible { time }),
        Status::DegenerateLICQ => Err(RuntimeError::Degenerate { time }),
    }
}

/// One step at `(x, t)` guessing the cached set.
pub fn step(
    state: &mut FilterState,
    problem: &FilterProblem,
    x: &DVector<f64>,
    t: f64,
    theta: Theta,
    tol: &Tolerances,
) -> Result<StepOutput, RuntimeError> {
    let guess = state.cached_set.clone();
    let qp = problem.assemble(x, t);
    step_qp(state, &qp.constraints, &qp.nominal, qp.weight, &guess, theta, tol, t)
}

/// Stateful wrapper around [`step`] with a pluggable guess.
pub struct ResourceAwareFilter<'p, G = PreviousActiveSet> {
    problem: &'p FilterProblem,
    theta: Theta,
    tol: Tolerances,
    state: FilterState,
    guesser: G,
}

impl<'p> ResourceAwareFilter<'p, PreviousActiveSet> {
    pub fn new(problem: &'p FilterProblem, theta: Theta, tol: Tolerances) -> Self {
        Self::with_guess(problem, theta, tol, PreviousActiveSet)
    }
}

impl<'p, G: GuessProvider> ResourceAwareFilter<'p, G> {
    pub fn with_guess(problem: &'p FilterProblem, theta: Theta, tol: Tolerances, guesser: G) -> Self {
        Self {
            problem,
            theta,
            tol,
            state: FilterState::default(),
            guesser,
        }
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn step(&mut self, x: &DVector<f64>, t: f64) -> Result<StepOutput, RuntimeError> {
        let guess = self.guesser.guess(&self.state, x, t);
        let qp = self.problem.assemble(x, t);
        step_qp(
            &mut self.state,
            &qp.constraints,
            &qp.nominal,
            qp.weight,
            &guess,
            self.theta,
            &self.tol,
            t,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub dt: f64,
    pub horizon: f64,
    pub theta: Theta,
    pub tol: Tolerances,
    pub integrator: Integrator,
}

impl SimulationConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            theta: Theta::default(),
            tol: Tolerances::default(),
            integrator: Integrator::default(),
        }
    }

    /// `round(horizon / dt)`.
    pub fn samples(&self) -> usize {
        let n = (self.horizon / self.dt).round();
        if n.is_finite() && n > 0.0 {
            n as usize
        } else {
            0
        }
    }
}

/// Closed-loop samples `t_k = k dt`, `k = 0..N-1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub input_dim: usize,
    pub barrier_names: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Full decision vectors; the first `input_dim` entries are the applied input.
    pub decisions: Vec<DVector<f64>>,
    pub active_sets: Vec<ActiveSet>,
    pub theta_called: Vec<bool>,
    pub barrier_values: Vec<DVector<f64>>,
    /// Smallest barrier value over the integrator stages within each step.
    pub intersample_min: Vec<f64>,
    pub final_state: DVector<f64>,
    pub step_nanos: Vec<u64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn theta_calls(&self) -> usize {
        self.theta_called.iter().filter(|&&c| c).count()
    }

    pub fn input(&self, k: usize) -> DVector<f64> {
        self.decisions[k].rows(0, self.input_dim).into_owned()
    }

    /// Smallest barrier value over samples and integrator stages.
    pub fn min_barrier(&self) -> f64 {
        let sampled = self
            .barrier_values
            .iter()
            .flat_map(|h| h.iter().copied())
            .fold(f64::INFINITY, f64::min);
        self.intersample_min.iter().copied().fold(sampled, f64::min)
    }

    pub fn mean_step_nanos(&self) -> f64 {
        if self.step_nanos.is_empty() {
            return 0.0;
        }
        self.step_nanos.iter().sum::<u64>() as f64 / self.step_nanos.len() as f64
    }

    /// Columns `t, x_*, u_*, h_*, active_set, theta_called`; `u_*` spans the
    /// whole decision vector, so slacks follow the physical inputs.
    pub fn csv_header(&self) -> Vec<String> {
        let n = self.states.first().map_or(0, |x| x.len());
        let d = self.decisions.first().map_or(self.input_dim, |u| u.len());
        let mut cols = vec!["t".to_string()];
        cols.extend((0..n).map(|i| format!("x_{i}")));
        cols.extend((0..d).map(|i| format!("u_{i}")));
        cols.extend((0..self.barrier_names.len()).map(|i| format!("h_{i}")));
        cols.push("active_set".into());
        cols.push("theta_called".into());
        cols
    }

    /// Deterministic CSV; floats use the shortest round-trip representation.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", self.csv_header().join(","))?;
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            write!(line, "{}", self.times[k]).unwrap();
            for v in self.states[k].iter() {
                write!(line, ",{v}").unwrap();
            }
            for v in self.decisions[k].iter() {
                write!(line, ",{v}").unwrap();
            }
            for v in self.barrier_values[k].iter() {
                write!(line, ",{v}").unwrap();
            }
            write!(
                line,
                ",{},{}",
                self.active_sets[k].to_csv_field(),
                u8::from(self.theta_called[k])
            )
            .unwrap();
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// One parsed trajectory CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub values: Vec<f64>,
    pub active_set: ActiveSet,
    pub theta_called: bool,
}

/// Parse the output of [`Trajectory::write_csv`].
pub fn read_trajectory_csv(text: &str) -> Result<(Vec<String>, Vec<CsvRow>), String> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or("missing header")?
        .split(',')
        .map(str::to_string)
        .collect();
    if header.len() < 3 || header[header.len() - 2] != "active_set" || header[header.len() - 1] != "theta_called" {
        return Err("header must end with active_set,theta_called".into());
    }
    let numeric = header.len() - 2;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(format!("row {}: {} fields, expected {}", i + 1, fields.len(), header.len()));
        }
        let values = fields[..numeric]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let active_set = ActiveSet::parse_csv_field(fields[numeric])?;
        let theta_called = match fields[numeric + 1] {
            "0" => false,
            "1" => true,
            other => return Err(format!("row {}: bad theta_called {other:?}", i + 1)),
        };
        rows.push(CsvRow {
            values,
            active_set,
            theta_called,
        });
    }
    Ok((header, rows))
}

/// Closed-loop simulation with the previous-set guess.
pub fn simulate(
    problem: &FilterProblem,
    x0: &DVector<f64>,
    config: &SimulationConfig,
) -> Result<Trajectory, RuntimeError> {
    simulate_with(problem, x0, config, &mut PreviousActiveSet)
}

/// Closed-loop simulation: zero-order hold on the filtered input, one
/// integrator step per sample.
pub fn simulate_with<G: GuessProvider>(
    problem: &FilterProblem,
    x0: &DVector<f64>,
    config: &SimulationConfig,
    guesser: &mut G,
) -> Result<Trajectory, RuntimeError> {
    let steps = config.samples();
    // Written so that NaN fails.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if steps == 0 || !(config.dt > 0.0) {
        return Err(RuntimeError::InvalidHorizon {
            horizon: config.horizon,
            dt: config.dt,
        });
    }
    let m = problem.input_dim();
    let mut traj = Trajectory {
        input_dim: m,
        barrier_names: problem.barriers().iter().map(|b| b.name().to_string()).collect(),
        ..Default::default()
    };
    let mut state = FilterState::default();
    let mut x = x0.clone();
    for k in 0..steps {
        let t = k as f64 * config.dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RuntimeError::NonFiniteState { step: k, time: t });
        }
        let start = Instant::now();
        let guess = guesser.guess(&state, &x, t);
        let qp = problem.assemble(&x, t);
        let out = step_qp(
            &mut state,
            &qp.constraints,
            &qp.nominal,
            qp.weight,
            &guess,
            config.theta,
            &config.tol,
            t,
        )?;
        traj.step_nanos.push(start.elapsed().as_nanos() as u64);

        let u = problem.input_part(&out.decision);
        let (next, stages) = integrate(problem, &x, &u, t, config.dt, config.integrator);
        let stage_min = stages
            .iter()
            .chain(std::iter::once(&next))
            .map(|s| problem.barrier_values(s, &u).iter().copied().fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min);

        traj.times.push(t);
        traj.barrier_values.push(problem.barrier_values(&x, &u));
        traj.states.push(x);
        traj.decisions.push(out.decision);
        traj.active_sets.push(out.active_set);
        traj.theta_called.push(out.theta_called);
        traj.intersample_min.push(stage_min);
        x = next;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RuntimeError::NonFiniteState {
            step: steps,
            time: steps as f64 * config.dt,
        });
    }
    traj.final_state = x;
    Ok(traj)
}

/// Advance `x` by `dt` with `u` held; also returns the intermediate stage states.
pub fn integrate(
    problem: &FilterProblem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    dt: f64,
    integrator: Integrator,
) -> (DVector<f64>, Vec<DVector<f64>>) {
    let sys = problem.system();
    match integrator {
        Integrator::Euler => (x + sys.velocity(x, u, t) * dt, Vec::new()),
        Integrator::Rk4 => {
            let k1 = sys.velocity(x, u, t);
            let x2 = x + &k1 * (dt / 2.0);
            let k2 = sys.velocity(&x2, u, t + dt / 2.0);
            let x3 = x + &k2 * (dt / 2.0);
            let k3 = sys.velocity(&x3, u, t + dt / 2.0);
            let x4 = x + &k3 * dt;
            let k4 = sys.velocity(&x4, u, t + dt);
            let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            (next, vec![x2, x3, x4])
        }
    }
}
