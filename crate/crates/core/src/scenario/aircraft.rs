//! Lateral (roll-yaw) servo model of a mid-size aircraft at 717.17 ft/s and
//! 25000 ft, regulated by an LQR PI controller on integrated output error.
//!
//! State `x = (e_1, e_2, beta, p, r)` where `e` integrates the output error.
//! Decision inputs are `(delta_a, delta_r, v_1, v_2)`: the two surfaces plus a
//! virtual anti-windup input acting on the integrators,
//!
//! ```text
//! e' = C x_p + D u - y_cmd + v,   x_p' = A_p x_p + B_p u.
//! ```
//!
//! Barriers keep the roll rate, the lateral output (load factor `N_y` by
//! default, or yaw rate) and both integrator errors inside symmetric limits.
//! Each barrier has a penalized slack.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::{expect_len, expect_shape, matrix, CommandSection, CommandSignal, Scenario, ScenarioError, SignalConfig};
use crate::frontend::{Barrier, ClassK, FilterProblem, LinearSystem, NominalFn, SlackPolicy};
use crate::lqr::lqr_gain;
use crate::runtime::Integrator;

pub(crate) const STATES: usize = 5;
pub(crate) const INPUTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LateralOutput {
    /// Second regulated output, `N_y = C_2 x_p + D_2 u` (has feedthrough).
    #[default]
    LoadFactor,
    /// The yaw-rate state.
    YawRate,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AircraftConfig {
    pub a_p: Vec<Vec<f64>>,
    pub b_p: Vec<Vec<f64>>,
    pub c_reg: Vec<Vec<f64>>,
    pub d_reg: Vec<Vec<f64>>,
    /// Diagonal of the LQR state weight on `(e_1, e_2, beta, p, r)`.
    pub lqr_q: Vec<f64>,
    pub lqr_r: Vec<f64>,
    pub roll_rate_limit: f64,
    pub lateral_output: LateralOutput,
    pub lateral_limit: f64,
    pub integrator_limit: f64,
    /// Linear class-K gain of every barrier.
    pub alpha: f64,
    /// Zero disables the slacks.
    pub slack_penalty: f64,
    /// Filter weight on the surfaces.
    pub input_weight: Vec<f64>,
    /// Filter weight on each virtual input.
    pub virtual_weight: f64,
}

impl Default for AircraftConfig {
    fn default() -> Self {
        Self {
            a_p: vec![
                vec![-0.1179, 0.0009, -1.001],
                vec![-7.0113, -1.4492, 0.2206],
                vec![6.3035, 0.0651, -0.4117],
            ],
            b_p: vec![vec![0.0, 0.0153], vec![-7.9662, 2.6875], vec![0.6093, -2.3577]],
            c_reg: vec![vec![0.0, 1.0, 0.0], vec![-2.6049, 0.0187, 0.0677]],
            d_reg: vec![vec![0.0, 0.0], vec![0.0, 0.3370]],
            lqr_q: vec![1.025, 1.029, 0.0, 0.0, 1.602],
            lqr_r: vec![1.0, 1.0],
            roll_rate_limit: 0.4,
            lateral_output: LateralOutput::LoadFactor,
            lateral_limit: 0.05,
            integrator_limit: 0.3,
            alpha: 1.0,
            slack_penalty: 1e6,
            input_weight: vec![1.0, 1.0],
            virtual_weight: 1.0,
        }
    }
}

/// Roll-rate doublet of amplitude 0.3 over the first 10 s, zero lateral command.
pub fn default_command() -> Vec<SignalConfig> {
    vec![
        SignalConfig::Doublet {
            amplitude: 0.3,
            start: 0.0,
            width: 5.0,
        },
        SignalConfig::Constant { value: 0.0 },
    ]
}

pub(crate) fn filter_weight(cfg: Option<&AircraftConfig>) -> DMatrix<f64> {
    let default = AircraftConfig::default();
    let cfg = cfg.unwrap_or(&default);
    let mut diag = cfg.input_weight.clone();
    diag.extend([cfg.virtual_weight; 2]);
    DMatrix::from_diagonal(&DVector::from_vec(diag))
}

pub(crate) fn audit(cfg: Option<&AircraftConfig>, command: Option<&CommandSection>, errs: &mut Vec<String>) -> (usize, usize) {
    if let Some(c) = cfg {
        expect_shape(&c.a_p, "aircraft.a_p", (3, 3), errs);
        expect_shape(&c.b_p, "aircraft.b_p", (3, 2), errs);
        expect_shape(&c.c_reg, "aircraft.c_reg", (2, 3), errs);
        expect_shape(&c.d_reg, "aircraft.d_reg", (2, 2), errs);
        expect_len(&c.lqr_q, "aircraft.lqr_q", STATES, errs);
        expect_len(&c.lqr_r, "aircraft.lqr_r", 2, errs);
        expect_len(&c.input_weight, "aircraft.input_weight", 2, errs);
        if c.lqr_q.iter().any(|&q| q < 0.0) {
            errs.push("aircraft.lqr_q: entries must be nonnegative".into());
        }
        for (key, v) in [
            ("roll_rate_limit", c.roll_rate_limit),
            ("lateral_limit", c.lateral_limit),
            ("integrator_limit", c.integrator_limit),
            ("alpha", c.alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("aircraft.{key}: must be positive, got {v}"));
            }
        }
        if !(c.slack_penalty >= 0.0 && c.slack_penalty.is_finite()) {
            errs.push(format!("aircraft.slack_penalty: must be nonnegative, got {}", c.slack_penalty));
        }
    }
    if let Some(cmd) = command {
        if cmd.matrix.is_some() {
            errs.push("command.matrix: the aircraft model fixes how the command enters".into());
        }
        if cmd.signals.len() != 2 {
            errs.push(format!("command.signal: aircraft needs 2 channels, got {}", cmd.signals.len()));
        }
        for (i, s) in cmd.signals.iter().enumerate() {
            s.validate(&format!("command.signal[{i}]"), errs);
        }
    }
    (STATES, INPUTS)
}

fn unit(i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(STATES);
    e[i] = 1.0;
    e
}

pub(crate) fn build(
    cfg: AircraftConfig,
    command: Option<&CommandSection>,
    weight_override: Option<DMatrix<f64>>,
) -> Result<Scenario, ScenarioError> {
    let a_p = matrix(&cfg.a_p);
    let b_p = matrix(&cfg.b_p);
    let c_reg = matrix(&cfg.c_reg);
    let d_reg = matrix(&cfg.d_reg);

    let mut a = DMatrix::zeros(STATES, STATES);
    a.view_mut((0, 2), (2, 3)).copy_from(&c_reg);
    a.view_mut((2, 2), (3, 3)).copy_from(&a_p);
    let mut b_surfaces = DMatrix::zeros(STATES, 2);
    b_surfaces.view_mut((0, 0), (2, 2)).copy_from(&d_reg);
    b_surfaces.view_mut((2, 0), (3, 2)).copy_from(&b_p);
    let mut b = DMatrix::zeros(STATES, INPUTS);
    b.view_mut((0, 0), (STATES, 2)).copy_from(&b_surfaces);
    b[(0, 2)] = 1.0;
    b[(1, 3)] = 1.0;

    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.lqr_q));
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.lqr_r));
    let k_lqr = lqr_gain(&a, &b_surfaces, &q, &r)?;

    let signal = CommandSignal(command.map_or_else(default_command, |c| c.signals.clone()));
    let system = LinearSystem::new(a.clone(), b)?.with_exogenous(move |t| {
        let y = signal.eval(t);
        DVector::from_vec(vec![-y[0], -y[1], 0.0, 0.0, 0.0])
    });
    let nominal: NominalFn = Arc::new(move |x: &DVector<f64>, _t| {
        let u = -&k_lqr * x;
        DVector::from_vec(vec![u[0], u[1], 0.0, 0.0])
    });

    let alpha = ClassK::Linear(cfg.alpha);
    let roll = cfg.roll_rate_limit;
    let mut barriers = vec![
        Barrier::affine("roll_rate_upper", -unit(3), roll, alpha),
        Barrier::affine("roll_rate_lower", unit(3), roll, alpha),
    ];
    let lim = cfg.lateral_limit;
    match cfg.lateral_output {
        LateralOutput::LoadFactor => {
            let mut c = DVector::zeros(STATES);
            c.rows_mut(2, 3).copy_from(&c_reg.row(1).transpose());
            let mut e = DVector::zeros(INPUTS);
            e.rows_mut(0, 2).copy_from(&d_reg.row(1).transpose());
            barriers.push(Barrier::feedthrough("load_factor_upper", -&c, lim, -&e));
            barriers.push(Barrier::feedthrough("load_factor_lower", c, lim, e));
        }
        LateralOutput::YawRate => {
            barriers.push(Barrier::affine("yaw_rate_upper", -unit(4), lim, alpha));
            barriers.push(Barrier::affine("yaw_rate_lower", unit(4), lim, alpha));
        }
    }
    let ilim = cfg.integrator_limit;
    for i in 0..2 {
        barriers.push(Barrier::affine(format!("integrator_{i}_upper"), -unit(i), ilim, alpha));
        barriers.push(Barrier::affine(format!("integrator_{i}_lower"), unit(i), ilim, alpha));
    }
    let count = barriers.len();
    let weight = weight_override.unwrap_or_else(|| filter_weight(Some(&cfg)));
    let mut builder = FilterProblem::builder(system, nominal, weight).barriers(barriers);
    if cfg.slack_penalty > 0.0 {
        builder = builder.slack(SlackPolicy::uniform(cfg.slack_penalty, count));
    }
    Ok(Scenario {
        name: "aircraft".into(),
        problem: builder.build()?,
        x0: DVector::zeros(STATES),
        dt: 0.01,
        horizon: 30.0,
        integrator: Integrator::Rk4,
        clearances: Vec::new(),
        affine: true,
    })
}
