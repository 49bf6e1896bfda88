//! Three planar double-integrator agents among a grid of circular obstacles.
//!
//! Agent `k` has state `(px, py, vx, vy)` at indices `4k..4k+4` and input
//! `(ax, ay)` at `2k..2k+2`. The first agent tracks a figure-eight, the other
//! two track the same circle in opposite directions. Obstacle and pairwise
//! barriers are squared distances with relative degree two; the barrier
//! radius is the physical radius plus a margin.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::{Clearance, Scenario, ScenarioError};
use crate::frontend::{Barrier, BarrierKind, FilterProblem, InputBounds, LinearSystem, NominalFn};
use crate::runtime::Integrator;

pub(crate) const AGENTS: usize = 3;
pub(crate) const STATES: usize = 4 * AGENTS;
pub(crate) const INPUTS: usize = 2 * AGENTS;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiAgentConfig {
    /// Obstacles per side of the square grid.
    pub grid: usize,
    pub spacing: f64,
    pub obstacle_radius: f64,
    /// Minimum center-to-center distance between agents.
    pub agent_distance: f64,
    /// Added to every radius inside the barriers.
    pub margin: f64,
    pub accel_limit: f64,
    pub k1: f64,
    pub k2: f64,
    pub kp: f64,
    pub kd: f64,
    pub figure_eight_size: f64,
    pub circle_radius: f64,
    /// Angular rate of all references (rad/s).
    pub rate: f64,
}

impl Default for MultiAgentConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            spacing: 2.5,
            obstacle_radius: 0.3,
            agent_distance: 0.5,
            margin: 0.05,
            accel_limit: 8.0,
            k1: 2.0,
            k2: 3.0,
            kp: 4.0,
            kd: 4.0,
            figure_eight_size: 4.0,
            circle_radius: 3.0,
            rate: 0.4,
        }
    }
}

pub(crate) fn audit(cfg: Option<&MultiAgentConfig>, errs: &mut Vec<String>) -> (usize, usize) {
    if let Some(c) = cfg {
        if c.grid == 0 || c.grid > 8 {
            errs.push(format!("multi_agent.grid: must be in 1..=8, got {}", c.grid));
        }
        for (key, v) in [
            ("spacing", c.spacing),
            ("obstacle_radius", c.obstacle_radius),
            ("agent_distance", c.agent_distance),
            ("accel_limit", c.accel_limit),
            ("k1", c.k1),
            ("k2", c.k2),
            ("kp", c.kp),
            ("kd", c.kd),
            ("figure_eight_size", c.figure_eight_size),
            ("circle_radius", c.circle_radius),
            ("rate", c.rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("multi_agent.{key}: must be positive, got {v}"));
            }
        }
        if !(c.margin >= 0.0 && c.margin.is_finite()) {
            errs.push(format!("multi_agent.margin: must be nonnegative, got {}", c.margin));
        }
    }
    (STATES, INPUTS)
}

/// Reference position, velocity and acceleration of agent `k` at `t`.
fn reference(cfg: &MultiAgentConfig, k: usize, t: f64) -> [[f64; 2]; 3] {
    let w = cfg.rate;
    match k {
        0 => {
            let a = cfg.figure_eight_size;
            let (s1, c1) = (w * t).sin_cos();
            let (s2, c2) = (2.0 * w * t).sin_cos();
            [
                [a * s1, 0.5 * a * s2],
                [a * w * c1, a * w * c2],
                [-a * w * w * s1, -2.0 * a * w * w * s2],
            ]
        }
        _ => {
            let r = cfg.circle_radius;
            let (dir, phase) = if k == 1 { (1.0, 0.0) } else { (-1.0, PI) };
            let th = phase + dir * w * t;
            let (s, c) = th.sin_cos();
            [
                [r * c, r * s],
                [-r * dir * w * s, r * dir * w * c],
                [-r * w * w * c, -r * w * w * s],
            ]
        }
    }
}

pub fn obstacle_centers(cfg: &MultiAgentConfig) -> Vec<[f64; 2]> {
    let half = (cfg.grid as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(cfg.grid * cfg.grid);
    for i in 0..cfg.grid {
        for j in 0..cfg.grid {
            out.push([(i as f64 - half) * cfg.spacing, (j as f64 - half) * cfg.spacing]);
        }
    }
    out
}

/// `h = |p - o|^2 - rho^2` for the agent whose position starts at `pos`.
fn obstacle_barrier(name: String, pos: usize, o: [f64; 2], rho: f64, k1: f64, k2: f64) -> Barrier {
    let vel = pos + 2;
    Barrier::new(
        name,
        Arc::new(move |x: &DVector<f64>| {
            (x[pos] - o[0]).powi(2) + (x[pos + 1] - o[1]).powi(2) - rho * rho
        }),
        Arc::new(move |x: &DVector<f64>| {
            let mut g = DVector::zeros(x.len());
            g[pos] = 2.0 * (x[pos] - o[0]);
            g[pos + 1] = 2.0 * (x[pos + 1] - o[1]);
            g
        }),
        BarrierKind::ExponentialOrder2 {
            k1,
            k2,
            // L_f h = 2 (p - o)' v
            lie_gradient: Arc::new(move |x: &DVector<f64>, _t| {
                let mut g = DVector::zeros(x.len());
                g[pos] = 2.0 * x[vel];
                g[pos + 1] = 2.0 * x[vel + 1];
                g[vel] = 2.0 * (x[pos] - o[0]);
                g[vel + 1] = 2.0 * (x[pos + 1] - o[1]);
                g
            }),
        },
    )
}

/// `h = |p_i - p_j|^2 - rho^2`.
fn pair_barrier(name: String, pi: usize, pj: usize, rho: f64, k1: f64, k2: f64) -> Barrier {
    Barrier::new(
        name,
        Arc::new(move |x: &DVector<f64>| {
            (x[pi] - x[pj]).powi(2) + (x[pi + 1] - x[pj + 1]).powi(2) - rho * rho
        }),
        Arc::new(move |x: &DVector<f64>| {
            let mut g = DVector::zeros(x.len());
            for d in 0..2 {
                let diff = 2.0 * (x[pi + d] - x[pj + d]);
                g[pi + d] = diff;
                g[pj + d] = -diff;
            }
            g
        }),
        BarrierKind::ExponentialOrder2 {
            k1,
            k2,
            // L_f h = 2 (p_i - p_j)' (v_i - v_j)
            lie_gradient: Arc::new(move |x: &DVector<f64>, _t| {
                let mut g = DVector::zeros(x.len());
                for d in 0..2 {
                    let dp = 2.0 * (x[pi + d] - x[pj + d]);
                    let dv = 2.0 * (x[pi + 2 + d] - x[pj + 2 + d]);
                    g[pi + d] = dv;
                    g[pj + d] = -dv;
                    g[pi + 2 + d] = dp;
                    g[pj + 2 + d] = -dp;
                }
                g
            }),
        },
    )
}

pub(crate) fn build(cfg: MultiAgentConfig, weight_override: Option<DMatrix<f64>>) -> Result<Scenario, ScenarioError> {
    let mut a = DMatrix::zeros(STATES, STATES);
    let mut b = DMatrix::zeros(STATES, INPUTS);
    for k in 0..AGENTS {
        a[(4 * k, 4 * k + 2)] = 1.0;
        a[(4 * k + 1, 4 * k + 3)] = 1.0;
        b[(4 * k + 2, 2 * k)] = 1.0;
        b[(4 * k + 3, 2 * k + 1)] = 1.0;
    }
    let system = LinearSystem::new(a, b)?;

    let ref_cfg = cfg.clone();
    let nominal: NominalFn = Arc::new(move |x: &DVector<f64>, t| {
        let mut u = DVector::zeros(INPUTS);
        for k in 0..AGENTS {
            let [p, v, acc] = reference(&ref_cfg, k, t);
            for d in 0..2 {
                u[2 * k + d] = acc[d] + ref_cfg.kp * (p[d] - x[4 * k + d]) + ref_cfg.kd * (v[d] - x[4 * k + 2 + d]);
            }
        }
        u
    });

    let centers = obstacle_centers(&cfg);
    let mut barriers = Vec::new();
    let mut clearances = Vec::new();
    for k in 0..AGENTS {
        for (j, &o) in centers.iter().enumerate() {
            let name = format!("agent{k}_obstacle{j}");
            barriers.push(obstacle_barrier(
                name.clone(),
                4 * k,
                o,
                cfg.obstacle_radius + cfg.margin,
                cfg.k1,
                cfg.k2,
            ));
            clearances.push(Clearance::Obstacle {
                name,
                pos: 4 * k,
                center: o,
                radius: cfg.obstacle_radius,
            });
        }
    }
    for i in 0..AGENTS {
        for j in i + 1..AGENTS {
            let name = format!("agents{i}{j}");
            barriers.push(pair_barrier(name.clone(), 4 * i, 4 * j, cfg.agent_distance + cfg.margin, cfg.k1, cfg.k2));
            clearances.push(Clearance::Pair {
                name,
                first: 4 * i,
                second: 4 * j,
                radius: cfg.agent_distance,
            });
        }
    }

    let mut x0 = DVector::zeros(STATES);
    for k in 0..AGENTS {
        let [p, v, _] = reference(&cfg, k, 0.0);
        x0[4 * k] = p[0];
        x0[4 * k + 1] = p[1];
        x0[4 * k + 2] = v[0];
        x0[4 * k + 3] = v[1];
    }
    let weight = weight_override.unwrap_or_else(|| DMatrix::identity(INPUTS, INPUTS));
    let problem = FilterProblem::builder(system, nominal, weight)
        .barriers(barriers)
        .input_bounds(InputBounds::symmetric(cfg.accel_limit, INPUTS))
        .build()?;
    Ok(Scenario {
        name: "multi_agent".into(),
        problem,
        x0,
        dt: 0.01,
        horizon: 20.0,
        integrator: Integrator::Rk4,
        clearances,
        affine: false,
    })
}
