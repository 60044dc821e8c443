//! Coupled-oscillator phases and the circular trajectory they induce.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{rotation, Mat2, Vec2};
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PatternError {
    #[error("radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("phase step must lie in (0, 2pi/3), got {0}")]
    InvalidPhaseStep(f64),
    #[error("sampling period must be positive, got {0}")]
    InvalidPeriod(f64),
    #[error("expected {expected} coupling gains, got {got}")]
    GainCount { expected: usize, got: usize },
    #[error("phase {0} is not finite")]
    NonFinitePhase(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[default]
    CounterClockwise,
    Clockwise,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::CounterClockwise => 1.0,
            Direction::Clockwise => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub theta: Vec<f64>,
    /// Phase advance per step; always positive, the sign comes from `direction`.
    pub delta_theta: f64,
    /// Harmonic gains `K_1..K_n`.
    pub gains: Vec<f64>,
    pub rho: f64,
    pub dt: f64,
    pub direction: Direction,
}

impl PhaseState {
    pub fn new(
        theta: Vec<f64>,
        delta_theta: f64,
        gains: Vec<f64>,
        rho: f64,
        dt: f64,
        direction: Direction,
    ) -> Result<Self, PatternError> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(PatternError::InvalidRadius(rho));
        }
        if !(delta_theta > 0.0 && delta_theta < TAU / 3.0) {
            return Err(PatternError::InvalidPhaseStep(delta_theta));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(PatternError::InvalidPeriod(dt));
        }
        if gains.len() != theta.len() {
            return Err(PatternError::GainCount { expected: theta.len(), got: gains.len() });
        }
        if let Some(&bad) = theta.iter().find(|t| !t.is_finite()) {
            return Err(PatternError::NonFinitePhase(bad));
        }
        let theta = theta.into_iter().map(wrap_phase).collect();
        Ok(Self { theta, delta_theta, gains, rho, dt, direction })
    }

    /// Default harmonic gains: `K_l = 1` for `l < n`, `K_n = -1`.
    pub fn default_gains(n: usize) -> Vec<f64> {
        (1..=n).map(|l| if l == n { -1.0 } else { 1.0 }).collect()
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    /// Signed phase advance per step.
    pub fn step_angle(&self) -> f64 {
        self.direction.sign() * self.delta_theta
    }

    /// Orbital speed `v_c = 2 rho sin(dtheta/2) / T`.
    pub fn circle_speed(&self) -> f64 {
        2.0 * self.rho * (self.delta_theta / 2.0).sin() / self.dt
    }
}

/// Wraps to `[0, 2pi)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Shortest signed angle, in `[-pi, pi)`.
pub fn signed_angle(a: f64) -> f64 {
    wrap_phase(a + std::f64::consts::PI) - std::f64::consts::PI
}

/// One UAV's phase update given `(a_ij, theta_j)` for each neighbor.
pub fn phase_update(theta_i: f64, neighbors: &[(f64, f64)], s: &PhaseState) -> f64 {
    let coupling: f64 = neighbors
        .iter()
        .map(|&(a_ij, theta_j)| {
            let diff = theta_i - theta_j;
            s.gains
                .iter()
                .enumerate()
                .map(|(idx, k)| {
                    let l = (idx + 1) as f64;
                    k * a_ij / l * (l * diff).sin()
                })
                .sum::<f64>()
        })
        .sum();
    wrap_phase(theta_i + s.step_angle() + s.dt * coupling)
}

pub fn oscillator_step(s: &PhaseState, topology: &Topology) -> PhaseState {
    let theta = (0..s.n())
        .map(|i| {
            let nb: Vec<(f64, f64)> = topology.neighbors(i).iter().map(|&j| (topology.weight(i, j), s.theta[j])).collect();
            phase_update(s.theta[i], &nb, s)
        })
        .collect();
    PhaseState { theta, ..s.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesiredState {
    /// Position relative to the target.
    pub p_star: Vec2,
    pub v_star: Vec2,
    pub u_star: Vec2,
}

fn on_circle(theta: f64, rho: f64) -> Vec2 {
    let (s, c) = theta.sin_cos();
    Vec2::new(rho * c, rho * s)
}

pub fn desired_state(theta_i: f64, s: &PhaseState) -> DesiredState {
    let step = s.step_angle();
    let p_star = on_circle(theta_i, s.rho);
    let v_star = (on_circle(theta_i + step, s.rho) - p_star) / s.dt;
    let u_star = (rotation(step) - Mat2::identity()) * v_star / s.dt;
    DesiredState { p_star, v_star, u_star }
}

/// `(p*_ij, v*_ij)`. Pass `None` for `theta_j` to get the target link, which
/// equals the UAV's own desired state.
pub fn desired_relative(theta_i: f64, theta_j: Option<f64>, s: &PhaseState) -> (Vec2, Vec2) {
    let di = desired_state(theta_i, s);
    match theta_j {
        None => (di.p_star, di.v_star),
        Some(tj) => {
            let dj = desired_state(tj, s);
            (di.p_star - dj.p_star, di.v_star - dj.v_star)
        }
    }
}

/// Largest distance of any pairwise phase difference from a multiple of
/// `2pi/n`.
pub fn spacing_error(theta: &[f64]) -> f64 {
    let n = theta.len();
    if n < 2 {
        return 0.0;
    }
    let unit = TAU / n as f64;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r = (theta[i] - theta[j]).rem_euclid(unit);
            worst = worst.max(r.min(unit - r));
        }
    }
    worst
}

/// Largest deviation of the sorted circular gaps from `2pi/n`; zero exactly
/// when the phases are evenly spread around the circle.
pub fn splay_error(theta: &[f64]) -> f64 {
    let n = theta.len();
    if n < 2 {
        return 0.0;
    }
    let mut sorted: Vec<f64> = theta.iter().copied().map(wrap_phase).collect();
    sorted.sort_by(f64::total_cmp);
    let unit = TAU / n as f64;
    (0..n)
        .map(|k| {
            let gap = if k + 1 < n { sorted[k + 1] - sorted[k] } else { sorted[0] + TAU - sorted[k] };
            (gap - unit).abs()
        })
        .fold(0.0, f64::max)
}
