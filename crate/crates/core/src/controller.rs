//! Bounded consensus tracking law and the optional collision-avoidance field.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec2;
use crate::topology::{gain_bounds, LaplacianBlocks, Topology};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("gain {name} must be positive, got {value}")]
    NonPositiveGain { name: &'static str, value: f64 },
    #[error("k_v = {kv} outside ({lower}, {upper}) for k_p = {kp}")]
    GainConditionViolated { kp: f64, kv: f64, lower: f64, upper: f64 },
    #[error("UAV {uav} has no estimate for neighbor {neighbor}")]
    MissingNeighbor { uav: usize, neighbor: usize },
    #[error("UAV {uav} received an estimate from non-neighbor {sender}")]
    UnexpectedNeighbor { uav: usize, sender: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub kp: f64,
    pub kv: f64,
    pub u_trac: f64,
    pub u_safe: f64,
    pub k1: f64,
    pub k2: f64,
    pub d_safe: f64,
    /// Push away from range points. The literal field formula pushes towards
    /// them; set to `false` to reproduce that.
    pub repulsive: bool,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self { kp: 0.9, kv: 0.5, u_trac: 0.7, u_safe: 0.5, k1: 30.0, k2: 5.0, d_safe: 0.55, repulsive: true }
    }
}

impl ControllerGains {
    /// Positivity plus `k_p T < k_v < 4 / (lambda_n T U_trac)`.
    pub fn validate(&self, blocks: &LaplacianBlocks, dt: f64) -> Result<(), ControllerError> {
        for (name, value) in [("k_p", self.kp), ("k_v", self.kv), ("U_trac", self.u_trac)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ControllerError::NonPositiveGain { name, value });
            }
        }
        for (name, value) in [("U_safe", self.u_safe), ("k2", self.k2), ("d_safe", self.d_safe)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ControllerError::NonPositiveGain { name, value });
            }
        }
        let b = gain_bounds(blocks, dt, self.u_trac);
        if b.admits(self.kp, self.kv) {
            Ok(())
        } else {
            Err(ControllerError::GainConditionViolated {
                kp: self.kp,
                kv: self.kv,
                lower: b.kv_lower(self.kp),
                upper: b.kv_upper,
            })
        }
    }
}

/// Radial projection onto the ball of radius `bound`.
///
/// Vectors within a few ulps of the boundary are left alone so that the
/// projection is exactly idempotent.
pub fn project(u: &Vec2, bound: f64) -> Vec2 {
    let norm = u.norm();
    if norm <= bound * (1.0 + 4.0 * f64::EPSILON) {
        *u
    } else {
        u * (bound / norm)
    }
}

/// The UAV's own estimates and its target-link desired state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwnTerms {
    pub v_hat_i: Vec2,
    pub p_hat_i0: Vec2,
    pub v_hat_0: Vec2,
    pub p_star_i0: Vec2,
    pub v_star_i0: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborTerms {
    pub neighbor: usize,
    pub p_hat_ij: Vec2,
    pub v_hat_j: Vec2,
    pub p_star_ij: Vec2,
    pub v_star_ij: Vec2,
}

/// Unprojected consensus tracking command for UAV `i`. Every neighbor in the
/// topology must appear exactly once in `neighbors`.
pub fn tracking_input(
    i: usize,
    own: &OwnTerms,
    neighbors: &[NeighborTerms],
    topology: &Topology,
    gains: &ControllerGains,
) -> Result<Vec2, ControllerError> {
    for t in neighbors {
        if !topology.neighbors(i).contains(&t.neighbor) {
            return Err(ControllerError::UnexpectedNeighbor { uav: i, sender: t.neighbor });
        }
    }
    let a0 = topology.target_weight(i);
    let mut pos = (own.p_hat_i0 - own.p_star_i0) * a0;
    let mut vel = (own.v_hat_i - own.v_hat_0 - own.v_star_i0) * a0;
    for &j in topology.neighbors(i) {
        let t = neighbors
            .iter()
            .find(|t| t.neighbor == j)
            .ok_or(ControllerError::MissingNeighbor { uav: i, neighbor: j })?;
        let a = topology.weight(i, j);
        pos += (t.p_hat_ij - t.p_star_ij) * a;
        vel += (own.v_hat_i - t.v_hat_j - t.v_star_ij) * a;
    }
    Ok(-(pos * gains.kp) - vel * gains.kv)
}

/// Exponential field over nearby range points `r_im` (pointing from the UAV
/// to the obstacle). Points outside `d_safe` or at zero range are ignored.
pub fn collision_free_input(range_points: &[Vec2], gains: &ControllerGains) -> Vec2 {
    let sign = if gains.repulsive { -1.0 } else { 1.0 };
    range_points
        .iter()
        .filter_map(|r| {
            let d = r.norm();
            (d > 0.0 && d <= gains.d_safe).then(|| r / d * (gains.k1 * (-(d * d) / gains.k2).exp()))
        })
        .sum::<Vec2>()
        * sign
}

/// `pi(u_trac) + pi(u_safe) + u*`, with the safety term dropped when disabled.
pub fn total_input(u_trac: &Vec2, u_safe: Option<&Vec2>, u_star: &Vec2, gains: &ControllerGains) -> Vec2 {
    let safe = u_safe.map_or_else(Vec2::zeros, |u| project(u, gains.u_safe));
    project(u_trac, gains.u_trac) + safe + u_star
}

/// Roots of `s^2 + (k_v T lambda - 2) s + (k_p T^2 lambda - k_v T lambda + 1)`,
/// the per-mode characteristic polynomial of the unsaturated error dynamics.
pub fn mode_roots(lambda: f64, kp: f64, kv: f64, dt: f64) -> [Complex<f64>; 2] {
    let b = kv * dt * lambda - 2.0;
    let c = kp * dt * dt * lambda - kv * dt * lambda + 1.0;
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        // Stable form avoids cancellation in the smaller root.
        let q = -0.5 * (b + b.signum() * sq);
        let r1 = q;
        let r2 = if q != 0.0 { c / q } else { -b - q };
        [Complex::new(r1, 0.0), Complex::new(r2, 0.0)]
    } else {
        let im = (-disc).sqrt() / 2.0;
        [Complex::new(-b / 2.0, im), Complex::new(-b / 2.0, -im)]
    }
}

/// Largest root modulus over the spectrum.
pub fn spectral_radius(blocks: &LaplacianBlocks, kp: f64, kv: f64, dt: f64) -> f64 {
    blocks
        .spectrum
        .iter()
        .flat_map(|&l| mode_roots(l, kp, kv, dt))
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
