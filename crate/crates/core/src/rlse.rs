//! Relative localization between two UAVs by recursive least squares.
//!
//! The regression comes from `d_k^2 = |p_{k-1} + delta|^2`, which gives
//! `y_k = delta^T p_{k-1}` with
//! `y_k = (d_k^2 - d_{k-1}^2 - |delta|^2) / 2`. The estimate is propagated by
//! the measured relative displacement and corrected against that regression
//! with exponential forgetting.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

use crate::math::{symmetrize, Mat2, Vec2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlseError {
    #[error("forgetting factor {0} outside (0, 1)")]
    InvalidForgetting(f64),
    #[error("gain matrix is not symmetric positive definite")]
    GainNotPositiveDefinite,
    #[error("non-finite regressor or observation")]
    NonFinite,
}

/// Estimate of `p_ij = p_i - p_j` held by UAV `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlseState {
    pub p_hat: Vec2,
    pub gamma: Mat2,
    pub beta: f64,
}

impl RlseState {
    pub fn new(p_hat: Vec2, gamma: Mat2, beta: f64) -> Result<Self, RlseError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(RlseError::InvalidForgetting(beta));
        }
        if gamma.cholesky().is_none() || (gamma[(0, 1)] - gamma[(1, 0)]).abs() > 1e-12 {
            return Err(RlseError::GainNotPositiveDefinite);
        }
        Ok(Self { p_hat, gamma, beta })
    }
}

/// `(d_k^2 - d_prev^2 - |delta_ij|^2) / 2`.
pub fn compute_y(delta_ij: &Vec2, d_k: f64, d_prev: f64) -> f64 {
    0.5 * (d_k * d_k - d_prev * d_prev - delta_ij.norm_squared())
}

/// One RLSE step. The innovation is formed against the pre-update estimate.
pub fn rlse_update(s: &RlseState, delta_ij: &Vec2, y: f64) -> Result<RlseState, RlseError> {
    if !delta_ij.iter().all(|x| x.is_finite()) || !y.is_finite() {
        return Err(RlseError::NonFinite);
    }
    let g = &s.gamma;
    let g_delta = g * delta_ij;
    let denom = s.beta + delta_ij.dot(&g_delta);
    let gamma = symmetrize(&((g - g_delta * g_delta.transpose() / denom) / s.beta));

    let p_bar = s.p_hat + delta_ij;
    let innovation = y - delta_ij.dot(&s.p_hat);
    let p_hat = p_bar + gamma * delta_ij * innovation;
    Ok(RlseState { p_hat, gamma, beta: s.beta })
}

/// Sliding-window excitation statistics `Phi = sum v v^T` over the last `N`
/// vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PeWindowStats {
    capacity: usize,
    pub window: VecDeque<Vec2>,
    pub phi: Mat2,
    pub min_eig: f64,
    pub max_eig: f64,
}

impl PeWindowStats {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 2, "PE window needs at least two samples");
        Self {
            capacity,
            window: VecDeque::with_capacity(capacity),
            phi: Mat2::zeros(),
            min_eig: 0.0,
            max_eig: 0.0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.window.len() == self.capacity
    }
}

/// Pushes `vec` into the window and recomputes `Phi` and its eigenvalues.
pub fn pe_update(mut stats: PeWindowStats, vec: Vec2) -> PeWindowStats {
    if stats.window.len() == stats.capacity {
        stats.window.pop_front();
    }
    stats.window.push_back(vec);
    // Recomputed from the window rather than updated incrementally so no
    // cancellation error accumulates.
    stats.phi = stats.window.iter().map(|v| v * v.transpose()).sum();
    let (lo, hi) = sym2_eigenvalues(&stats.phi);
    stats.min_eig = lo;
    stats.max_eig = hi;
    stats
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn sym2_eigenvalues(m: &Mat2) -> (f64, f64) {
    let mean = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let r = half_diff.hypot(m[(0, 1)]);
    (mean - r, mean + r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rotation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    fn reference_state(p_hat: Vec2) -> RlseState {
        RlseState::new(p_hat, Mat2::identity(), 0.9).unwrap()
    }

    #[test]
    fn y_matches_regression_identity() {
        let delta = v(1.0, 0.0);
        let prev = v(3.0, 4.0);
        let d_k = (prev + delta).norm();
        assert!((d_k - 32f64.sqrt()).abs() < 1e-15);
        let y = compute_y(&delta, d_k, 5.0);
        assert!((y - 3.0).abs() < 1e-12);
        assert_eq!(compute_y(&Vec2::zeros(), 2.0, 2.0), 0.0);
    }

    #[test]
    fn zero_regressor_only_inflates_gain() {
        let s = reference_state(v(1.0, 2.0));
        let next = rlse_update(&s, &Vec2::zeros(), 0.0).unwrap();
        assert_eq!(next.p_hat, v(1.0, 2.0));
        assert!((next.gamma - Mat2::identity() / 0.9).amax() < 1e-15);
    }

    #[test]
    fn exact_estimate_stays_exact() {
        let p_prev = v(-2.0, 3.5);
        let delta = v(0.3, -0.1);
        let y = compute_y(&delta, (p_prev + delta).norm(), p_prev.norm());
        let next = rlse_update(&reference_state(p_prev), &delta, y).unwrap();
        assert!((next.p_hat - (p_prev + delta)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(RlseState::new(Vec2::zeros(), Mat2::identity(), 1.0).is_err());
        assert!(RlseState::new(Vec2::zeros(), -Mat2::identity(), 0.5).is_err());
        assert_eq!(
            rlse_update(&reference_state(Vec2::zeros()), &v(f64::NAN, 0.0), 1.0),
            Err(RlseError::NonFinite)
        );
    }

    /// Relative positions of two UAVs on the circle with phases `phi` apart,
    /// advancing `dtheta` per step.
    fn circle_track(phi: f64, dtheta: f64, rho: f64, steps: usize) -> Vec<Vec2> {
        (0..=steps)
            .map(|k| {
                let th = 0.7 + dtheta * k as f64;
                rho * v(th.cos(), th.sin()) - rho * v((th + phi).cos(), (th + phi).sin())
            })
            .collect()
    }

    #[test]
    fn converges_on_noiseless_circle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let track = circle_track(std::f64::consts::FRAC_PI_2, 0.05, 4.0, 500);
        for _ in 0..100 {
            let r: f64 = 5.0 * rng.random::<f64>().sqrt();
            let a: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let err0 = r * v(a.cos(), a.sin());
            let mut s = reference_state(track[0] + err0);
            for k in 1..track.len() {
                let delta = track[k] - track[k - 1];
                let y = compute_y(&delta, track[k].norm(), track[k - 1].norm());
                s = rlse_update(&s, &delta, y).unwrap();
            }
            assert!((s.p_hat - track[500]).norm() < 1e-3);
        }
    }

    /// With forgetting, `Gamma_k^{-1} = beta Gamma_{k-1}^{-1} + delta delta^T`,
    /// so the noiseless error obeys `e_k = beta^k Gamma_k Gamma_0^{-1} e_0`.
    #[test]
    fn noiseless_error_matches_closed_form() {
        let track = circle_track(std::f64::consts::PI, 0.05, 4.0, 60);
        let e0 = v(1.0, -2.0);
        let mut s = reference_state(track[0] + e0);
        let mut info = Mat2::identity();
        for k in 1..track.len() {
            let delta = track[k] - track[k - 1];
            let y = compute_y(&delta, track[k].norm(), track[k - 1].norm());
            s = rlse_update(&s, &delta, y).unwrap();
            info = info * 0.9 + delta * delta.transpose();
            let gamma_oracle = info.try_inverse().unwrap();
            assert!((s.gamma - gamma_oracle).amax() < 1e-9 * gamma_oracle.amax());
            let e_oracle = 0.9f64.powi(k as i32) * gamma_oracle * e0;
            assert!(((s.p_hat - track[k]) - e_oracle).norm() < 1e-9);
        }
    }

    #[test]
    fn pe_window_examples() {
        let s = pe_update(pe_update(PeWindowStats::new(2), v(1.0, 0.0)), v(0.0, 1.0));
        assert!((s.phi - Mat2::identity()).amax() < 1e-15);
        assert!((s.min_eig - 1.0).abs() < 1e-15);

        let s = pe_update(pe_update(PeWindowStats::new(2), v(1.0, 0.0)), v(2.0, 0.0));
        assert!(s.min_eig.abs() < 1e-15);
        assert!((s.max_eig - 5.0).abs() < 1e-12);

        // Oldest entry leaves the window.
        let s = pe_update(s, v(0.0, 3.0));
        assert_eq!(s.window.len(), 2);
        assert!((s.min_eig - 4.0).abs() < 1e-12);
    }

    #[test]
    fn desired_relative_velocity_is_exciting() {
        // v*_ij rotates by dtheta each step at a fixed phase offset.
        let (rho, dt, dth) = (4.0, 0.1, 0.05);
        let vstar = |th: f64| rho * (v((th + dth).cos(), (th + dth).sin()) - v(th.cos(), th.sin())) / dt;
        let mut stats = PeWindowStats::new(20);
        let mut direct = Mat2::zeros();
        for k in 0..20 {
            let th = 0.3 + dth * k as f64;
            let rel = vstar(th) - vstar(th + std::f64::consts::FRAC_PI_2);
            direct += rel * rel.transpose();
            stats = pe_update(stats, rel);
        }
        let eig = direct.symmetric_eigenvalues();
        let oracle_min = eig.min();
        assert!(oracle_min > 0.0);
        assert!((stats.min_eig - oracle_min).abs() < 1e-9 * eig.max());
    }

    proptest! {
        #[test]
        fn y_recovers_projection(dx in -3.0f64..3.0, dy in -3.0f64..3.0, px in -10.0f64..10.0, py in -10.0f64..10.0) {
            let delta = v(dx, dy);
            let prev = v(px, py);
            let y = compute_y(&delta, (prev + delta).norm(), prev.norm());
            prop_assert!((y - delta.dot(&prev)).abs() < 1e-12 * (1.0 + prev.norm_squared() + delta.norm_squared()));
        }

        #[test]
        fn gain_stays_positive_definite(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut s = reference_state(Vec2::zeros());
            for k in 0..300 {
                let delta = rotation(0.05 * k as f64) * v(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
                s = rlse_update(&s, &delta, rng.random_range(-1.0..1.0)).unwrap();
                prop_assert!(s.gamma.cholesky().is_some());
                prop_assert_eq!(s.gamma[(0, 1)], s.gamma[(1, 0)]);
            }
        }

        #[test]
        fn pe_eigenvalues_ordered(xs in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40)) {
            let mut s = PeWindowStats::new(20);
            for (x, y) in xs {
                s = pe_update(s, v(x, y));
                prop_assert!(s.min_eig <= s.max_eig);
                prop_assert!(s.min_eig > -1e-9);
            }
        }
    }
}
