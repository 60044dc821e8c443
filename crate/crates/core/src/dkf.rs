//! Distributed Kalman filter over the stacked state `[p_i0; v_0; v_i]`.
//!
//! Each UAV predicts with a constant-velocity target model, then corrects
//! with its own observation, with neighbor observations shifted into its own
//! frame through the RLSE estimate `p_hat_ij`, and with a consensus pull
//! towards the aligned neighbor priors.

use nalgebra::{Matrix2x6, Matrix4x6, Matrix6x2, Matrix6x4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{spd_inverse, symmetrize, Mat2, Mat4, Mat6, Vec2, Vec4, Vec6};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DkfError {
    #[error("{what} is not symmetric positive definite")]
    NotPositiveDefinite { what: &'static str },
    #[error("consensus gain must be non-negative, got {0}")]
    InvalidConsensusGain(f64),
}

/// Fixed model matrices and tuning shared by all UAVs.
#[derive(Debug, Clone, PartialEq)]
pub struct DkfModel {
    pub dt: f64,
    /// Process covariance on `[v_0; v_i]`, block diagonal in practice.
    pub q: Mat4,
    /// Covariance of `[q_i0; delta_i]`.
    pub r: Mat4,
    pub epsilon: f64,
    a: Mat6,
    b: Matrix6x2<f64>,
    g: Matrix6x4<f64>,
    h: Matrix4x6<f64>,
    gq_gt: Mat6,
    fusion: [Fusion; 3],
}

/// Precomputed `H^T R^-1` and `H^T R^-1 H` for one subset of rows.
#[derive(Debug, Clone, PartialEq)]
struct Fusion {
    ht_rinv: Matrix6x4<f64>,
    info: Mat6,
}

/// Which rows of `z = [q; delta]` are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rows {
    Both = 0,
    Target = 1,
    Displacement = 2,
}

impl DkfModel {
    pub fn new(dt: f64, q0: &Mat2, qi: &Mat2, r: &Mat4, epsilon: f64) -> Result<Self, DkfError> {
        if !(epsilon >= 0.0) {
            return Err(DkfError::InvalidConsensusGain(epsilon));
        }
        let i2 = Mat2::identity();
        let mut a = Mat6::identity();
        a.fixed_view_mut::<2, 2>(0, 2).copy_from(&(-dt * i2));
        a.fixed_view_mut::<2, 2>(0, 4).copy_from(&(dt * i2));

        let mut b = Matrix6x2::zeros();
        b.fixed_view_mut::<2, 2>(4, 0).copy_from(&(dt * i2));

        // Noise enters both velocity blocks: the target's and the UAV's.
        let mut g = Matrix6x4::zeros();
        g.fixed_view_mut::<2, 2>(2, 0).copy_from(&(dt * i2));
        g.fixed_view_mut::<2, 2>(4, 2).copy_from(&(dt * i2));

        let mut h = Matrix4x6::zeros();
        h.fixed_view_mut::<2, 2>(0, 0).copy_from(&i2);
        h.fixed_view_mut::<2, 2>(2, 4).copy_from(&(dt * i2));

        let mut q = Mat4::zeros();
        q.fixed_view_mut::<2, 2>(0, 0).copy_from(q0);
        q.fixed_view_mut::<2, 2>(2, 2).copy_from(qi);
        let gq_gt = symmetrize(&(g * q * g.transpose()));

        let r_inv = spd_inverse(r).ok_or(DkfError::NotPositiveDefinite { what: "R" })?;
        let both = Fusion { ht_rinv: h.transpose() * r_inv, info: symmetrize(&(h.transpose() * r_inv * h)) };
        let partial = |offset: usize| -> Result<Fusion, DkfError> {
            let r_sub: Mat2 = r.fixed_view::<2, 2>(offset, offset).into_owned();
            let r_sub_inv = spd_inverse(&r_sub).ok_or(DkfError::NotPositiveDefinite { what: "R block" })?;
            let h_sub: Matrix2x6<f64> = h.fixed_view::<2, 6>(offset, 0).into_owned();
            let mut ht_rinv = Matrix6x4::zeros();
            ht_rinv.fixed_view_mut::<6, 2>(0, offset).copy_from(&(h_sub.transpose() * r_sub_inv));
            Ok(Fusion { ht_rinv, info: symmetrize(&(h_sub.transpose() * r_sub_inv * h_sub)) })
        };
        let fusion = [both, partial(0)?, partial(2)?];

        Ok(Self { dt, q, r: *r, epsilon, a, b, g, h, gq_gt, fusion })
    }

    pub fn a(&self) -> &Mat6 {
        &self.a
    }

    pub fn b(&self) -> &Matrix6x2<f64> {
        &self.b
    }

    pub fn g(&self) -> &Matrix6x4<f64> {
        &self.g
    }

    pub fn h(&self) -> &Matrix4x6<f64> {
        &self.h
    }

    /// Shifts a measured displacement `p_k - p_{k-1} = T v_{k-1}` onto the
    /// current velocity by adding the known own input: `T v_k = delta + T^2 u`.
    pub fn compensate_displacement(&self, delta: &Vec2, u_prev: &Vec2) -> Vec2 {
        delta + u_prev * (self.dt * self.dt)
    }

    fn fusion(&self, rows: Rows) -> &Fusion {
        &self.fusion[rows as usize]
    }
}

/// Posterior estimate held by one UAV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DkfState {
    pub x: Vec6,
    pub p: Mat6,
}

impl DkfState {
    pub fn new(x: Vec6, p: Mat6) -> Self {
        Self { x, p }
    }

    /// Estimated target position relative to the UAV, `p_hat_i0`.
    pub fn target_relative(&self) -> Vec2 {
        self.x.fixed_rows::<2>(0).into_owned()
    }

    /// Estimated target velocity `v_hat_0`.
    pub fn target_velocity(&self) -> Vec2 {
        self.x.fixed_rows::<2>(2).into_owned()
    }

    /// Estimated own velocity `v_hat_i`.
    pub fn own_velocity(&self) -> Vec2 {
        self.x.fixed_rows::<2>(4).into_owned()
    }
}

/// Prior produced by [`dkf_predict`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DkfPrior {
    pub x_bar: Vec6,
    pub p_minus: Mat6,
}

impl DkfPrior {
    pub fn target_relative(&self) -> Vec2 {
        self.x_bar.fixed_rows::<2>(0).into_owned()
    }

    pub fn target_velocity(&self) -> Vec2 {
        self.x_bar.fixed_rows::<2>(2).into_owned()
    }

    pub fn own_velocity(&self) -> Vec2 {
        self.x_bar.fixed_rows::<2>(4).into_owned()
    }
}

pub fn dkf_predict(s: &DkfState, u: &Vec2, model: &DkfModel) -> DkfPrior {
    DkfPrior {
        x_bar: model.a * s.x + model.b * u,
        p_minus: symmetrize(&(model.a * s.p * model.a.transpose() + model.gq_gt)),
    }
}

/// Observation `z = [q_i0; delta_i]`, either row pair possibly missing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub target: Option<Vec2>,
    pub displacement: Option<Vec2>,
}

impl Observation {
    fn rows(&self) -> Option<(Rows, Vec4)> {
        let z = |a: Vec2, b: Vec2| Vec4::new(a.x, a.y, b.x, b.y);
        match (self.target, self.displacement) {
            (Some(q), Some(d)) => Some((Rows::Both, z(q, d))),
            (Some(q), None) => Some((Rows::Target, z(q, Vec2::zeros()))),
            (None, Some(d)) => Some((Rows::Displacement, z(Vec2::zeros(), d))),
            (None, None) => None,
        }
    }
}

/// What UAV `j` broadcasts to its neighbors in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborPacket {
    pub sender: usize,
    /// `z_j0 = [q_j0; delta_j]`; `q_j0` is missing when the target is not
    /// visible to `j`.
    pub z: Observation,
    /// This round's prior `x_bar_j`.
    pub x_bar: Vec6,
    /// Previous round's own-velocity estimate `v_hat_j`.
    pub v_hat_prev: Vec2,
    pub theta: f64,
}

impl NeighborPacket {
    pub fn visible(&self) -> bool {
        self.z.target.is_some()
    }
}

/// Neighbor data expressed in the receiving UAV's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedNeighbor {
    pub x_bar: Vec6,
    pub z: Observation,
}

/// Shifts neighbor `j`'s target-relative quantities by `p_hat_ij`:
/// `x_bar_i0^j = [p_bar_j0 + p_hat_ij; v_bar_0^j; v_bar_i]` and
/// `z_i0^j = [q_j0 + p_hat_ij; delta_i]`.
pub fn align_neighbor(pkt: &NeighborPacket, p_hat_ij: &Vec2, own: &DkfPrior, own_delta: Option<Vec2>) -> AlignedNeighbor {
    let mut x_bar = pkt.x_bar;
    x_bar.fixed_rows_mut::<2>(0).copy_from(&(pkt.x_bar.fixed_rows::<2>(0) + p_hat_ij));
    x_bar.fixed_rows_mut::<2>(4).copy_from(&own.own_velocity());
    AlignedNeighbor {
        x_bar,
        z: Observation { target: pkt.z.target.map(|q| q + p_hat_ij), displacement: own_delta },
    }
}

/// Information-form correction with consensus:
///
/// `(P+)^-1 = (P-)^-1 + sum H^T R^-1 H` over available observations, and
/// `x_hat = x_bar + eps sum_j (x_bar^j - x_bar^i) + P+ sum H^T R^-1 (z^j - H x_bar^i)`.
pub fn dkf_correct(
    prior: &DkfPrior,
    own: &Observation,
    neighbors: &[AlignedNeighbor],
    model: &DkfModel,
) -> Result<DkfState, DkfError> {
    let mut info = spd_inverse(&prior.p_minus).ok_or(DkfError::NotPositiveDefinite { what: "prior covariance" })?;
    let mut info_innovation = Vec6::zeros();
    let hx = model.h * prior.x_bar;

    for obs in std::iter::once(own).chain(neighbors.iter().map(|n| &n.z)) {
        if let Some((rows, z)) = obs.rows() {
            let f = model.fusion(rows);
            info += f.info;
            info_innovation += f.ht_rinv * (z - hx);
        }
    }
    let p = spd_inverse(&symmetrize(&info)).ok_or(DkfError::NotPositiveDefinite { what: "posterior information" })?;

    let consensus: Vec6 = neighbors.iter().map(|n| n.x_bar - prior.x_bar).sum();
    let x = prior.x_bar + consensus * model.epsilon + p * info_innovation;
    Ok(DkfState { x, p })
}
