//! Ground-truth plant: double-integrator agents, target input profiles,
//! noisy sensing and line-of-sight occlusion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{rotation, Mat2, Vec2};
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("covariance {name} is not symmetric positive semidefinite")]
    InvalidCovariance { name: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub p: Vec2,
    pub v: Vec2,
}

impl AgentState {
    pub fn new(p: Vec2, v: Vec2) -> Self {
        Self { p, v }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// One sampling period of the double integrator.
///
/// Position advances with the current velocity; velocity takes the input and
/// process noise, then is rescaled onto the `v_max` ball if it left it.
pub fn step_agent(s: &AgentState, u: &Vec2, w: &Vec2, dt: f64, v_max: f64) -> Result<AgentState, WorldError> {
    if !s.is_finite() {
        return Err(WorldError::NonFinite { what: "agent state" });
    }
    if !u.iter().chain(w.iter()).all(|x| x.is_finite()) {
        return Err(WorldError::NonFinite { what: "agent input" });
    }
    let p = s.p + s.v * dt;
    let v = clamp_norm(s.v + u * dt + w * dt, v_max);
    Ok(AgentState { p, v })
}

fn clamp_norm(v: Vec2, max: f64) -> Vec2 {
    let norm = v.norm();
    if norm > max {
        v * (max / norm)
    } else {
        v
    }
}

/// Acceleration profile driving the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TargetProfile {
    ConstantZero,
    /// `R(2 pi k / period_steps) * (0, magnitude)`.
    Rotating { magnitude: f64, period_steps: f64 },
}

impl TargetProfile {
    pub const DEFAULT_ROTATING: TargetProfile = TargetProfile::Rotating { magnitude: 0.1, period_steps: 450.0 };

    /// Upper bound on the input norm.
    pub fn bound(&self) -> f64 {
        match *self {
            TargetProfile::ConstantZero => 0.0,
            TargetProfile::Rotating { magnitude, .. } => magnitude.abs(),
        }
    }
}

pub fn target_input(profile: &TargetProfile, k: u64) -> Vec2 {
    match *profile {
        TargetProfile::ConstantZero => Vec2::zeros(),
        TargetProfile::Rotating { magnitude, period_steps } => {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / period_steps;
            rotation(angle) * Vec2::new(0.0, magnitude)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
}

/// True when the segment `[a, b]` passes strictly inside the obstacle disc.
/// A zero-length segment degrades to a point-in-disc test.
pub fn occlusion_check(a: &Vec2, b: &Vec2, obs: &Obstacle) -> bool {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let closest = if len2 == 0.0 {
        *a
    } else {
        let s = ((obs.center - a).dot(&ab) / len2).clamp(0.0, 1.0);
        a + ab * s
    };
    (obs.center - closest).norm() < obs.radius
}

/// Scheduled loss of the target measurement for a set of UAVs (0-based),
/// active for `start <= t < end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionWindow {
    pub uavs: Vec<usize>,
    pub start: f64,
    pub end: f64,
}

impl OcclusionWindow {
    pub fn blocks(&self, uav: usize, t: f64) -> bool {
        t >= self.start && t < self.end && self.uavs.contains(&uav)
    }
}

/// Covariances for process and measurement noise plus the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Target process noise.
    pub q0: Mat2,
    /// UAV process noise.
    pub qi: Mat2,
    /// Self-displacement measurement noise.
    pub displacement: Mat2,
    /// Range measurement noise variance.
    pub distance: f64,
    /// Target relative-position measurement noise.
    pub target_relative: Mat2,
    pub seed: u64,
}

impl NoiseConfig {
    /// All covariances zero.
    pub fn silent(seed: u64) -> Self {
        Self {
            q0: Mat2::zeros(),
            qi: Mat2::zeros(),
            displacement: Mat2::zeros(),
            distance: 0.0,
            target_relative: Mat2::zeros(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        for (name, m) in [
            ("q0", &self.q0),
            ("qi", &self.qi),
            ("displacement", &self.displacement),
            ("target_relative", &self.target_relative),
        ] {
            GaussianSampler::new(m).map_err(|_| WorldError::InvalidCovariance { name })?;
        }
        if !(self.distance >= 0.0 && self.distance.is_finite()) {
            return Err(WorldError::InvalidCovariance { name: "distance" });
        }
        Ok(())
    }
}

/// Zero-mean 2-D Gaussian sampler built from a square-root factor.
#[derive(Debug, Clone, Copy)]
pub struct GaussianSampler {
    factor: Mat2,
}

impl GaussianSampler {
    pub fn new(cov: &Mat2) -> Result<Self, WorldError> {
        let bad = WorldError::InvalidCovariance { name: "covariance" };
        if !cov.iter().all(|x| x.is_finite()) || (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 {
            return Err(bad);
        }
        if let Some(chol) = cov.cholesky() {
            return Ok(Self { factor: chol.l() });
        }
        // Semidefinite: fall back to V sqrt(L).
        let eig = cov.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
            return Err(bad);
        }
        let sqrt = Mat2::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        Ok(Self { factor: eig.eigenvectors * sqrt })
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec2 {
        let z = Vec2::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
        self.factor * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum StreamKind {
    Process = 0,
    Displacement = 1,
    Distance = 2,
    TargetRelative = 3,
}

const STREAMS_PER_AGENT: u64 = 4;

/// Independent RNG stream for `(agent, kind)` derived from the master seed.
/// Agent 0 is the target; UAV `i` (0-based) is agent `i + 1`.
fn stream(seed: u64, agent: usize, kind: StreamKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64 * STREAMS_PER_AGENT + kind as u64);
    rng
}

/// Stream reserved for drawing initial oscillator phases.
pub fn phase_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

#[derive(Debug, Clone)]
struct AgentStreams {
    process: ChaCha8Rng,
    displacement: ChaCha8Rng,
    distance: ChaCha8Rng,
    target_relative: ChaCha8Rng,
}

impl AgentStreams {
    fn new(seed: u64, agent: usize) -> Self {
        Self {
            process: stream(seed, agent, StreamKind::Process),
            displacement: stream(seed, agent, StreamKind::Displacement),
            distance: stream(seed, agent, StreamKind::Distance),
            target_relative: stream(seed, agent, StreamKind::TargetRelative),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Samplers {
    q0: GaussianSampler,
    qi: GaussianSampler,
    displacement: GaussianSampler,
    distance_std: f64,
    target_relative: GaussianSampler,
}

/// Range to one neighbor plus the relative displacement formed from both
/// UAVs' self-displacements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborMeasurement {
    pub neighbor: usize,
    /// `delta_i - delta_j`; absent on the first round.
    pub rel_displacement: Option<Vec2>,
    pub distance: f64,
}

/// Everything UAV `i` observes in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementBundle {
    pub uav: usize,
    /// Self-displacement since the previous round; absent on the first round.
    pub displacement: Option<Vec2>,
    pub neighbors: Vec<NeighborMeasurement>,
    /// Target position relative to the UAV, present only when visible.
    pub target: Option<Vec2>,
}

impl MeasurementBundle {
    pub fn visible(&self) -> bool {
        self.target.is_some()
    }
}

/// Sensing environment that does not change during a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensingEnvironment {
    pub obstacles: Vec<Obstacle>,
    pub occlusions: Vec<OcclusionWindow>,
}

impl SensingEnvironment {
    pub fn target_visible(&self, uav: usize, p_uav: &Vec2, p_target: &Vec2, t: f64) -> bool {
        !self.occlusions.iter().any(|w| w.blocks(uav, t))
            && !self.obstacles.iter().any(|o| occlusion_check(p_uav, p_target, o))
    }
}

/// Ground truth for the target and all UAVs.
#[derive(Debug, Clone)]
pub struct World {
    pub target: AgentState,
    pub uavs: Vec<AgentState>,
    prev_positions: Option<Vec<Vec2>>,
    streams: Vec<AgentStreams>,
    samplers: Samplers,
    pub env: SensingEnvironment,
    pub dt: f64,
    pub v_max_target: f64,
    pub v_max_uav: f64,
}

impl World {
    pub fn new(
        target: AgentState,
        uavs: Vec<AgentState>,
        noise: &NoiseConfig,
        env: SensingEnvironment,
        dt: f64,
        v_max_target: f64,
        v_max_uav: f64,
    ) -> Result<Self, WorldError> {
        noise.validate()?;
        let samplers = Samplers {
            q0: GaussianSampler::new(&noise.q0)?,
            qi: GaussianSampler::new(&noise.qi)?,
            displacement: GaussianSampler::new(&noise.displacement)?,
            distance_std: noise.distance.sqrt(),
            target_relative: GaussianSampler::new(&noise.target_relative)?,
        };
        let streams = (0..=uavs.len()).map(|a| AgentStreams::new(noise.seed, a)).collect();
        Ok(Self {
            target,
            uavs,
            prev_positions: None,
            streams,
            samplers,
            env,
            dt,
            v_max_target,
            v_max_uav,
        })
    }

    pub fn n(&self) -> usize {
        self.uavs.len()
    }

    /// Generates this round's measurements for every UAV.
    ///
    /// Each UAV draws only from its own streams, so the result does not
    /// depend on evaluation order and `parallel` gives identical output.
    pub fn measure(&mut self, topology: &Topology, t: f64, parallel: bool) -> Vec<MeasurementBundle> {
        let samplers = self.samplers;
        let uav_streams = &mut self.streams[1..];
        let prev = self.prev_positions.as_deref();
        let uavs = &self.uavs;

        let displacements: Vec<Option<Vec2>> = match prev {
            None => vec![None; uavs.len()],
            Some(prev) => {
                let f = |(i, s): (usize, &mut AgentStreams)| {
                    Some(uavs[i].p - prev[i] + samplers.displacement.sample(&mut s.displacement))
                };
                if parallel {
                    uav_streams.par_iter_mut().enumerate().map(f).collect()
                } else {
                    uav_streams.iter_mut().enumerate().map(f).collect()
                }
            }
        };

        let target = self.target.p;
        let env = &self.env;
        let build = |(i, s): (usize, &mut AgentStreams)| {
            let neighbors = topology
                .neighbors(i)
                .iter()
                .map(|&j| {
                    let z: f64 = StandardNormal.sample(&mut s.distance);
                    let noise = samplers.distance_std * z;
                    let distance = ((uavs[i].p - uavs[j].p).norm() + noise).max(0.0);
                    let rel_displacement = match (displacements[i], displacements[j]) {
                        (Some(di), Some(dj)) => Some(di - dj),
                        _ => None,
                    };
                    NeighborMeasurement { neighbor: j, rel_displacement, distance }
                })
                .collect();
            let noise = samplers.target_relative.sample(&mut s.target_relative);
            let target = env
                .target_visible(i, &uavs[i].p, &target, t)
                .then(|| uavs[i].p - target + noise);
            MeasurementBundle { uav: i, displacement: displacements[i], neighbors, target }
        };
        if parallel {
            uav_streams.par_iter_mut().enumerate().map(build).collect()
        } else {
            uav_streams.iter_mut().enumerate().map(build).collect()
        }
    }

    /// Advances the target with `target_u` and every UAV with its input.
    pub fn advance(&mut self, target_u: &Vec2, uav_u: &[Vec2]) -> Result<(), WorldError> {
        assert_eq!(uav_u.len(), self.uavs.len());
        self.prev_positions = Some(self.uavs.iter().map(|s| s.p).collect());

        let w0 = self.samplers.q0.sample(&mut self.streams[0].process);
        self.target = step_agent(&self.target, target_u, &w0, self.dt, self.v_max_target)?;
        for (i, u) in uav_u.iter().enumerate() {
            let w = self.samplers.qi.sample(&mut self.streams[i + 1].process);
            self.uavs[i] = step_agent(&self.uavs[i], u, &w, self.dt, self.v_max_uav)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix4, Vector4};
    use proptest::prelude::*;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn coasting_step() {
        let s = AgentState::new(v(0.0, 0.0), v(1.0, 0.0));
        let next = step_agent(&s, &Vec2::zeros(), &Vec2::zeros(), 0.1, 5.0).unwrap();
        assert_eq!(next.p, v(0.1, 0.0));
        assert_eq!(next.v, v(1.0, 0.0));
    }

    #[test]
    fn position_uses_current_velocity() {
        let s = AgentState::new(v(0.0, 0.0), v(0.0, 0.0));
        let next = step_agent(&s, &v(0.0, 1.0), &Vec2::zeros(), 0.1, 5.0).unwrap();
        assert_eq!(next.p, v(0.0, 0.0));
        assert!((next.v - v(0.0, 0.1)).norm() < 1e-15);
    }

    #[test]
    fn noisy_step_matches_state_space_form() {
        let dt = 0.1;
        let s = AgentState::new(v(1.5, -2.0), v(0.3, 0.7));
        let u = v(-0.2, 0.4);
        let w = v(0.05, -0.11);
        let next = step_agent(&s, &u, &w, dt, 10.0).unwrap();

        let a = Matrix4::new(
            1.0, 0.0, dt, 0.0, //
            0.0, 1.0, 0.0, dt, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let b = nalgebra::Matrix4x2::new(0.0, 0.0, 0.0, 0.0, dt, 0.0, 0.0, dt);
        let x = Vector4::new(s.p.x, s.p.y, s.v.x, s.v.y);
        let expected = a * x + b * u + b * w;
        let got = Vector4::new(next.p.x, next.p.y, next.v.x, next.v.y);
        assert!((expected - got).amax() < 1e-12);
    }

    #[test]
    fn non_finite_input_rejected() {
        let s = AgentState::new(Vec2::zeros(), Vec2::zeros());
        assert!(step_agent(&s, &v(f64::NAN, 0.0), &Vec2::zeros(), 0.1, 1.0).is_err());
    }

    #[test]
    fn target_profiles() {
        assert_eq!(target_input(&TargetProfile::ConstantZero, 17), Vec2::zeros());
        let p = TargetProfile::DEFAULT_ROTATING;
        assert!((target_input(&p, 0) - v(0.0, 0.1)).norm() < 1e-15);
        // Half a period rotates by pi.
        let half = rotation(std::f64::consts::PI) * v(0.0, 0.1);
        assert!((target_input(&p, 225) - half).norm() < 1e-15);
        assert!((target_input(&p, 225) - v(0.0, -0.1)).norm() < 1e-15);
    }

    #[test]
    fn occlusion_cases() {
        let o = Obstacle { center: v(2.0, 0.1), radius: 0.2 };
        assert!(occlusion_check(&v(0.0, 0.0), &v(4.0, 0.0), &o));
        let far = Obstacle { center: v(5.0, 0.0), radius: 0.5 };
        assert!(!occlusion_check(&v(0.0, 0.0), &v(4.0, 0.0), &far));
        let point = Obstacle { center: v(0.0, 0.1), radius: 0.2 };
        assert!(occlusion_check(&v(0.0, 0.0), &v(0.0, 0.0), &point));
    }

    fn two_uav_world(noise: &NoiseConfig, obstacles: Vec<Obstacle>) -> (World, Topology) {
        let topo = Topology::ring(2, 1.0, 1.0).unwrap();
        let world = World::new(
            AgentState::new(v(4.0, 0.0), Vec2::zeros()),
            vec![AgentState::new(v(0.0, 0.0), Vec2::zeros()), AgentState::new(v(3.0, 4.0), Vec2::zeros())],
            noise,
            SensingEnvironment { obstacles, occlusions: vec![] },
            0.1,
            2.0,
            5.0,
        )
        .unwrap();
        (world, topo)
    }

    #[test]
    fn noiseless_stationary_measurements() {
        let (mut world, topo) = two_uav_world(&NoiseConfig::silent(1), vec![]);
        let first = world.measure(&topo, 0.0, false);
        assert_eq!(first[0].displacement, None);
        world.advance(&Vec2::zeros(), &[Vec2::zeros(), Vec2::zeros()]).unwrap();
        let b = world.measure(&topo, 0.1, false);
        assert_eq!(b[0].displacement, Some(Vec2::zeros()));
        assert_eq!(b[0].neighbors[0].distance, 5.0);
        assert_eq!(b[0].neighbors[0].rel_displacement, Some(Vec2::zeros()));
        assert_eq!(b[0].target, Some(v(-4.0, 0.0)));
    }

    #[test]
    fn obstacle_hides_target() {
        let blocked = vec![Obstacle { center: v(2.0, 0.1), radius: 0.2 }];
        let (mut world, topo) = two_uav_world(&NoiseConfig::silent(1), blocked);
        let b = world.measure(&topo, 0.0, false);
        assert!(!b[0].visible());
        let clear = vec![Obstacle { center: v(2.0, 5.0), radius: 0.2 }];
        let (mut world, topo) = two_uav_world(&NoiseConfig::silent(1), clear);
        assert!(world.measure(&topo, 0.0, false)[0].visible());
    }

    #[test]
    fn scheduled_occlusion() {
        let w = OcclusionWindow { uavs: vec![1], start: 1.0, end: 2.0 };
        assert!(!w.blocks(1, 0.99));
        assert!(w.blocks(1, 1.0));
        assert!(!w.blocks(1, 2.0));
        assert!(!w.blocks(0, 1.5));
    }

    fn noisy(seed: u64) -> NoiseConfig {
        NoiseConfig {
            q0: Mat2::identity() * 0.04,
            qi: Mat2::identity() * 0.001,
            displacement: Mat2::identity() * 1e-4,
            distance: 1e-4,
            target_relative: Mat2::identity() * 1e-4,
            seed,
        }
    }

    #[test]
    fn measurements_are_deterministic_and_order_free() {
        let run = |parallel: bool| {
            let (mut world, topo) = two_uav_world(&noisy(7), vec![]);
            let mut out = Vec::new();
            for k in 0..5 {
                out.push(world.measure(&topo, k as f64 * 0.1, parallel));
                world.advance(&v(0.1, 0.0), &[v(0.2, 0.0), v(0.0, -0.3)]).unwrap();
            }
            out
        };
        assert_eq!(run(false), run(false));
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn distance_is_clamped() {
        let mut cfg = noisy(3);
        cfg.distance = 100.0;
        let topo = Topology::ring(2, 1.0, 1.0).unwrap();
        let mut world = World::new(
            AgentState::new(Vec2::zeros(), Vec2::zeros()),
            vec![AgentState::new(Vec2::zeros(), Vec2::zeros()); 2],
            &cfg,
            SensingEnvironment::default(),
            0.1,
            2.0,
            5.0,
        )
        .unwrap();
        for _ in 0..50 {
            for b in world.measure(&topo, 0.0, false) {
                assert!(b.neighbors.iter().all(|m| m.distance >= 0.0));
            }
        }
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let mut cfg = noisy(1);
        cfg.q0 = Mat2::new(1.0, 0.0, 0.0, -1.0);
        assert!(cfg.validate().is_err());
        assert!(GaussianSampler::new(&Mat2::zeros()).is_ok());
    }

    proptest! {
        #[test]
        fn rest_is_a_fixed_point(px in -10.0f64..10.0, py in -10.0f64..10.0, k in 1usize..50) {
            let mut s = AgentState::new(v(px, py), Vec2::zeros());
            for _ in 0..k {
                s = step_agent(&s, &Vec2::zeros(), &Vec2::zeros(), 0.1, 5.0).unwrap();
            }
            prop_assert_eq!(s.p, v(px, py));
        }

        #[test]
        fn speed_never_exceeds_clamp(
            vx in -10.0f64..10.0, vy in -10.0f64..10.0,
            ux in -50.0f64..50.0, uy in -50.0f64..50.0, vmax in 0.1f64..6.0,
        ) {
            let s = AgentState::new(Vec2::zeros(), v(vx, vy));
            let next = step_agent(&s, &v(ux, uy), &Vec2::zeros(), 0.1, vmax).unwrap();
            prop_assert!(next.v.norm() <= vmax * (1.0 + 1e-12));
        }

        #[test]
        fn occlusion_is_symmetric(
            ax in -5.0f64..5.0, ay in -5.0f64..5.0, bx in -5.0f64..5.0, by in -5.0f64..5.0,
            cx in -5.0f64..5.0, cy in -5.0f64..5.0, r in 0.01f64..3.0,
        ) {
            let o = Obstacle { center: v(cx, cy), radius: r };
            prop_assert_eq!(occlusion_check(&v(ax, ay), &v(bx, by), &o), occlusion_check(&v(bx, by), &v(ax, ay), &o));
        }
    }
}
