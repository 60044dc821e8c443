//! Round-synchronous simulation of the whole team.
//!
//! Round `k`:
//! 1. sense at the true state `x_k`,
//! 2. RLSE update on every directed edge,
//! 3. DKF predict, exchange packets, align and correct,
//! 4. controller on this round's estimates and phases,
//! 5. record truth, estimates and metrics,
//! 6. advance the oscillator phases,
//! 7. advance the target and the UAVs.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::controller::{
    collision_free_input, spectral_radius, total_input, tracking_input, ControllerError, ControllerGains,
    NeighborTerms, OwnTerms,
};
use crate::dkf::{align_neighbor, dkf_correct, dkf_predict, DkfPrior, DkfState, NeighborPacket, Observation};
use crate::math::{all_finite, Mat2, Mat6, Vec2, Vec4, Vec6};
use crate::pattern::{desired_relative, desired_state, phase_update, PhaseState};
use crate::rlse::{compute_y, rlse_update, RlseState};
use crate::topology::{LaplacianBlocks, Topology};
use crate::world::{phase_stream, target_input, AgentState, World};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical divergence at step {step}: {reason}")]
    Diverged { step: u64, reason: String },
    #[error("protocol violation at step {step}: {source}")]
    Protocol { step: u64, source: ControllerError },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecMode {
    #[default]
    Serial,
    /// Per-UAV stages on the rayon pool. Produces the same trace as `Serial`.
    Parallel,
}

/// RLSE state of the directed edge `i -> j` after round `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    pub p_hat: Vec2,
    /// Relative displacement used in this round; absent on round 0.
    pub delta: Option<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// `|[mean p_i - p_0; mean v_i - v_0]|`.
    pub e_t: f64,
    /// `max_i |p_i - p_0 - p*_i|`.
    pub max_ep: f64,
    /// `max_ij |p_hat_ij - p_ij|`.
    pub max_ptilde: f64,
    pub max_p0tilde: f64,
    /// `max_i |v_hat_0^i - v_0|`.
    pub v0tilde: f64,
    /// Infinity norm of the stacked formation error `[e_p; e_v]`.
    pub e_inf: f64,
    /// Infinity norm of the stacked estimation-error drive
    /// `T sum a_ij (k_p p_tilde_ij + k_v v_tilde_ij)`.
    pub eta: f64,
    /// `|p_hat_i0 - p_i0|` per UAV.
    pub p0tilde: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: u64,
    pub t: f64,
    pub target: AgentState,
    pub uavs: Vec<AgentState>,
    /// DKF posterior `[p_i0; v_0; v_i]` per UAV.
    pub estimates: Vec<Vec6>,
    pub edges: Vec<EdgeRecord>,
    pub theta: Vec<f64>,
    pub u_trac: Vec<Vec2>,
    pub u_safe: Vec<Vec2>,
    pub u_star: Vec<Vec2>,
    pub u: Vec<Vec2>,
    pub visible: Vec<bool>,
    pub metrics: StepMetrics,
}

/// Ultimate-bound evaluation for a bounded target input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub sigma_max: f64,
    /// Measured, not derived: max `|e_tilde|_inf` over the steady window.
    pub eta_hat: f64,
    pub u0: f64,
    pub dt: f64,
    pub bound: f64,
    /// `sigma_max < 1`; the bound means nothing otherwise.
    pub valid: bool,
    pub measured_e_inf: Option<f64>,
    pub holds: Option<bool>,
}

impl BoundReport {
    pub fn with_measured(mut self, e_inf: f64) -> Self {
        self.measured_e_inf = Some(e_inf);
        self.holds = Some(self.valid && e_inf <= self.bound);
        self
    }
}

/// `(eta_hat + T U0) / (1 - sigma_max)`, with `sigma_max` the largest root
/// modulus over the spectrum for an unsaturated controller.
pub fn ultimate_bound(blocks: &LaplacianBlocks, gains: &ControllerGains, dt: f64, u0: f64, eta_hat: f64) -> BoundReport {
    let sigma_max = spectral_radius(blocks, gains.kp, gains.kv, dt);
    let valid = sigma_max < 1.0;
    let bound = if valid { (eta_hat + dt * u0) / (1.0 - sigma_max) } else { f64::INFINITY };
    BoundReport { sigma_max, eta_hat, u0, dt, bound, valid, measured_e_inf: None, holds: None }
}

/// `[mean_i p_i - p_0; mean_i v_i - v_0]`.
pub fn tracking_error(target: &AgentState, uavs: &[AgentState]) -> Vec4 {
    let n = uavs.len() as f64;
    let p = uavs.iter().map(|s| s.p).sum::<Vec2>() / n - target.p;
    let v = uavs.iter().map(|s| s.v).sum::<Vec2>() / n - target.v;
    Vec4::new(p.x, p.y, v.x, v.y)
}

/// Everything needed to recompute metrics from a stored record.
pub struct MetricContext<'a> {
    pub topology: &'a Topology,
    pub gains: &'a ControllerGains,
    pub phase: &'a PhaseState,
}

pub fn compute_metrics(
    ctx: &MetricContext<'_>,
    target: &AgentState,
    uavs: &[AgentState],
    estimates: &[Vec6],
    edges: &[EdgeRecord],
    theta: &[f64],
) -> StepMetrics {
    let n = uavs.len();
    let part = |x: &Vec6, r: usize| -> Vec2 { x.fixed_rows::<2>(r).into_owned() };
    let mut max_ep: f64 = 0.0;
    let mut e_inf: f64 = 0.0;
    let mut p0tilde = Vec::with_capacity(n);
    let mut v0tilde: f64 = 0.0;
    for i in 0..n {
        let d = desired_state(theta[i], ctx.phase);
        let ep = uavs[i].p - target.p - d.p_star;
        let ev = uavs[i].v - target.v - d.v_star;
        max_ep = max_ep.max(ep.norm());
        e_inf = e_inf.max(ep.amax()).max(ev.amax());
        p0tilde.push((part(&estimates[i], 0) - (uavs[i].p - target.p)).norm());
        v0tilde = v0tilde.max((part(&estimates[i], 2) - target.v).norm());
    }

    let mut max_ptilde: f64 = 0.0;
    let mut drive = vec![Vec2::zeros(); n];
    let (kp, kv) = (ctx.gains.kp, ctx.gains.kv);
    for e in edges {
        let pt = e.p_hat - (uavs[e.i].p - uavs[e.j].p);
        max_ptilde = max_ptilde.max(pt.norm());
        let vt = (part(&estimates[e.i], 4) - part(&estimates[e.j], 4)) - (uavs[e.i].v - uavs[e.j].v);
        drive[e.i] += (pt * kp + vt * kv) * ctx.topology.weight(e.i, e.j);
    }
    for i in 0..n {
        let pt = part(&estimates[i], 0) - (uavs[i].p - target.p);
        let vt = (part(&estimates[i], 4) - part(&estimates[i], 2)) - (uavs[i].v - target.v);
        drive[i] += (pt * kp + vt * kv) * ctx.topology.target_weight(i);
    }
    let dt = ctx.phase.dt;
    let eta = drive.iter().map(|d| (d * dt).amax()).fold(0.0, f64::max);

    StepMetrics {
        e_t: tracking_error(target, uavs).norm(),
        max_ep,
        max_ptilde,
        max_p0tilde: p0tilde.iter().copied().fold(0.0, f64::max),
        v0tilde,
        e_inf,
        eta,
        p0tilde,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyMetrics {
    /// First step of the window (the final quarter of the run).
    pub start_step: u64,
    pub max_e_inf: f64,
    pub max_e_t: f64,
    pub max_ep: f64,
    pub max_ptilde: f64,
    pub mean_ptilde: f64,
    pub max_p0tilde: f64,
    pub max_v0tilde: f64,
    pub max_eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub n: usize,
    pub steps: u64,
    pub dt: f64,
    pub seed: u64,
    pub noise_on: bool,
    pub final_e_t: f64,
    #[serde(rename = "final_e_t_below_1e-2")]
    pub final_e_t_below_1e_2: bool,
    pub steady: SteadyMetrics,
    pub bound: BoundReport,
    pub assumptions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TraceRecord>,
    pub summary: RunSummary,
}

/// First index of the final 25% of `len` records.
pub fn steady_start(len: usize) -> usize {
    len - len.div_ceil(4)
}

pub fn summarize(cfg: &ScenarioConfig, blocks: &LaplacianBlocks, records: &[TraceRecord]) -> RunSummary {
    let start = steady_start(records.len());
    let window = &records[start..];
    let max = |f: &dyn Fn(&StepMetrics) -> f64| window.iter().map(|r| f(&r.metrics)).fold(0.0, f64::max);
    let mean_ptilde = if window.is_empty() {
        0.0
    } else {
        window.iter().map(|r| r.metrics.max_ptilde).sum::<f64>() / window.len() as f64
    };
    let steady = SteadyMetrics {
        start_step: window.first().map_or(0, |r| r.k),
        max_e_inf: max(&|m| m.e_inf),
        max_e_t: max(&|m| m.e_t),
        max_ep: max(&|m| m.max_ep),
        max_ptilde: max(&|m| m.max_ptilde),
        mean_ptilde,
        max_p0tilde: max(&|m| m.max_p0tilde),
        max_v0tilde: max(&|m| m.v0tilde),
        max_eta: max(&|m| m.eta),
    };
    let bound =
        ultimate_bound(blocks, &cfg.gains, cfg.dt, cfg.target.u0, steady.max_eta).with_measured(steady.max_e_inf);
    let final_e_t = records.last().map_or(f64::NAN, |r| r.metrics.e_t);
    RunSummary {
        name: cfg.name.clone(),
        n: cfg.n,
        steps: cfg.steps(),
        dt: cfg.dt,
        seed: cfg.noise.seed,
        noise_on: cfg.flags.noise_on,
        final_e_t,
        final_e_t_below_1e_2: final_e_t < 1e-2,
        steady,
        bound,
        assumptions: assumptions(cfg),
    }
}

fn assumptions(cfg: &ScenarioConfig) -> Vec<String> {
    vec![
        "consensus term uses neighbor priors x_bar".into(),
        "each UAV uses its own v_hat_0 in the target-link velocity term".into(),
        "controller uses estimates and phases of the current round".into(),
        "eta_hat is the max of |e_tilde|_inf over the final 25% of steps".into(),
        "sigma_max assumes an unsaturated controller".into(),
        "round 0 DKF correction uses the own target measurement only".into(),
        format!(
            "displacement measurements shifted by T^2 u_prev before fusion: {}",
            if cfg.estimator.lag_compensation { "on" } else { "off" }
        ),
    ]
}

#[derive(Debug, Clone)]
struct EdgeEstimator {
    j: usize,
    rlse: RlseState,
    d_prev: f64,
}

fn map_uavs<T, F>(n: usize, mode: ExecMode, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Serial => (0..n).map(f).collect(),
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}

fn diverged(step: u64, reason: impl ToString) -> EngineError {
    EngineError::Diverged { step, reason: reason.to_string() }
}

pub fn initial_phases(cfg: &ScenarioConfig) -> Vec<f64> {
    match &cfg.pattern.initial_theta {
        Some(t) => t.clone(),
        None => {
            let mut rng = phase_stream(cfg.noise.seed);
            (0..cfg.n).map(|_| rng.random_range(0.0..TAU)).collect()
        }
    }
}

/// Runs a validated scenario to completion. Records cover rounds
/// `0..=steps`.
pub fn run_scenario(cfg: &ScenarioConfig, mode: ExecMode) -> Result<RunOutput, EngineError> {
    run_with(cfg, mode, |_| {})
}

/// As [`run_scenario`], calling `on_record` after each round.
pub fn run_with(
    cfg: &ScenarioConfig,
    mode: ExecMode,
    mut on_record: impl FnMut(&TraceRecord),
) -> Result<RunOutput, EngineError> {
    cfg.validate()?;
    let topo = cfg.build_topology().map_err(ConfigError::from)?;
    let blocks = crate::topology::laplacian_blocks(&topo);
    let model = cfg.dkf_model().map_err(|e| ConfigError::Estimator(e.to_string()))?;
    let gains = cfg.gains;
    let n = cfg.n;
    let dt = cfg.dt;
    let parallel = mode == ExecMode::Parallel;

    let mut world = World::new(
        AgentState::new(cfg.target.position, cfg.target.velocity),
        cfg.uavs.positions.iter().zip(&cfg.uavs.velocities).map(|(p, v)| AgentState::new(*p, *v)).collect(),
        &cfg.world_noise(),
        cfg.sensing(),
        dt,
        cfg.target.v_max,
        cfg.uavs.v_max,
    )
    .map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let mut phase = PhaseState::new(
        initial_phases(cfg),
        cfg.pattern.delta_theta,
        cfg.pattern.coupling.clone(),
        cfg.pattern.rho,
        dt,
        cfg.pattern.direction,
    )
    .map_err(ConfigError::from)?;

    let gamma0 = Mat2::identity() * cfg.estimator.gamma0;
    let mut edges: Vec<Vec<EdgeEstimator>> = (0..n)
        .map(|i| {
            topo.neighbors(i)
                .iter()
                .map(|&j| EdgeEstimator {
                    j,
                    rlse: RlseState::new(Vec2::zeros(), gamma0, cfg.estimator.beta).expect("validated"),
                    d_prev: 0.0,
                })
                .collect()
        })
        .collect();
    let p0 = Mat6::identity() * cfg.estimator.p0;
    let mut dkf: Vec<DkfState> = vec![DkfState::new(Vec6::zeros(), p0); n];
    let mut u_prev = vec![Vec2::zeros(); n];
    let steps = cfg.steps();
    let mut records = Vec::with_capacity(steps as usize + 1);

    for k in 0..=steps {
        let t = k as f64 * dt;
        let bundles = world.measure(&topo, t, parallel);

        // Relative localization.
        let updated: Result<Vec<Vec<EdgeEstimator>>, EngineError> = map_uavs(n, mode, |i| {
            edges[i]
                .iter()
                .zip(&bundles[i].neighbors)
                .map(|(e, m)| {
                    debug_assert_eq!(e.j, m.neighbor);
                    let rlse = match m.rel_displacement {
                        Some(delta) if k > 0 => {
                            let y = compute_y(&delta, m.distance, e.d_prev);
                            rlse_update(&e.rlse, &delta, y).map_err(|err| diverged(k, format!("edge {i}->{}: {err}", e.j)))?
                        }
                        _ => e.rlse,
                    };
                    Ok(EdgeEstimator { j: e.j, rlse, d_prev: m.distance })
                })
                .collect()
        })
        .into_iter()
        .collect();
        edges = updated?;

        // Target estimation.
        let own_obs: Vec<Observation> = (0..n)
            .map(|i| {
                let b = &bundles[i];
                let displacement = b.displacement.map(|d| {
                    if cfg.estimator.lag_compensation {
                        model.compensate_displacement(&d, &u_prev[i])
                    } else {
                        d
                    }
                });
                Observation { target: b.target, displacement }
            })
            .collect();
        let priors: Vec<DkfPrior> = if k == 0 {
            vec![DkfPrior { x_bar: Vec6::zeros(), p_minus: p0 }; n]
        } else {
            map_uavs(n, mode, |i| dkf_predict(&dkf[i], &u_prev[i], &model))
        };
        let packets: Vec<NeighborPacket> = (0..n)
            .map(|j| NeighborPacket {
                sender: j,
                z: own_obs[j],
                x_bar: priors[j].x_bar,
                v_hat_prev: dkf[j].own_velocity(),
                theta: phase.theta[j],
            })
            .collect();
        let posteriors: Result<Vec<DkfState>, EngineError> = map_uavs(n, mode, |i| {
            let aligned: Vec<_> = if k == 0 {
                Vec::new()
            } else {
                edges[i]
                    .iter()
                    .map(|e| align_neighbor(&packets[e.j], &e.rlse.p_hat, &priors[i], own_obs[i].displacement))
                    .collect()
            };
            dkf_correct(&priors[i], &own_obs[i], &aligned, &model).map_err(|err| diverged(k, format!("UAV {i}: {err}")))
        })
        .into_iter()
        .collect();
        dkf = posteriors?;

        // Control.
        let uav_positions: Vec<Vec2> = world.uavs.iter().map(|s| s.p).collect();
        let commands: Result<Vec<(Vec2, Vec2, Vec2, Vec2)>, EngineError> = map_uavs(n, mode, |i| {
            let d = desired_state(phase.theta[i], &phase);
            let own = OwnTerms {
                v_hat_i: dkf[i].own_velocity(),
                p_hat_i0: dkf[i].target_relative(),
                v_hat_0: dkf[i].target_velocity(),
                p_star_i0: d.p_star,
                v_star_i0: d.v_star,
            };
            let nb: Vec<NeighborTerms> = edges[i]
                .iter()
                .map(|e| {
                    let (p_star_ij, v_star_ij) = desired_relative(phase.theta[i], Some(packets[e.j].theta), &phase);
                    NeighborTerms {
                        neighbor: e.j,
                        p_hat_ij: e.rlse.p_hat,
                        v_hat_j: dkf[e.j].own_velocity(),
                        p_star_ij,
                        v_star_ij,
                    }
                })
                .collect();
            let u_trac =
                tracking_input(i, &own, &nb, &topo, &gains).map_err(|source| EngineError::Protocol { step: k, source })?;
            let u_safe = if cfg.flags.collision_term {
                let points: Vec<Vec2> = (0..n).filter(|&m| m != i).map(|m| uav_positions[m] - uav_positions[i]).collect();
                collision_free_input(&points, &gains)
            } else {
                Vec2::zeros()
            };
            let u = total_input(&u_trac, cfg.flags.collision_term.then_some(&u_safe), &d.u_star, &gains);
            Ok((u_trac, u_safe, d.u_star, u))
        })
        .into_iter()
        .collect();
        let commands = commands?;

        let edge_records: Vec<EdgeRecord> = edges
            .iter()
            .enumerate()
            .flat_map(|(i, es)| {
                es.iter().zip(&bundles[i].neighbors).map(move |(e, m)| EdgeRecord {
                    i,
                    j: e.j,
                    p_hat: e.rlse.p_hat,
                    delta: m.rel_displacement,
                })
            })
            .collect();
        let estimates: Vec<Vec6> = dkf.iter().map(|s| s.x).collect();
        if let Some(i) = estimates.iter().position(|x| !all_finite(x)) {
            return Err(diverged(k, format!("UAV {i} estimate is not finite")));
        }
        if let Some(e) = edge_records.iter().find(|e| !all_finite(&e.p_hat)) {
            return Err(diverged(k, format!("edge {}->{} estimate is not finite", e.i, e.j)));
        }
        let ctx = MetricContext { topology: &topo, gains: &gains, phase: &phase };
        let metrics = compute_metrics(&ctx, &world.target, &world.uavs, &estimates, &edge_records, &phase.theta);
        let record = TraceRecord {
            k,
            t,
            target: world.target,
            uavs: world.uavs.clone(),
            estimates,
            edges: edge_records,
            theta: phase.theta.clone(),
            u_trac: commands.iter().map(|c| c.0).collect(),
            u_safe: commands.iter().map(|c| c.1).collect(),
            u_star: commands.iter().map(|c| c.2).collect(),
            u: commands.iter().map(|c| c.3).collect(),
            visible: bundles.iter().map(|b| b.visible()).collect(),
            metrics,
        };
        on_record(&record);
        records.push(record);
        if k == steps {
            break;
        }

        // Phases, from the thetas each UAV received this round.
        let next_theta = map_uavs(n, mode, |i| {
            let nb: Vec<(f64, f64)> = topo.neighbors(i).iter().map(|&j| (topo.weight(i, j), packets[j].theta)).collect();
            phase_update(phase.theta[i], &nb, &phase)
        });
        phase.theta = next_theta;

        let u: Vec<Vec2> = commands.iter().map(|c| c.3).collect();
        world
            .advance(&target_input(&cfg.target.profile, k), &u)
            .map_err(|e| diverged(k, e))?;
        u_prev = u;
    }

    let summary = summarize(cfg, &blocks, &records);
    Ok(RunOutput { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::laplacian_blocks;

    fn reference_blocks() -> LaplacianBlocks {
        laplacian_blocks(&Topology::ring(4, 1.0 / 3.0, 1.0 / 3.0).unwrap())
    }

    #[test]
    fn bound_examples() {
        let g = ControllerGains::default();
        let r = ultimate_bound(&reference_blocks(), &g, 0.1, 0.0, 0.0);
        assert!(r.valid);
        assert_eq!(r.bound, 0.0);
        assert!((r.sigma_max - 0.99314).abs() < 1e-5);

        let r = ultimate_bound(&reference_blocks(), &g, 0.1, 0.1, 0.05).with_measured(1.0);
        assert!((r.bound - 0.06 / (1.0 - r.sigma_max)).abs() < 1e-12);
        assert_eq!(r.holds, Some(true));
        assert_eq!(r.clone().with_measured(1e3).holds, Some(false));

        let unstable = ControllerGains { kv: 40.0, ..g };
        let r = ultimate_bound(&reference_blocks(), &unstable, 0.1, 0.1, 0.0).with_measured(0.0);
        assert!(!r.valid);
        assert_eq!(r.holds, Some(false));
    }

    #[test]
    fn tracking_error_examples() {
        let target = AgentState::new(Vec2::new(2.0, -1.0), Vec2::new(1.0, 0.0));
        let ring: Vec<AgentState> = (0..4)
            .map(|i| {
                let a = 0.3 + i as f64 * TAU / 4.0;
                AgentState::new(target.p + Vec2::new(a.cos(), a.sin()) * 4.0, target.v)
            })
            .collect();
        assert!(tracking_error(&target, &ring).norm() < 1e-14);

        let origin = AgentState::new(Vec2::zeros(), Vec2::zeros());
        let pair = [AgentState::new(Vec2::new(1.0, 0.0), Vec2::zeros()), AgentState::new(Vec2::new(-1.0, 0.0), Vec2::zeros())];
        assert_eq!(tracking_error(&origin, &pair), Vec4::zeros());

        let uavs = [
            AgentState::new(Vec2::new(1.0, 2.0), Vec2::new(0.5, 0.0)),
            AgentState::new(Vec2::new(3.0, -1.0), Vec2::new(0.0, 0.25)),
            AgentState::new(Vec2::new(-2.0, 5.0), Vec2::new(1.0, 1.0)),
        ];
        let e = tracking_error(&origin, &uavs);
        let oracle = Vec4::new(2.0 / 3.0, 2.0, 0.5, 1.25 / 3.0);
        assert!((e - oracle).amax() < 1e-12);
    }

    #[test]
    fn steady_window_is_final_quarter() {
        assert_eq!(steady_start(0), 0);
        assert_eq!(steady_start(1), 0);
        assert_eq!(steady_start(4), 3);
        assert_eq!(steady_start(1001), 750);
    }
}
