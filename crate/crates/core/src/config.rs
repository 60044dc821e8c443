//! Scenario files: a small sectioned `key = value` format.
//!
//! ```text
//! # comment
//! [scenario]
//! name = demo
//! n = 4
//! [topology]
//! weight = 1/3
//! ```
//!
//! Numbers accept `a/b` fractions, vectors are comma separated, and every
//! key must be known to its section.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::controller::{ControllerError, ControllerGains};
use crate::dkf::{DkfError, DkfModel};
use crate::math::{Mat2, Mat4, Vec2};
use crate::pattern::{Direction, PatternError, PhaseState};
use crate::topology::{laplacian_blocks, LaplacianBlocks, Topology, TopologyError};
use crate::world::{NoiseConfig, Obstacle, OcclusionWindow, SensingEnvironment, TargetProfile};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: duplicate {what}")]
    Duplicate { line: usize, what: String },
    #[error("line {line}: invalid value for `{key}`: {msg}")]
    InvalidValue { line: usize, key: String, msg: String },
    #[error("missing section [{0}]")]
    MissingSection(&'static str),
    #[error("missing key `{key}` in [{section}]")]
    MissingKey { section: &'static str, key: &'static str },
    #[error("gain condition violated: k_v = {kv} must lie in ({lower}, {upper})")]
    GainConditionViolated { kv: f64, lower: f64, upper: f64 },
    #[error("invalid topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("invalid pattern: {0}")]
    Pattern(#[from] PatternError),
    #[error("invalid controller gains: {0}")]
    Controller(ControllerError),
    #[error("invalid estimator settings: {0}")]
    Estimator(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyConfig {
    /// Undirected ring, uniform weights.
    Ring { weight: f64, target_weight: f64 },
    /// Row-major follower adjacency plus per-UAV target links.
    Explicit { adjacency: Vec<f64>, target_links: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternConfig {
    pub rho: f64,
    pub delta_theta: f64,
    pub coupling: Vec<f64>,
    pub direction: Direction,
    /// Drawn from the seed when absent.
    pub initial_theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub beta: f64,
    /// Initial RLSE gain, times identity.
    pub gamma0: f64,
    pub epsilon: f64,
    /// Initial DKF covariance, times identity.
    pub p0: f64,
    pub lag_compensation: bool,
    pub pe_window: usize,
}

/// Isotropic noise levels (variances). `q0`, `qi` and `r` also tune the
/// filter; `q1..q3` only perturb the simulated sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSettings {
    pub seed: u64,
    pub q0: f64,
    pub qi: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetConfig {
    pub profile: TargetProfile,
    /// Input bound used for reporting; at least the profile's own bound.
    pub u0: f64,
    pub position: Vec2,
    pub velocity: Vec2,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UavConfig {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flags {
    pub collision_term: bool,
    pub noise_on: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    pub duration: f64,
    pub dt: f64,
    pub topology: TopologyConfig,
    pub gains: ControllerGains,
    pub pattern: PatternConfig,
    pub estimator: EstimatorConfig,
    pub noise: NoiseSettings,
    pub target: TargetConfig,
    pub uavs: UavConfig,
    pub obstacles: Vec<Obstacle>,
    /// UAV indices are 0-based here and 1-based in files.
    pub occlusions: Vec<OcclusionWindow>,
    pub flags: Flags,
}

pub const PRESETS: [(&str, &str); 4] = [
    ("scenario1_constant", include_str!("../scenarios/scenario1_constant.cfg")),
    ("scenario2_varying", include_str!("../scenarios/scenario2_varying.cfg")),
    ("scenario3_occlusion", include_str!("../scenarios/scenario3_occlusion.cfg")),
    ("experiment_scale", include_str!("../scenarios/experiment_scale.cfg")),
];

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        parse_config(text)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        parse_config(&text)
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
        parse_config(text)
    }

    /// Number of simulated rounds after the initial one.
    pub fn steps(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    pub fn build_topology(&self) -> Result<Topology, TopologyError> {
        match &self.topology {
            TopologyConfig::Ring { weight, target_weight } => Topology::ring(self.n, *weight, *target_weight),
            TopologyConfig::Explicit { adjacency, target_links } => Topology::new(
                DMatrix::from_row_slice(self.n, self.n, adjacency),
                DVector::from_column_slice(target_links),
            ),
        }
    }

    pub fn blocks(&self) -> Result<LaplacianBlocks, TopologyError> {
        Ok(laplacian_blocks(&self.build_topology()?))
    }

    /// Sensor and process noise for the simulated world; silent when the
    /// `noise_on` flag is cleared.
    pub fn world_noise(&self) -> NoiseConfig {
        let s = &self.noise;
        if !self.flags.noise_on {
            return NoiseConfig::silent(s.seed);
        }
        let i = Mat2::identity();
        NoiseConfig {
            q0: i * s.q0,
            qi: i * s.qi,
            displacement: i * s.q1,
            distance: s.q2,
            target_relative: i * s.q3,
            seed: s.seed,
        }
    }

    pub fn dkf_model(&self) -> Result<DkfModel, DkfError> {
        let i = Mat2::identity();
        DkfModel::new(
            self.dt,
            &(i * self.noise.q0),
            &(i * self.noise.qi),
            &(Mat4::identity() * self.noise.r),
            self.estimator.epsilon,
        )
    }

    pub fn sensing(&self) -> SensingEnvironment {
        SensingEnvironment { obstacles: self.obstacles.clone(), occlusions: self.occlusions.clone() }
    }

    /// Checks every field against the preconditions of the module that
    /// consumes it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.n == 0 {
            return invalid("n must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return invalid(format!("duration must be non-negative, got {}", self.duration));
        }
        if let TopologyConfig::Explicit { adjacency, target_links } = &self.topology {
            if adjacency.len() != self.n * self.n || target_links.len() != self.n {
                return invalid(format!("explicit topology must have {} weights and {} target links", self.n * self.n, self.n));
            }
        }
        let blocks = self.blocks()?;
        self.gains.validate(&blocks, self.dt).map_err(|e| match e {
            ControllerError::GainConditionViolated { kv, lower, upper, .. } => {
                ConfigError::GainConditionViolated { kv, lower, upper }
            }
            other => ConfigError::Controller(other),
        })?;
        if !(self.gains.k1 >= 0.0) {
            return invalid(format!("k1 must be non-negative, got {}", self.gains.k1));
        }

        let theta = self.pattern.initial_theta.clone().unwrap_or_else(|| vec![0.0; self.n]);
        if theta.len() != self.n {
            return invalid(format!("initial_theta needs {} entries, got {}", self.n, theta.len()));
        }
        PhaseState::new(
            theta,
            self.pattern.delta_theta,
            self.pattern.coupling.clone(),
            self.pattern.rho,
            self.dt,
            self.pattern.direction,
        )?;

        let e = &self.estimator;
        if !(e.beta > 0.0 && e.beta <= 1.0) {
            return Err(ConfigError::Estimator(format!("beta must lie in (0, 1], got {}", e.beta)));
        }
        if !(e.gamma0 > 0.0 && e.gamma0.is_finite()) || !(e.p0 > 0.0 && e.p0.is_finite()) {
            return Err(ConfigError::Estimator("initial gains must be positive".into()));
        }
        if e.pe_window < 2 {
            return Err(ConfigError::Estimator(format!("pe_window must be at least 2, got {}", e.pe_window)));
        }
        self.dkf_model().map_err(|err| ConfigError::Estimator(err.to_string()))?;

        let s = &self.noise;
        for (name, v) in [("q0", s.q0), ("qi", s.qi), ("q1", s.q1), ("q2", s.q2), ("q3", s.q3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("noise level {name} must be non-negative, got {v}"));
            }
        }

        let t = &self.target;
        if !(t.v_max > 0.0) || !(self.uavs.v_max > 0.0) {
            return invalid("speed limits must be positive".into());
        }
        if let TargetProfile::Rotating { period_steps, magnitude } = t.profile {
            if !(period_steps > 0.0) || !magnitude.is_finite() {
                return invalid("rotating profile needs a positive period and finite magnitude".into());
            }
        }
        if t.u0 < t.profile.bound() {
            return invalid(format!("u0 = {} is below the profile's input bound {}", t.u0, t.profile.bound()));
        }
        if t.velocity.norm() > t.v_max {
            return invalid("initial target speed exceeds its v_max".into());
        }
        let u = &self.uavs;
        if u.positions.len() != self.n || u.velocities.len() != self.n {
            return invalid(format!("[uavs] needs {} positions and velocities", self.n));
        }
        if u.velocities.iter().any(|v| v.norm() > u.v_max) {
            return invalid("initial UAV speed exceeds v_max".into());
        }
        if let Some(o) = self.obstacles.iter().find(|o| !(o.radius > 0.0)) {
            return invalid(format!("obstacle radius must be positive, got {}", o.radius));
        }
        for w in &self.occlusions {
            if !(w.end >= w.start) {
                return invalid(format!("occlusion window ends before it starts ({} > {})", w.start, w.end));
            }
            if let Some(&bad) = w.uavs.iter().find(|&&i| i >= self.n) {
                return invalid(format!("occlusion names UAV {} but n = {}", bad + 1, self.n));
            }
        }
        Ok(())
    }

    /// Renders the config in the file format; parsing the output yields an
    /// equal config.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let vec = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let pts = |v: &[Vec2]| vec(&v.iter().flat_map(|p| [p.x, p.y]).collect::<Vec<_>>());
        let f = |x: f64| format!("{x:?}");

        let _ = writeln!(out, "[scenario]\nname = {}\nn = {}\nduration = {}\ndt = {}\n", self.name, self.n, f(self.duration), f(self.dt));

        out.push_str("[topology]\n");
        match &self.topology {
            TopologyConfig::Ring { weight, target_weight } => {
                let _ = writeln!(out, "weight = {}\ntarget_weight = {}", f(*weight), f(*target_weight));
            }
            TopologyConfig::Explicit { adjacency, target_links } => {
                let _ = writeln!(out, "adjacency = {}\ntarget_links = {}", vec(adjacency), vec(target_links));
            }
        }

        let g = &self.gains;
        let _ = writeln!(
            out,
            "\n[gains]\nkp = {}\nkv = {}\nu_trac = {}\nu_safe = {}\nk1 = {}\nk2 = {}\nd_safe = {}\nrepulsive = {}",
            f(g.kp),
            f(g.kv),
            f(g.u_trac),
            f(g.u_safe),
            f(g.k1),
            f(g.k2),
            f(g.d_safe),
            g.repulsive
        );

        let p = &self.pattern;
        let dir = match p.direction {
            Direction::CounterClockwise => "ccw",
            Direction::Clockwise => "cw",
        };
        let _ = writeln!(
            out,
            "\n[pattern]\nrho = {}\ndelta_theta = {}\ncoupling = {}\ndirection = {dir}",
            f(p.rho),
            f(p.delta_theta),
            vec(&p.coupling)
        );
        if let Some(th) = &p.initial_theta {
            let _ = writeln!(out, "initial_theta = {}", vec(th));
        }

        let e = &self.estimator;
        let _ = writeln!(
            out,
            "\n[estimator]\nbeta = {}\ngamma0 = {}\nepsilon = {}\np0 = {}\nlag_compensation = {}\npe_window = {}",
            f(e.beta),
            f(e.gamma0),
            f(e.epsilon),
            f(e.p0),
            e.lag_compensation,
            e.pe_window
        );

        let s = &self.noise;
        let _ = writeln!(
            out,
            "\n[noise]\nseed = {}\nq0 = {}\nqi = {}\nq1 = {}\nq2 = {}\nq3 = {}\nr = {}",
            s.seed,
            f(s.q0),
            f(s.qi),
            f(s.q1),
            f(s.q2),
            f(s.q3),
            f(s.r)
        );

        let t = &self.target;
        out.push_str("\n[target]\n");
        match t.profile {
            TargetProfile::ConstantZero => out.push_str("profile = constant\n"),
            TargetProfile::Rotating { magnitude, period_steps } => {
                let _ = writeln!(out, "profile = rotating\nmagnitude = {}\nperiod_steps = {}", f(magnitude), f(period_steps));
            }
        }
        let _ = writeln!(
            out,
            "u0 = {}\nposition = {}\nvelocity = {}\nv_max = {}",
            f(t.u0),
            pts(&[t.position]),
            pts(&[t.velocity]),
            f(t.v_max)
        );

        let u = &self.uavs;
        let _ = writeln!(
            out,
            "\n[uavs]\npositions = {}\nvelocities = {}\nv_max = {}",
            pts(&u.positions),
            pts(&u.velocities),
            f(u.v_max)
        );

        if !self.obstacles.is_empty() {
            out.push_str("\n[obstacles]\n");
            for o in &self.obstacles {
                let _ = writeln!(out, "obstacle = {}", vec(&[o.center.x, o.center.y, o.radius]));
            }
        }
        if !self.occlusions.is_empty() {
            out.push_str("\n[occlusion]\n");
            for w in &self.occlusions {
                let ids: Vec<String> = w.uavs.iter().map(|i| (i + 1).to_string()).collect();
                let _ = writeln!(out, "window = {}, {}, {}", f(w.start), f(w.end), ids.join(", "));
            }
        }
        let _ = writeln!(
            out,
            "\n[flags]\ncollision_term = {}\nnoise_on = {}",
            self.flags.collision_term, self.flags.noise_on
        );
        out
    }
}

const SECTIONS: [&str; 11] =
    ["scenario", "topology", "gains", "pattern", "estimator", "noise", "target", "uavs", "obstacles", "occlusion", "flags"];
const REQUIRED: [&str; 8] = ["scenario", "topology", "gains", "pattern", "estimator", "noise", "target", "uavs"];
const REPEATABLE: [&str; 2] = ["obstacle", "window"];

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    key: String,
    value: String,
}

/// Key lookup for one section that remembers which keys were consumed.
struct Section<'a> {
    name: &'static str,
    entries: &'a [Entry],
    used: HashSet<usize>,
}

impl<'a> Section<'a> {
    fn find(&mut self, key: &str) -> Option<&'a Entry> {
        let (idx, e) = self.entries.iter().enumerate().find(|(_, e)| e.key == key)?;
        self.used.insert(idx);
        Some(e)
    }

    fn all(&mut self, key: &str) -> Vec<&'a Entry> {
        let mut out = Vec::new();
        for (idx, e) in self.entries.iter().enumerate() {
            if e.key == key {
                self.used.insert(idx);
                out.push(e);
            }
        }
        out
    }

    fn parsed<T>(&mut self, key: &'static str, f: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, ConfigError> {
        match self.find(key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(Some)
                .map_err(|msg| ConfigError::InvalidValue { line: e.line, key: key.to_string(), msg }),
        }
    }

    fn required<T>(&mut self, key: &'static str, f: impl Fn(&str) -> Result<T, String>) -> Result<T, ConfigError> {
        self.parsed(key, f)?.ok_or(ConfigError::MissingKey { section: self.name, key })
    }

    fn num(&mut self, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.parsed(key, parse_number)?.unwrap_or(default))
    }

    fn flag(&mut self, key: &'static str, default: bool) -> Result<bool, ConfigError> {
        Ok(self.parsed(key, parse_bool)?.unwrap_or(default))
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.entries.iter().enumerate().find(|(i, _)| !self.used.contains(i)) {
            None => Ok(()),
            Some((_, e)) => {
                Err(ConfigError::UnknownKey { line: e.line, section: self.name.to_string(), key: e.key.clone() })
            }
        }
    }
}

fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            if b == 0.0 {
                return Err(format!("`{s}` divides by zero"));
            }
            a / b
        }
        None => s.parse().map_err(|_| format!("`{s}` is not a number"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(parse_number).collect()
}

fn parse_points(s: &str) -> Result<Vec<Vec2>, String> {
    let v = parse_vector(s)?;
    if v.len() % 2 != 0 {
        return Err(format!("expected x, y pairs, got {} numbers", v.len()));
    }
    Ok(v.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect())
}

fn parse_point(s: &str) -> Result<Vec2, String> {
    match parse_points(s)?.as_slice() {
        [p] => Ok(*p),
        _ => Err("expected a single x, y pair".into()),
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

fn parse_count(s: &str) -> Result<usize, String> {
    s.trim().parse().map_err(|_| format!("`{}` is not a non-negative integer", s.trim()))
}

fn split_sections(text: &str) -> Result<BTreeMap<&'static str, Vec<Entry>>, ConfigError> {
    let mut sections: BTreeMap<&'static str, Vec<Entry>> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("unterminated section header `{content}`") })?
                .trim();
            let known = SECTIONS
                .iter()
                .find(|s| **s == name)
                .ok_or_else(|| ConfigError::UnknownSection { line, name: name.to_string() })?;
            if sections.contains_key(known) {
                return Err(ConfigError::Duplicate { line, what: format!("section [{name}]") });
            }
            sections.insert(known, Vec::new());
            current = Some(known);
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected `key = value`, got `{content}`") })?;
        let section = current.ok_or_else(|| ConfigError::Syntax { line, msg: "key outside any section".into() })?;
        let key = key.trim().to_string();
        let entries = sections.get_mut(section).expect("section inserted above");
        if !REPEATABLE.contains(&key.as_str()) && entries.iter().any(|e| e.key == key) {
            return Err(ConfigError::Duplicate { line, what: format!("key `{key}` in [{section}]") });
        }
        entries.push(Entry { line, key, value: value.trim().to_string() });
    }
    Ok(sections)
}

/// Parses and validates a scenario file.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let sections = split_sections(text)?;
    for name in REQUIRED {
        if !sections.contains_key(name) {
            return Err(ConfigError::MissingSection(name));
        }
    }
    let empty: Vec<Entry> = Vec::new();
    let section = |name: &'static str| Section {
        name,
        entries: sections.get(name).map(Vec::as_slice).unwrap_or(&empty),
        used: HashSet::new(),
    };

    let mut s = section("scenario");
    let name = s.required("name", |v| Ok(v.to_string()))?;
    let n = s.required("n", parse_count)?;
    let duration = s.required("duration", parse_number)?;
    let dt = s.num("dt", 0.1)?;
    s.finish()?;

    let mut s = section("topology");
    let adjacency = s.parsed("adjacency", parse_vector)?;
    let topology = match adjacency {
        Some(adjacency) => {
            let target_links = s.required("target_links", parse_vector)?;
            TopologyConfig::Explicit { adjacency, target_links }
        }
        None => TopologyConfig::Ring {
            weight: s.required("weight", parse_number)?,
            target_weight: s.required("target_weight", parse_number)?,
        },
    };
    s.finish()?;

    let mut s = section("gains");
    let d = ControllerGains::default();
    let gains = ControllerGains {
        kp: s.required("kp", parse_number)?,
        kv: s.required("kv", parse_number)?,
        u_trac: s.required("u_trac", parse_number)?,
        u_safe: s.num("u_safe", d.u_safe)?,
        k1: s.num("k1", d.k1)?,
        k2: s.num("k2", d.k2)?,
        d_safe: s.num("d_safe", d.d_safe)?,
        repulsive: s.flag("repulsive", d.repulsive)?,
    };
    s.finish()?;

    let mut s = section("pattern");
    let pattern = PatternConfig {
        rho: s.required("rho", parse_number)?,
        delta_theta: s.required("delta_theta", parse_number)?,
        coupling: s.parsed("coupling", parse_vector)?.unwrap_or_else(|| PhaseState::default_gains(n)),
        direction: s
            .parsed("direction", |v| match v {
                "ccw" | "counterclockwise" => Ok(Direction::CounterClockwise),
                "cw" | "clockwise" => Ok(Direction::Clockwise),
                other => Err(format!("`{other}` is not ccw or cw")),
            })?
            .unwrap_or_default(),
        initial_theta: s.parsed("initial_theta", parse_vector)?,
    };
    s.finish()?;

    let mut s = section("estimator");
    let estimator = EstimatorConfig {
        beta: s.num("beta", 0.9)?,
        gamma0: s.num("gamma0", 1.0)?,
        epsilon: s.num("epsilon", 0.1)?,
        p0: s.num("p0", 1.0)?,
        lag_compensation: s.flag("lag_compensation", true)?,
        pe_window: s.parsed("pe_window", parse_count)?.unwrap_or(20),
    };
    s.finish()?;

    let mut s = section("noise");
    let noise = NoiseSettings {
        seed: s.required("seed", |v| v.trim().parse::<u64>().map_err(|_| format!("`{v}` is not a u64 seed")))?,
        q0: s.num("q0", 0.04)?,
        qi: s.num("qi", 0.001)?,
        q1: s.num("q1", 1e-4)?,
        q2: s.num("q2", 1e-4)?,
        q3: s.num("q3", 1e-4)?,
        r: s.num("r", 1e-4)?,
    };
    s.finish()?;

    let mut s = section("target");
    let profile_name = s.required("profile", |v| Ok(v.to_string()))?;
    let profile = match profile_name.as_str() {
        "constant" => TargetProfile::ConstantZero,
        "rotating" => {
            let TargetProfile::Rotating { magnitude, period_steps } = TargetProfile::DEFAULT_ROTATING else {
                unreachable!()
            };
            TargetProfile::Rotating {
                magnitude: s.num("magnitude", magnitude)?,
                period_steps: s.num("period_steps", period_steps)?,
            }
        }
        other => {
            let line = s.find("profile").map_or(0, |e| e.line);
            return Err(ConfigError::InvalidValue {
                line,
                key: "profile".into(),
                msg: format!("`{other}` is not constant or rotating"),
            });
        }
    };
    let target = TargetConfig {
        profile,
        u0: s.num("u0", profile.bound())?,
        position: s.parsed("position", parse_point)?.unwrap_or_else(Vec2::zeros),
        velocity: s.required("velocity", parse_point)?,
        v_max: s.num("v_max", 2.0)?,
    };
    s.finish()?;

    let mut s = section("uavs");
    let positions = s.required("positions", parse_points)?;
    let velocities = s.parsed("velocities", parse_points)?.unwrap_or_else(|| vec![Vec2::zeros(); positions.len()]);
    let uavs = UavConfig { positions, velocities, v_max: s.num("v_max", 5.0)? };
    s.finish()?;

    let mut s = section("obstacles");
    let mut obstacles = Vec::new();
    for e in s.all("obstacle") {
        let v = parse_vector(&e.value).map_err(|msg| ConfigError::InvalidValue { line: e.line, key: e.key.clone(), msg })?;
        let [x, y, r] = v[..] else {
            return Err(ConfigError::InvalidValue { line: e.line, key: e.key.clone(), msg: "expected x, y, radius".into() });
        };
        obstacles.push(Obstacle { center: Vec2::new(x, y), radius: r });
    }
    s.finish()?;

    let mut s = section("occlusion");
    let mut occlusions = Vec::new();
    for e in s.all("window") {
        let bad = |msg: String| ConfigError::InvalidValue { line: e.line, key: e.key.clone(), msg };
        let parts: Vec<&str> = e.value.split(',').collect();
        if parts.len() < 3 {
            return Err(bad("expected start, end, uav[, uav...]".into()));
        }
        let start = parse_number(parts[0]).map_err(bad)?;
        let end = parse_number(parts[1]).map_err(bad)?;
        let mut ids = Vec::new();
        for p in &parts[2..] {
            let id = parse_count(p).map_err(bad)?;
            if id == 0 {
                return Err(bad("UAV ids start at 1".into()));
            }
            ids.push(id - 1);
        }
        occlusions.push(OcclusionWindow { uavs: ids, start, end });
    }
    s.finish()?;

    let mut s = section("flags");
    let flags = Flags { collision_term: s.flag("collision_term", false)?, noise_on: s.flag("noise_on", true)? };
    s.finish()?;

    let cfg = ScenarioConfig {
        name,
        n,
        duration,
        dt,
        topology,
        gains,
        pattern,
        estimator,
        noise,
        target,
        uavs,
        obstacles,
        occlusions,
        flags,
    };
    cfg.validate()?;
    Ok(cfg)
}
