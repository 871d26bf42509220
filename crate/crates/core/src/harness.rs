//! Experiment configuration, batch runner, statistics, logs and plots.
//!
//! A configuration is a flat `key = value` text file with dotted keys; `#`
//! starts a comment. Every run is a pair (target, seed); runs are
//! independent and may be dispatched to a worker pool.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    estimate_core_radius, sample_nu_profile, Agent, CoreLaw, AgentConfig, AgentKind, AgentSetup, CoreRadius, Counters,
    StepRecord, CORE_RADIUS_FLOOR,
};
use crate::critic::{ConstraintParams, CriticModel, WeightBox};
use crate::lyapunov::{lyapunov_cart, sandwich_bounds, LyapunovSpec, NominalPolicy, SandwichBounds};
use crate::noise::{NoiseKind, NoiseProcess};
use crate::optimize::SolveBudget;
use crate::sim::{accumulated_cost, Action, LipschitzEstimates, RunStatus, SampleHold, SamplingConfig, State, Trajectory};
use crate::systems::{CartAction, CartDynamics, CartLimits, CartState, CostPreset, RunningCostSpec};
use crate::verify::{
    audit_constraints, audit_decay, audit_feasibility, audit_multistep, audit_reaching, error_norms, estimate_lipschitz,
    reach_time, AuditReport, LipschitzDomain,
};

/// Column order of the per-run CSV files.
pub const CSV_COLUMNS: [&str; 16] = [
    "t", "x1", "x2", "x3", "u1", "u2", "r", "J_hat", "L", "c1", "c2", "c3", "c4a", "c4b", "constraint_ok", "fallback",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: key '{key}': {message}")]
pub struct ConfigError {
    pub line: usize,
    pub key: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("simulation: {0}")]
    Sim(#[from] crate::sim::SimError),
    #[error("setup: {0}")]
    Setup(String),
    #[error("plot {path}: {message}")]
    Plot { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A parameter either derived from measured quantities or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Choice {
    Auto,
    Value(f64),
}

impl Choice {
    fn text(&self) -> String {
        match self {
            Self::Auto => "auto".into(),
            Self::Value(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub agent: AgentKind,
    /// Preset name when the diagonal came from one of H1..H5.
    pub cost_label: String,
    pub cost_diagonal: [f64; 5],
    pub targets: Vec<CartState>,
    pub start: CartState,
    pub delta: f64,
    pub horizon: f64,
    pub substeps: usize,
    pub seeds: Vec<u64>,
    pub noise: NoiseKind,
    pub noise_amplitude: f64,
    pub noise_gain: f64,
    pub max_evals: usize,
    pub restarts: usize,
    pub core_ball_radius: Choice,
    pub nu_bar: Choice,
    pub epsilon: Choice,
    pub cost_scale: f64,
    pub zeta: f64,
    pub core_law: CoreLaw,
    pub replay_size: usize,
    pub beta: f64,
    pub gamma: f64,
    pub action_grid: usize,
    /// Radius of the reaching audit; `Auto` uses the core ball radius.
    pub reach_radius: Choice,
    pub calibration_samples: usize,
    pub calibration_seed: u64,
    pub write_records: bool,
}

/// Eight poses on a circle of `radius` around the origin, heading outward.
pub fn circle_targets(n: usize, radius: f64) -> Vec<CartState> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            CartState::new(radius * a.cos(), radius * a.sin(), crate::systems::wrap_angle(a))
        })
        .collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            agent: AgentKind::CalfFallback,
            cost_label: "H2".into(),
            cost_diagonal: CostPreset::H2.diagonal(),
            targets: circle_targets(8, 1.0),
            start: CartState::ORIGIN,
            delta: 0.05,
            horizon: 120.0,
            substeps: 10,
            seeds: (0..20).collect(),
            noise: NoiseKind::Dcl { b1: 1.0, b2: 0.0 },
            noise_amplitude: 0.05,
            noise_gain: 1.0,
            max_evals: 300,
            restarts: 2,
            core_ball_radius: Choice::Auto,
            nu_bar: Choice::Auto,
            epsilon: Choice::Auto,
            cost_scale: 1.0,
            zeta: 1.0,
            core_law: CoreLaw::default(),
            replay_size: 10,
            beta: 0.0,
            gamma: 1.0,
            action_grid: NominalPolicy::DEFAULT_GRID,
            reach_radius: Choice::Value(0.1),
            calibration_samples: 20_000,
            calibration_seed: 0,
            write_records: false,
        }
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>().map_err(|_| ConfigError {
        line,
        key: key.into(),
        message: format!("expected a number, got '{v}'"),
    })
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse::<usize>().map_err(|_| ConfigError {
        line,
        key: key.into(),
        message: format!("expected a non-negative integer, got '{v}'"),
    })
}

fn parse_list(line: usize, key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|s| parse_f64(line, key, s.trim())).collect()
}

fn parse_pose(line: usize, key: &str, v: &str) -> Result<CartState, ConfigError> {
    let p = parse_list(line, key, v)?;
    if p.len() != 3 {
        return Err(ConfigError {
            line,
            key: key.into(),
            message: format!("a pose needs 3 components, got {}", p.len()),
        });
    }
    Ok(CartState::new(p[0], p[1], p[2]))
}

fn parse_choice(line: usize, key: &str, v: &str) -> Result<Choice, ConfigError> {
    if v == "auto" {
        Ok(Choice::Auto)
    } else {
        parse_f64(line, key, v).map(Choice::Value)
    }
}

fn parse_seeds(line: usize, key: &str, v: &str) -> Result<Vec<u64>, ConfigError> {
    let bad = |m: String| ConfigError {
        line,
        key: key.into(),
        message: m,
    };
    if let Some((a, b)) = v.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad(format!("bad range start '{a}'")))?;
        let b: u64 = b.trim().parse().map_err(|_| bad(format!("bad range end '{b}'")))?;
        return Ok((a..b).collect());
    }
    v.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| bad(format!("bad seed '{s}'"))))
        .collect()
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError {
            line,
            key: key.into(),
            message: format!("expected true or false, got '{v}'"),
        }),
    }
}

impl ExperimentConfig {
    /// Parses `key = value` text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut n_mc = 16usize;
        let mut kind: Option<(usize, String)> = None;
        let (mut noise_kind, mut b1, mut b2, mut tau_a) = (None::<(usize, String)>, 1.0, 0.0, 1.0);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError {
                    line,
                    key: content.into(),
                    message: "expected key = value".into(),
                });
            };
            let (key, v) = (key.trim(), value.trim());
            match key {
                "agent.kind" => kind = Some((line, v.to_string())),
                "agent.n_mc" => n_mc = parse_usize(line, key, v)?,
                "agent.zeta" => cfg.zeta = parse_f64(line, key, v)?,
                "agent.core_law" => {
                    cfg.core_law = CoreLaw::parse(v).ok_or_else(|| ConfigError {
                        line,
                        key: key.to_string(),
                        message: format!("expected nominal, hold or learn, got {v:?}"),
                    })?
                }
                "agent.replay_size" => cfg.replay_size = parse_usize(line, key, v)?,
                "agent.beta" => cfg.beta = parse_f64(line, key, v)?,
                "agent.gamma" => cfg.gamma = parse_f64(line, key, v)?,
                "agent.cost_scale" => cfg.cost_scale = parse_f64(line, key, v)?,
                "agent.action_grid" => cfg.action_grid = parse_usize(line, key, v)?,
                "solver.max_evals" => cfg.max_evals = parse_usize(line, key, v)?,
                "solver.restarts" => cfg.restarts = parse_usize(line, key, v)?,
                "cost.preset" => {
                    let p = CostPreset::parse(v).ok_or_else(|| ConfigError {
                        line,
                        key: key.into(),
                        message: format!("unknown preset '{v}' (expected H1..H5)"),
                    })?;
                    cfg.cost_label = p.name().to_string();
                    cfg.cost_diagonal = p.diagonal();
                }
                "cost.diagonal" => {
                    let d = parse_list(line, key, v)?;
                    if d.len() != 5 || d.iter().any(|h| !(*h >= 0.0)) {
                        return Err(ConfigError {
                            line,
                            key: key.into(),
                            message: "expected 5 non-negative numbers".into(),
                        });
                    }
                    cfg.cost_diagonal = [d[0], d[1], d[2], d[3], d[4]];
                    cfg.cost_label = CostPreset::ALL
                        .iter()
                        .find(|p| p.diagonal() == cfg.cost_diagonal)
                        .map_or_else(|| "custom".to_string(), |p| p.name().to_string());
                }
                "targets" => {
                    cfg.targets = if v == "default" {
                        circle_targets(8, 1.0)
                    } else {
                        v.split(';')
                            .filter(|s| !s.trim().is_empty())
                            .map(|s| parse_pose(line, key, s.trim()))
                            .collect::<Result<_, _>>()?
                    };
                }
                "start" => cfg.start = parse_pose(line, key, v)?,
                "sampling.delta" => cfg.delta = parse_f64(line, key, v)?,
                "sampling.horizon" => cfg.horizon = parse_f64(line, key, v)?,
                "sampling.substeps" => cfg.substeps = parse_usize(line, key, v)?,
                "seeds" => cfg.seeds = parse_seeds(line, key, v)?,
                "noise.kind" => noise_kind = Some((line, v.to_string())),
                "noise.amplitude" => cfg.noise_amplitude = parse_f64(line, key, v)?,
                "noise.gain" => cfg.noise_gain = parse_f64(line, key, v)?,
                "noise.b1" => b1 = parse_f64(line, key, v)?,
                "noise.b2" => b2 = parse_f64(line, key, v)?,
                "noise.tau_a" => tau_a = parse_f64(line, key, v)?,
                "constraints.core_radius" => cfg.core_ball_radius = parse_choice(line, key, v)?,
                "constraints.nu_bar" => cfg.nu_bar = parse_choice(line, key, v)?,
                "constraints.epsilon" => cfg.epsilon = parse_choice(line, key, v)?,
                "audit.reach_radius" => cfg.reach_radius = parse_choice(line, key, v)?,
                "calibration.samples" => cfg.calibration_samples = parse_usize(line, key, v)?,
                "calibration.seed" => cfg.calibration_seed = parse_usize(line, key, v)? as u64,
                "output.records" => cfg.write_records = parse_bool(line, key, v)?,
                _ => {
                    return Err(ConfigError {
                        line,
                        key: key.into(),
                        message: "unknown key".into(),
                    })
                }
            }
        }
        if let Some((line, k)) = kind {
            cfg.agent = AgentKind::parse(&k, n_mc).map_err(|e| ConfigError {
                line,
                key: "agent.kind".into(),
                message: e.to_string(),
            })?;
        } else if let AgentKind::CalfActorCritic { .. } = cfg.agent {
            cfg.agent = AgentKind::CalfActorCritic { n_mc };
        }
        let noise_line = noise_kind.as_ref().map_or(0, |(l, _)| *l);
        let name = noise_kind.map(|(_, k)| k);
        let noise = match name.as_deref() {
            None => match cfg.noise {
                NoiseKind::Dcl { .. } => NoiseKind::Dcl { b1, b2 },
                other => other,
            },
            Some("none") => NoiseKind::None,
            Some("sine_wiener") => NoiseKind::SineWiener { tau_a },
            Some("dcl") => NoiseKind::Dcl { b1, b2 },
            Some("tsb") => NoiseKind::Tsb { b1, b2 },
            Some("ks") => NoiseKind::Ks { b1, b2 },
            Some(other) => {
                return Err(ConfigError {
                    line: noise_line,
                    key: "noise.kind".into(),
                    message: format!("unknown noise model '{other}'"),
                })
            }
        };
        cfg.noise = noise;
        NoiseProcess::new(noise, 3, cfg.noise_amplitude).map_err(|e| ConfigError {
            line: noise_line,
            key: "noise".into(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|(key, message)| ConfigError { line: 0, key, message })?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(Self::parse(&text)?)
    }

    fn validate(&self) -> Result<(), (String, String)> {
        let bad = |k: &str, m: &str| Err((k.to_string(), m.to_string()));
        if self.targets.is_empty() {
            return bad("targets", "at least one target is required");
        }
        if !(self.delta > 0.0) {
            return bad("sampling.delta", "must be positive");
        }
        if !(self.horizon > 0.0) {
            return bad("sampling.horizon", "must be positive");
        }
        if SamplingConfig::new(self.delta, self.substeps.max(1), self.horizon).is_err() || self.substeps == 0 {
            return bad("sampling.horizon", "must be a positive multiple of delta with substeps >= 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required");
        }
        if let Choice::Value(v) = self.reach_radius {
            if !(v > 0.0) {
                return bad("audit.reach_radius", "must be positive");
            }
        }
        if let Choice::Value(v) = self.core_ball_radius {
            if !(v >= 0.0) {
                return bad("constraints.core_radius", "must be non-negative");
            }
        }
        if self.calibration_samples < crate::verify::MIN_SAMPLES {
            return bad("calibration.samples", "must be at least 1000");
        }
        if self.action_grid < 2 || self.replay_size == 0 || !(self.zeta > 0.0) || !(self.cost_scale > 0.0) {
            return bad("agent", "invalid agent parameters");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.beta >= 0.0) {
            return bad("agent", "gamma must lie in (0, 1] and beta must be non-negative");
        }
        Ok(())
    }

    /// Serializes back to the key = value format accepted by [`Self::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pose = |p: &CartState| format!("{}, {}, {}", p.x1, p.x2, p.x3);
        let _ = writeln!(s, "agent.kind = {}", self.agent.name());
        if let AgentKind::CalfActorCritic { n_mc } = self.agent {
            let _ = writeln!(s, "agent.n_mc = {n_mc}");
        }
        let _ = writeln!(s, "agent.zeta = {}", self.zeta);
        let _ = writeln!(s, "agent.core_law = {}", self.core_law.name());
        let _ = writeln!(s, "agent.replay_size = {}", self.replay_size);
        let _ = writeln!(s, "agent.beta = {}", self.beta);
        let _ = writeln!(s, "agent.gamma = {}", self.gamma);
        let _ = writeln!(s, "agent.cost_scale = {}", self.cost_scale);
        let _ = writeln!(s, "agent.action_grid = {}", self.action_grid);
        let _ = writeln!(s, "solver.max_evals = {}", self.max_evals);
        let _ = writeln!(s, "solver.restarts = {}", self.restarts);
        let d = self.cost_diagonal.map(|h| h.to_string()).join(", ");
        let _ = writeln!(s, "cost.diagonal = {d}");
        let t: Vec<String> = self.targets.iter().map(pose).collect();
        let _ = writeln!(s, "targets = {}", t.join("; "));
        let _ = writeln!(s, "start = {}", pose(&self.start));
        let _ = writeln!(s, "sampling.delta = {}", self.delta);
        let _ = writeln!(s, "sampling.horizon = {}", self.horizon);
        let _ = writeln!(s, "sampling.substeps = {}", self.substeps);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(", "));
        let _ = writeln!(s, "noise.kind = {}", self.noise.name());
        match self.noise {
            NoiseKind::SineWiener { tau_a } => {
                let _ = writeln!(s, "noise.tau_a = {tau_a}");
            }
            NoiseKind::Dcl { b1, b2 } | NoiseKind::Tsb { b1, b2 } | NoiseKind::Ks { b1, b2 } => {
                let _ = writeln!(s, "noise.b1 = {b1}\nnoise.b2 = {b2}");
            }
            NoiseKind::None => {}
        }
        let _ = writeln!(s, "noise.amplitude = {}", self.noise_amplitude);
        let _ = writeln!(s, "noise.gain = {}", self.noise_gain);
        let _ = writeln!(s, "constraints.core_radius = {}", self.core_ball_radius.text());
        let _ = writeln!(s, "constraints.nu_bar = {}", self.nu_bar.text());
        let _ = writeln!(s, "constraints.epsilon = {}", self.epsilon.text());
        let _ = writeln!(s, "audit.reach_radius = {}", self.reach_radius.text());
        let _ = writeln!(s, "calibration.samples = {}", self.calibration_samples);
        let _ = writeln!(s, "calibration.seed = {}", self.calibration_seed);
        let _ = writeln!(s, "output.records = {}", self.write_records);
        s
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig::new(self.delta, self.substeps, self.horizon).expect("validated")
    }

    fn noise_active(&self) -> bool {
        self.noise != NoiseKind::None && self.noise_amplitude > 0.0 && self.noise_gain > 0.0
    }

    fn weight_box(&self) -> WeightBox {
        let d = WeightBox::default();
        WeightBox::new(d.w0_max, self.zeta, d.w1_max.max(self.zeta), d.phi_bound).expect("valid box")
    }

    fn budget(&self, max_evals: usize, seed: u64) -> SolveBudget {
        SolveBudget {
            max_evals,
            restarts: self.restarts,
            seed,
            ..SolveBudget::default()
        }
    }

    /// Error of the start pose relative to each target.
    pub fn initial_errors(&self) -> Vec<CartState> {
        self.targets.iter().map(|t| self.start.relative_to(t)).collect()
    }
}

/// Quantities measured once per configuration (all targets share the
/// error-frame description).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub domain_radius: f64,
    pub lyapunov_bounds: SandwichBounds,
    pub critic_bounds: SandwichBounds,
    pub lipschitz: LipschitzEstimates,
    pub params: ConstraintParams,
    pub core: CoreRadius,
}

/// Samples `n` error states with norms log-uniform in `[r_min, r_max]`,
/// uniform directions and heading inside `(−π, π]`.
pub fn sample_error_states(n: usize, r_min: f64, r_max: f64, seed: u64) -> Vec<CartState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let (a, b) = (r_min.ln(), r_max.ln());
    while out.len() < n {
        let r = if b > a { rng.random_range(a..b).exp() } else { r_min };
        let d: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if !(len > 1e-6 && len <= 1.0) {
            continue;
        }
        let x = CartState::new(r * d[0] / len, r * d[1] / len, r * d[2] / len);
        if x.x3.abs() < std::f64::consts::PI {
            out.push(x);
        }
    }
    out
}

/// Lower end of the sandwich calibration range (m).
const CALIBRATION_MIN_RADIUS: f64 = 0.01;
const PROFILE_SHELLS: usize = 60;
const PROFILE_DIRECTIONS: usize = 400;

pub fn calibrate(cfg: &ExperimentConfig) -> Result<Calibration, HarnessError> {
    let spec = LyapunovSpec::default();
    let limits = CartLimits::default();
    let radius = cfg
        .initial_errors()
        .iter()
        .map(CartState::norm)
        .fold(CALIBRATION_MIN_RADIUS * 10.0, f64::max);
    let samples: Vec<(f64, f64)> = sample_error_states(cfg.calibration_samples, CALIBRATION_MIN_RADIUS, radius, cfg.calibration_seed)
        .iter()
        .map(|x| (x.norm(), lyapunov_cart(x, &spec)))
        .collect();
    let lyapunov_bounds = sandwich_bounds(&samples).map_err(|e| HarnessError::Setup(e.to_string()))?;
    let wb = cfg.weight_box();
    let critic_bounds = SandwichBounds {
        low: lyapunov_bounds.low.scaled(cfg.zeta),
        up: lyapunov_bounds.up.scaled(wb.w1_max),
    };

    let active = cfg.noise_active();
    let zeta = cfg.zeta;
    let critic = |x: &[f64]| zeta * lyapunov_cart(&CartState::from_slice(x), &spec);
    let action_box = limits.action_box();
    let domain = LipschitzDomain {
        dynamics: &CartDynamics,
        action_box: &action_box,
        critic: &critic,
        center: &[0.0; 3],
        radius,
        lip_z: if active { cfg.noise_amplitude } else { 0.0 },
        sigma_max: if active { cfg.noise_gain } else { 0.0 },
    };
    let lipschitz = estimate_lipschitz(&domain, cfg.calibration_samples, cfg.calibration_seed ^ 0x5bd1)
        .map_err(|e| HarnessError::Setup(e.to_string()))?;

    let auto = ConstraintParams::automatic(lipschitz.lip_j, lipschitz.sigma_max, lipschitz.lip_z, cfg.delta)
        .map_err(|e| HarnessError::Setup(e.to_string()))?;
    let nu_bar = match cfg.nu_bar {
        Choice::Auto => auto.nu_bar,
        Choice::Value(v) => v,
    };
    let epsilon = match cfg.epsilon {
        Choice::Auto => 2.0 * nu_bar / 3.0,
        Choice::Value(v) => v,
    };
    let params = ConstraintParams::new(epsilon, nu_bar, cfg.delta).map_err(|e| HarnessError::Setup(e.to_string()))?;

    let core = match cfg.core_ball_radius {
        Choice::Value(v) => CoreRadius {
            radius: v,
            saturated: false,
            threshold: 6.0 * lipschitz.lip_j * lipschitz.sigma_max * lipschitz.lip_z,
        },
        Choice::Auto => {
            let nominal = NominalPolicy::new(spec.clone(), limits, cfg.delta, cfg.action_grid);
            let radii: Vec<f64> = (0..PROFILE_SHELLS)
                .map(|i| CORE_RADIUS_FLOOR + (radius - CORE_RADIUS_FLOOR) * i as f64 / (PROFILE_SHELLS - 1) as f64)
                .collect();
            let profile = sample_nu_profile(&nominal, &spec, &radii, PROFILE_DIRECTIONS, cfg.substeps, cfg.calibration_seed);
            estimate_core_radius(&lipschitz, &profile, 4.0 * params.nu_bar / (3.0 * zeta), CORE_RADIUS_FLOOR).map_err(|e| HarnessError::Setup(e.to_string()))?
        }
    };
    Ok(Calibration {
        domain_radius: radius,
        lyapunov_bounds,
        critic_bounds,
        lipschitz,
        params,
        core,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAudits {
    pub reaching: AuditReport,
    pub constraints: Option<AuditReport>,
    pub feasibility: Option<AuditReport>,
    pub decay: Option<AuditReport>,
    pub multistep: Option<AuditReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub target_index: usize,
    pub seed: u64,
    pub total_cost: f64,
    pub reach_time: Option<f64>,
    pub steps: usize,
    pub fallback_fraction: f64,
    pub counters: Counters,
    pub escaped: bool,
    pub audits: RunAudits,
    pub csv: Option<String>,
}

/// Order statistics of a sample, with whiskers at `Q1 − 1.5 IQR` and
/// `Q3 + 1.5 IQR`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

impl CostStats {
    pub fn from_values(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
        let iqr = q3 - q1;
        Self {
            n: v.len(),
            mean: if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 },
            median: quantile(&v, 0.5),
            q1,
            q3,
            whisker_low: q1 - 1.5 * iqr,
            whisker_high: q3 + 1.5 * iqr,
            min: v.first().copied().unwrap_or(f64::NAN),
            max: v.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub agent: String,
    pub cost_label: String,
    pub config: ExperimentConfig,
    pub calibration: Calibration,
    pub runs: Vec<RunOutcome>,
    pub stats: CostStats,
    pub reach_rate: f64,
    pub mean_fallback_fraction: f64,
    pub constraint_violations: usize,
}

impl RunSummary {
    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn costs(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.total_cost).collect()
    }
}

/// Where and how runs are executed.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool.
    pub parallel: Option<usize>,
    pub seed_base: u64,
}

/// Everything a single run leaves behind in memory.
pub struct RunArtifacts {
    pub outcome: RunOutcome,
    pub trajectory: Trajectory,
    pub records: Vec<StepRecord>,
}

fn run_stem(cfg: &ExperimentConfig, target: usize, seed: u64) -> String {
    format!("{}_{}_t{target}_s{seed}", cfg.agent.name(), cfg.cost_label)
}

/// Builds the agent for one target and seed.
pub fn build_agent(cfg: &ExperimentConfig, calib: &Calibration, target: CartState, seed: u64) -> Result<Agent, HarnessError> {
    let spec = LyapunovSpec::default();
    let model = CriticModel::new(spec.clone(), calib.critic_bounds, cfg.weight_box());
    let cost = RunningCostSpec::new(cfg.cost_diagonal, target).map_err(|e| HarnessError::Setup(e.to_string()))?;
    let nominal = NominalPolicy::new(spec, CartLimits::default(), cfg.delta, cfg.action_grid);
    let setup = AgentSetup {
        model,
        params: calib.params,
        core_radius: calib.core.radius,
        cost,
        nominal,
    };
    let mut ac = AgentConfig::new(cfg.agent);
    ac.zeta = cfg.zeta;
    ac.core_law = cfg.core_law;
    ac.replay_size = cfg.replay_size;
    ac.beta = cfg.beta;
    ac.gamma = cfg.gamma;
    ac.cost_scale = cfg.cost_scale;
    ac.action_grid = cfg.action_grid;
    ac.actor_budget = cfg.budget(cfg.max_evals.min(120).max(cfg.max_evals / 4), seed);
    ac.critic_budget = cfg.budget(cfg.max_evals, seed);
    if cfg.max_evals == 0 {
        ac.actor_budget.max_evals = 0;
    }
    ac.mc_noise = NoiseProcess::new(cfg.noise, 3, if cfg.noise_active() { cfg.noise_amplitude } else { 0.0 })
        .map_err(|e| HarnessError::Setup(e.to_string()))?;
    ac.noise_gain = cfg.noise_gain;
    ac.substeps = cfg.substeps;
    ac.seed = seed ^ 0x9e37_79b9_7f4a_7c15;
    Agent::new(ac, setup).map_err(|e| HarnessError::Setup(e.to_string()))
}

/// One closed-loop run for target index `target` and seed `seed`.
pub fn run_single(cfg: &ExperimentConfig, calib: &Calibration, target: usize, seed: u64) -> Result<RunArtifacts, HarnessError> {
    let goal = cfg.targets[target];
    let mut agent = build_agent(cfg, calib, goal, seed)?;
    let cost = RunningCostSpec::new(cfg.cost_diagonal, goal).map_err(|e| HarnessError::Setup(e.to_string()))?;
    let cost_fn = |x: &State, u: &Action| cost.running_cost(&CartState::from_state(x), &CartAction::from_action(u));
    let escape = |x: &State| CartState::from_state(x).relative_to(&goal).norm();
    let sh = SampleHold {
        dynamics: &CartDynamics,
        cost: &cost_fn,
        noise_gain: cfg.noise_gain,
        sampling: cfg.sampling(),
        escape_measure: &escape,
        escape_bound: None,
        seed,
    };
    let mut noise = NoiseProcess::new(cfg.noise, 3, cfg.noise_amplitude).map_err(|e| HarnessError::Setup(e.to_string()))?;
    let traj = sh.run(&cfg.start.to_state(), &mut agent, &mut noise)?;

    let norms = error_norms(&traj, &goal);
    let s_star = match cfg.reach_radius {
        Choice::Auto => calib.core.radius,
        Choice::Value(v) => v,
    };
    let reaching = audit_reaching(&norms, s_star, cfg.horizon);
    let setup = agent.setup().clone();
    let counters = agent.counters();
    let records = agent.into_records();
    let calf = cfg.agent.is_calf();
    let audits = RunAudits {
        reaching,
        constraints: calf.then(|| audit_constraints(&records, &setup.model, &setup.params)),
        feasibility: calf.then(|| audit_feasibility(&records, &setup.model, &setup.params, &setup.nominal, cfg.zeta)),
        decay: calf.then(|| audit_decay(&records, &setup.params, &calib.lipschitz)),
        multistep: (cfg.agent == AgentKind::CalfFallback).then(|| {
            audit_multistep(&records, &setup.params, &calib.critic_bounds, &calib.lyapunov_bounds, calib.core.radius).0
        }),
    };
    let steps = records.len();
    let outcome = RunOutcome {
        target_index: target,
        seed,
        total_cost: accumulated_cost(&traj),
        reach_time: reach_time(&norms, s_star),
        steps,
        fallback_fraction: if steps == 0 { 0.0 } else { counters.fallback_invocations as f64 / steps as f64 },
        counters,
        escaped: matches!(traj.status, RunStatus::Escaped { .. }),
        audits,
        csv: None,
    };
    Ok(RunArtifacts {
        outcome,
        trajectory: traj,
        records,
    })
}

/// CSV text of a trajectory in [`CSV_COLUMNS`] order.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut s = String::with_capacity(traj.rows.len() * 160);
    s.push_str(&CSV_COLUMNS.join(","));
    s.push('\n');
    for r in &traj.rows {
        let a = &r.annotation;
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.t, r.state[0], r.state[1], r.state[2], r.action[0], r.action[1], r.running_cost, a.critic_value, a.lyapunov_value
        );
        for c in a.constraints {
            let _ = write!(s, ",{c}");
        }
        let _ = writeln!(s, ",{},{}", a.constraint_ok as u8, a.fallback as u8);
    }
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

/// Runs every (target, seed) pair of `cfg` and aggregates the results.
/// With an output directory, writes one CSV per run and `summary_*.json`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, HarnessError> {
    let calib = calibrate(cfg)?;
    if calib.core.saturated {
        log::warn!("core radius saturated at {:.3} m", calib.core.radius);
    }
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let jobs: Vec<(usize, u64)> = (0..cfg.targets.len())
        .flat_map(|t| cfg.seeds.iter().map(move |s| (t, *s)))
        .map(|(t, s)| (t, s + opts.seed_base))
        .collect();
    let work = |&(t, s): &(usize, u64)| -> Result<RunOutcome, HarnessError> {
        let art = run_single(cfg, &calib, t, s)?;
        let mut outcome = art.outcome;
        if let Some(dir) = &opts.out_dir {
            let stem = run_stem(cfg, t, s);
            let name = format!("{stem}.csv");
            write_file(&dir.join(&name), trajectory_csv(&art.trajectory).as_bytes())?;
            outcome.csv = Some(name);
            if cfg.write_records {
                let p = dir.join(format!("{stem}_records.json"));
                write_file(&p, serde_json::to_string(&art.records)?.as_bytes())?;
            }
        }
        log::info!("{} target {t} seed {s}: cost {:.3}", cfg.agent.name(), outcome.total_cost);
        Ok(outcome)
    };
    let results: Vec<Result<RunOutcome, HarnessError>> = match opts.parallel {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| HarnessError::Setup(e.to_string()))?;
            pool.install(|| jobs.par_iter().map(work).collect())
        }
        None => jobs.par_iter().map(work).collect(),
    };
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(cfg, calib, runs);
    if let Some(dir) = &opts.out_dir {
        let p = dir.join(format!("summary_{}_{}.json", cfg.agent.name(), cfg.cost_label));
        write_file(&p, summary.to_json()?.as_bytes())?;
    }
    Ok(summary)
}

pub fn summarize(cfg: &ExperimentConfig, calibration: Calibration, runs: Vec<RunOutcome>) -> RunSummary {
    let costs: Vec<f64> = runs.iter().map(|r| r.total_cost).collect();
    let n = runs.len().max(1) as f64;
    RunSummary {
        agent: cfg.agent.name().to_string(),
        cost_label: cfg.cost_label.clone(),
        config: cfg.clone(),
        calibration,
        stats: CostStats::from_values(&costs),
        reach_rate: runs.iter().filter(|r| r.audits.reaching.passed).count() as f64 / n,
        mean_fallback_fraction: runs.iter().map(|r| r.fallback_fraction).sum::<f64>() / n,
        constraint_violations: runs.iter().map(|r| r.counters.constraint_violations).sum(),
        runs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub agent: String,
    pub cost_label: String,
    pub stats: CostStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    /// Plain-text table: one row per (agent, cost matrix).
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<18} {:<6} {:>5} {:>12} {:>12} {:>12} {:>12}\n",
            "agent", "cost", "runs", "mean", "median", "Q1", "Q3"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} {:<6} {:>5} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
                r.agent, r.cost_label, r.stats.n, r.stats.mean, r.stats.median, r.stats.q1, r.stats.q3
            );
        }
        s
    }

    pub fn row(&self, agent: &str, cost_label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.agent == agent && r.cost_label == cost_label)
    }
}

/// Mean/median/quartiles per summary, in input order.
pub fn compare_agents(summaries: &[RunSummary]) -> Comparison {
    Comparison {
        rows: summaries
            .iter()
            .map(|s| ComparisonRow {
                agent: s.agent.clone(),
                cost_label: s.cost_label.clone(),
                stats: s.stats,
            })
            .collect(),
    }
}

/// Reads a CSV written by [`trajectory_csv`] into named columns.
pub fn read_csv(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
    let mut cols: BTreeMap<String, Vec<f64>> = header.iter().map(|h| (h.clone(), Vec::new())).collect();
    for (i, line) in lines.enumerate() {
        for (h, v) in header.iter().zip(line.split(',')) {
            let x = v.parse::<f64>().map_err(|_| HarnessError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("row {}: bad value '{v}'", i + 2)),
            })?;
            cols.get_mut(h).expect("header key").push(x);
        }
    }
    Ok(cols)
}

/// Maximum number of runs per summary that get a trace plot.
const TRACES_PER_SUMMARY: usize = 4;

/// Writes a box plot of total costs, a plan view of the logged trajectories
/// and per-run traces into `dir`. CSV paths are resolved against `csv_dir`.
pub fn emit_plots(summaries: &[RunSummary], csv_dir: &Path, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if summaries.iter().all(|s| s.runs.is_empty()) {
        log::warn!("nothing to plot: the summary holds no runs");
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = vec![plots::box_plot(summaries, &dir.join("costs_box.svg"))?];
    let mut paths = Vec::new();
    for s in summaries {
        for r in &s.runs {
            if let Some(name) = &r.csv {
                paths.push(csv_dir.join(name));
            }
        }
    }
    if !paths.is_empty() {
        let data: Vec<(String, BTreeMap<String, Vec<f64>>)> = paths
            .iter()
            .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), read_csv(p)?)))
            .collect::<Result<_, HarnessError>>()?;
        written.push(plots::plan_view(&data, &dir.join("plan_view.svg"))?);
        let mut per_summary = 0;
        let mut current = None;
        for (stem, cols) in &data {
            let prefix = stem.split("_t").next().map(str::to_string);
            if prefix != current {
                current = prefix;
                per_summary = 0;
            }
            if per_summary < TRACES_PER_SUMMARY {
                written.push(plots::traces(cols, &dir.join(format!("trace_{stem}.svg")))?);
                per_summary += 1;
            }
        }
    }
    Ok(written)
}

mod plots {
    use super::*;
    use plotters::prelude::*;

    fn plot_err(path: &Path) -> impl Fn(String) -> HarnessError + '_ {
        move |message| HarnessError::Plot {
            path: path.to_path_buf(),
            message,
        }
    }

    fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
        let (lo, hi) = values
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            return (0.0, 1.0);
        }
        let pad = ((hi - lo) * 0.05).max(1e-9);
        (lo - pad, hi + pad)
    }

    pub fn box_plot(summaries: &[RunSummary], path: &Path) -> Result<PathBuf, HarnessError> {
        let e = plot_err(path);
        let root = SVGBackend::new(path, (900, 520)).into_drawing_area();
        root.fill(&WHITE).map_err(|x| e(x.to_string()))?;
        let (lo, hi) = finite_range(summaries.iter().flat_map(|s| {
            let st = s.stats;
            [st.whisker_low.max(st.min), st.whisker_high.min(st.max), st.min, st.max]
        }));
        let n = summaries.len();
        let mut chart = ChartBuilder::on(&root)
            .caption("Accumulated running cost", ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(60)
            .y_label_area_size(70)
            .build_cartesian_2d(-0.5f64..(n as f64 - 0.5), lo..hi)
            .map_err(|x| e(x.to_string()))?;
        let labels: Vec<String> = summaries.iter().map(|s| format!("{} {}", s.agent, s.cost_label)).collect();
        chart
            .configure_mesh()
            .x_labels(n.max(1))
            .x_label_formatter(&|v| {
                let i = v.round();
                if (v - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < labels.len() {
                    labels[i as usize].clone()
                } else {
                    String::new()
                }
            })
            .y_desc("total cost")
            .draw()
            .map_err(|x| e(x.to_string()))?;
        for (i, s) in summaries.iter().enumerate() {
            let st = s.stats;
            if st.n == 0 {
                continue;
            }
            let x = i as f64;
            let color = Palette99::pick(i).to_rgba();
            let (wl, wh) = (st.whisker_low.max(st.min), st.whisker_high.min(st.max));
            chart
                .draw_series([
                    Rectangle::new([(x - 0.3, st.q1), (x + 0.3, st.q3)], color.stroke_width(2)),
                ])
                .map_err(|x| e(x.to_string()))?;
            let segments = [
                vec![(x - 0.3, st.median), (x + 0.3, st.median)],
                vec![(x, st.q3), (x, wh)],
                vec![(x, st.q1), (x, wl)],
                vec![(x - 0.15, wh), (x + 0.15, wh)],
                vec![(x - 0.15, wl), (x + 0.15, wl)],
            ];
            for seg in segments {
                chart
                    .draw_series(LineSeries::new(seg, color.stroke_width(2)))
                    .map_err(|x| e(x.to_string()))?;
            }
            let outliers: Vec<(f64, f64)> = s
                .runs
                .iter()
                .map(|r| r.total_cost)
                .filter(|c| *c < st.whisker_low || *c > st.whisker_high)
                .map(|c| (x, c))
                .collect();
            chart
                .draw_series(outliers.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(|x| e(x.to_string()))?;
        }
        root.present().map_err(|x| e(x.to_string()))?;
        Ok(path.to_path_buf())
    }

    pub fn plan_view(data: &[(String, BTreeMap<String, Vec<f64>>)], path: &Path) -> Result<PathBuf, HarnessError> {
        let e = plot_err(path);
        let root = SVGBackend::new(path, (700, 700)).into_drawing_area();
        root.fill(&WHITE).map_err(|x| e(x.to_string()))?;
        let xs = data.iter().flat_map(|(_, c)| c["x1"].iter().copied());
        let ys = data.iter().flat_map(|(_, c)| c["x2"].iter().copied());
        let (x0, x1) = finite_range(xs);
        let (y0, y1) = finite_range(ys);
        let half = ((x1 - x0).max(y1 - y0)) / 2.0;
        let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let mut chart = ChartBuilder::on(&root)
            .caption("Plan view", ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d((cx - half)..(cx + half), (cy - half)..(cy + half))
            .map_err(|x| e(x.to_string()))?;
        chart
            .configure_mesh()
            .x_desc("x1 (m)")
            .y_desc("x2 (m)")
            .draw()
            .map_err(|x| e(x.to_string()))?;
        for (i, (_, c)) in data.iter().enumerate() {
            let pts: Vec<(f64, f64)> = c["x1"].iter().zip(&c["x2"]).map(|(a, b)| (*a, *b)).collect();
            chart
                .draw_series(LineSeries::new(pts, Palette99::pick(i).stroke_width(1)))
                .map_err(|x| e(x.to_string()))?;
        }
        root.present().map_err(|x| e(x.to_string()))?;
        Ok(path.to_path_buf())
    }

    /// One panel per logged column (except `t`), stacked vertically.
    pub fn traces(cols: &BTreeMap<String, Vec<f64>>, path: &Path) -> Result<PathBuf, HarnessError> {
        let e = plot_err(path);
        let names: Vec<&str> = CSV_COLUMNS.iter().skip(1).copied().filter(|c| cols.contains_key(*c)).collect();
        let root = SVGBackend::new(path, (900, 140 * names.len() as u32)).into_drawing_area();
        root.fill(&WHITE).map_err(|x| e(x.to_string()))?;
        let t = &cols["t"];
        let (t0, t1) = finite_range(t.iter().copied());
        for (area, name) in root.split_evenly((names.len(), 1)).iter().zip(&names) {
            let v = &cols[*name];
            let (lo, hi) = finite_range(v.iter().copied());
            let mut chart = ChartBuilder::on(area)
                .margin(6)
                .x_label_area_size(20)
                .y_label_area_size(70)
                .build_cartesian_2d(t0..t1, lo..hi)
                .map_err(|x| e(x.to_string()))?;
            chart
                .configure_mesh()
                .y_desc(*name)
                .y_labels(3)
                .draw()
                .map_err(|x| e(x.to_string()))?;
            let pts: Vec<(f64, f64)> = t.iter().zip(v).filter(|(_, y)| y.is_finite()).map(|(a, b)| (*a, *b)).collect();
            chart
                .draw_series(LineSeries::new(pts, BLUE.stroke_width(1)))
                .map_err(|x| e(x.to_string()))?
                .label(*name);
        }
        root.present().map_err(|x| e(x.to_string()))?;
        Ok(path.to_path_buf())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_match_hand_values() {
        let s = CostStats::from_values(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!((s.whisker_low, s.whisker_high), (-1.0, 7.0));
        let s = CostStats::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
        assert!(CostStats::from_values(&[]).median.is_nan());
    }

    #[test]
    fn default_targets_on_unit_circle() {
        let t = circle_targets(8, 1.0);
        assert_eq!(t.len(), 8);
        for p in &t {
            assert!(((p.x1 * p.x1 + p.x2 * p.x2).sqrt() - 1.0).abs() < 1e-12);
            assert!((p.x2.atan2(p.x1) - p.x3).abs() < 1e-12 || (p.x3.abs() - std::f64::consts::PI).abs() < 1e-12);
        }
    }

    #[test]
    fn config_parse_and_round_trip() {
        let text = "\
# comment
agent.kind = calf_ac
agent.n_mc = 12
cost.preset = H3
targets = 1, 0, 0; 0, 1, 1.5
seeds = 3..6
noise.kind = ks   # trailing comment
noise.b1 = 2
noise.amplitude = 0.02
constraints.nu_bar = 0.01
constraints.core_radius = auto
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.agent, AgentKind::CalfActorCritic { n_mc: 12 });
        assert_eq!(cfg.cost_label, "H3");
        assert_eq!(cfg.targets.len(), 2);
        assert_eq!(cfg.seeds, vec![3, 4, 5]);
        assert_eq!(cfg.noise, NoiseKind::Ks { b1: 2.0, b2: 0.0 });
        assert_eq!(cfg.nu_bar, Choice::Value(0.01));
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(ExperimentConfig::parse(&ExperimentConfig::default().to_text()).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn config_errors_carry_line_and_key() {
        let e = ExperimentConfig::parse("seeds = 1\nbogus.key = 3\n").unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (2, "bogus.key"));
        let e = ExperimentConfig::parse("\n\nsampling.delta = fast\n").unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (3, "sampling.delta"));
        let e = ExperimentConfig::parse("agent.kind = dqn\n").unwrap_err();
        assert_eq!(e.key, "agent.kind");
        let e = ExperimentConfig::parse("noise.kind = dcl\nnoise.b2 = -1\n").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(ExperimentConfig::parse("targets = 1, 2\n").is_err());
        assert!(ExperimentConfig::parse("targets = \n").is_err());
        assert!(ExperimentConfig::parse("just text\n").is_err());
        assert!(ExperimentConfig::parse("sampling.delta = -1\n").is_err());
    }

    #[test]
    fn csv_header_order() {
        let traj = Trajectory {
            rows: vec![],
            dt: 0.005,
            substeps: 10,
            final_state: vec![0.0; 3],
            status: RunStatus::Completed,
        };
        assert_eq!(
            trajectory_csv(&traj).trim(),
            "t,x1,x2,x3,u1,u2,r,J_hat,L,c1,c2,c3,c4a,c4b,constraint_ok,fallback"
        );
    }
}
