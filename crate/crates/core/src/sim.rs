//! Sample-and-hold closed-loop integration.
//!
//! Actions are computed at the sampling instants `kδ` and held for the whole
//! interval `[kδ, (k+1)δ)`. Within an interval the state follows
//! `dX = (f(X, U) + σ Z') dt`, advanced with `substeps` explicit Euler steps
//! while the disturbance `Z'` is advanced on the same fine grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::noise::NoiseProcess;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("dynamics returned a non-finite derivative at state {state:?}")]
    NonFiniteDynamics { state: Vec<f64> },
    #[error("state contains non-finite entries: {0:?}")]
    NonFiniteState(Vec<f64>),
    #[error("invalid sampling configuration: {0}")]
    InvalidSampling(String),
    #[error("invalid action bounds: {0}")]
    InvalidBounds(String),
    #[error("sampling time must be positive, got {0}")]
    NonPositiveDelta(f64),
}

/// Plant state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State(Vec<f64>);

impl State {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn try_new(values: Vec<f64>) -> Result<Self, SimError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(SimError::NonFiniteState(values))
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &State) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Closed box of admissible actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ActionBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, SimError> {
        if lower.len() != upper.len() {
            return Err(SimError::InvalidBounds("lower/upper length mismatch".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(SimError::InvalidBounds(format!("empty box {lower:?}..{upper:?}")));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, values: &mut [f64]) {
        for ((v, l), u) in values.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }
}

/// Control action, saturated to its box on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    values: Vec<f64>,
}

impl Action {
    pub fn saturated(mut values: Vec<f64>, bounds: &ActionBox) -> Self {
        bounds.clamp(&mut values);
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Sampling time, fine-grid resolution and horizon of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub delta: f64,
    pub substeps: usize,
    pub horizon: f64,
}

impl SamplingConfig {
    pub fn new(delta: f64, substeps: usize, horizon: f64) -> Result<Self, SimError> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(SimError::InvalidSampling(format!("delta must be positive, got {delta}")));
        }
        if substeps == 0 {
            return Err(SimError::InvalidSampling("substeps must be at least 1".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SimError::InvalidSampling(format!("horizon must be positive, got {horizon}")));
        }
        let ratio = horizon / delta;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(SimError::InvalidSampling(format!(
                "horizon {horizon} is not a positive multiple of delta {delta}"
            )));
        }
        Ok(Self {
            delta,
            substeps,
            horizon,
        })
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.delta).round() as usize
    }

    pub fn fine_dt(&self) -> f64 {
        self.delta / self.substeps as f64
    }
}

/// Vector field `f(x, u)` of the noiseless plant.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn derivative(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
}

/// `f ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroDynamics(pub usize);

impl Dynamics for ZeroDynamics {
    fn state_dim(&self) -> usize {
        self.0
    }

    fn derivative(&self, _x: &[f64], _u: &[f64]) -> Vec<f64> {
        vec![0.0; self.0]
    }
}

/// Euler estimate of the state one sampling period ahead:
/// `x + δ f(x, u)`.
pub fn euler_predict(x: &State, u: &Action, delta: f64, f: &dyn Dynamics) -> Result<State, SimError> {
    if !(delta > 0.0) {
        return Err(SimError::NonPositiveDelta(delta));
    }
    let d = f.derivative(x.values(), u.values());
    if d.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFiniteDynamics {
            state: x.values().to_vec(),
        });
    }
    Ok(State(x.values().iter().zip(d).map(|(xi, di)| xi + delta * di).collect()))
}

/// Per-step annotations a controller attaches to its action. They are copied
/// into every fine-grid row of the interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAnnotation {
    pub critic_value: f64,
    pub lyapunov_value: f64,
    /// Constraint rows (C1, C2, C3, C4 lower, C4 upper); NaN where a row
    /// does not apply to the agent.
    pub constraints: [f64; 5],
    pub constraint_ok: bool,
    pub fallback: bool,
}

impl Default for StepAnnotation {
    fn default() -> Self {
        Self {
            critic_value: f64::NAN,
            lyapunov_value: f64::NAN,
            constraints: [f64::NAN; 5],
            constraint_ok: false,
            fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub annotation: StepAnnotation,
}

/// Called once per sampling instant.
pub trait Controller {
    fn decide(&mut self, step: usize, x: &State) -> Decision;
}

impl<F> Controller for F
where
    F: FnMut(usize, &State) -> Decision,
{
    fn decide(&mut self, step: usize, x: &State) -> Decision {
        self(step, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub running_cost: f64,
    pub annotation: StepAnnotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    /// The escape measure exceeded its bound at time `t`.
    Escaped { t: f64 },
}

/// Fine-grid log of a run. Rows cover `[0, T)`; the state at `T` is kept
/// separately in `final_state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub dt: f64,
    pub substeps: usize,
    pub final_state: Vec<f64>,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows logged at the sampling instants `kδ`.
    pub fn sample_rows(&self) -> impl Iterator<Item = &TrajectoryRow> {
        self.rows.iter().step_by(self.substeps)
    }

    /// States at the sampling instants, including the final state when the
    /// run completed a whole interval.
    pub fn sampled_states(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.sample_rows().map(|r| r.state.clone()).collect();
        if self.rows.len() % self.substeps == 0 {
            out.push(self.final_state.clone());
        }
        out
    }
}

/// Left-rectangle integral of the running-cost column.
pub fn accumulated_cost(traj: &Trajectory) -> f64 {
    traj.rows.iter().map(|r| r.running_cost).sum::<f64>() * traj.dt
}

/// Everything besides the controller that a closed-loop run needs.
pub struct SampleHold<'a> {
    pub dynamics: &'a dyn Dynamics,
    pub cost: &'a dyn Fn(&State, &Action) -> f64,
    /// Scalar gain σ in front of the disturbance, `σ = gain · I`.
    pub noise_gain: f64,
    pub sampling: SamplingConfig,
    /// Measure compared against `escape_bound` (e.g. a distance to the target).
    pub escape_measure: &'a dyn Fn(&State) -> f64,
    /// `None` selects 100× the initial measure; non-positive or infinite
    /// values disable the check.
    pub escape_bound: Option<f64>,
    pub seed: u64,
}

impl SampleHold<'_> {
    /// Runs the closed loop from `x0`. The noise process is advanced on the
    /// fine grid with an RNG seeded from `self.seed`.
    pub fn run(
        &self,
        x0: &State,
        controller: &mut dyn Controller,
        noise: &mut NoiseProcess,
    ) -> Result<Trajectory, SimError> {
        integrate_sample_hold(x0, controller, self, noise)
    }
}

pub fn integrate_sample_hold(
    x0: &State,
    controller: &mut dyn Controller,
    setup: &SampleHold<'_>,
    noise: &mut NoiseProcess,
) -> Result<Trajectory, SimError> {
    if x0.values().iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFiniteState(x0.values().to_vec()));
    }
    let cfg = setup.sampling;
    let dt = cfg.fine_dt();
    let n = x0.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let bound = match setup.escape_bound {
        Some(b) => b,
        None => 100.0 * (setup.escape_measure)(x0),
    };
    let check_escape = bound.is_finite() && bound > 0.0;

    let mut x = x0.values().to_vec();
    let mut rows = Vec::with_capacity(cfg.steps() * cfg.substeps);
    let mut status = RunStatus::Completed;

    'outer: for k in 0..cfg.steps() {
        let state = State(x.clone());
        let decision = controller.decide(k, &state);
        let u = decision.action;
        for j in 0..cfg.substeps {
            let t = (k * cfg.substeps + j) as f64 * dt;
            let s = State(x.clone());
            if check_escape && (setup.escape_measure)(&s) > bound {
                status = RunStatus::Escaped { t };
                break 'outer;
            }
            let r = (setup.cost)(&s, &u);
            let d = setup.dynamics.derivative(&x, u.values());
            if d.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFiniteDynamics { state: x });
            }
            rows.push(TrajectoryRow {
                t,
                state: s.0,
                action: u.values().to_vec(),
                running_cost: r,
                annotation: decision.annotation,
            });
            let z = noise.current_value();
            for i in 0..n {
                let disturbance = z.get(i).copied().unwrap_or(0.0);
                x[i] += dt * (d[i] + setup.noise_gain * disturbance);
            }
            noise.step(dt, &mut rng);
        }
    }
    if check_escape && status == RunStatus::Completed && (setup.escape_measure)(&State(x.clone())) > bound {
        status = RunStatus::Escaped { t: cfg.horizon };
    }
    Ok(Trajectory {
        rows,
        dt,
        substeps: cfg.substeps,
        final_state: x,
        status,
    })
}

/// Sampled Lipschitz-type constants used by the analytic error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimates {
    /// sup ‖f(x, u)‖ over the domain.
    pub f_bar: f64,
    pub lip_f: f64,
    pub lip_j: f64,
    pub lip_z: f64,
    pub sigma_max: f64,
}

/// Bound on `‖X_{t+δ} − Λ_u(X_t)‖`:
/// `lip_f (f̄ + σ_max lip_Z) δ² + σ_max lip_Z δ`.
pub fn prediction_error_bound(est: &LipschitzEstimates, delta: f64) -> f64 {
    let delta = delta.max(0.0);
    let noise = est.sigma_max * est.lip_z;
    est.lip_f * (est.f_bar + noise) * delta * delta + noise * delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseKind;
    use crate::systems::{CartDynamics, CartLimits};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn act(u: &[f64]) -> Action {
        Action::saturated(u.to_vec(), &ActionBox::unbounded(u.len()))
    }

    #[test]
    fn euler_predict_examples() {
        let f = CartDynamics;
        let p = euler_predict(&State::new(vec![0.0, 0.0, 0.0]), &act(&[1.0, 0.0]), 0.1, &f).unwrap();
        assert_eq!(p.values(), &[0.1, 0.0, 0.0]);

        let p = euler_predict(&State::new(vec![0.0, 0.0, FRAC_PI_2]), &act(&[1.0, 0.0]), 0.1, &f).unwrap();
        assert_abs_diff_eq!(p.values()[0], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(p.values()[1], 0.1, epsilon = 1e-16);
        assert_eq!(p.values()[2], FRAC_PI_2);

        let p = euler_predict(&State::new(vec![1.0, 1.0, FRAC_PI_4]), &act(&[2f64.sqrt(), 0.5]), 0.01, &f).unwrap();
        assert_abs_diff_eq!(p.values()[0], 1.01, epsilon = 1e-14);
        assert_abs_diff_eq!(p.values()[1], 1.01, epsilon = 1e-14);
        assert_abs_diff_eq!(p.values()[2], FRAC_PI_4 + 0.005, epsilon = 1e-15);
    }

    struct Bad;
    impl Dynamics for Bad {
        fn state_dim(&self) -> usize {
            1
        }
        fn derivative(&self, _x: &[f64], _u: &[f64]) -> Vec<f64> {
            vec![f64::NAN]
        }
    }

    #[test]
    fn euler_predict_rejects_nonfinite_and_bad_delta() {
        let x = State::new(vec![2.5]);
        match euler_predict(&x, &act(&[0.0]), 0.1, &Bad) {
            Err(SimError::NonFiniteDynamics { state }) => assert_eq!(state, vec![2.5]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(euler_predict(&x, &act(&[0.0]), 0.0, &ZeroDynamics(1)).is_err());
    }

    #[test]
    fn action_is_saturated() {
        let b = CartLimits::default().action_box();
        let a = Action::saturated(vec![1.0, -10.0], &b);
        assert_eq!(a.values(), &[0.22, -2.84]);
    }

    #[test]
    fn sampling_config_validation() {
        assert!(SamplingConfig::new(0.05, 10, 120.0).is_ok());
        assert_eq!(SamplingConfig::new(0.05, 10, 120.0).unwrap().steps(), 2400);
        assert!(SamplingConfig::new(0.0, 10, 1.0).is_err());
        assert!(SamplingConfig::new(0.1, 0, 1.0).is_err());
        assert!(SamplingConfig::new(0.3, 1, 1.0).is_err());
        assert!(SamplingConfig::new(0.1, 1, -1.0).is_err());
    }

    fn hold(u: Vec<f64>) -> impl FnMut(usize, &State) -> Decision {
        move |_, _| Decision {
            action: act(&u),
            annotation: StepAnnotation::default(),
        }
    }

    #[test]
    fn zero_dynamics_keep_state() {
        let dyn0 = ZeroDynamics(3);
        let cost = |_: &State, _: &Action| 1.0;
        let measure = |s: &State| s.norm();
        let setup = SampleHold {
            dynamics: &dyn0,
            cost: &cost,
            noise_gain: 1.0,
            sampling: SamplingConfig::new(0.1, 4, 2.0).unwrap(),
            escape_measure: &measure,
            escape_bound: None,
            seed: 1,
        };
        let x0 = State::new(vec![0.3, -1.0, 2.0]);
        let mut noise = NoiseProcess::none(3);
        let traj = setup.run(&x0, &mut hold(vec![5.0, 1.0]), &mut noise).unwrap();
        assert!(traj.rows.iter().all(|r| r.state == x0.values()));
        assert_eq!(traj.final_state, x0.values());
        assert_eq!(traj.rows.len(), 80);
        assert_abs_diff_eq!(accumulated_cost(&traj), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn straight_line_converges_to_closed_form() {
        let f = CartDynamics;
        let cost = |_: &State, _: &Action| 0.0;
        let measure = |s: &State| s.norm();
        let setup = SampleHold {
            dynamics: &f,
            cost: &cost,
            noise_gain: 1.0,
            sampling: SamplingConfig::new(0.05, 1000, 1.0).unwrap(),
            escape_measure: &measure,
            escape_bound: Some(f64::INFINITY),
            seed: 0,
        };
        let traj = setup
            .run(&State::zeros(3), &mut hold(vec![1.0, 0.0]), &mut NoiseProcess::none(3))
            .unwrap();
        // closed form: x(t) = (t, 0, 0)
        assert_abs_diff_eq!(traj.final_state[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(traj.final_state[1], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(traj.final_state[2], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn actions_are_held_between_samples() {
        let f = CartDynamics;
        let cost = |_: &State, _: &Action| 0.0;
        let measure = |s: &State| s.norm();
        let setup = SampleHold {
            dynamics: &f,
            cost: &cost,
            noise_gain: 1.0,
            sampling: SamplingConfig::new(0.05, 7, 1.0).unwrap(),
            escape_measure: &measure,
            escape_bound: Some(f64::INFINITY),
            seed: 3,
        };
        let mut ctrl = |k: usize, _: &State| Decision {
            action: act(&[0.1 * k as f64, -(k as f64)]),
            annotation: StepAnnotation::default(),
        };
        let mut noise = NoiseProcess::new(NoiseKind::Dcl { b1: 1.0, b2: 0.0 }, 3, 0.1).unwrap();
        let traj = setup.run(&State::zeros(3), &mut ctrl, &mut noise).unwrap();
        for chunk in traj.rows.chunks(7) {
            assert!(chunk.iter().all(|r| r.action == chunk[0].action));
        }
        for w in traj.rows.windows(2) {
            assert!(w[1].t > w[0].t);
            assert_abs_diff_eq!(w[1].t - w[0].t, 0.05 / 7.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let f = CartDynamics;
        let cost = |s: &State, _: &Action| s.norm();
        let measure = |s: &State| s.norm();
        let run = |seed| {
            let setup = SampleHold {
                dynamics: &f,
                cost: &cost,
                noise_gain: 1.0,
                sampling: SamplingConfig::new(0.05, 10, 2.0).unwrap(),
                escape_measure: &measure,
                escape_bound: Some(f64::INFINITY),
                seed,
            };
            let mut noise = NoiseProcess::new(NoiseKind::Dcl { b1: 1.0, b2: 0.0 }, 3, 0.2).unwrap();
            serde_json::to_vec(&setup.run(&State::new(vec![1.0, 0.0, 0.0]), &mut hold(vec![0.1, 0.3]), &mut noise).unwrap())
                .unwrap()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn escape_terminates_run() {
        let f = CartDynamics;
        let cost = |_: &State, _: &Action| 0.0;
        let measure = |s: &State| s.norm();
        let setup = SampleHold {
            dynamics: &f,
            cost: &cost,
            noise_gain: 1.0,
            sampling: SamplingConfig::new(0.1, 10, 100.0).unwrap(),
            escape_measure: &measure,
            escape_bound: None,
            seed: 0,
        };
        let traj = setup
            .run(&State::new(vec![0.01, 0.0, 0.0]), &mut hold(vec![1.0, 0.0]), &mut NoiseProcess::none(3))
            .unwrap();
        match traj.status {
            RunStatus::Escaped { t } => assert!(t > 0.9 && t < 1.1, "escaped at {t}"),
            s => panic!("expected escape, got {s:?}"),
        }
    }

    #[test]
    fn cost_integral_examples() {
        let mk = |costs: Vec<f64>, dt: f64| Trajectory {
            rows: costs
                .into_iter()
                .enumerate()
                .map(|(i, c)| TrajectoryRow {
                    t: i as f64 * dt,
                    state: vec![],
                    action: vec![],
                    running_cost: c,
                    annotation: StepAnnotation::default(),
                })
                .collect(),
            dt,
            substeps: 1,
            final_state: vec![],
            status: RunStatus::Completed,
        };
        assert_abs_diff_eq!(accumulated_cost(&mk(vec![1.0; 2400], 0.05)), 120.0, epsilon = 1e-9);
        assert_eq!(accumulated_cost(&mk(vec![0.0; 10], 0.1)), 0.0);
        let ramp: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        // sum_{i<1000} (i/1000)(1/1000) = 999·1000/2 / 10^6
        let oracle = (999.0 * 1000.0 / 2.0) / 1e6;
        assert_abs_diff_eq!(oracle, 0.4995, epsilon = 1e-15);
        assert_abs_diff_eq!(accumulated_cost(&mk(ramp, 1e-3)), oracle, epsilon = 1e-12);
    }

    #[test]
    fn prediction_bound_examples() {
        let est = |lip_f, f_bar, sigma_max, lip_z| LipschitzEstimates {
            f_bar,
            lip_f,
            lip_j: 0.0,
            lip_z,
            sigma_max,
        };
        assert_abs_diff_eq!(prediction_error_bound(&est(1.0, 2.0, 0.0, 1.0), 0.1), 0.02, epsilon = 1e-15);
        assert_eq!(prediction_error_bound(&est(1.0, 2.0, 0.3, 1.0), 0.0), 0.0);
        let by_hand = 0.05 * 0.1 + 0.0025 * 1.1;
        assert_abs_diff_eq!(by_hand, 0.00775, epsilon = 1e-15);
        assert_abs_diff_eq!(prediction_error_bound(&est(1.0, 1.0, 0.1, 1.0), 0.05), by_hand, epsilon = 1e-15);
    }

    #[test]
    fn euler_error_is_second_order() {
        let f = CartDynamics;
        let u = act(&[0.22, 2.0]);
        let x = State::new(vec![0.3, -0.4, 0.7]);
        let exact = |delta: f64| {
            // closed-form unicycle arc
            let (v, w, th) = (0.22, 2.0, 0.7);
            vec![
                0.3 + v / w * ((th + w * delta).sin() - th.sin()),
                -0.4 - v / w * ((th + w * delta).cos() - th.cos()),
                th + w * delta,
            ]
        };
        let err = |delta: f64| euler_predict(&x, &u, delta, &f).unwrap().distance(&State::new(exact(delta)));
        let ratio = err(0.025) / err(0.05);
        assert!(ratio <= 1.0 / 3.0 && ratio > 0.2, "ratio {ratio}");
    }
}
