//! Lipschitz estimation by sampling and post-hoc audits over run logs.
//!
//! Audits are pure functions of logged data and configuration. Each returns
//! an [`AuditReport`] whose `margin` is the largest signed excess over the
//! audited bound (`≤ 0` on pass).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{CheckKind, StepRecord};
use crate::critic::{constraint_g, ConstraintParams, CriticModel, CriticWeights, CONSTRAINT_TOL};
use crate::lyapunov::{NominalPolicy, SandwichBounds};
use crate::sim::{prediction_error_bound, ActionBox, Dynamics, LipschitzEstimates, Trajectory};
use crate::systems::{cart_euler, CartAction, CartState};

/// Inflation applied to sampled Lipschitz constants.
pub const LIPSCHITZ_SAFETY: f64 = 1.5;
/// Minimum sample count for [`estimate_lipschitz`].
pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("at least {MIN_SAMPLES} samples are required, got {0}")]
    TooFewSamples(usize),
}

/// Region and inputs over which constants are estimated.
pub struct LipschitzDomain<'a> {
    pub dynamics: &'a dyn Dynamics,
    pub action_box: &'a ActionBox,
    pub critic: &'a dyn Fn(&[f64]) -> f64,
    pub center: &'a [f64],
    pub radius: f64,
    /// Lipschitz constant of the noise map (its amplitude for bounded noise).
    pub lip_z: f64,
    pub sigma_max: f64,
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let n = center.len();
    loop {
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        if d.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return center.iter().zip(&d).map(|(c, v)| c + radius * v).collect();
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Max finite-difference ratios over random pairs in the ball (half of the
/// pairs at small separation, half anywhere), inflated by
/// [`LIPSCHITZ_SAFETY`]. `f_bar` is the inflated max of `‖f‖`.
pub fn estimate_lipschitz(domain: &LipschitzDomain<'_>, samples: usize, seed: u64) -> Result<LipschitzEstimates, VerifyError> {
    if samples < MIN_SAMPLES {
        return Err(VerifyError::TooFewSamples(samples));
    }
    if !(domain.radius > 0.0) || !domain.radius.is_finite() || domain.center.is_empty() {
        return Err(VerifyError::DegenerateDomain(format!(
            "radius {} around a {}-dimensional center",
            domain.radius,
            domain.center.len()
        )));
    }
    if domain.center.len() != domain.dynamics.state_dim() {
        return Err(VerifyError::DegenerateDomain("center dimension differs from the state dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (domain.action_box.lower(), domain.action_box.upper());
    let (mut f_bar, mut lip_f, mut lip_j) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..samples {
        let u: Vec<f64> = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| if a.is_finite() && b.is_finite() && b > a { rng.random_range(*a..=*b) } else { 0.0 })
            .collect();
        let x = uniform_in_ball(&mut rng, domain.center, domain.radius);
        let y = if i % 2 == 0 {
            let step = domain.radius * 10f64.powf(rng.random_range(-4.0..-1.0));
            let d = uniform_in_ball(&mut rng, &vec![0.0; x.len()], 1.0);
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            x.iter().zip(&d).map(|(a, b)| a + step * b / n).collect()
        } else {
            uniform_in_ball(&mut rng, domain.center, domain.radius)
        };
        let h = dist(&x, &y);
        let fx = domain.dynamics.derivative(&x, &u);
        f_bar = f_bar.max(fx.iter().map(|v| v * v).sum::<f64>().sqrt());
        if h > 0.0 {
            let fy = domain.dynamics.derivative(&y, &u);
            lip_f = lip_f.max(dist(&fx, &fy) / h);
            lip_j = lip_j.max(((domain.critic)(&x) - (domain.critic)(&y)).abs() / h);
        }
    }
    Ok(LipschitzEstimates {
        f_bar: LIPSCHITZ_SAFETY * f_bar,
        lip_f: LIPSCHITZ_SAFETY * lip_f,
        lip_j: LIPSCHITZ_SAFETY * lip_j,
        lip_z: domain.lip_z,
        sigma_max: domain.sigma_max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub check: String,
    pub passed: bool,
    pub margin: f64,
    pub samples: usize,
    /// Index (step or row) of the worst offender, if any.
    pub offending: Option<usize>,
    pub note: String,
}

impl AuditReport {
    fn from_margin(check: &str, margin: f64, tol: f64, samples: usize, offending: Option<usize>, note: String) -> Self {
        let passed = !(margin > tol);
        Self {
            check: check.to_string(),
            passed,
            margin,
            samples,
            offending: if passed { None } else { offending },
            note,
        }
    }
}

/// Tracks the maximum of a signed margin and where it occurred.
#[derive(Default)]
struct Worst {
    margin: Option<f64>,
    at: Option<usize>,
    count: usize,
}

impl Worst {
    fn see(&mut self, m: f64, at: usize) {
        self.count += 1;
        let m = if m.is_nan() { f64::INFINITY } else { m };
        if self.margin.is_none_or(|w| m > w) {
            self.margin = Some(m);
            self.at = Some(at);
        }
    }

    fn margin(&self) -> f64 {
        self.margin.unwrap_or(f64::NEG_INFINITY)
    }
}

/// Re-evaluates every accepted constrained solve outside the core ball.
pub fn audit_constraints(records: &[StepRecord], model: &CriticModel, params: &ConstraintParams) -> AuditReport {
    let mut worst = Worst::default();
    for rec in records.iter().filter(|r| !r.in_core) {
        for c in rec.checks.iter().filter(|c| c.accepted) {
            let g = crate::agents::evaluate_check(model, params, c);
            worst.see(g.max_row(), rec.k);
        }
    }
    AuditReport::from_margin(
        "constraints",
        worst.margin(),
        CONSTRAINT_TOL,
        worst.count,
        worst.at,
        format!("{} accepted solves re-evaluated", worst.count),
    )
}

/// Critic decrements between consecutive steps outside the core ball whose
/// later step carries an accepted update must satisfy
/// `ΔĴ ≤ −δν̄ + lip_Ĵ χ₁(δ) + δε`; the `Ĵ°` sequence (where logged) must be
/// strictly decreasing over accepted updates.
pub fn audit_decay(records: &[StepRecord], params: &ConstraintParams, est: &LipschitzEstimates) -> AuditReport {
    let delta = params.delta;
    let slack = est.lip_j * prediction_error_bound(est, delta) + delta * params.epsilon;
    let bound = -delta * params.nu_bar + slack;
    let mut worst = Worst::default();
    for pair in records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.in_core || b.in_core || !b.checks.iter().any(|c| c.accepted && c.kind != CheckKind::Actor) {
            continue;
        }
        // fallback updates compare against the last accepted pair only
        let anchored = |r: &StepRecord| r.checks.iter().any(|c| c.accepted && c.kind == CheckKind::Fallback);
        if anchored(b) && !anchored(a) {
            continue;
        }
        worst.see(b.critic_value - a.critic_value - bound, b.k);
    }
    let mut circ = Worst::default();
    let mut last: Option<f64> = None;
    for rec in records.iter().filter(|r| !r.in_core && r.j_circ.is_finite()) {
        let accepted = rec.checks.iter().any(|c| c.accepted && c.kind == CheckKind::Fallback);
        if let (Some(prev), true) = (last, accepted) {
            circ.see(rec.j_circ - prev, rec.k);
        }
        last = Some(rec.j_circ);
    }
    let strict = circ.margin();
    if circ.count > 0 && strict >= 0.0 {
        return AuditReport {
            check: "decay".into(),
            passed: false,
            margin: strict,
            samples: worst.count + circ.count,
            offending: circ.at,
            note: "critic value sequence is not strictly decreasing".into(),
        };
    }
    AuditReport::from_margin(
        "decay",
        worst.margin(),
        CONSTRAINT_TOL,
        worst.count + circ.count,
        worst.at,
        format!("bound −δν̄ + {slack:.3e}"),
    )
}

/// First time at which the norm drops to `s_star` or below.
pub fn reach_time(norms: &[(f64, f64)], s_star: f64) -> Option<f64> {
    norms.iter().find(|(_, n)| *n <= s_star).map(|(t, _)| *t)
}

/// Passes iff the norm enters the `s_star` ball no later than `horizon` and
/// stays within `2 s_star` afterwards. `norms` holds `(t, ‖x(t)‖)`.
pub fn audit_reaching(norms: &[(f64, f64)], s_star: f64, horizon: f64) -> AuditReport {
    let Some(i) = norms.iter().position(|(_, n)| *n <= s_star) else {
        let closest = norms.iter().map(|(_, n)| *n).fold(f64::INFINITY, f64::min);
        return AuditReport {
            check: "reaching".into(),
            passed: false,
            margin: closest - s_star,
            samples: norms.len(),
            offending: None,
            note: "never entered the ball".into(),
        };
    };
    let t_reach = norms[i].0;
    if t_reach > horizon {
        return AuditReport {
            check: "reaching".into(),
            passed: false,
            margin: t_reach - horizon,
            samples: norms.len(),
            offending: Some(i),
            note: format!("entered at {t_reach:.3} s, after the horizon"),
        };
    }
    let mut worst = Worst::default();
    for (j, (_, n)) in norms.iter().enumerate().skip(i) {
        worst.see(n - 2.0 * s_star, j);
    }
    AuditReport::from_margin("reaching", worst.margin(), 0.0, norms.len(), worst.at, format!("reached at {t_reach:.3} s"))
}

/// `(t, composite norm of the error)` for every logged row plus the final
/// state, with the error taken relative to `target`.
pub fn error_norms(traj: &Trajectory, target: &CartState) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = traj
        .rows
        .iter()
        .map(|r| (r.t, CartState::from_slice(&r.state).relative_to(target).norm()))
        .collect();
    let t_end = traj.rows.last().map_or(0.0, |r| r.t + traj.dt);
    out.push((t_end, CartState::from_slice(&traj.final_state).relative_to(target).norm()));
    out
}

/// Substitutes the candidate `(w#_ζ, η(x_k))` into `G(·, w_{k−1}, Λ, x_k)` at
/// every logged step outside the core ball.
pub fn audit_feasibility(
    records: &[StepRecord],
    model: &CriticModel,
    params: &ConstraintParams,
    nominal: &NominalPolicy,
    zeta: f64,
) -> AuditReport {
    let sharp = CriticWeights::structural(zeta);
    let mut worst = Worst::default();
    let mut rows = [0usize; 5];
    for rec in records.iter().filter(|r| !r.in_core) {
        let u = nominal.action(&rec.x);
        let next = cart_euler(&rec.x, &u, params.delta);
        let g = constraint_g(model, &sharp, &rec.weights, &next, &rec.x, params);
        for (n, r) in rows.iter_mut().zip(g.rows) {
            *n += usize::from(r > CONSTRAINT_TOL);
        }
        worst.see(g.max_row(), rec.k);
    }
    AuditReport::from_margin(
        "feasibility",
        worst.margin(),
        CONSTRAINT_TOL,
        worst.count,
        worst.at,
        format!("{} steps outside the core ball; violations per row {rows:?}", worst.count),
    )
}

/// Reaching-step bound of the stabilizing-policy-only agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachingBound {
    /// Steps for `Ĵ°` to fall from `Ĵ°₀` to `α̂_low(s*)`.
    pub t_critic: f64,
    /// Steps for `L` to fall from `α_up(α̂_low⁻¹(Ĵ°₀))` to `α_low(s*)`.
    pub t_lyapunov: f64,
    pub t_star: f64,
}

impl ReachingBound {
    pub fn steps(&self) -> f64 {
        self.t_star * (self.t_star - 1.0)
    }
}

/// `T* = max(T_Ĵ, T_L)` with `T_Ĵ = (Ĵ°₀ − α̂_low(s*))/(ν̄δ)` and
/// `T_L = (α_up(α̂_low⁻¹(Ĵ°₀)) − α_low(s*))/(ν̄δ)`, both at least 1.
pub fn reaching_bound(
    j0: f64,
    critic_bounds: &SandwichBounds,
    lyapunov_bounds: &SandwichBounds,
    s_star: f64,
    params: &ConstraintParams,
) -> ReachingBound {
    let rate = params.nu_bar * params.delta;
    let t_critic = ((j0 - critic_bounds.low.eval(s_star)) / rate).max(1.0);
    let radius = critic_bounds.low.inverse(j0);
    let t_lyapunov = ((lyapunov_bounds.up.eval(radius) - lyapunov_bounds.low.eval(s_star)) / rate).max(1.0);
    ReachingBound {
        t_critic,
        t_lyapunov,
        t_star: t_critic.max(t_lyapunov),
    }
}

/// Multi-step Lyapunov audit of a stabilizing-policy-only run: every
/// accepted update lowers `Ĵ°` by at least `ν̄δ`, and the number of steps
/// before the core ball is first entered is at most `T*(T*−1)`.
pub fn audit_multistep(
    records: &[StepRecord],
    params: &ConstraintParams,
    critic_bounds: &SandwichBounds,
    lyapunov_bounds: &SandwichBounds,
    s_star: f64,
) -> (AuditReport, Option<ReachingBound>) {
    let drop = params.nu_bar * params.delta;
    let mut worst = Worst::default();
    let mut last: Option<f64> = None;
    for rec in records.iter().filter(|r| r.j_circ.is_finite()) {
        let accepted = rec.checks.iter().any(|c| c.accepted && c.kind == CheckKind::Fallback);
        if let (Some(prev), true) = (last, accepted) {
            worst.see(rec.j_circ - prev + drop, rec.k);
        }
        last = Some(rec.j_circ);
    }
    let Some(first) = records.iter().find(|r| r.j_circ.is_finite()) else {
        let r = AuditReport::from_margin("multistep", f64::INFINITY, 0.0, 0, None, "no critic values logged".into());
        return (r, None);
    };
    let bound = reaching_bound(first.j_circ, critic_bounds, lyapunov_bounds, s_star, params);
    let reach = records.iter().position(|r| r.x.norm() <= s_star);
    let steps = reach.map_or(f64::INFINITY, |k| k as f64);
    let reach_margin = steps - bound.steps();
    let decay_margin = worst.margin();
    let note = format!(
        "{} accepted updates; reached after {} steps, bound {:.3e}",
        worst.count,
        reach.map_or("∞".to_string(), |k| k.to_string()),
        bound.steps()
    );
    let (margin, at) = if decay_margin > CONSTRAINT_TOL {
        (decay_margin, worst.at)
    } else if reach_margin > 0.0 {
        (reach_margin, reach)
    } else {
        (decay_margin.max(reach_margin), None)
    };
    let passed = decay_margin <= CONSTRAINT_TOL && reach_margin <= 0.0;
    let report = AuditReport {
        check: "multistep".into(),
        passed,
        margin,
        samples: worst.count,
        offending: if passed { None } else { at },
        note,
    };
    (report, Some(bound))
}

/// Largest one-step deviation `‖x_{k+1} − Λ_{u_k}(x_k)‖` over the sampling
/// instants of a run against `χ₁(δ)`.
pub fn audit_prediction(traj: &Trajectory, est: &LipschitzEstimates, delta: f64) -> AuditReport {
    let states = traj.sampled_states();
    let actions: Vec<&Vec<f64>> = traj.sample_rows().map(|r| &r.action).collect();
    let chi = prediction_error_bound(est, delta);
    let mut worst = Worst::default();
    for (k, pair) in states.windows(2).enumerate() {
        let x = CartState::from_slice(&pair[0]);
        let u = CartAction::new(actions[k][0], actions[k][1]);
        let pred = cart_euler(&x, &u, delta);
        let y = &pair[1];
        let dev = dist(&pred.as_array(), y);
        worst.see(dev - chi, k);
    }
    AuditReport::from_margin("prediction", worst.margin(), 0.0, worst.count, worst.at, format!("χ₁(δ) = {chi:.4e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ConstraintCheck;
    use crate::critic::WeightBox;
    use crate::lyapunov::{KappaFunction, LyapunovSpec};
    use crate::sim::ZeroDynamics;
    use crate::systems::{CartDynamics, CartLimits};

    struct Linear(f64);
    impl Dynamics for Linear {
        fn state_dim(&self) -> usize {
            3
        }
        fn derivative(&self, x: &[f64], _u: &[f64]) -> Vec<f64> {
            x.iter().map(|v| self.0 * v).collect()
        }
    }

    struct Constant([f64; 2]);
    impl Dynamics for Constant {
        fn state_dim(&self) -> usize {
            2
        }
        fn derivative(&self, _x: &[f64], _u: &[f64]) -> Vec<f64> {
            self.0.to_vec()
        }
    }

    fn domain<'a>(f: &'a dyn Dynamics, b: &'a ActionBox, c: &'a [f64], j: &'a dyn Fn(&[f64]) -> f64) -> LipschitzDomain<'a> {
        LipschitzDomain {
            dynamics: f,
            action_box: b,
            critic: j,
            center: c,
            radius: 1.0,
            lip_z: 0.1,
            sigma_max: 1.0,
        }
    }

    #[test]
    fn lipschitz_of_linear_map() {
        let b = ActionBox::unbounded(2);
        let j = |x: &[f64]| x[0];
        let est = estimate_lipschitz(&domain(&Linear(2.0), &b, &[0.0; 3], &j), 2000, 1).unwrap();
        assert!((est.lip_f - 3.0).abs() < 1e-9, "{}", est.lip_f);
        assert!(est.lip_j <= 1.5 + 1e-12 && est.lip_j > 1.2);
        assert_eq!(est.lip_z, 0.1);
    }

    #[test]
    fn lipschitz_of_constant_map() {
        let b = ActionBox::unbounded(2);
        let j = |_: &[f64]| 0.0;
        let est = estimate_lipschitz(&domain(&Constant([3.0, 4.0]), &b, &[0.0; 2], &j), 1000, 2).unwrap();
        assert_eq!(est.lip_f, 0.0);
        assert!((est.f_bar - 7.5).abs() < 1e-12);
    }

    #[test]
    fn cart_drift_bound() {
        let lim = CartLimits::default();
        let b = lim.action_box();
        let j = |_: &[f64]| 0.0;
        let est = estimate_lipschitz(&domain(&CartDynamics, &b, &[0.0; 3], &j), 5000, 3).unwrap();
        let oracle = 1.5 * (0.22f64 * 0.22 + 0.22 * 0.22 + 2.84 * 2.84).sqrt();
        assert!(est.f_bar <= oracle);
        assert!(est.lip_f <= 1.5 * 0.22 + 1e-12);
    }

    #[test]
    fn lipschitz_errors() {
        let b = ActionBox::unbounded(1);
        let j = |_: &[f64]| 0.0;
        let f = ZeroDynamics(1);
        assert_eq!(
            estimate_lipschitz(&domain(&f, &b, &[0.0], &j), 999, 0),
            Err(VerifyError::TooFewSamples(999))
        );
        let mut d = domain(&f, &b, &[0.0], &j);
        d.radius = 0.0;
        assert!(matches!(estimate_lipschitz(&d, 1000, 0), Err(VerifyError::DegenerateDomain(_))));
    }

    fn params() -> ConstraintParams {
        ConstraintParams::new(0.0, 1.0, 0.05).unwrap()
    }

    fn quiet() -> LipschitzEstimates {
        LipschitzEstimates {
            f_bar: 1.0,
            lip_f: 0.0,
            lip_j: 1.0,
            lip_z: 0.0,
            sigma_max: 0.0,
        }
    }

    fn record(k: usize, value: f64, accepted: bool) -> StepRecord {
        let w = CriticWeights::structural(1.0);
        StepRecord {
            k,
            x: CartState::new(1.0, 0.0, 0.0),
            action: CartAction::ZERO,
            in_core: false,
            fallback: !accepted,
            weights: w.clone(),
            checks: vec![ConstraintCheck {
                kind: CheckKind::Critic,
                w: w.clone(),
                w_prev: w,
                x: CartState::ORIGIN,
                x_next: CartState::ORIGIN,
                rows: [0.0; 5],
                accepted,
            }],
            j_circ: f64::NAN,
            critic_value: value,
            lyapunov_value: value,
        }
    }

    #[test]
    fn decay_audit_exact_rate_passes() {
        // drop of exactly δν̄ = 0.05 per step, no slack
        let recs: Vec<_> = (0..20).map(|k| record(k, 10.0 - 0.05 * k as f64, true)).collect();
        let r = audit_decay(&recs, &params(), &quiet());
        assert!(r.passed, "{r:?}");
        assert!(r.margin.abs() < 1e-12);
        assert_eq!(r.samples, 19);
    }

    #[test]
    fn decay_audit_reports_offender() {
        let mut recs: Vec<_> = (0..20).map(|k| record(k, 10.0 - 0.05 * k as f64, true)).collect();
        recs[7].critic_value += 0.5;
        let r = audit_decay(&recs, &params(), &quiet());
        assert!(!r.passed);
        assert_eq!(r.offending, Some(7));
        // the same increase on a rejected step is not audited
        recs[7].checks[0].accepted = false;
        recs[8].checks[0].accepted = false;
        assert!(audit_decay(&recs, &params(), &quiet()).passed);
    }

    #[test]
    fn reaching_examples() {
        let to_origin: Vec<_> = (0..=100).map(|i| (i as f64, 1.0 - i as f64 / 100.0)).collect();
        let r = audit_reaching(&to_origin, 0.1, 120.0);
        assert!(r.passed);
        assert_eq!(reach_time(&to_origin, 0.1), Some(90.0));
        let diverging: Vec<_> = (0..=100).map(|i| (i as f64, 1.0 + i as f64)).collect();
        assert!(!audit_reaching(&diverging, 0.1, 120.0).passed);
        let late: Vec<_> = (0..=200).map(|i| (i as f64, 1.0 - i as f64 / 200.0)).collect();
        assert!(!audit_reaching(&late, 0.1, 120.0).passed);
        let mut leaves = to_origin.clone();
        leaves.push((101.0, 0.25));
        let r = audit_reaching(&leaves, 0.1, 120.0);
        assert!(!r.passed);
        assert_eq!(r.offending, Some(101));
    }

    fn model() -> CriticModel {
        let bounds = SandwichBounds {
            low: KappaFunction::new(1e-3, 3.5).unwrap(),
            up: KappaFunction::new(10.0, 2.0).unwrap(),
        };
        CriticModel::new(LyapunovSpec::default(), bounds, WeightBox::default())
    }

    #[test]
    fn feasibility_first_step_c1_is_minus_delta_epsilon() {
        let m = model();
        let p = ConstraintParams::new(2e-3 / 3.0, 1e-3, 0.05).unwrap();
        let x = CartState::new(0.9, 0.2, -0.3);
        let w = CriticWeights::structural(1.0);
        let nominal = NominalPolicy::new(LyapunovSpec::default(), CartLimits::default(), 0.05, 15);
        let next = cart_euler(&x, &nominal.action(&x), 0.05);
        let g = constraint_g(&m, &w, &w, &next, &x, &p);
        assert!((g.rows[0] + 0.05 * p.epsilon).abs() < 1e-15);
        let mut rec = record(0, 0.0, true);
        rec.x = x;
        assert!(audit_feasibility(&[rec.clone()], &m, &p, &nominal, 1.0).passed);
        // ν̄ far beyond the achievable decay makes the candidate inadmissible
        let greedy = ConstraintParams::new(0.0, 100.0, 0.05).unwrap();
        assert!(!audit_feasibility(&[rec], &m, &greedy, &nominal, 1.0).passed);
    }

    #[test]
    fn reaching_bound_formula() {
        let b = SandwichBounds {
            low: KappaFunction::new(1.0, 2.0).unwrap(),
            up: KappaFunction::new(4.0, 2.0).unwrap(),
        };
        let p = ConstraintParams::new(0.0, 2.0, 0.5).unwrap();
        // T_Ĵ = (9 − 1)/1 = 8; radius = 3, T_L = (36 − 1)/1 = 35
        let r = reaching_bound(9.0, &b, &b, 1.0, &p);
        assert_eq!(r.t_critic, 8.0);
        assert_eq!(r.t_lyapunov, 35.0);
        assert_eq!(r.steps(), 35.0 * 34.0);
    }

    #[test]
    fn multistep_audit_on_synthetic_log() {
        let b = SandwichBounds {
            low: KappaFunction::new(1.0, 2.0).unwrap(),
            up: KappaFunction::new(4.0, 2.0).unwrap(),
        };
        let p = ConstraintParams::new(0.0, 2.0, 0.5).unwrap();
        let mut recs = Vec::new();
        for k in 0..10 {
            let mut r = record(k, 0.0, k > 0);
            r.checks[0].kind = CheckKind::Fallback;
            r.j_circ = 9.0 - k as f64;
            r.x = CartState::new(1.0 - 0.1 * k as f64, 0.0, 0.0);
            recs.push(r);
        }
        let (rep, bound) = audit_multistep(&recs, &p, &b, &b, 0.15);
        assert!(rep.passed, "{rep:?}");
        assert!(bound.unwrap().t_star >= 8.0);
        recs[4].j_circ = recs[3].j_circ - 0.5;
        let (rep, _) = audit_multistep(&recs, &p, &b, &b, 0.15);
        assert!(!rep.passed);
        assert_eq!(rep.offending, Some(4));
    }

    #[test]
    fn audits_are_repeatable() {
        let recs: Vec<_> = (0..5).map(|k| record(k, 5.0 - k as f64, true)).collect();
        assert_eq!(audit_decay(&recs, &params(), &quiet()), audit_decay(&recs, &params(), &quiet()));
    }
}
