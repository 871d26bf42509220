//! Critic `Ĵʷ(x) = w₀ φ(x; w_φ) + w₁ L(x)`, the stabilizing constraint
//! function `G` and the actor/critic losses.
//!
//! All states handed to this module are target-frame errors (see
//! [`CartState::relative_to`]); the origin is the goal.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::lyapunov::{lyapunov_cart, LyapunovSpec, SandwichBounds};
use crate::systems::{cart_euler, wrap_angle, CartAction, CartState, RunningCostSpec};

/// Tolerance of every "≤ 0" constraint check.
pub const CONSTRAINT_TOL: f64 = 1e-8;

/// Number of monomials of degree ≤ 2 in three variables.
pub const N_FEATURES: usize = 10;

/// `1, e1, e2, e3, e1², e1e2, e1e3, e2², e2e3, e3²` on `(e1, e2, wrap e3)`.
pub fn monomials(e: &CartState) -> [f64; N_FEATURES] {
    let (a, b, c) = (e.x1, e.x2, wrap_angle(e.x3));
    [1.0, a, b, c, a * a, a * b, a * c, b * b, b * c, c * c]
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CriticError {
    #[error("invalid weight box: {0}")]
    InvalidBox(String),
    #[error("invalid constraint parameters: {0}")]
    InvalidParams(String),
    #[error("weight vector has length {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticWeights {
    pub w0: f64,
    pub w1: f64,
    pub w_phi: Vec<f64>,
}

impl CriticWeights {
    pub const DIM: usize = 2 + N_FEATURES;

    /// `w#_ζ`: no feature term, `w₁ = ζ`, so that `Ĵ = ζ L`.
    pub fn structural(zeta: f64) -> Self {
        Self {
            w0: 0.0,
            w1: zeta,
            w_phi: vec![0.0; N_FEATURES],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::DIM);
        v.push(self.w0);
        v.push(self.w1);
        v.extend_from_slice(&self.w_phi);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self, CriticError> {
        if v.len() != Self::DIM {
            return Err(CriticError::Dimension {
                got: v.len(),
                expected: Self::DIM,
            });
        }
        Ok(Self {
            w0: v[0],
            w1: v[1],
            w_phi: v[2..].to_vec(),
        })
    }

    pub fn distance_sq(&self, other: &CriticWeights) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// The compact weight set 𝕎. `w1_min > 0` keeps the zero critic out of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBox {
    pub w0_max: f64,
    pub w1_min: f64,
    pub w1_max: f64,
    pub phi_bound: f64,
}

impl WeightBox {
    pub fn new(w0_max: f64, w1_min: f64, w1_max: f64, phi_bound: f64) -> Result<Self, CriticError> {
        if !(w0_max >= 0.0 && w0_max.is_finite()) {
            return Err(CriticError::InvalidBox(format!("w0_max must be finite and >= 0, got {w0_max}")));
        }
        if !(w1_min > 0.0 && w1_max >= w1_min && w1_max.is_finite()) {
            return Err(CriticError::InvalidBox(format!(
                "need 0 < w1_min <= w1_max < inf, got [{w1_min}, {w1_max}]"
            )));
        }
        if !(phi_bound >= 0.0 && phi_bound.is_finite()) {
            return Err(CriticError::InvalidBox(format!("phi_bound must be finite and >= 0, got {phi_bound}")));
        }
        Ok(Self {
            w0_max,
            w1_min,
            w1_max,
            phi_bound,
        })
    }

    pub fn lower(&self) -> Vec<f64> {
        let mut v = vec![0.0, self.w1_min];
        v.extend(std::iter::repeat_n(-self.phi_bound, N_FEATURES));
        v
    }

    pub fn upper(&self) -> Vec<f64> {
        let mut v = vec![self.w0_max, self.w1_max];
        v.extend(std::iter::repeat_n(self.phi_bound, N_FEATURES));
        v
    }

    pub fn contains(&self, w: &CriticWeights) -> bool {
        let v = w.to_vec();
        v.len() == CriticWeights::DIM
            && v.iter()
                .zip(self.lower().iter().zip(self.upper()))
                .all(|(x, (l, u))| *x >= *l && *x <= u)
    }
}

impl Default for WeightBox {
    fn default() -> Self {
        Self {
            w0_max: 10.0,
            w1_min: 1.0,
            w1_max: 10.0,
            phi_bound: 3.0,
        }
    }
}

/// Everything the critic needs about one state: `L(x)`, `‖x‖` and the
/// monomials. Evaluating `Ĵʷ` at a cached point is cheap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticPoint {
    pub lyapunov: f64,
    pub norm: f64,
    pub features: [f64; N_FEATURES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticModel {
    spec: LyapunovSpec,
    bounds: SandwichBounds,
    weight_box: WeightBox,
}

impl CriticModel {
    pub fn new(spec: LyapunovSpec, bounds: SandwichBounds, weight_box: WeightBox) -> Self {
        Self {
            spec,
            bounds,
            weight_box,
        }
    }

    pub fn spec(&self) -> &LyapunovSpec {
        &self.spec
    }

    pub fn bounds(&self) -> &SandwichBounds {
        &self.bounds
    }

    pub fn weight_box(&self) -> &WeightBox {
        &self.weight_box
    }

    pub fn lyapunov(&self, x: &CartState) -> f64 {
        lyapunov_cart(x, &self.spec)
    }

    pub fn point(&self, x: &CartState) -> CriticPoint {
        CriticPoint {
            lyapunov: self.lyapunov(x),
            norm: x.norm(),
            features: monomials(x),
        }
    }

    /// `φ(x; w_φ) = ‖x‖² softplus(w_φ · m(x))`, zero at the origin and
    /// never negative.
    pub fn feature_at(&self, p: &CriticPoint, w_phi: &[f64]) -> f64 {
        let s: f64 = p.features.iter().zip(w_phi).map(|(m, w)| m * w).sum();
        p.norm * p.norm * softplus(s)
    }

    pub fn eval_at(&self, w: &CriticWeights, p: &CriticPoint) -> f64 {
        let phi = if w.w0 == 0.0 { 0.0 } else { w.w0 * self.feature_at(p, &w.w_phi) };
        phi + w.w1 * p.lyapunov
    }

    pub fn eval(&self, w: &CriticWeights, x: &CartState) -> f64 {
        self.eval_at(w, &self.point(x))
    }
}

/// `w₀ φ(x) + w₁ L(x)`.
pub fn critic_eval(model: &CriticModel, w: &CriticWeights, x: &CartState) -> f64 {
    model.eval(w, x)
}

/// Slack `ε`, decay rate `ν̄` and sampling time `δ` of the constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintParams {
    pub epsilon: f64,
    pub nu_bar: f64,
    pub delta: f64,
}

/// Floor on the automatic decay rate (reached when the run is noiseless).
pub const NU_BAR_FLOOR: f64 = 1e-3;

impl ConstraintParams {
    pub fn new(epsilon: f64, nu_bar: f64, delta: f64) -> Result<Self, CriticError> {
        if !(nu_bar > 0.0 && nu_bar.is_finite()) {
            return Err(CriticError::InvalidParams(format!("nu_bar must be positive, got {nu_bar}")));
        }
        if !(epsilon >= 0.0 && epsilon < nu_bar) {
            return Err(CriticError::InvalidParams(format!(
                "need 0 <= epsilon < nu_bar, got epsilon={epsilon}, nu_bar={nu_bar}"
            )));
        }
        if !(delta > 0.0) {
            return Err(CriticError::InvalidParams(format!("delta must be positive, got {delta}")));
        }
        Ok(Self { epsilon, nu_bar, delta })
    }

    /// `ν̄ = max(4 lip_Ĵ σ_max lip_Z, 1e-3)` and `ε = 2ν̄/3`.
    pub fn automatic(lip_j: f64, sigma_max: f64, lip_z: f64, delta: f64) -> Result<Self, CriticError> {
        let nu_bar = (4.0 * lip_j * sigma_max * lip_z).max(NU_BAR_FLOOR);
        Self::new(2.0 * nu_bar / 3.0, nu_bar, delta)
    }
}

/// Values of the five rows of `G`. NaN marks a row that does not apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEval {
    pub rows: [f64; 5],
}

impl ConstraintEval {
    /// All applicable rows at most `tol`; a non-finite row other than the
    /// NaN placeholder counts as violated.
    pub fn satisfied(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.is_nan() || *r <= tol)
    }

    pub fn max_row(&self) -> f64 {
        self.rows.iter().filter(|r| !r.is_nan()).fold(f64::NEG_INFINITY, |a, b| a.max(*b))
    }
}

/// `G` at cached points: `p` is `x`, `pn` is `x_next`.
pub fn constraint_rows(
    model: &CriticModel,
    w: &CriticWeights,
    w_prev: &CriticWeights,
    pn: &CriticPoint,
    p: &CriticPoint,
    params: &ConstraintParams,
) -> ConstraintEval {
    let j_x = model.eval_at(w, p);
    let j_next = model.eval_at(w, pn);
    let b = model.bounds();
    ConstraintEval {
        rows: [
            j_x - model.eval_at(w_prev, p) - params.delta * params.epsilon,
            pn.lyapunov - j_next,
            j_next - j_x + params.delta * params.nu_bar,
            b.low.eval(p.norm) - j_x,
            j_x - b.up.eval(p.norm),
        ],
    }
}

/// The stabilizing constraint function `G(w, w_prev, x_next, x)`.
pub fn constraint_g(
    model: &CriticModel,
    w: &CriticWeights,
    w_prev: &CriticWeights,
    x_next: &CartState,
    x: &CartState,
    params: &ConstraintParams,
) -> ConstraintEval {
    constraint_rows(model, w, w_prev, &model.point(x_next), &model.point(x), params)
}

/// One stored transition with cached critic points. `step_cost` is the cost
/// charged for the transition, already multiplied by `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x: CartState,
    pub u: CartAction,
    pub step_cost: f64,
    pub next: CartState,
    pub x_point: CriticPoint,
    pub next_point: CriticPoint,
}

impl Transition {
    pub fn new(model: &CriticModel, x: CartState, u: CartAction, step_cost: f64, next: CartState) -> Self {
        Self {
            x,
            u,
            step_cost,
            next,
            x_point: model.point(&x),
            next_point: model.point(&next),
        }
    }
}

/// Ring buffer of the last `capacity` transitions, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "replay capacity must be at least 1");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn latest(&self) -> Option<&Transition> {
        self.items.back()
    }
}

/// `δ r(x, u) + Ĵ^{w}(x + δ f(x, u))`.
pub fn actor_objective(
    model: &CriticModel,
    w: &CriticWeights,
    x: &CartState,
    u: &CartAction,
    cost: &RunningCostSpec,
    delta: f64,
) -> f64 {
    delta * cost.cost_from_error(x, u) + model.eval(w, &cart_euler(x, u, delta))
}

/// `Σ_j (Ĵʷ(x_j) − c_j − γ Ĵ^{w_k}(x′_j))²` over the replay buffer.
pub fn critic_td_loss(
    model: &CriticModel,
    w: &CriticWeights,
    replay: &ReplayBuffer,
    w_k: &CriticWeights,
    gamma: f64,
) -> f64 {
    replay
        .iter()
        .map(|t| {
            let e = model.eval_at(w, &t.x_point) - t.step_cost - gamma * model.eval_at(w_k, &t.next_point);
            e * e
        })
        .sum()
}

/// `loss + β ‖w − w_anchor‖²`.
pub fn regularized(loss: f64, w: &CriticWeights, w_anchor: &CriticWeights, beta: f64) -> f64 {
    if beta == 0.0 {
        loss
    } else {
        loss + beta * w.distance_sq(w_anchor)
    }
}
