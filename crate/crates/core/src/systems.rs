//! Kinematic cart, nonholonomic integrator and the quadratic running cost.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::sim::{Action, ActionBox, Dynamics, State};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = (angle + PI).rem_euclid(2.0 * PI);
    if a == 0.0 {
        a = 2.0 * PI;
    }
    a - PI
}

/// Pose of the cart: planar position (m) and heading (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartState {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl CartState {
    pub const ORIGIN: CartState = CartState {
        x1: 0.0,
        x2: 0.0,
        x3: 0.0,
    };

    pub fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    pub fn wrapped(self) -> Self {
        Self {
            x3: wrap_angle(self.x3),
            ..self
        }
    }

    /// Euclidean norm of (x1, x2, wrapped x3). This is the norm used for
    /// every ball and class-K∞ bound on the cart.
    pub fn norm(&self) -> f64 {
        let h = wrap_angle(self.x3);
        (self.x1 * self.x1 + self.x2 * self.x2 + h * h).sqrt()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_state(self) -> State {
        State::new(vec![self.x1, self.x2, self.x3])
    }

    pub fn from_state(s: &State) -> Self {
        Self::from_slice(s.values())
    }

    /// Pose expressed in the frame of `target`, heading wrapped.
    pub fn relative_to(&self, target: &CartState) -> CartState {
        let (s, c) = target.x3.sin_cos();
        let dx = self.x1 - target.x1;
        let dy = self.x2 - target.x2;
        CartState::new(c * dx + s * dy, -s * dx + c * dy, wrap_angle(self.x3 - target.x3))
    }
}

/// Linear speed (m/s) and angular speed (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartAction {
    pub u1: f64,
    pub u2: f64,
}

impl CartAction {
    pub const ZERO: CartAction = CartAction { u1: 0.0, u2: 0.0 };

    pub fn new(u1: f64, u2: f64) -> Self {
        Self { u1, u2 }
    }

    pub fn norm_sq(&self) -> f64 {
        self.u1 * self.u1 + self.u2 * self.u2
    }

    pub fn to_action(self, bounds: &ActionBox) -> Action {
        Action::saturated(vec![self.u1, self.u2], bounds)
    }

    pub fn from_action(a: &Action) -> Self {
        Self::new(a.values()[0], a.values()[1])
    }
}

/// Symmetric speed limits of the cart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartLimits {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for CartLimits {
    fn default() -> Self {
        Self {
            v_max: 0.22,
            omega_max: 2.84,
        }
    }
}

impl CartLimits {
    pub fn action_box(&self) -> ActionBox {
        ActionBox::new(vec![-self.v_max, -self.omega_max], vec![self.v_max, self.omega_max])
            .expect("cart limits are positive")
    }

    pub fn clamp(&self, u: CartAction) -> CartAction {
        CartAction::new(
            u.u1.clamp(-self.v_max, self.v_max),
            u.u2.clamp(-self.omega_max, self.omega_max),
        )
    }
}

pub fn cart_dynamics(x: &CartState, u: &CartAction) -> [f64; 3] {
    let (s, c) = x.x3.sin_cos();
    [u.u1 * c, u.u1 * s, u.u2]
}

/// One explicit Euler step of the noiseless cart.
pub fn cart_euler(x: &CartState, u: &CartAction, delta: f64) -> CartState {
    let d = cart_dynamics(x, u);
    CartState::new(x.x1 + delta * d[0], x.x2 + delta * d[1], x.x3 + delta * d[2])
}

/// The cart as a [`Dynamics`] on 3-vectors with 2-vector actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct CartDynamics;

impl Dynamics for CartDynamics {
    fn state_dim(&self) -> usize {
        3
    }

    fn derivative(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let d = cart_dynamics(&CartState::from_slice(x), &CartAction::new(u[0], u[1]));
        d.to_vec()
    }
}

/// Coordinates of the nonholonomic integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NiState {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NiAction {
    pub v1: f64,
    pub v2: f64,
}

impl NiState {
    pub fn new(z1: f64, z2: f64, z3: f64) -> Self {
        Self { z1, z2, z3 }
    }
}

pub fn ni_dynamics(z: &NiState, v: &NiAction) -> [f64; 3] {
    [v.v1, v.v2, z.z1 * v.v2 - z.z2 * v.v1]
}

// The transform goes through the chained form
//   q1 = x3, q2 = x1 cos x3 + x2 sin x3, q3 = x1 sin x3 - x2 cos x3,
// with q' = (w1, w2, q2 w1), and then z3 = q1 q2 - 2 q3 turns the chained
// form into the Brockett integrator.

/// Cart pose to NI coordinates. The heading is used as given; wrap it first
/// when a canonical representative is needed.
pub fn cart_to_ni(x: &CartState) -> NiState {
    let (s, c) = x.x3.sin_cos();
    let q2 = x.x1 * c + x.x2 * s;
    let q3 = x.x1 * s - x.x2 * c;
    NiState::new(x.x3, q2, x.x3 * q2 - 2.0 * q3)
}

pub fn ni_to_cart(z: &NiState) -> CartState {
    let (s, c) = z.z1.sin_cos();
    let q2 = z.z2;
    let q3 = 0.5 * (z.z1 * z.z2 - z.z3);
    CartState::new(q2 * c + q3 * s, q2 * s - q3 * c, z.z1)
}

/// NI action that reproduces the cart motion under `u` at pose `x`.
pub fn cart_action_to_ni(x: &CartState, u: &CartAction) -> NiAction {
    let (s, c) = x.x3.sin_cos();
    let q3 = x.x1 * s - x.x2 * c;
    NiAction {
        v1: u.u2,
        v2: u.u1 - q3 * u.u2,
    }
}

pub fn ni_action_to_cart(x: &CartState, v: &NiAction) -> CartAction {
    let (s, c) = x.x3.sin_cos();
    let q3 = x.x1 * s - x.x2 * c;
    CartAction::new(v.v2 + q3 * v.v1, v.v1)
}

/// Named diagonal cost matrices over χ = (x - x*, u).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostPreset {
    H1,
    H2,
    H3,
    H4,
    H5,
}

impl CostPreset {
    pub const ALL: [CostPreset; 5] = [Self::H1, Self::H2, Self::H3, Self::H4, Self::H5];

    pub fn diagonal(self) -> [f64; 5] {
        match self {
            Self::H1 => [10.0, 10.0, 10.0, 0.0, 0.0],
            Self::H2 => [10.0, 10.0, 10.0, 1.0, 1.0],
            Self::H3 => [10.0, 10.0, 100.0, 0.0, 0.0],
            Self::H4 => [10.0, 100.0, 10.0, 0.0, 0.0],
            Self::H5 => [100.0, 10.0, 10.0, 0.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::H1 => "H1",
            Self::H2 => "H2",
            Self::H3 => "H3",
            Self::H4 => "H4",
            Self::H5 => "H5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostSpecError {
    #[error("cost weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("at least one state weight must be positive")]
    NoStateWeight,
}

/// Running cost r = χᵀ H χ with χ = (x - x*, u) and H diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningCostSpec {
    diag: [f64; 5],
    pub target: CartState,
}

impl RunningCostSpec {
    pub fn new(diag: [f64; 5], target: CartState) -> Result<Self, CostSpecError> {
        if let Some((index, &value)) = diag.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(CostSpecError::NegativeWeight { index, value });
        }
        if diag[..3].iter().all(|&v| v == 0.0) {
            return Err(CostSpecError::NoStateWeight);
        }
        Ok(Self { diag, target })
    }

    pub fn preset(p: CostPreset, target: CartState) -> Self {
        Self::new(p.diagonal(), target).expect("presets are valid")
    }

    pub fn diagonal(&self) -> [f64; 5] {
        self.diag
    }

    /// Same weights, different target.
    pub fn with_target(&self, target: CartState) -> Self {
        Self { target, ..*self }
    }

    fn quad(&self, chi: [f64; 5]) -> f64 {
        chi.iter().zip(self.diag.iter()).map(|(c, h)| h * c * c).sum()
    }

    /// Cost of the world pose `x` under action `u`.
    pub fn running_cost(&self, x: &CartState, u: &CartAction) -> f64 {
        self.quad([
            x.x1 - self.target.x1,
            x.x2 - self.target.x2,
            wrap_angle(x.x3 - self.target.x3),
            u.u1,
            u.u2,
        ])
    }

    /// Cost expressed through the target-frame error `e` (see
    /// [`CartState::relative_to`]); rotates the position error back to the
    /// world frame so the result equals [`Self::running_cost`].
    pub fn cost_from_error(&self, e: &CartState, u: &CartAction) -> f64 {
        let (s, c) = self.target.x3.sin_cos();
        self.quad([c * e.x1 - s * e.x2, s * e.x1 + c * e.x2, wrap_angle(e.x3), u.u1, u.u2])
    }
}

/// Free-function form of [`RunningCostSpec::running_cost`].
pub fn running_cost(x: &CartState, u: &CartAction, spec: &RunningCostSpec) -> f64 {
    spec.running_cost(x, u)
}
