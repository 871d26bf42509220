//! Lyapunov function of the nonholonomic integrator, its pullback to the
//! cart, class-K∞ sandwich bounds and the nominal parking policy.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::systems::{cart_euler, cart_to_ni, CartAction, CartLimits, CartState, NiState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LyapunovError {
    #[error("invalid Lyapunov specification: {0}")]
    InvalidSpec(String),
    #[error("class-K∞ function needs positive coefficient and exponent, got a={0}, p={1}")]
    InvalidKappa(f64, f64),
    #[error("degenerate calibration samples: {0}")]
    DegenerateSamples(String),
}

/// `s ↦ a·s^p` with `a, p > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaFunction {
    pub coefficient: f64,
    pub exponent: f64,
}

impl KappaFunction {
    pub fn new(coefficient: f64, exponent: f64) -> Result<Self, LyapunovError> {
        if !(coefficient > 0.0 && exponent > 0.0 && coefficient.is_finite() && exponent.is_finite()) {
            return Err(LyapunovError::InvalidKappa(coefficient, exponent));
        }
        Ok(Self {
            coefficient,
            exponent,
        })
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coefficient * s.max(0.0).powf(self.exponent)
    }

    pub fn inverse(&self, v: f64) -> f64 {
        (v.max(0.0) / self.coefficient).powf(1.0 / self.exponent)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coefficient: self.coefficient * factor,
            ..*self
        }
    }
}

/// Lower and upper class-K∞ bounds `α̂_low(‖x‖) ≤ V(x) ≤ α̂_up(‖x‖)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichBounds {
    pub low: KappaFunction,
    pub up: KappaFunction,
}

impl SandwichBounds {
    pub fn holds(&self, norm: f64, value: f64) -> bool {
        self.low.eval(norm) <= value && value <= self.up.eval(norm)
    }

    /// Bounds for `factor · V`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            low: self.low.scaled(factor),
            up: self.up.scaled(factor),
        }
    }
}

/// Safety factor applied when fitting sandwich bounds.
pub const SANDWICH_SAFETY: f64 = 1.2;

/// Number of log-spaced norm bins used to trace the envelopes.
const ENVELOPE_BINS: usize = 24;

/// Fits power-law bounds to `(‖x‖, V(x))` samples. The samples are binned
/// by `ln ‖x‖`; the lower (upper) exponent is the least-squares slope through
/// the per-bin samples with the smallest (largest) `ln V`. The coefficients are the extreme ratios
/// `V/‖x‖^p`, deflated (lower) and inflated (upper) by [`SANDWICH_SAFETY`].
pub fn sandwich_bounds(samples: &[(f64, f64)]) -> Result<SandwichBounds, LyapunovError> {
    let usable: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|(s, v)| *s > 0.0 && s.is_finite() && v.is_finite())
        .collect();
    if usable.is_empty() {
        return Err(LyapunovError::DegenerateSamples("no sample away from the origin".into()));
    }
    if let Some((s, v)) = usable.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(LyapunovError::DegenerateSamples(format!(
            "value {v} at norm {s} is not positive"
        )));
    }
    let logs: Vec<(f64, f64)> = usable.iter().map(|(s, v)| (s.ln(), v.ln())).collect();
    let (xmin, xmax) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (x, _)| (a.min(*x), b.max(*x)));
    if !(xmax - xmin > 1e-9) {
        return Err(LyapunovError::DegenerateSamples("all samples share one norm".into()));
    }
    let width = (xmax - xmin) / ENVELOPE_BINS as f64;
    // per bin: the samples attaining the smallest and the largest ln V
    let mut lows: Vec<Option<(f64, f64)>> = vec![None; ENVELOPE_BINS];
    let mut highs: Vec<Option<(f64, f64)>> = vec![None; ENVELOPE_BINS];
    for &(x, y) in &logs {
        let i = (((x - xmin) / width) as usize).min(ENVELOPE_BINS - 1);
        if lows[i].is_none_or(|(_, m)| y < m) {
            lows[i] = Some((x, y));
        }
        if highs[i].is_none_or(|(_, m)| y > m) {
            highs[i] = Some((x, y));
        }
    }
    let slope = |pts: &[(f64, f64)]| -> f64 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    };
    let lower: Vec<(f64, f64)> = lows.into_iter().flatten().collect();
    let upper: Vec<(f64, f64)> = highs.into_iter().flatten().collect();
    let (p_low, p_up) = (slope(&lower), slope(&upper));
    for p in [p_low, p_up] {
        if !(p > 0.0) {
            return Err(LyapunovError::DegenerateSamples(format!("fitted exponent {p} is not positive")));
        }
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (s, v) in &usable {
        lo = lo.min(v / s.powf(p_low));
        hi = hi.max(v / s.powf(p_up));
    }
    Ok(SandwichBounds {
        low: KappaFunction::new(lo / SANDWICH_SAFETY, p_low)?,
        up: KappaFunction::new(hi * SANDWICH_SAFETY, p_up)?,
    })
}

/// Parameters of the ζ-minimisation inside the NI Lyapunov function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovSpec {
    zeta_search_radius: f64,
    grid_points: usize,
    denominator_floor: f64,
    #[serde(skip)]
    grid: Vec<(f64, f64, f64)>,
}

impl PartialEq for LyapunovSpec {
    fn eq(&self, other: &Self) -> bool {
        self.zeta_search_radius == other.zeta_search_radius
            && self.grid_points == other.grid_points
            && self.denominator_floor == other.denominator_floor
    }
}

impl Default for LyapunovSpec {
    fn default() -> Self {
        Self::new(PI, 720, 1e-12).expect("default spec is valid")
    }
}

impl LyapunovSpec {
    pub fn new(zeta_search_radius: f64, grid_points: usize, denominator_floor: f64) -> Result<Self, LyapunovError> {
        if !(zeta_search_radius > 0.0) {
            return Err(LyapunovError::InvalidSpec("search radius must be positive".into()));
        }
        if grid_points < 3 {
            return Err(LyapunovError::InvalidSpec("need at least 3 grid points".into()));
        }
        if !(denominator_floor > 0.0) {
            return Err(LyapunovError::InvalidSpec("denominator floor must be positive".into()));
        }
        let grid = (0..grid_points)
            .map(|i| {
                let zeta = -zeta_search_radius + 2.0 * zeta_search_radius * i as f64 / (grid_points - 1) as f64;
                let (s, c) = zeta.sin_cos();
                (zeta, c, s)
            })
            .collect();
        Ok(Self {
            zeta_search_radius,
            grid_points,
            denominator_floor,
            grid,
        })
    }

    pub fn zeta_search_radius(&self) -> f64 {
        self.zeta_search_radius
    }

    pub fn grid_points(&self) -> usize {
        self.grid_points
    }

    pub fn denominator_floor(&self) -> f64 {
        self.denominator_floor
    }

    /// Rebuilds the cached trigonometric grid (needed after deserialising).
    pub fn rebuilt(&self) -> Self {
        Self::new(self.zeta_search_radius, self.grid_points, self.denominator_floor).expect("validated")
    }
}

/// The ζ-dependent fraction `|z3|³ / (z1 cos ζ + z2 sin ζ + √|z3|)²`.
fn fraction(z: &NiState, zeta: f64, floor: f64) -> f64 {
    let (s, c) = zeta.sin_cos();
    let d = z.z1 * c + z.z2 * s + z.z3.abs().sqrt();
    z.z3.abs().powi(3) / (d * d).max(floor)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// `min_ζ z1⁴ + z2⁴ + |z3|³/(z1 cos ζ + z2 sin ζ + √|z3|)²` over
/// `ζ ∈ [−ρ, ρ]`. The fraction is taken as 0 when `z3 = 0`.
///
/// Minimising the fraction means maximising the squared denominator
/// `(a cos(ζ − φ) + √|z3|)²` with `a = ‖(z1, z2)‖`, `φ = atan2(z2, z1)`. On an
/// interval its extremes sit at `φ`, `φ + π` or an endpoint, so those
/// candidates are evaluated exactly.
pub fn lyapunov_ni(z: &NiState, spec: &LyapunovSpec) -> f64 {
    let base = z.z1.powi(4) + z.z2.powi(4);
    if z.z3 == 0.0 {
        return base;
    }
    let rho = spec.zeta_search_radius;
    let root = z.z3.abs().sqrt();
    let phi = z.z2.atan2(z.z1);
    let inside = |a: f64| {
        let a = crate::systems::wrap_angle(a);
        (a.abs() <= rho).then_some(a)
    };
    let candidates = [Some(-rho), Some(rho), inside(phi), inside(phi + std::f64::consts::PI)];
    let mut best = 0.0f64;
    for zeta in candidates.into_iter().flatten() {
        let (s, c) = zeta.sin_cos();
        let d = z.z1 * c + z.z2 * s + root;
        best = best.max(d * d);
    }
    base + z.z3.abs().powi(3) / best.max(spec.denominator_floor)
}

/// Numerical form of [`lyapunov_ni`]: a uniform ζ grid followed by
/// golden-section refinement around the best grid point.
pub fn lyapunov_ni_search(z: &NiState, spec: &LyapunovSpec) -> f64 {
    let base = z.z1.powi(4) + z.z2.powi(4);
    if z.z3 == 0.0 {
        return base;
    }
    let grid = if spec.grid.len() == spec.grid_points {
        std::borrow::Cow::Borrowed(&spec.grid)
    } else {
        std::borrow::Cow::Owned(spec.rebuilt().grid)
    };
    let c3 = z.z3.abs().powi(3);
    let root = z.z3.abs().sqrt();
    let floor = spec.denominator_floor;
    let mut best_i = 0;
    let mut best_d2 = f64::NEG_INFINITY;
    for (i, &(_, c, s)) in grid.iter().enumerate() {
        let d = z.z1 * c + z.z2 * s + root;
        let d2 = (d * d).max(floor);
        if d2 > best_d2 {
            best_d2 = d2;
            best_i = i;
        }
    }
    let mut best = c3 / best_d2;

    let lo_i = best_i.saturating_sub(1);
    let hi_i = (best_i + 1).min(grid.len() - 1);
    let (mut a, mut b) = (grid[lo_i].0, grid[hi_i].0);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = fraction(z, x1, floor);
    let mut f2 = fraction(z, x2, floor);
    for _ in 0..80 {
        if b - a < 1e-13 {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = fraction(z, x1, floor);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = fraction(z, x2, floor);
        }
    }
    best = best.min(f1).min(f2);
    base + best
}

/// Lyapunov function of the cart, `L(T(x))`, with the heading wrapped first.
pub fn lyapunov_cart(x: &CartState, spec: &LyapunovSpec) -> f64 {
    lyapunov_ni(&cart_to_ni(&x.wrapped()), spec)
}

/// One-step Lyapunov descent over a uniform action grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalPolicy {
    spec: LyapunovSpec,
    limits: CartLimits,
    delta: f64,
    /// Candidate actions in tie-break order: norm, then lexicographic.
    candidates: Vec<CartAction>,
}

impl NominalPolicy {
    pub const DEFAULT_GRID: usize = 15;

    pub fn new(spec: LyapunovSpec, limits: CartLimits, delta: f64, grid: usize) -> Self {
        assert!(grid >= 2, "action grid needs at least two points per axis");
        let axis = |m: f64| -> Vec<f64> {
            (0..grid)
                .map(|i| {
                    let v = -m + 2.0 * m * i as f64 / (grid - 1) as f64;
                    if v.abs() < 1e-15 {
                        0.0
                    } else {
                        v
                    }
                })
                .collect()
        };
        let mut candidates: Vec<CartAction> = axis(limits.v_max)
            .into_iter()
            .flat_map(|u1| axis(limits.omega_max).into_iter().map(move |u2| CartAction::new(u1, u2)))
            .collect();
        candidates.sort_by(|a, b| {
            a.norm_sq()
                .total_cmp(&b.norm_sq())
                .then(a.u1.total_cmp(&b.u1))
                .then(a.u2.total_cmp(&b.u2))
        });
        Self {
            spec,
            limits,
            delta,
            candidates,
        }
    }

    pub fn spec(&self) -> &LyapunovSpec {
        &self.spec
    }

    pub fn limits(&self) -> CartLimits {
        self.limits
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn candidates(&self) -> &[CartAction] {
        &self.candidates
    }

    /// Action minimising `L(x + δ f(x, u))` over the candidate grid, for
    /// the target-frame error `e`.
    pub fn action(&self, e: &CartState) -> CartAction {
        self.action_with_value(e).0
    }

    pub fn action_with_value(&self, e: &CartState) -> (CartAction, f64) {
        let mut best = (self.candidates[0], f64::INFINITY);
        for u in &self.candidates {
            let v = lyapunov_cart(&cart_euler(e, u, self.delta), &self.spec);
            if v < best.1 {
                best = (*u, v);
            }
        }
        best
    }
}
