//! Bounded disturbance processes.
//!
//! Each component of the process lives in `(-1, 1)` (sine-Wiener: `[-1, 1]`)
//! and is scaled by `amplitude` on output. The SDE-based models are advanced
//! with Euler–Maruyama and clamped to `[-1 + ϵ_b, 1 - ϵ_b]`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Clamp margin keeping the SDE states strictly inside the unit interval.
pub const BOUNDARY_MARGIN: f64 = 1e-9;
/// Margin on the KS tangent argument.
const TAN_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    None,
    /// `sin(√(2/τ_a) B_t)` for a standard Brownian motion `B`.
    SineWiener { tau_a: f64 },
    /// Doering–Cai–Lin: `dZ = −Z/b1 dt + √((1−Z²)/(b1(b2+1))) dB`.
    Dcl { b1: f64, b2: f64 },
    /// Tsallis–Stariolo–Borland: `dZ = −Z/(b1(1−Z²)) dt + √((1−b2)/b1) dB`.
    Tsb { b1: f64, b2: f64 },
    /// Kessler–Sørensen: `dZ = −b3/(π b1) tan(πZ/2) dt + 2/(π√(b1(b2+1))) dB`,
    /// with `b3 = (2 b2 + 1)/(b2 + 1)`.
    Ks { b1: f64, b2: f64 },
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::SineWiener { .. } => "sine_wiener",
            Self::Dcl { .. } => "dcl",
            Self::Tsb { .. } => "tsb",
            Self::Ks { .. } => "ks",
        }
    }

    fn validate(&self) -> Result<(), NoiseError> {
        let bad = |msg: String| Err(NoiseError::InvalidParameter(msg));
        match *self {
            Self::None => Ok(()),
            Self::SineWiener { tau_a } if !(tau_a > 0.0) => bad(format!("tau_a must be positive, got {tau_a}")),
            Self::Dcl { b1, .. } | Self::Tsb { b1, .. } | Self::Ks { b1, .. } if !(b1 > 0.0) => {
                bad(format!("b1 must be positive, got {b1}"))
            }
            Self::Dcl { b2, .. } if !(b2 > -1.0) => bad(format!("DCL requires b2 > -1, got {b2}")),
            Self::Tsb { b2, .. } if !(b2 < 1.0) => bad(format!("TSB requires b2 < 1, got {b2}")),
            Self::Ks { b2, .. } if !(b2 >= 0.0) => bad(format!("KS requires b2 >= 0, got {b2}")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("invalid noise parameter: {0}")]
    InvalidParameter(String),
}

/// A vector of independent bounded noise components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProcess {
    kind: NoiseKind,
    amplitude: f64,
    state: Vec<f64>,
    /// Brownian accumulator, used by the sine-Wiener model only.
    brownian: Vec<f64>,
}

impl NoiseProcess {
    pub fn new(kind: NoiseKind, dim: usize, amplitude: f64) -> Result<Self, NoiseError> {
        kind.validate()?;
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(NoiseError::InvalidParameter(format!(
                "amplitude must be finite and non-negative, got {amplitude}"
            )));
        }
        Ok(Self {
            kind,
            amplitude,
            state: vec![0.0; dim],
            brownian: vec![0.0; dim],
        })
    }

    pub fn none(dim: usize) -> Self {
        Self::new(NoiseKind::None, dim, 0.0).expect("valid")
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn dim(&self) -> usize {
        self.state.len()
    }

    /// Unscaled process state `Z'`.
    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Overwrites the unscaled state (clamped to the admissible range).
    pub fn set_state(&mut self, state: &[f64]) {
        let lim = self.limit();
        for (s, v) in self.state.iter_mut().zip(state) {
            *s = v.clamp(-lim, lim);
        }
    }

    /// Same process, restarted from zero.
    pub fn fresh(&self) -> Self {
        Self {
            state: vec![0.0; self.state.len()],
            brownian: vec![0.0; self.state.len()],
            ..*self
        }
    }

    fn limit(&self) -> f64 {
        match self.kind {
            NoiseKind::SineWiener { .. } => 1.0,
            _ => 1.0 - BOUNDARY_MARGIN,
        }
    }

    /// `amplitude · Z'`.
    pub fn current_value(&self) -> Vec<f64> {
        self.state.iter().map(|z| self.amplitude * z).collect()
    }

    /// One Euler–Maruyama step of length `dt`.
    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        debug_assert!(dt > 0.0);
        let sqrt_dt = dt.sqrt();
        let hi = 1.0 - BOUNDARY_MARGIN;
        match self.kind {
            NoiseKind::None => {}
            NoiseKind::SineWiener { tau_a } => {
                let scale = (2.0 / tau_a).sqrt();
                for (b, z) in self.brownian.iter_mut().zip(self.state.iter_mut()) {
                    let g: f64 = rng.sample(StandardNormal);
                    *b += sqrt_dt * g;
                    *z = (scale * *b).sin();
                }
            }
            NoiseKind::Dcl { b1, b2 } => {
                for z in self.state.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    let drift = -*z / b1;
                    let diffusion = ((1.0 - *z * *z).max(0.0) / (b1 * (b2 + 1.0))).sqrt();
                    *z = (*z + drift * dt + diffusion * sqrt_dt * g).clamp(-hi, hi);
                }
            }
            NoiseKind::Tsb { b1, b2 } => {
                let diffusion = ((1.0 - b2) / b1).sqrt();
                for z in self.state.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    let drift = -*z / (b1 * (1.0 - *z * *z));
                    *z = (*z + drift * dt + diffusion * sqrt_dt * g).clamp(-hi, hi);
                }
            }
            NoiseKind::Ks { b1, b2 } => {
                let b3 = (2.0 * b2 + 1.0) / (b2 + 1.0);
                let diffusion = 2.0 / (PI * (b1 * (b2 + 1.0)).sqrt());
                for z in self.state.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    let arg = (FRAC_PI_2 * *z).clamp(-(FRAC_PI_2 - TAN_MARGIN), FRAC_PI_2 - TAN_MARGIN);
                    let drift = -b3 / (PI * b1) * arg.tan();
                    *z = (*z + drift * dt + diffusion * sqrt_dt * g).clamp(-hi, hi);
                }
            }
        }
    }
}

/// Free-function form of [`NoiseProcess::step`] returning the advanced process.
pub fn step_noise<R: Rng + ?Sized>(mut p: NoiseProcess, dt: f64, rng: &mut R) -> NoiseProcess {
    p.step(dt, rng);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn none_stays_zero() {
        let mut p = NoiseProcess::new(NoiseKind::None, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            p.step(0.01, &mut rng);
        }
        assert_eq!(p.current_value(), vec![0.0, 0.0]);
    }

    #[test]
    fn parameter_validation() {
        assert!(NoiseProcess::new(NoiseKind::Dcl { b1: 0.0, b2: 0.0 }, 1, 1.0).is_err());
        assert!(NoiseProcess::new(NoiseKind::Dcl { b1: 1.0, b2: -1.0 }, 1, 1.0).is_err());
        assert!(NoiseProcess::new(NoiseKind::Tsb { b1: 1.0, b2: 1.0 }, 1, 1.0).is_err());
        assert!(NoiseProcess::new(NoiseKind::Ks { b1: 1.0, b2: -0.1 }, 1, 1.0).is_err());
        assert!(NoiseProcess::new(NoiseKind::SineWiener { tau_a: 0.0 }, 1, 1.0).is_err());
        assert!(NoiseProcess::new(NoiseKind::Dcl { b1: 1.0, b2: 0.0 }, 1, -0.1).is_err());
        assert!(NoiseProcess::new(NoiseKind::Ks { b1: 2.0, b2: 0.0 }, 1, 0.1).is_ok());
    }

    #[test]
    fn amplitude_scales_output() {
        let mut p = NoiseProcess::new(NoiseKind::Dcl { b1: 1.0, b2: 0.0 }, 1, 0.0).unwrap();
        p.set_state(&[0.7]);
        assert_eq!(p.current_value(), vec![0.0]);
        let mut q = NoiseProcess::new(NoiseKind::Dcl { b1: 1.0, b2: 0.0 }, 1, 0.2).unwrap();
        q.set_state(&[1.0]);
        assert!((q.current_value()[0] - 0.2).abs() < 1e-9);
        assert!(q.current_value()[0] < 0.2);
    }

    #[test]
    fn amplitude_acts_linearly_for_same_seed() {
        let run = |amp: f64| {
            let mut p = NoiseProcess::new(NoiseKind::Tsb { b1: 0.5, b2: 0.2 }, 3, amp).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut out = Vec::new();
            for _ in 0..500 {
                p.step(1e-2, &mut rng);
                out.push(p.current_value());
            }
            out
        };
        let a = run(0.1);
        let b = run(0.3);
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.iter().zip(y) {
                assert!((3.0 * u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_wiener_bounded() {
        let mut p = NoiseProcess::new(NoiseKind::SineWiener { tau_a: 0.3 }, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            p.step(1e-2, &mut rng);
            assert!(p.current_value().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn dcl_long_run_mean_near_zero() {
        let mut p = NoiseProcess::new(NoiseKind::Dcl { b1: 1.0, b2: 0.0 }, 1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut sum = 0.0;
        let n = 1_000_000;
        for _ in 0..n {
            p.step(1e-3, &mut rng);
            sum += p.current_value()[0];
        }
        let mean = sum / n as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn step_noise_matches_method() {
        let p = NoiseProcess::new(NoiseKind::Ks { b1: 1.0, b2: 0.5 }, 2, 1.0).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(8);
        let mut r2 = ChaCha8Rng::seed_from_u64(8);
        let mut q = p.clone();
        q.step(0.01, &mut r1);
        assert_eq!(step_noise(p, 0.01, &mut r2), q);
    }
}
