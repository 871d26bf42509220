//! Sample-and-hold simulation of online reinforcement-learning agents whose
//! critic is constrained to behave as a Lyapunov function.
//!
//! The crate is organised bottom-up:
//!
//! * [`sim`]: the sample-and-hold integrator, Euler predictor and cost integral.
//! * [`noise`]: bounded stochastic disturbance processes.
//! * [`systems`]: the kinematic cart, the nonholonomic integrator and the
//!   quadratic running cost.
//! * [`lyapunov`]: the nonholonomic-integrator Lyapunov function, its
//!   class-K∞ sandwich bounds and the nominal parking policy.
//! * [`critic`]: critic model, stabilizing constraints and losses.
//! * [`optimize`]: box-constrained Nelder–Mead with a penalty/check wrapper.
//! * [`agents`]: the constrained agents and their baselines.
//! * [`verify`]: Lipschitz estimation and post-hoc audits over run logs.
//! * [`harness`]: experiment configuration, batch runner, statistics and plots.

pub mod agents;
pub mod critic;
pub mod harness;
pub mod lyapunov;
pub mod noise;
pub mod optimize;
pub mod sim;
pub mod systems;
pub mod verify;

pub use agents::{Agent, AgentConfig, AgentKind};
pub use critic::{CriticModel, CriticWeights};
pub use harness::{ExperimentConfig, RunSummary};
pub use lyapunov::{KappaFunction, LyapunovSpec, NominalPolicy};
pub use noise::{NoiseKind, NoiseProcess};
pub use sim::{Action, ActionBox, SamplingConfig, State, Trajectory};
pub use systems::{CartAction, CartState, RunningCostSpec};
