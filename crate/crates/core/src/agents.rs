//! Agents driven by the sample-and-hold loop: three constrained critic
//! agents and two baselines.
//!
//! Every agent works on the target-frame error `e = x.relative_to(target)`
//! and is called once per sampling instant. Costs entering the losses are
//! multiplied by `δ` (and by `cost_scale`).

use std::cell::RefCell;
use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{
    constraint_rows, critic_td_loss, regularized, ConstraintEval, ConstraintParams, CriticModel, CriticPoint,
    CriticWeights, ReplayBuffer, Transition, CONSTRAINT_TOL,
};
use crate::lyapunov::{lyapunov_cart, LyapunovSpec, NominalPolicy};
use crate::noise::NoiseProcess;
use crate::optimize::{solve_box, solve_constrained, Bounds, SolveBudget};
use crate::sim::{Controller, Decision, LipschitzEstimates, State, StepAnnotation};
use crate::systems::{cart_dynamics, cart_euler, CartAction, CartLimits, CartState, RunningCostSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("unknown agent kind '{0}'")]
    UnknownKind(String),
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("decay profile is empty")]
    EmptyProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    CalfSarsa,
    CalfActorCritic { n_mc: usize },
    CalfFallback,
    NominalOnly,
    UnconstrainedAc,
}

impl AgentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CalfSarsa => "calf_sarsa",
            Self::CalfActorCritic { .. } => "calf_ac",
            Self::CalfFallback => "calf_fallback",
            Self::NominalOnly => "nominal",
            Self::UnconstrainedAc => "unconstrained_ac",
        }
    }

    /// Parses a kind name; `n_mc` is used for the actor-critic.
    pub fn parse(s: &str, n_mc: usize) -> Result<Self, AgentError> {
        match s.trim() {
            "calf_sarsa" => Ok(Self::CalfSarsa),
            "calf_ac" | "calf_actor_critic" => {
                if n_mc == 0 {
                    Err(AgentError::InvalidConfig("n_mc must be at least 1".into()))
                } else {
                    Ok(Self::CalfActorCritic { n_mc })
                }
            }
            "calf_fallback" => Ok(Self::CalfFallback),
            "nominal" | "nominal_only" => Ok(Self::NominalOnly),
            "unconstrained_ac" => Ok(Self::UnconstrainedAc),
            other => Err(AgentError::UnknownKind(other.to_string())),
        }
    }

    /// Agents that impose the stabilizing constraints.
    pub fn is_calf(&self) -> bool {
        matches!(self, Self::CalfSarsa | Self::CalfActorCritic { .. } | Self::CalfFallback)
    }
}

/// Behaviour inside the core ball, where the constraints are suspended.
///
/// `Hold` and `Learn` keep the law that acted last outside the core: the
/// greedy actor after an accepted step, the nominal policy after a fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CoreLaw {
    /// Nominal policy.
    Nominal,
    /// Held law with the critic frozen.
    Hold,
    /// Held law with unconstrained critic updates.
    #[default]
    Learn,
}

impl CoreLaw {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Nominal => "nominal",
            Self::Hold => "hold",
            Self::Learn => "learn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nominal" => Some(Self::Nominal),
            "hold" => Some(Self::Hold),
            "learn" => Some(Self::Learn),
            _ => None,
        }
    }
}

/// Tunables of an agent. Problem data (critic model, constraint parameters,
/// core radius, cost and nominal policy) come in an [`AgentSetup`].
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    /// What the CALF agents do inside the core ball.
    pub core_law: CoreLaw,
    pub kind: AgentKind,
    pub zeta: f64,
    /// Initial critic weights; `None` selects `w#_ζ`.
    pub initial_weights: Option<CriticWeights>,
    pub replay_size: usize,
    pub beta: f64,
    pub gamma: f64,
    pub cost_scale: f64,
    pub actor_budget: SolveBudget,
    pub critic_budget: SolveBudget,
    pub action_grid: usize,
    /// Noise model the actor-critic draws its Monte-Carlo samples from.
    pub mc_noise: NoiseProcess,
    pub noise_gain: f64,
    pub substeps: usize,
    pub seed: u64,
}

impl AgentConfig {
    pub fn new(kind: AgentKind) -> Self {
        Self {
            kind,
            core_law: CoreLaw::default(),
            zeta: 1.0,
            initial_weights: None,
            replay_size: 10,
            beta: 0.0,
            gamma: 1.0,
            cost_scale: 1.0,
            actor_budget: SolveBudget {
                max_evals: 120,
                restarts: 2,
                ..SolveBudget::default()
            },
            critic_budget: SolveBudget {
                max_evals: 600,
                restarts: 2,
                ..SolveBudget::default()
            },
            action_grid: NominalPolicy::DEFAULT_GRID,
            mc_noise: NoiseProcess::none(3),
            noise_gain: 1.0,
            substeps: 10,
            seed: 0,
        }
    }

    /// Sets both solver budgets to `max_evals` evaluations.
    pub fn with_budget(mut self, max_evals: usize) -> Self {
        self.actor_budget.max_evals = max_evals;
        self.critic_budget.max_evals = max_evals;
        self
    }

    fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if !(self.zeta > 0.0) {
            return bad("zeta must be positive");
        }
        if self.replay_size == 0 {
            return bad("replay size must be at least 1");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.cost_scale > 0.0) {
            return bad("cost_scale must be positive");
        }
        if self.action_grid < 2 {
            return bad("action grid needs at least 2 points per axis");
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1");
        }
        if let AgentKind::CalfActorCritic { n_mc: 0 } = self.kind {
            return bad("n_mc must be at least 1");
        }
        Ok(())
    }
}

/// Problem data shared by all agents of one configuration and target.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSetup {
    pub model: CriticModel,
    pub params: ConstraintParams,
    pub core_radius: f64,
    /// Unscaled running cost; its target defines the error frame.
    pub cost: RunningCostSpec,
    pub nominal: NominalPolicy,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub accepted_updates: usize,
    pub fallback_invocations: usize,
    pub constraint_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub w_k: CriticWeights,
    /// Last pair `(w, x)` whose constraints were verified.
    pub prev_admissible: (CriticWeights, CartState),
    pub replay: ReplayBuffer,
    /// Cost accumulated since the last accepted critic update (already
    /// multiplied by `δ`).
    pub r_prev: f64,
    pub counters: Counters,
    pub core_ball_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckKind {
    /// Joint actor solve: `G(w, w_k, Λ_u(x_k), x_k)`.
    Actor,
    /// Critic solve after observing `x_{k+1}`: `G(w, w_k, x_{k+1}, x_k)`.
    Critic,
    /// Stabilizing-policy-only critic solve: decay against `Ĵ^{w_prev}(x_prev)`
    /// plus the sandwich at `x_k`.
    Fallback,
}

/// Inputs and outcome of one constrained solve, enough to re-evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub kind: CheckKind,
    pub w: CriticWeights,
    pub w_prev: CriticWeights,
    /// `x_k` for actor/critic checks, `x_prev` for fallback checks.
    pub x: CartState,
    /// The next state used (`Λ_u(x_k)`, `x_{k+1}`, or `x_k` for fallback).
    pub x_next: CartState,
    pub rows: [f64; 5],
    pub accepted: bool,
}

/// Re-evaluates a logged check from its inputs.
pub fn evaluate_check(model: &CriticModel, params: &ConstraintParams, c: &ConstraintCheck) -> ConstraintEval {
    match c.kind {
        CheckKind::Actor | CheckKind::Critic => {
            constraint_rows(model, &c.w, &c.w_prev, &model.point(&c.x_next), &model.point(&c.x), params)
        }
        CheckKind::Fallback => {
            let j_ref = model.eval(&c.w_prev, &c.x);
            fallback_rows(model, params, &c.w, &model.point(&c.x_next), j_ref)
        }
    }
}

fn fallback_rows(model: &CriticModel, params: &ConstraintParams, w: &CriticWeights, p: &CriticPoint, j_ref: f64) -> ConstraintEval {
    let j = model.eval_at(w, p);
    let b = model.bounds();
    ConstraintEval {
        rows: [
            f64::NAN,
            f64::NAN,
            j - j_ref + params.delta * params.nu_bar,
            b.low.eval(p.norm) - j,
            j - b.up.eval(p.norm),
        ],
    }
}

/// Per-sampling-instant log used by the audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: CartState,
    pub action: CartAction,
    pub in_core: bool,
    pub fallback: bool,
    /// Critic weights in force when the action was chosen.
    pub weights: CriticWeights,
    pub checks: Vec<ConstraintCheck>,
    /// `Ĵ^{w_prev}(x_prev)` after this step (stabilizing-policy-only agent).
    pub j_circ: f64,
    pub critic_value: f64,
    pub lyapunov_value: f64,
}

pub struct Agent {
    config: AgentConfig,
    setup: AgentSetup,
    cost: RunningCostSpec,
    bounds: Bounds,
    weight_bounds: Bounds,
    state: AgentState,
    rng: ChaCha8Rng,
    /// Previous `(x, u, δ·r)`, pending its observed successor.
    last: Option<(CartState, CartAction, f64)>,
    /// Persistent noise paths for the Monte-Carlo expectation.
    noise_bank: Vec<NoiseProcess>,
    /// Replay of the actor-critic: `(x point, δ·r, sampled next points)`.
    mc_replay: VecDeque<(CriticPoint, f64, Vec<CriticPoint>)>,
    /// The last action outside the core was the critic's, not the nominal's.
    greedy_law: bool,
    records: Vec<StepRecord>,
}

impl Agent {
    pub fn new(config: AgentConfig, setup: AgentSetup) -> Result<Self, AgentError> {
        config.validate()?;
        let wb = *setup.model.weight_box();
        let w0 = config
            .initial_weights
            .clone()
            .unwrap_or_else(|| CriticWeights::structural(config.zeta));
        if !wb.contains(&w0) {
            return Err(AgentError::InvalidConfig(format!("initial weights {w0:?} lie outside the weight box")));
        }
        let limits = setup.nominal.limits();
        let bounds = Bounds::new(vec![-limits.v_max, -limits.omega_max], vec![limits.v_max, limits.omega_max])
            .map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
        let weight_bounds = Bounds::new(wb.lower(), wb.upper()).map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
        let d = setup.cost.diagonal();
        let cost = RunningCostSpec::new(d.map(|h| h * config.cost_scale), setup.cost.target)
            .map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
        let n_bank = match config.kind {
            AgentKind::CalfActorCritic { n_mc } => n_mc,
            _ => 0,
        };
        let state = AgentState {
            w_k: w0.clone(),
            prev_admissible: (w0, CartState::ORIGIN),
            replay: ReplayBuffer::new(config.replay_size),
            r_prev: 0.0,
            counters: Counters::default(),
            core_ball_radius: setup.core_radius,
        };
        Ok(Self {
            noise_bank: vec![config.mc_noise.fresh(); n_bank],
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            setup,
            cost,
            bounds,
            weight_bounds,
            state,
            last: None,
            mc_replay: VecDeque::new(),
            greedy_law: false,
            records: Vec::new(),
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.config.kind
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn setup(&self) -> &AgentSetup {
        &self.setup
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn counters(&self) -> Counters {
        self.state.counters
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<StepRecord> {
        self.records
    }

    fn delta(&self) -> f64 {
        self.setup.params.delta
    }

    fn model(&self) -> &CriticModel {
        &self.setup.model
    }

    fn step_cost(&self, e: &CartState, u: &CartAction) -> f64 {
        self.delta() * self.cost.cost_from_error(e, u)
    }

    fn structural(&self) -> CriticWeights {
        CriticWeights::structural(self.config.zeta)
    }

    /// `argmin_u δ r(e, u) + mean_i Ĵ^w(Λ_u(e) + o_i)` over the action grid,
    /// polished with Nelder–Mead. `offsets` empty means the plain predictor.
    fn greedy_action(&self, e: &CartState, w: &CriticWeights, offsets: &[[f64; 3]]) -> CartAction {
        let objective = |u: &CartAction| self.actor_value(e, u, w, offsets);
        let mut best = (CartAction::ZERO, f64::INFINITY);
        for u in self.setup.nominal.candidates() {
            let v = objective(u);
            if v < best.1 {
                best = (*u, v);
            }
        }
        if self.config.actor_budget.max_evals == 0 {
            return best.0;
        }
        let mut f = |v: &[f64]| objective(&CartAction::new(v[0], v[1]));
        match solve_box(&mut f, &[best.0.u1, best.0.u2], &self.bounds, &self.config.actor_budget) {
            Ok(v) => CartAction::new(v[0], v[1]),
            Err(_) => best.0,
        }
    }

    fn actor_value(&self, e: &CartState, u: &CartAction, w: &CriticWeights, offsets: &[[f64; 3]]) -> f64 {
        let pred = cart_euler(e, u, self.delta());
        let m = self.model();
        let next = if offsets.is_empty() {
            m.eval(w, &pred)
        } else {
            offsets
                .iter()
                .map(|o| m.eval(w, &CartState::new(pred.x1 + o[0], pred.x2 + o[1], pred.x3 + o[2])))
                .sum::<f64>()
                / offsets.len() as f64
        };
        self.step_cost(e, u) + next
    }

    /// Advances the noise bank over one sampling period and returns, per
    /// path, `δ σ mean(Z′)`, the disturbance part of the next state.
    fn sample_offsets(&mut self) -> Vec<[f64; 3]> {
        let delta = self.delta();
        let dt = delta / self.config.substeps as f64;
        let gain = self.config.noise_gain;
        let mut out = Vec::with_capacity(self.noise_bank.len());
        for p in self.noise_bank.iter_mut() {
            let mut acc = [0.0; 3];
            for _ in 0..self.config.substeps {
                let z = p.current_value();
                for (a, v) in acc.iter_mut().zip(&z) {
                    *a += dt * gain * v;
                }
                p.step(dt, &mut self.rng);
            }
            out.push(acc);
        }
        if out.iter().all(|o| o.iter().all(|v| *v == 0.0)) {
            out.truncate(1);
        }
        out
    }

    /// Joint search over `(u, w)` minimising the actor objective subject to
    /// `G(w, w_k, Λ_u(e), e) ≤ 0`.
    fn constrained_actor(&mut self, e: &CartState, offsets: &[[f64; 3]]) -> (CartAction, ConstraintCheck) {
        let model = self.model().clone();
        let params = self.setup.params;
        let w_k = self.state.w_k.clone();
        let sharp = self.structural();
        let delta = self.delta();
        let p = model.point(e);
        let cache: RefCell<Option<([f64; 2], CriticPoint)>> = RefCell::new(None);
        let next_point = |u: &CartAction| -> CriticPoint {
            let key = [u.u1, u.u2];
            if let Some((k, pt)) = cache.borrow().as_ref() {
                if *k == key {
                    return *pt;
                }
            }
            let pt = model.point(&cart_euler(e, u, delta));
            *cache.borrow_mut() = Some((key, pt));
            pt
        };

        // feasible start: best grid action certified by w#
        let mut start: Option<(CartAction, f64)> = None;
        for u in self.setup.nominal.candidates() {
            let g = constraint_rows(&model, &sharp, &w_k, &next_point(u), &p, &params);
            if g.satisfied(CONSTRAINT_TOL) {
                let v = self.actor_value(e, u, &w_k, offsets);
                if start.as_ref().is_none_or(|(_, b)| v < *b) {
                    start = Some((*u, v));
                }
            }
        }
        let u0 = start.map(|s| s.0).unwrap_or_else(|| self.setup.nominal.action(e));
        let mut x0 = vec![u0.u1, u0.u2];
        x0.extend(sharp.to_vec());

        let mut lower = self.bounds.lower().to_vec();
        lower.extend_from_slice(self.weight_bounds.lower());
        let mut upper = self.bounds.upper().to_vec();
        upper.extend_from_slice(self.weight_bounds.upper());
        let joint = Bounds::new(lower, upper).expect("valid joint box");

        let beta = self.config.beta;
        let this = &*self;
        let mut objective = |v: &[f64]| {
            let u = CartAction::new(v[0], v[1]);
            let w = CriticWeights::from_slice(&v[2..]).expect("dimension");
            regularized(this.actor_value(e, &u, &w_k, offsets), &w, &w_k, beta)
        };
        let mut constraint = |v: &[f64]| {
            let u = CartAction::new(v[0], v[1]);
            let w = CriticWeights::from_slice(&v[2..]).expect("dimension");
            constraint_rows(&model, &w, &w_k, &next_point(&u), &p, &params).rows.to_vec()
        };
        let sol = solve_constrained(&mut objective, &mut constraint, &x0, &joint, &self.config.actor_budget);
        let u = CartAction::new(sol.x[0], sol.x[1]);
        let w = CriticWeights::from_slice(&sol.x[2..]).expect("dimension");
        let rows = constraint_rows(&model, &w, &w_k, &next_point(&u), &p, &params).rows;
        let check = ConstraintCheck {
            kind: CheckKind::Actor,
            w,
            w_prev: w_k,
            x: *e,
            x_next: cart_euler(e, &u, delta),
            rows,
            accepted: sol.feasible,
        };
        (u, check)
    }

    /// Constrained critic update after observing `x_next` from `x`.
    /// `loss` maps candidate weights to the TD loss.
    fn constrained_critic(
        &mut self,
        x: &CartState,
        x_next: &CartState,
        loss: &dyn Fn(&CriticWeights) -> f64,
    ) -> ConstraintCheck {
        let model = self.model().clone();
        let params = self.setup.params;
        let w_k = self.state.w_k.clone();
        let (p, pn) = (model.point(x), model.point(x_next));
        let beta = self.config.beta;
        let objective_of = |w: &CriticWeights| regularized(loss(w), w, &w_k, beta);
        let rows_of = |w: &CriticWeights| constraint_rows(&model, w, &w_k, &pn, &p, &params);
        let x0 = self.feasible_start(&[w_k.clone(), self.structural()], &|w| rows_of(w), &objective_of);
        let mut objective = |v: &[f64]| objective_of(&CriticWeights::from_slice(v).expect("dimension"));
        let mut constraint = |v: &[f64]| rows_of(&CriticWeights::from_slice(v).expect("dimension")).rows.to_vec();
        let sol = solve_constrained(&mut objective, &mut constraint, &x0.to_vec(), &self.weight_bounds, &self.config.critic_budget);
        let w = CriticWeights::from_slice(&sol.x).expect("dimension");
        ConstraintCheck {
            kind: CheckKind::Critic,
            rows: rows_of(&w).rows,
            w,
            w_prev: w_k,
            x: *x,
            x_next: *x_next,
            accepted: sol.feasible,
        }
    }

    /// Picks the feasible candidate with the lowest objective, or the first
    /// candidate when none is feasible.
    fn feasible_start(
        &self,
        candidates: &[CriticWeights],
        rows: &dyn Fn(&CriticWeights) -> ConstraintEval,
        objective: &dyn Fn(&CriticWeights) -> f64,
    ) -> CriticWeights {
        candidates
            .iter()
            .filter(|w| rows(w).satisfied(CONSTRAINT_TOL))
            .min_by(|a, b| objective(a).total_cmp(&objective(b)))
            .unwrap_or(&candidates[0])
            .clone()
    }

    fn in_core(&self, e: &CartState) -> bool {
        e.norm() <= self.state.core_ball_radius
    }

    /// Action inside the core ball.
    fn core_action(&self, e: &CartState, offsets: &[[f64; 3]]) -> CartAction {
        match self.config.core_law {
            CoreLaw::Nominal => self.setup.nominal.action(e),
            CoreLaw::Hold | CoreLaw::Learn if self.greedy_law => self.greedy_action(e, &self.state.w_k, offsets),
            CoreLaw::Hold | CoreLaw::Learn => self.setup.nominal.action(e),
        }
    }

    fn learns_in_core(&self) -> bool {
        self.config.core_law == CoreLaw::Learn
    }

    /// TD fit of the critic over the replay, no constraints.
    fn unconstrained_critic_update(&mut self) {
        let model = self.model().clone();
        let replay = self.state.replay.clone();
        let w_prev = self.state.w_k.clone();
        let (gamma, beta) = (self.config.gamma, self.config.beta);
        self.unconstrained_fit(&|w| regularized(critic_td_loss(&model, w, &replay, &w_prev, gamma), w, &w_prev, beta));
    }

    fn unconstrained_fit(&mut self, objective_of: &dyn Fn(&CriticWeights) -> f64) {
        if self.config.critic_budget.max_evals == 0 {
            return;
        }
        let mut objective = |v: &[f64]| objective_of(&CriticWeights::from_slice(v).expect("dimension"));
        if let Ok(v) = solve_box(&mut objective, &self.state.w_k.to_vec(), &self.weight_bounds, &self.config.critic_budget) {
            self.state.w_k = CriticWeights::from_slice(&v).expect("dimension");
            self.state.counters.accepted_updates += 1;
        }
    }

    fn step_sarsa(&mut self, k: usize, e: CartState) -> (CartAction, StepRecord) {
        let mut checks = Vec::new();
        if let Some((x_prev, u_prev, c_prev)) = self.last.take() {
            let t = Transition::new(self.model(), x_prev, u_prev, c_prev, e);
            self.state.replay.push(t);
            if !self.in_core(&x_prev) {
                let replay = self.state.replay.clone();
                let model = self.model().clone();
                let w_k = self.state.w_k.clone();
                let gamma = self.config.gamma;
                let check = self.constrained_critic(&x_prev, &e, &|w| critic_td_loss(&model, w, &replay, &w_k, gamma));
                self.apply_critic_check(&check, e);
                checks.push(check);
            } else if self.learns_in_core() {
                self.unconstrained_critic_update();
            }
        }
        let weights = self.state.w_k.clone();
        let (u, fallback, in_core) = if self.in_core(&e) {
            (self.core_action(&e, &[]), false, true)
        } else {
            let (u, check) = self.constrained_actor(&e, &[]);
            let ok = check.accepted;
            checks.push(check);
            self.greedy_law = ok;
            if ok {
                (u, false, false)
            } else {
                self.state.counters.fallback_invocations += 1;
                self.state.counters.constraint_violations += 1;
                (self.setup.nominal.action(&e), true, false)
            }
        };
        self.last = Some((e, u, self.step_cost(&e, &u)));
        (u, self.record(k, e, u, in_core, fallback, weights, checks, f64::NAN))
    }

    fn step_actor_critic(&mut self, k: usize, e: CartState) -> (CartAction, StepRecord) {
        let offsets = self.sample_offsets();
        let weights = self.state.w_k.clone();
        let mut checks = Vec::new();
        let in_core = self.in_core(&e);
        let mut fallback = false;
        let u = if in_core {
            let u = self.core_action(&e, &offsets);
            if !self.learns_in_core() {
                return (u, self.record(k, e, u, true, false, weights, checks, f64::NAN));
            }
            u
        } else {
            let (u, check) = self.constrained_actor(&e, &offsets);
            let accepted = check.accepted;
            self.greedy_law = accepted;
            checks.push(check);
            if accepted {
                u
            } else {
                self.state.counters.fallback_invocations += 1;
                self.state.counters.constraint_violations += 1;
                fallback = true;
                self.setup.nominal.action(&e)
            }
        };
        // critic update with the constraint at the Euler prediction of u_k
        let model = self.model().clone();
        let pred = cart_euler(&e, &u, self.delta());
        let samples: Vec<CriticPoint> = offsets
            .iter()
            .map(|o| model.point(&CartState::new(pred.x1 + o[0], pred.x2 + o[1], pred.x3 + o[2])))
            .collect();
        if self.mc_replay.len() == self.config.replay_size {
            self.mc_replay.pop_front();
        }
        self.mc_replay.push_back((model.point(&e), self.step_cost(&e, &u), samples));
        let replay = self.mc_replay.clone();
        let w_k = self.state.w_k.clone();
        let gamma = self.config.gamma;
        let loss = move |w: &CriticWeights| -> f64 {
            replay
                .iter()
                .map(|(p, c, next)| {
                    let target = next.iter().map(|q| model.eval_at(&w_k, q)).sum::<f64>() / next.len() as f64;
                    let r = model.eval_at(w, p) - c - gamma * target;
                    r * r
                })
                .sum()
        };
        if in_core {
            self.unconstrained_fit(&loss);
        } else {
            let check = self.constrained_critic(&e, &pred, &loss);
            self.apply_critic_check(&check, e);
            checks.push(check);
        }
        (u, self.record(k, e, u, in_core, fallback, weights, checks, f64::NAN))
    }

    fn apply_critic_check(&mut self, check: &ConstraintCheck, x_next: CartState) {
        if check.accepted {
            self.state.w_k = check.w.clone();
            self.state.prev_admissible = (check.w.clone(), x_next);
            self.state.counters.accepted_updates += 1;
        } else {
            self.state.counters.constraint_violations += 1;
        }
    }

    fn j_circ(&self) -> f64 {
        let (w, x) = &self.state.prev_admissible;
        self.model().eval(w, x)
    }

    fn step_fallback(&mut self, k: usize, e: CartState) -> (CartAction, StepRecord) {
        let mut checks = Vec::new();
        if k == 0 || self.last.is_none() {
            let u = self.setup.nominal.action(&e);
            let w = self.state.w_k.clone();
            self.state.prev_admissible = (w.clone(), e);
            self.state.r_prev = self.step_cost(&e, &u);
            self.state.counters.fallback_invocations += 1;
            self.last = Some((e, u, self.state.r_prev));
            let jc = self.j_circ();
            return (u, self.record(k, e, u, self.in_core(&e), true, w, checks, jc));
        }
        let (x_last, u_last, _) = self.last.take().expect("checked above");
        if self.in_core(&e) {
            if self.learns_in_core() {
                let model = self.model().clone();
                self.state
                    .replay
                    .push(Transition::new(&model, x_last, u_last, self.state.r_prev, e));
                self.unconstrained_critic_update();
            }
            let u = self.core_action(&e, &[]);
            if self.learns_in_core() {
                self.state.r_prev = self.step_cost(&e, &u);
            } else {
                self.state.r_prev += self.step_cost(&e, &u);
            }
            self.last = Some((e, u, 0.0));
            let (w, jc) = (self.state.w_k.clone(), self.j_circ());
            return (u, self.record(k, e, u, true, false, w, checks, jc));
        }

        let model = self.model().clone();
        let params = self.setup.params;
        let (w_prev, x_prev) = self.state.prev_admissible.clone();
        let j_ref = model.eval(&w_prev, &x_prev);
        // TD tuple (x_{k-1}, r_prev, x_k) judged against w_prev
        self.state
            .replay
            .push(Transition::new(&model, x_last, u_last, self.state.r_prev, e));
        let replay = self.state.replay.clone();
        let gamma = self.config.gamma;
        let beta = self.config.beta;
        let pk = model.point(&e);
        let objective_of = |w: &CriticWeights| regularized(critic_td_loss(&model, w, &replay, &w_prev, gamma), w, &w_prev, beta);
        let rows_of = |w: &CriticWeights| fallback_rows(&model, &params, w, &pk, j_ref);
        let x0 = self.feasible_start(&[w_prev.clone(), self.structural()], &|w| rows_of(w), &objective_of);
        let mut objective = |v: &[f64]| objective_of(&CriticWeights::from_slice(v).expect("dimension"));
        let mut constraint = |v: &[f64]| rows_of(&CriticWeights::from_slice(v).expect("dimension")).rows[2..].to_vec();
        let sol = solve_constrained(&mut objective, &mut constraint, &x0.to_vec(), &self.weight_bounds, &self.config.critic_budget);
        let w_star = CriticWeights::from_slice(&sol.x).expect("dimension");
        checks.push(ConstraintCheck {
            kind: CheckKind::Fallback,
            rows: rows_of(&w_star).rows,
            w: w_star.clone(),
            w_prev: w_prev.clone(),
            x: x_prev,
            x_next: e,
            accepted: sol.feasible,
        });

        self.greedy_law = sol.feasible;
        let (u, fallback, weights) = if sol.feasible {
            self.state.w_k = w_star.clone();
            self.state.counters.accepted_updates += 1;
            let u = self.greedy_action(&e, &w_star, &[]);
            self.state.prev_admissible = (w_star.clone(), e);
            self.state.r_prev = self.step_cost(&e, &u);
            (u, false, w_star)
        } else {
            self.state.counters.constraint_violations += 1;
            self.state.counters.fallback_invocations += 1;
            let u = self.setup.nominal.action(&e);
            self.state.r_prev += self.step_cost(&e, &u);
            (u, true, self.state.w_k.clone())
        };
        self.last = Some((e, u, 0.0));
        let jc = self.j_circ();
        (u, self.record(k, e, u, false, fallback, weights, checks, jc))
    }

    fn step_unconstrained(&mut self, k: usize, e: CartState) -> (CartAction, StepRecord) {
        if let Some((x_last, u_last, c_last)) = self.last.take() {
            let model = self.model().clone();
            self.state.replay.push(Transition::new(&model, x_last, u_last, c_last, e));
            self.unconstrained_critic_update();
        }
        let w = self.state.w_k.clone();
        let u = self.greedy_action(&e, &w, &[]);
        self.last = Some((e, u, self.step_cost(&e, &u)));
        (u, self.record(k, e, u, false, false, w, Vec::new(), f64::NAN))
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        k: usize,
        x: CartState,
        action: CartAction,
        in_core: bool,
        fallback: bool,
        weights: CriticWeights,
        checks: Vec<ConstraintCheck>,
        j_circ: f64,
    ) -> StepRecord {
        let m = self.model();
        StepRecord {
            k,
            x,
            action,
            in_core,
            fallback,
            critic_value: m.eval(&self.state.w_k, &x),
            lyapunov_value: m.lyapunov(&x),
            weights,
            checks,
            j_circ,
        }
    }

    /// Chooses the action for the error state `e` at sampling step `k`.
    pub fn act(&mut self, k: usize, e: CartState) -> CartAction {
        let (u, rec) = match self.config.kind {
            AgentKind::NominalOnly => {
                let u = self.setup.nominal.action(&e);
                let w = self.state.w_k.clone();
                (u, self.record(k, e, u, false, false, w, Vec::new(), f64::NAN))
            }
            AgentKind::CalfSarsa => self.step_sarsa(k, e),
            AgentKind::CalfActorCritic { .. } => self.step_actor_critic(k, e),
            AgentKind::CalfFallback => self.step_fallback(k, e),
            AgentKind::UnconstrainedAc => self.step_unconstrained(k, e),
        };
        self.records.push(rec);
        u
    }

    fn annotation(&self, rec: &StepRecord) -> StepAnnotation {
        let check = rec.checks.iter().rev().find(|c| c.kind != CheckKind::Critic).or(rec.checks.last());
        StepAnnotation {
            critic_value: rec.critic_value,
            lyapunov_value: rec.lyapunov_value,
            constraints: check.map(|c| c.rows).unwrap_or([f64::NAN; 5]),
            constraint_ok: check.is_some_and(|c| c.accepted),
            fallback: rec.fallback,
        }
    }
}

impl Controller for Agent {
    fn decide(&mut self, step: usize, x: &State) -> Decision {
        let world = CartState::from_state(x);
        let e = world.relative_to(&self.setup.cost.target);
        let u = self.act(step, e);
        let annotation = self.annotation(self.records.last().expect("act pushes a record"));
        let limits = self.setup.nominal.limits();
        Decision {
            action: limits.clamp(u).to_action(&limits.action_box()),
            annotation,
        }
    }
}

/// Worst-case one-step decay rate of `L` under the nominal policy on radial
/// shells: `ν(x) = (L(x) − L(x⁺))/δ` with `x⁺` the noiseless sample-and-hold
/// successor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuProfile {
    pub radii: Vec<f64>,
    pub worst: Vec<f64>,
}

/// Samples `per_shell` random directions on each shell `radii[i]`.
pub fn sample_nu_profile(
    nominal: &NominalPolicy,
    spec: &LyapunovSpec,
    radii: &[f64],
    per_shell: usize,
    substeps: usize,
    seed: u64,
) -> NuProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = nominal.delta();
    let dt = delta / substeps.max(1) as f64;
    let worst = radii
        .iter()
        .map(|&r| {
            let mut w = f64::INFINITY;
            let mut n = 0;
            while n < per_shell {
                let d: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if !(len > 1e-9 && len <= 1.0) {
                    continue;
                }
                let x = CartState::new(r * d[0] / len, r * d[1] / len, r * d[2] / len);
                if x.x3.abs() > std::f64::consts::PI {
                    continue;
                }
                n += 1;
                let u = nominal.action(&x);
                let mut y = x;
                for _ in 0..substeps.max(1) {
                    let f = cart_dynamics(&y, &u);
                    y = CartState::new(y.x1 + dt * f[0], y.x2 + dt * f[1], y.x3 + dt * f[2]);
                }
                w = w.min((lyapunov_cart(&x, spec) - lyapunov_cart(&y, spec)) / delta);
            }
            w
        })
        .collect();
    NuProfile {
        radii: radii.to_vec(),
        worst,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreRadius {
    pub radius: f64,
    /// The threshold was never exceeded; `radius` is the outermost shell.
    pub saturated: bool,
    pub threshold: f64,
}

/// Default lower limit on the core radius (m).
pub const CORE_RADIUS_FLOOR: f64 = 0.05;

/// Smallest radius `s` with `inf_{‖x‖ ≥ s} ν(x)` above both
/// `6 lip_Ĵ σ_max lip_Z` and `required`, read off the profile by linear
/// interpolation between shells and never below `floor`.
///
/// `required` is the nominal decay rate the constraints ask for; with a
/// critic `ζL` and decay margin `ν̄` it is `4ν̄/(3ζ)`.
pub fn estimate_core_radius(
    est: &LipschitzEstimates,
    profile: &NuProfile,
    required: f64,
    floor: f64,
) -> Result<CoreRadius, AgentError> {
    if profile.radii.is_empty() || profile.radii.len() != profile.worst.len() {
        return Err(AgentError::EmptyProfile);
    }
    let threshold = (6.0 * est.lip_j * est.sigma_max * est.lip_z).max(required);
    if !(threshold > 0.0) {
        return Ok(CoreRadius {
            radius: floor,
            saturated: false,
            threshold,
        });
    }
    let n = profile.radii.len();
    let mut suffix = vec![f64::INFINITY; n];
    let mut m = f64::INFINITY;
    for i in (0..n).rev() {
        m = m.min(profile.worst[i]);
        suffix[i] = m;
    }
    let Some(i) = (0..n).find(|&i| suffix[i] > threshold) else {
        log::warn!("decay rate never exceeds {threshold:.4}; core radius saturated at the outermost shell");
        return Ok(CoreRadius {
            radius: profile.radii[n - 1].max(floor),
            saturated: true,
            threshold,
        });
    };
    let s = if i == 0 {
        profile.radii[0]
    } else {
        let (r0, r1) = (profile.radii[i - 1], profile.radii[i]);
        let (v0, v1) = (suffix[i - 1], suffix[i]);
        if v1 > v0 {
            r0 + (threshold - v0) / (v1 - v0) * (r1 - r0)
        } else {
            r1
        }
    };
    Ok(CoreRadius {
        radius: s.max(floor),
        saturated: false,
        threshold,
    })
}

/// Default limits re-exported for configuration code.
pub fn default_limits() -> CartLimits {
    CartLimits::default()
}
