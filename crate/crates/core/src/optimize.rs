//! Derivative-free local solvers: Nelder–Mead restricted to a box, and a
//! penalty wrapper that checks the true constraints afterwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizeError {
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
    #[error("starting point has dimension {got}, bounds have {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("starting point lies outside the bounds")]
    OutOfBounds,
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
}

/// Closed box `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OptimizeError> {
        if lower.len() != upper.len() {
            return Err(OptimizeError::InvalidBounds("length mismatch".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(OptimizeError::InvalidBounds(format!("empty box {lower:?}..{upper:?}")));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| v >= l && v <= u)
    }

    /// Width used to scale steps; unbounded directions fall back to
    /// `max(1, |x_i|)`.
    fn scale(&self, i: usize, x: f64) -> f64 {
        let w = self.upper[i] - self.lower[i];
        if w.is_finite() {
            w
        } else {
            x.abs().max(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveBudget {
    /// Total objective evaluations over all restarts.
    pub max_evals: usize,
    pub restarts: usize,
    pub constraint_tol: f64,
    /// Seed of the restart perturbations.
    pub seed: u64,
}

impl Default for SolveBudget {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            restarts: 2,
            constraint_tol: 1e-8,
            seed: 0,
        }
    }
}

/// Relative size of the initial simplex.
const SIMPLEX_STEP: f64 = 0.1;
/// Relative radius of restart perturbations.
const RESTART_RADIUS: f64 = 0.05;
/// Penalty weights of successive stages.
const PENALTIES: [f64; 3] = [10.0, 1e3, 1e5];
/// Rows are pushed this far inside the feasible side during penalty stages.
const BACKOFF: f64 = 1e-7;

struct Counted<'a> {
    f: &'a mut dyn FnMut(&[f64]) -> f64,
    evals: usize,
}

impl Counted<'_> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Nelder–Mead from `x0`, points clamped to the box, at most `evals`
/// evaluations. Returns the best vertex and its value.
fn nelder_mead(f: &mut Counted<'_>, x0: &[f64], f0: f64, bounds: &Bounds, evals: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let stop = f.evals + evals;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        if f.evals >= stop {
            break;
        }
        let mut p = x0.to_vec();
        let step = SIMPLEX_STEP * bounds.scale(i, x0[i]);
        p[i] = if p[i] + step <= bounds.upper[i] { p[i] + step } else { p[i] - step };
        bounds.clamp(&mut p);
        let v = f.call(&p);
        simplex.push((p, v));
    }
    if simplex.len() < n + 1 {
        return best_of(simplex);
    }
    let point = |c: &[f64], d: &[f64], t: f64, bounds: &Bounds| -> Vec<f64> {
        let mut p: Vec<f64> = c.iter().zip(d).map(|(a, b)| a + t * (b - a)).collect();
        bounds.clamp(&mut p);
        p
    };
    while f.evals < stop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo, hi) = (simplex[0].1, simplex[n].1);
        let spread = simplex
            .iter()
            .skip(1)
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (hi - lo).abs() <= 1e-14 * (1.0 + lo.abs()) && spread <= 1e-10 {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let xr = point(&centroid, &worst, -1.0, bounds);
        let fr = f.call(&xr);
        if fr < simplex[0].1 {
            if f.evals >= stop {
                simplex[n] = (xr, fr);
                break;
            }
            let xe = point(&centroid, &worst, -2.0, bounds);
            let fe = f.call(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            if f.evals >= stop {
                break;
            }
            let (xc, fc) = if fr < hi {
                let xc = point(&centroid, &worst, -0.5, bounds);
                let fc = f.call(&xc);
                (xc, fc)
            } else {
                let xc = point(&centroid, &worst, 0.5, bounds);
                let fc = f.call(&xc);
                (xc, fc)
            };
            if fc < hi.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    if f.evals >= stop {
                        break;
                    }
                    let p = point(&best, &item.0, 0.5, bounds);
                    let v = f.call(&p);
                    *item = (p, v);
                }
            }
        }
    }
    best_of(simplex)
}

fn best_of(simplex: Vec<(Vec<f64>, f64)>) -> (Vec<f64>, f64) {
    simplex
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("simplex holds the start point")
}

fn check_start(x0: &[f64], bounds: &Bounds) -> Result<(), OptimizeError> {
    if x0.len() != bounds.dim() {
        return Err(OptimizeError::Dimension {
            got: x0.len(),
            expected: bounds.dim(),
        });
    }
    if !bounds.contains(x0) {
        return Err(OptimizeError::OutOfBounds);
    }
    Ok(())
}

fn perturbed(x: &[f64], bounds: &Bounds, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| v + RESTART_RADIUS * bounds.scale(i, *v) * rng.random_range(-1.0..=1.0))
        .collect();
    bounds.clamp(&mut p);
    p
}

/// Minimises `objective` over the box, starting from `x0`. The result is
/// never worse than `x0`.
pub fn solve_box(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    bounds: &Bounds,
    budget: &SolveBudget,
) -> Result<Vec<f64>, OptimizeError> {
    check_start(x0, bounds)?;
    let mut f = Counted { f: objective, evals: 0 };
    let f0 = f.call(x0);
    if !f0.is_finite() {
        return Err(OptimizeError::NonFiniteStart);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut best = (x0.to_vec(), f0);
    let per_round = budget.max_evals.saturating_sub(1) / (budget.restarts + 1);
    for round in 0..=budget.restarts {
        if f.evals >= budget.max_evals || per_round == 0 {
            break;
        }
        let (start, fs) = if round == 0 {
            best.clone()
        } else {
            let p = perturbed(&best.0, bounds, &mut rng);
            let v = f.call(&p);
            (p, v)
        };
        let (x, v) = nelder_mead(&mut f, &start, fs, bounds, per_round);
        if v < best.1 {
            best = (x, v);
        }
    }
    Ok(best.0)
}

/// Outcome of [`solve_constrained`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSolution {
    pub x: Vec<f64>,
    pub feasible: bool,
    pub objective: f64,
    pub evals: usize,
}

/// Minimises `objective + μ Σ max(0, g_i)²` over the box with the penalty
/// `μ` escalating across rounds (10, 10³, 10⁵). Every evaluated point is
/// checked against the true constraints; the best point with all rows
/// `≤ constraint_tol` is returned. When no such point was seen the result is
/// `x0` with `feasible = false`.
pub fn solve_constrained(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    constraint: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    bounds: &Bounds,
    budget: &SolveBudget,
) -> ConstrainedSolution {
    let infeasible = |evals| ConstrainedSolution {
        x: x0.to_vec(),
        feasible: false,
        objective: f64::NAN,
        evals,
    };
    if check_start(x0, bounds).is_err() {
        return infeasible(0);
    }
    let tol = budget.constraint_tol;
    let mut best_feasible: Option<(Vec<f64>, f64)> = None;
    let mu = std::cell::Cell::new(PENALTIES[0]);
    let mut evals = 0usize;
    {
        let mut penalized = |x: &[f64]| -> f64 {
            let obj = objective(x);
            let g = constraint(x);
            let ok = g.iter().all(|r| *r <= tol) && obj.is_finite();
            if ok && best_feasible.as_ref().is_none_or(|(_, b)| obj < *b) {
                best_feasible = Some((x.to_vec(), obj));
            }
            let pen: f64 = g
                .iter()
                .map(|r| if r.is_finite() { (r + BACKOFF).max(0.0).powi(2) } else { f64::INFINITY })
                .sum();
            obj + mu.get() * pen
        };
        if budget.max_evals == 0 {
            return infeasible(0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
        let stages = budget.restarts + 1;
        let per_stage = budget.max_evals.saturating_sub(1) / stages;
        let mut current = x0.to_vec();
        let mut f_start = penalized(&current);
        evals += 1;
        for stage in 0..stages {
            mu.set(PENALTIES[stage.min(PENALTIES.len() - 1)]);
            if per_stage == 0 {
                break;
            }
            let start = if stage == 0 { current.clone() } else { perturbed(&current, bounds, &mut rng) };
            let mut counted = Counted {
                f: &mut penalized,
                evals: 0,
            };
            let f0 = if stage == 0 { f_start } else { counted.call(&start) };
            let (x, v) = nelder_mead(&mut counted, &start, f0, bounds, per_stage);
            evals += counted.evals;
            current = x;
            f_start = v;
        }
    }
    match best_feasible {
        Some((x, obj)) => ConstrainedSolution {
            x,
            feasible: true,
            objective: obj,
            evals,
        },
        None => infeasible(evals),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn b1(lo: f64, hi: f64) -> Bounds {
        Bounds::new(vec![lo], vec![hi]).unwrap()
    }

    #[test]
    fn quadratic_interior_minimum() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2);
        let x = solve_box(&mut f, &[0.0], &b1(-2.0, 2.0), &SolveBudget::default()).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn quadratic_active_bound() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2);
        let x = solve_box(&mut f, &[-1.0], &b1(-2.0, 0.5), &SolveBudget::default()).unwrap();
        assert_abs_diff_eq!(x[0], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn rosenbrock_two_thousand_evals() {
        let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let bounds = Bounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let mut count = 0;
        let mut f = |x: &[f64]| {
            count += 1;
            rosen(x)
        };
        let budget = SolveBudget { max_evals: 2000, ..Default::default() };
        let x = solve_box(&mut f, &[-1.0, 1.0], &bounds, &budget).unwrap();
        assert!(count <= 2000);
        assert!(rosen(&x) < 0.1, "f = {}", rosen(&x));
    }

    #[test]
    fn errors_on_bad_start() {
        let mut f = |_: &[f64]| f64::NAN;
        assert_eq!(
            solve_box(&mut f, &[0.0], &b1(-1.0, 1.0), &SolveBudget::default()),
            Err(OptimizeError::NonFiniteStart)
        );
        let mut g = |x: &[f64]| x[0];
        assert_eq!(solve_box(&mut g, &[3.0], &b1(-1.0, 1.0), &SolveBudget::default()), Err(OptimizeError::OutOfBounds));
    }

    #[test]
    fn inactive_constraint_acts_like_box_solver() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2);
        let mut g = |_: &[f64]| vec![-1.0];
        let s = solve_constrained(&mut f, &mut g, &[0.0], &b1(-2.0, 2.0), &SolveBudget::default());
        assert!(s.feasible);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn active_constraint() {
        let mut f = |x: &[f64]| x[0] * x[0];
        let mut g = |x: &[f64]| vec![1.0 - x[0]];
        let s = solve_constrained(&mut f, &mut g, &[1.5], &b1(-3.0, 3.0), &SolveBudget::default());
        assert!(s.feasible);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-4);
        assert!(1.0 - s.x[0] <= 1e-8);
    }

    #[test]
    fn contradictory_constraints_are_reported() {
        let mut f = |x: &[f64]| x[0] * x[0];
        let mut g = |x: &[f64]| vec![x[0] + 1.0, 1.0 - x[0]];
        let s = solve_constrained(&mut f, &mut g, &[0.3], &b1(-3.0, 3.0), &SolveBudget::default());
        assert!(!s.feasible);
        assert_eq!(s.x, vec![0.3]);
    }

    #[test]
    fn zero_budget_is_infeasible() {
        let mut f = |x: &[f64]| x[0];
        let mut g = |_: &[f64]| vec![-1.0];
        let budget = SolveBudget { max_evals: 0, ..Default::default() };
        let s = solve_constrained(&mut f, &mut g, &[0.0], &b1(-1.0, 1.0), &budget);
        assert!(!s.feasible);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let run = || {
            let mut f = |x: &[f64]| (x[0] - 0.3).powi(2) + (x[1] + 0.2).abs();
            let mut g = |x: &[f64]| vec![x[0] + x[1] - 0.5];
            let bounds = Bounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
            solve_constrained(&mut f, &mut g, &[0.0, 0.0], &bounds, &SolveBudget { seed: 9, ..Default::default() })
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn never_claims_feasible_when_violated(
            a in prop::collection::vec(-2.0f64..2.0, 3),
            b in prop::collection::vec(-1.0f64..1.0, 3),
            c in -1.0f64..1.0,
            x0 in prop::collection::vec(-1.0f64..1.0, 2),
        ) {
            let mut f = |x: &[f64]| (x[0] - c).powi(2) + x[1] * x[1];
            let rows = |x: &[f64]| vec![
                a[0] * x[0] + b[0] * x[1] - c,
                (a[1] * x[0]).sin() + b[1] - x[1],
                a[2] * x[0] * x[1] + b[2],
            ];
            let mut g = rows;
            let bounds = Bounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
            let budget = SolveBudget { max_evals: 300, ..Default::default() };
            let s = solve_constrained(&mut f, &mut g, &x0, &bounds, &budget);
            if s.feasible {
                prop_assert!(rows(&s.x).iter().all(|r| *r <= 1e-8));
                prop_assert!(bounds.contains(&s.x));
                let start_ok = rows(&x0).iter().all(|r| *r <= 1e-8);
                if start_ok {
                    let f0 = (x0[0] - c).powi(2) + x0[1] * x0[1];
                    prop_assert!(s.objective <= f0);
                }
            } else {
                prop_assert_eq!(s.x, x0);
            }
        }
    }
}
