//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion outside `KNOWN_RED` fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use calf_core::agents::AgentKind;
use calf_core::critic::{critic_eval, CriticWeights};
use calf_core::harness::{
    build_agent, calibrate, run_experiment, run_single, ExperimentConfig, RunOptions, RunOutcome, RunSummary,
};
use calf_core::noise::NoiseKind;
use calf_core::noise::NoiseProcess;
use calf_core::systems::{
    cart_action_to_ni, cart_dynamics, cart_euler, cart_to_ni, ni_action_to_cart, ni_dynamics, ni_to_cart, wrap_angle,
    CartAction, CartState,
};
use calf_core::verify::audit_prediction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that fail for reasons recorded in the README.
const KNOWN_RED: &[u32] = &[4];

const CALF_KINDS: [&str; 3] = ["calf_fallback", "calf_sarsa", "calf_ac"];

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn config(path: &str) -> ExperimentConfig {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(path);
    ExperimentConfig::from_file(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn with_agent(base: &ExperimentConfig, name: &str) -> ExperimentConfig {
    ExperimentConfig {
        agent: AgentKind::parse(name, 16).expect("known agent"),
        ..base.clone()
    }
}

fn run(cfg: &ExperimentConfig) -> RunSummary {
    run_experiment(cfg, &RunOptions::default()).expect("experiment runs")
}

fn audit_count<'a>(
    runs: impl Iterator<Item = &'a RunOutcome>,
    pick: impl Fn(&RunOutcome) -> Option<&calf_core::verify::AuditReport>,
) -> (usize, usize, f64) {
    let (mut ok, mut total, mut worst) = (0, 0, f64::NEG_INFINITY);
    for r in runs {
        if let Some(a) = pick(r) {
            total += 1;
            ok += usize::from(a.passed);
            worst = worst.max(a.margin);
        }
    }
    (ok, total, worst)
}

fn cost_ordering(fallback: &RunSummary, unconstrained: &RunSummary, nominal: &RunSummary) -> Outcome {
    let (f, u, n) = (fallback.stats, unconstrained.stats, nominal.stats);
    let seeds = fallback.config.seeds.len();
    let passed = seeds >= 20 && f.median < u.median && f.median < n.median && f.q3 < n.q1;
    Outcome {
        id: 1,
        name: "cost ordering",
        passed,
        detail: format!(
            "medians calf_fallback {:.2} [{:.2}, {:.2}], unconstrained_ac {:.2} [{:.2}, {:.2}], nominal {:.2} [{:.2}, {:.2}]; {} seeds",
            f.median, f.q1, f.q3, u.median, u.q1, u.q3, n.median, n.q1, n.q3, seeds
        ),
    }
}

fn constraint_audit(calf: &[&RunSummary]) -> Outcome {
    let (ok, total, worst) = audit_count(calf.iter().flat_map(|s| &s.runs), |r| r.audits.constraints.as_ref());
    Outcome {
        id: 2,
        name: "constraint audit",
        passed: total > 0 && ok == total,
        detail: format!("{ok}/{total} CALF runs clean, worst accepted G row {worst:.3e}"),
    }
}

fn feasibility(noiseless_calf: &[&RunSummary]) -> Outcome {
    let (ok, total, worst) = audit_count(noiseless_calf.iter().flat_map(|s| &s.runs), |r| r.audits.feasibility.as_ref());
    Outcome {
        id: 3,
        name: "feasibility",
        passed: total > 0 && ok == total,
        detail: format!("{ok}/{total} noiseless CALF runs, worst candidate G row {worst:.3e}"),
    }
}

fn reaching(noiseless: &[&RunSummary], noisy: &[&RunSummary]) -> Outcome {
    let clean_ok = noiseless.iter().all(|s| s.runs.iter().all(|r| r.audits.reaching.passed));
    let clean: Vec<String> = noiseless
        .iter()
        .map(|s| {
            let ok = s.runs.iter().filter(|r| r.audits.reaching.passed).count();
            format!("{} {ok}/{}", s.agent, s.runs.len())
        })
        .collect();
    let (mut ok, mut total) = (0, 0);
    let per: Vec<String> = noisy
        .iter()
        .map(|s| {
            let k = s.runs.iter().filter(|r| r.audits.reaching.passed).count();
            ok += k;
            total += s.runs.len();
            format!("{} {:.3}", s.agent, k as f64 / s.runs.len() as f64)
        })
        .collect();
    let rate = ok as f64 / total.max(1) as f64;
    Outcome {
        id: 4,
        name: "reaching",
        passed: clean_ok && rate >= 0.95,
        detail: format!(
            "noiseless {} ({}); noisy rate {rate:.3} ({}), needs 0.950",
            if clean_ok { "all pass" } else { "FAILED" },
            clean.join(", "),
            per.join(", ")
        ),
    }
}

/// Exact flow of the cart under a held action.
fn cart_exact(x: &CartState, u: &CartAction, t: f64) -> CartState {
    let th = x.x3 + u.u2 * t;
    if u.u2.abs() < 1e-12 {
        let (s, c) = x.x3.sin_cos();
        return CartState::new(x.x1 + u.u1 * t * c, x.x2 + u.u1 * t * s, th);
    }
    let r = u.u1 / u.u2;
    CartState::new(x.x1 + r * (th.sin() - x.x3.sin()), x.x2 - r * (th.cos() - x.x3.cos()), th)
}

fn dist(a: &CartState, b: &CartState) -> f64 {
    let (p, q) = (a.as_array(), b.as_array());
    p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn euler_order(noisy: &ExperimentConfig) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let delta = 0.05;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..100 {
        let x = CartState::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-PI..PI));
        let w = rng.random_range(0.1..2.84) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let u = CartAction::new(rng.random_range(0.05..0.22), w);
        let e1 = dist(&cart_euler(&x, &u, delta), &cart_exact(&x, &u, delta));
        let e2 = dist(&cart_euler(&x, &u, delta / 2.0), &cart_exact(&x, &u, delta / 2.0));
        worst_ratio = worst_ratio.max(e2 / e1);
    }

    let short = ExperimentConfig {
        horizon: 20.0,
        seeds: vec![0, 1],
        ..noisy.clone()
    };
    let mut chi_ok = true;
    let mut worst_margin = f64::NEG_INFINITY;
    let mut checked = 0;
    for kind in ["nominal", "calf_fallback"] {
        let cfg = with_agent(&short, kind);
        let calib = calibrate(&cfg).expect("calibration");
        for t in 0..cfg.targets.len() {
            for &s in &cfg.seeds {
                let art = run_single(&cfg, &calib, t, s).expect("run");
                let rep = audit_prediction(&art.trajectory, &calib.lipschitz, cfg.delta);
                chi_ok &= rep.passed;
                worst_margin = worst_margin.max(rep.margin);
                checked += 1;
            }
        }
    }
    Outcome {
        id: 5,
        name: "Euler order",
        passed: worst_ratio <= 1.0 / 3.0 && chi_ok,
        detail: format!(
            "worst error ratio {worst_ratio:.4} over 100 pairs; noisy deviation minus chi1 at most {worst_margin:.3e} over {checked} runs"
        ),
    }
}

fn noise_bounds() -> Outcome {
    let kinds = [
        NoiseKind::SineWiener { tau_a: 1.0 },
        NoiseKind::Dcl { b1: 1.0, b2: 0.0 },
        NoiseKind::Tsb { b1: 1.0, b2: 0.0 },
        NoiseKind::Ks { b1: 1.0, b2: 0.0 },
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for kind in kinds {
        let mut peak: f64 = 0.0;
        for seed in 0..16 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = NoiseProcess::new(kind, 1, 1.0).expect("valid noise");
            for _ in 0..100_000 {
                p.step(0.005, &mut rng);
                peak = peak.max(p.current_value()[0].abs());
            }
        }
        let ok = match kind {
            NoiseKind::SineWiener { .. } => peak <= 1.0,
            _ => peak < 1.0,
        };
        passed &= ok;
        parts.push(format!("{} 1 - {:.1e}", kind.name(), 1.0 - peak));
    }
    Outcome {
        id: 6,
        name: "noise boundedness",
        passed,
        detail: format!("peak |Z| over 16 x 1e5 steps: {}", parts.join(", ")),
    }
}

fn structural(noiseless: &ExperimentConfig) -> Outcome {
    let mut worst: f64 = 0.0;
    for zeta in [0.5, 1.0, 2.0] {
        let cfg = ExperimentConfig {
            zeta,
            agent: AgentKind::CalfFallback,
            ..noiseless.clone()
        };
        let calib = calibrate(&cfg).expect("calibration");
        let agent = build_agent(&cfg, &calib, cfg.targets[0], 0).expect("agent");
        let model = &agent.setup().model;
        let sharp = CriticWeights::structural(zeta);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = CartState::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-PI..PI));
            let l = model.lyapunov(&x);
            let d = (critic_eval(model, &sharp, &x) - zeta * l).abs();
            worst = worst.max(d / l.abs().max(1.0));
        }
    }
    Outcome {
        id: 7,
        name: "structural equivalence",
        passed: worst <= 4.0 * f64::EPSILON,
        detail: format!("worst relative gap {worst:.3e} for zeta in {{0.5, 1, 2}}"),
    }
}

fn conjugacy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut chain, mut trip): (f64, f64) = (0.0, 0.0);
    let h = 1e-6;
    for _ in 0..1000 {
        let x = CartState::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-PI..PI));
        let u = CartAction::new(rng.random_range(-0.22..0.22), rng.random_range(-2.84..2.84));
        let d = cart_dynamics(&x, &u);
        let step = |s: f64| {
            let xs = CartState::new(x.x1 + s * d[0], x.x2 + s * d[1], x.x3 + s * d[2]);
            let z = cart_to_ni(&xs);
            [z.z1, z.z2, z.z3]
        };
        let (p, m) = (step(h), step(-h));
        let zdot_fd: Vec<f64> = p.iter().zip(m).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let z = cart_to_ni(&x);
        let v = cart_action_to_ni(&x, &u);
        let zdot = ni_dynamics(&z, &v);
        for (a, b) in zdot.iter().zip(&zdot_fd) {
            chain = chain.max((a - b).abs());
        }
        let back = ni_to_cart(&z);
        trip = trip
            .max((back.x1 - x.x1).abs())
            .max((back.x2 - x.x2).abs())
            .max(wrap_angle(back.x3 - x.x3).abs());
        let u_back = ni_action_to_cart(&x, &v);
        trip = trip.max((u_back.u1 - u.u1).abs()).max((u_back.u2 - u.u2).abs());
    }
    Outcome {
        id: 8,
        name: "transform conjugacy",
        passed: chain < 1e-5 && trip < 1e-12,
        detail: format!("chain-rule residual {chain:.3e}, round trip {trip:.3e}"),
    }
}

fn multistep(fallback: &[&RunSummary]) -> Outcome {
    let (ok, total, worst) = audit_count(fallback.iter().flat_map(|s| &s.runs), |r| r.audits.multistep.as_ref());
    let failures: Vec<String> = fallback
        .iter()
        .flat_map(|s| &s.runs)
        .filter(|r| r.audits.multistep.as_ref().is_some_and(|a| !a.passed))
        .take(3)
        .map(|r| format!("t{} s{}", r.target_index, r.seed))
        .collect();
    Outcome {
        id: 9,
        name: "multi-step Lyapunov property",
        passed: total > 0 && ok == total,
        detail: format!("{ok}/{total} calf_fallback runs, worst margin {worst:.3e} {}", failures.join(" ")),
    }
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .expect("output directory")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).expect("readable"))
        })
        .collect()
}

fn determinism(noisy: &ExperimentConfig) -> Outcome {
    let cfg = ExperimentConfig {
        horizon: 10.0,
        seeds: vec![3],
        targets: noisy.targets[..2].to_vec(),
        write_records: true,
        ..noisy.clone()
    };
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut outputs = Vec::new();
    for (i, threads) in [(0, Some(1)), (1, None)] {
        let dir = tmp.path().join(format!("run{i}"));
        let opts = RunOptions {
            out_dir: Some(dir.clone()),
            parallel: threads,
            seed_base: 0,
        };
        run_experiment(&cfg, &opts).expect("run");
        outputs.push(read_dir(&dir));
    }
    let files = outputs[0].len();
    let same = outputs[0] == outputs[1];
    let has_csv = outputs[0].keys().any(|k| k.ends_with(".csv"));
    let has_json = outputs[0].keys().any(|k| k.starts_with("summary_"));
    Outcome {
        id: 10,
        name: "determinism",
        passed: same && has_csv && has_json,
        detail: format!("{files} files compared byte for byte, identical: {same}"),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let table1 = config("table1.cfg");
    let noiseless = config("noiseless.cfg");

    let fallback = run(&with_agent(&table1, "calf_fallback"));
    let unconstrained = run(&with_agent(&table1, "unconstrained_ac"));
    let nominal = run(&with_agent(&table1, "nominal"));
    let clean_calf: Vec<RunSummary> = CALF_KINDS.iter().map(|k| run(&with_agent(&noiseless, k))).collect();
    let clean_nominal = run(&with_agent(&noiseless, "nominal"));

    let clean_refs: Vec<&RunSummary> = clean_calf.iter().collect();
    let mut all_calf = vec![&fallback];
    all_calf.extend(clean_refs.iter().copied());
    let mut clean_all = clean_refs.clone();
    clean_all.push(&clean_nominal);
    let clean_fallback = clean_calf.iter().filter(|s| s.agent == "calf_fallback");
    let mut fallback_runs = vec![&fallback];
    fallback_runs.extend(clean_fallback);

    let outcomes = [
        cost_ordering(&fallback, &unconstrained, &nominal),
        constraint_audit(&all_calf),
        feasibility(&clean_refs),
        reaching(&clean_all, &[&fallback, &nominal]),
        euler_order(&table1),
        noise_bounds(),
        structural(&noiseless),
        conjugacy(),
        multistep(&fallback_runs),
        determinism(&table1),
    ];

    let mut blocking = 0;
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        let known = !o.passed && KNOWN_RED.contains(&o.id);
        println!(
            "{status} criterion {:>2} {}: {}{}",
            o.id,
            o.name,
            o.detail,
            if known { " [known red]" } else { "" }
        );
        blocking += usize::from(!o.passed && !known);
    }
    println!("acceptance finished in {:.0} s", start.elapsed().as_secs_f64());
    if blocking == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
