//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ace::lp::LpProblem;
use ace::model::{
    AffinePiece, Horizon, PwlTerm, Scenario, StageModel, StateDomain, TerminalSpec,
};

/// Repo-level models directory (workspace root / models).
pub fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join("models")
}

pub fn load_inventory() -> Horizon {
    Horizon::load(&models_dir().join("inventory.json")).expect("inventory model")
}

pub fn load_battery2d() -> Horizon {
    Horizon::load(&models_dir().join("battery2d.json")).expect("battery model")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random feasible bounded LP: integer coefficients in [-9, 9], constraints
/// built through a known interior point, finite box bounds.
pub struct RandomLp {
    pub prob: LpProblem,
    pub witness: Vec<f64>,
}

pub fn random_feasible_lp(rng: &mut ChaCha8Rng, with_equalities: bool) -> RandomLp {
    let n = rng.random_range(1..=20usize);
    let rows = rng.random_range(1..=40usize);
    let mut prob = LpProblem::new(n);
    let witness: Vec<f64> = (0..n).map(|_| rng.random_range(-3..=3) as f64).collect();
    for j in 0..n {
        prob.objective[j] = rng.random_range(-9..=9) as f64;
        prob.set_bounds(j, -20.0, 20.0);
    }
    let n_eq = if with_equalities {
        rng.random_range(1..=3.min(rows))
    } else {
        0
    };
    for _ in 0..n_eq {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-9..=9) as f64).collect();
        let rhs = row.iter().zip(&witness).map(|(a, x)| a * x).sum();
        prob.add_eq(row, rhs);
    }
    for _ in 0..rows.saturating_sub(n_eq) {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-9..=9) as f64).collect();
        let slack = rng.random_range(0..=9) as f64;
        let rhs = row.iter().zip(&witness).map(|(a, x)| a * x).sum::<f64>() + slack;
        prob.add_ineq(row, rhs);
    }
    RandomLp { prob, witness }
}

/// Dual objective under the solver's sign convention; together with primal
/// feasibility and complementary slackness this provides an independent
/// strong-duality check.
pub fn dual_objective(prob: &LpProblem, sol: &ace::LpSolution) -> f64 {
    let mut reduced = prob.objective.clone();
    for (i, (row, _)) in prob.eq.iter().enumerate() {
        for j in 0..prob.n {
            reduced[j] -= sol.duals_eq[i] * row[j];
        }
    }
    for (i, (row, _)) in prob.ineq.iter().enumerate() {
        for j in 0..prob.n {
            reduced[j] += sol.duals_ineq[i] * row[j];
        }
    }
    let mut obj = 0.0;
    for (i, (_, rhs)) in prob.eq.iter().enumerate() {
        obj += sol.duals_eq[i] * rhs;
    }
    for (i, (_, rhs)) in prob.ineq.iter().enumerate() {
        obj -= sol.duals_ineq[i] * rhs;
    }
    for j in 0..prob.n {
        obj += if reduced[j] > 0.0 {
            reduced[j] * prob.var_lower[j]
        } else {
            reduced[j] * prob.var_upper[j]
        };
    }
    obj
}

/// Largest primal constraint violation.
pub fn primal_infeasibility(prob: &LpProblem, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (row, rhs) in &prob.eq {
        let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    for (row, rhs) in &prob.ineq {
        let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
        worst = worst.max(lhs - rhs);
    }
    for j in 0..prob.n {
        worst = worst.max(prob.var_lower[j] - x[j]);
        worst = worst.max(x[j] - prob.var_upper[j]);
    }
    worst
}

/// Random valid stage model (p <= 3, m <= 3, K <= 10) with bounded actions
/// and no side constraints, so every state has feasible actions.
pub fn random_stage_model(rng: &mut ChaCha8Rng, t: usize) -> StageModel {
    let p = rng.random_range(1..=3usize);
    let m = rng.random_range(1..=3usize);
    let q = p;
    let k = rng.random_range(1..=10usize);
    let coef = |rng: &mut ChaCha8Rng| rng.random_range(-10..=10) as f64 / 10.0;
    let a: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { coef(rng) * 0.3 }).collect())
        .collect();
    let b: Vec<Vec<f64>> = (0..p).map(|_| (0..m).map(|_| coef(rng)).collect()).collect();
    let scenarios: Vec<Scenario> = (0..k)
        .map(|_| Scenario {
            w: (0..q).map(|_| coef(rng)).collect(),
            prob: None,
        })
        .collect();
    let n_terms = rng.random_range(1..=2usize);
    let cost_terms: Vec<PwlTerm> = (0..n_terms)
        .map(|_| {
            let pieces = rng.random_range(1..=3usize);
            PwlTerm {
                pieces: (0..pieces)
                    .map(|_| AffinePiece {
                        a: (0..p).map(|_| coef(rng)).collect(),
                        b: (0..m).map(|_| coef(rng)).collect(),
                        d: (0..q).map(|_| coef(rng)).collect(),
                        e: coef(rng),
                    })
                    .collect(),
            }
        })
        .collect();
    StageModel {
        t,
        p,
        m,
        q,
        a,
        b,
        scenarios,
        cost_terms,
        constraints: vec![],
        action_lower: Some(vec![-2.0; m]),
        action_upper: Some(vec![2.0; m]),
        domain: StateDomain {
            lower: vec![-1.0; p],
            upper: vec![1.0; p],
            extra: None,
        },
    }
}

/// Random one-stage horizon plus a convex continuation envelope.
pub fn random_model_with_envelope(
    rng: &mut ChaCha8Rng,
    t: usize,
) -> (StageModel, ace::Envelope) {
    let sm = random_stage_model(rng, t);
    let mut env = ace::Envelope::empty(t + 1, sm.p);
    let n_planes = rng.random_range(2..=6usize);
    for _ in 0..n_planes {
        // tangents of a random convex quadratic q(x) = sum c_i (x_i - b_i)^2
        let c: Vec<f64> = (0..sm.p).map(|_| rng.random_range(1..=20) as f64 / 10.0).collect();
        let center: Vec<f64> = (0..sm.p).map(|_| rng.random_range(-10..=10) as f64 / 10.0).collect();
        let at: Vec<f64> = (0..sm.p).map(|_| rng.random_range(-15..=15) as f64 / 10.0).collect();
        let value: f64 = (0..sm.p).map(|i| c[i] * (at[i] - center[i]).powi(2)).sum();
        let grad: Vec<f64> = (0..sm.p).map(|i| 2.0 * c[i] * (at[i] - center[i])).collect();
        env.add_plane(ace::Hyperplane::new(at, value, grad)).unwrap();
    }
    (sm, env)
}

pub fn horizon_of(stage: StageModel, num_stages: usize) -> Horizon {
    let mut stages = Vec::new();
    for t in 1..num_stages {
        let mut s = stage.clone();
        s.t = t;
        stages.push(s);
    }
    Horizon {
        num_stages,
        terminal: TerminalSpec::zero(),
        stages,
    }
}
