//! Randomized battery for the LP solver: strong duality, feasibility,
//! complementary slackness, dual sensitivity and determinism.

mod common;

use ace::lp::{solve_lp, LpStatus, DUAL_GAP_TOL, FEAS_TOL};
use common::{dual_objective, primal_infeasibility, random_feasible_lp, rng};

#[test]
fn random_lps_satisfy_duality_and_feasibility() {
    let mut rng = rng(0xACE0);
    let mut solved = 0;
    for case in 0..200 {
        let lp = random_feasible_lp(&mut rng, case % 3 == 0);
        let sol = solve_lp(&lp.prob).unwrap_or_else(|e| panic!("case {case}: {e}"));
        assert_eq!(
            sol.status,
            LpStatus::Optimal,
            "case {case}: constructed-feasible bounded LP must be optimal"
        );
        let infeas = primal_infeasibility(&lp.prob, &sol.x);
        assert!(infeas <= FEAS_TOL, "case {case}: infeasibility {infeas}");
        // witness point bounds the optimum from above
        let witness_obj: f64 = lp
            .prob
            .objective
            .iter()
            .zip(&lp.witness)
            .map(|(c, x)| c * x)
            .sum();
        assert!(
            sol.objective <= witness_obj + 1e-6,
            "case {case}: objective {} above witness {witness_obj}",
            sol.objective
        );
        // multiplier signs and complementary slackness
        for (i, (row, rhs)) in lp.prob.ineq.iter().enumerate() {
            let dual = sol.duals_ineq[i];
            assert!(dual >= -1e-9, "case {case}: negative inequality dual {dual}");
            let slack = rhs - row.iter().zip(&sol.x).map(|(a, x)| a * x).sum::<f64>();
            assert!(
                dual * slack <= 1e-6,
                "case {case}: complementary slackness {dual} * {slack}"
            );
        }
        // strong duality through the independently computed dual objective
        let gap = (sol.objective - dual_objective(&lp.prob, &sol)).abs();
        assert!(
            gap <= DUAL_GAP_TOL * (1.0 + sol.objective.abs()),
            "case {case}: duality gap {gap} at objective {}",
            sol.objective
        );
        solved += 1;
    }
    assert_eq!(solved, 200);
}

#[test]
fn equality_duals_match_finite_difference_slopes() {
    let mut rng = rng(0xACE1);
    let mut checked = 0;
    for _case in 0..40 {
        let mut lp = random_feasible_lp(&mut rng, true);
        // small objective perturbation makes the optimum generically unique
        for (j, c) in lp.prob.objective.iter_mut().enumerate() {
            *c += (j as f64 + 1.0) * 1e-4;
        }
        let sol = solve_lp(&lp.prob).unwrap();
        if sol.status != LpStatus::Optimal {
            continue;
        }
        let eps = 1e-5;
        for i in 0..lp.prob.eq.len() {
            let base = lp.prob.eq[i].1;
            lp.prob.eq[i].1 = base + eps;
            let hi = solve_lp(&lp.prob).unwrap();
            lp.prob.eq[i].1 = base - eps;
            let lo = solve_lp(&lp.prob).unwrap();
            lp.prob.eq[i].1 = base;
            if hi.status != LpStatus::Optimal || lo.status != LpStatus::Optimal {
                continue;
            }
            // the optimal value is convex in the rhs, so any valid
            // multiplier sits between the one-sided slopes
            let right = (hi.objective - sol.objective) / eps;
            let left = (sol.objective - lo.objective) / eps;
            assert!(
                sol.duals_eq[i] >= left - 1e-3 && sol.duals_eq[i] <= right + 1e-3,
                "eq {i}: dual {} outside one-sided slopes [{left}, {right}]",
                sol.duals_eq[i]
            );
            // at a kink the dual is non-unique; the exact-match check only
            // applies where the value function is differentiable
            if (right - left).abs() > 1e-6 * (1.0 + right.abs()) {
                continue;
            }
            let slope = (hi.objective - lo.objective) / (2.0 * eps);
            assert!(
                (slope - sol.duals_eq[i]).abs() <= 1e-3,
                "eq {i}: slope {slope} vs dual {}",
                sol.duals_eq[i]
            );
            checked += 1;
        }
    }
    assert!(checked >= 20, "only {checked} equality duals checked");
}

#[test]
fn repeat_solves_are_bit_identical() {
    let mut rng = rng(0xACE2);
    for _ in 0..25 {
        let lp = random_feasible_lp(&mut rng, true);
        let a = solve_lp(&lp.prob).unwrap();
        let b = solve_lp(&lp.prob).unwrap();
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.x.len(), b.x.len());
        for (xa, xb) in a.x.iter().zip(&b.x) {
            assert_eq!(xa.to_bits(), xb.to_bits());
        }
        for (da, db) in a.duals_eq.iter().zip(&b.duals_eq) {
            assert_eq!(da.to_bits(), db.to_bits());
        }
        for (da, db) in a.duals_ineq.iter().zip(&b.duals_ineq) {
            assert_eq!(da.to_bits(), db.to_bits());
        }
    }
}

#[test]
fn infeasible_and_unbounded_random_cases() {
    let mut rng = rng(0xACE3);
    for case in 0..30 {
        let lp = random_feasible_lp(&mut rng, false);
        // contradicting a satisfied inequality makes the program infeasible
        let mut bad = lp.prob.clone();
        if let Some((row, rhs)) = bad.ineq.first().cloned() {
            let flipped: Vec<f64> = row.iter().map(|v| -v).collect();
            bad.add_ineq(flipped, -rhs - 1.0);
            let sol = solve_lp(&bad).unwrap();
            assert_eq!(sol.status, LpStatus::Infeasible, "case {case}");
        }
        // dropping all bounds on a variable with negative cost and no
        // constraints leaves an unbounded ray
        let mut ray = ace::lp::LpProblem::new(2);
        ray.objective = vec![1.0, -1.0];
        ray.set_bounds(0, 0.0, 1.0);
        let sol = solve_lp(&ray).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }
}
