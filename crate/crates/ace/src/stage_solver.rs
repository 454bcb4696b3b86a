//! Stage subproblem: builds and solves the dummy-state Bellman LP at a given
//! state, returning the stage value, a subgradient, and the optimal action.
//!
//! The LP copies the state into a decision variable `s` pinned by `s = x`
//! equalities; the multipliers of those equalities are the sensitivity of the
//! optimum to `x`, i.e. a subgradient of the stage value. The continuation is
//! the next stage's envelope, entering as one epigraph variable `J^k` per
//! scenario bounded below by every stored hyperplane.

use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::lp::{self, CrashBasis, LpProblem, LpStatus, RowRef};
use crate::math::dot;
use crate::model::StageModel;

/// Value, subgradient and optimal action of one stage solve.
#[derive(Clone, Debug)]
pub struct StageSolveResult {
    pub value: f64,
    pub subgrad: Vec<f64>,
    pub action: Vec<f64>,
}

/// Variable layout of the stage LP: `[s | u | J^k | z_{k,tau}]`.
struct Layout {
    p: usize,
    m: usize,
    k: usize,
    terms: usize,
}

impl Layout {
    fn of(sm: &StageModel) -> Layout {
        Layout {
            p: sm.p,
            m: sm.m,
            k: sm.scenarios.len(),
            terms: sm.cost_terms.len(),
        }
    }

    fn s(&self, i: usize) -> usize {
        i
    }

    fn u(&self, j: usize) -> usize {
        self.p + j
    }

    fn j_k(&self, k: usize) -> usize {
        self.p + self.m + k
    }

    fn z(&self, k: usize, term: usize) -> usize {
        self.p + self.m + self.k + k * self.terms + term
    }

    fn n_vars(&self) -> usize {
        self.p + self.m + self.k + self.k * self.terms
    }
}

/// Builds the stage LP at state `x` against the next stage's envelope.
///
/// Inequalities are laid out epigraph rows first (scenario-major, then term,
/// then piece), then the stage constraints, then one hyperplane row per
/// (scenario, plane); the `s = x` rows are the equalities.
pub fn build_stage_lp(sm: &StageModel, env_next: &Envelope, x: &[f64]) -> Result<LpProblem> {
    if env_next.is_empty() {
        return Err(Error::EmptyEnvelope);
    }
    if env_next.p != sm.p {
        return Err(Error::DimensionMismatch {
            what: "next-stage envelope",
            expected: sm.p,
            got: env_next.p,
        });
    }
    if x.len() != sm.p {
        return Err(Error::DimensionMismatch {
            what: "state",
            expected: sm.p,
            got: x.len(),
        });
    }
    let lay = Layout::of(sm);
    let n = lay.n_vars();
    let probs = sm.scenario_probs();
    let mut lp = LpProblem::new(n);
    for k in 0..lay.k {
        lp.objective[lay.j_k(k)] = probs[k];
        for t in 0..lay.terms {
            lp.objective[lay.z(k, t)] = probs[k];
        }
    }
    for j in 0..lay.m {
        let (l, u) = sm.action_bound(j);
        lp.set_bounds(lay.u(j), l, u);
    }
    // (i) epigraph of each max-of-affine term per scenario:
    //     z_{k,t} >= a.s + b.u + d.w_k + e
    for (k, sc) in sm.scenarios.iter().enumerate() {
        for (ti, term) in sm.cost_terms.iter().enumerate() {
            for piece in &term.pieces {
                let mut row = vec![0.0; n];
                row[..lay.p].copy_from_slice(&piece.a);
                row[lay.p..lay.p + lay.m].copy_from_slice(&piece.b);
                row[lay.z(k, ti)] = -1.0;
                lp.add_ineq(row, -(dot(&piece.d, &sc.w) + piece.e));
            }
        }
    }
    // (ii) stage constraints g(s, u) <= 0
    for c in &sm.constraints {
        let mut row = vec![0.0; n];
        row[..lay.p].copy_from_slice(&c.gx);
        row[lay.p..lay.p + lay.m].copy_from_slice(&c.gu);
        lp.add_ineq(row, c.rhs);
    }
    // (iii) supporting hyperplanes of the continuation per scenario:
    //       J^k >= value_j + grad_j . (A s + B u + w_k - base_j)
    for (k, sc) in sm.scenarios.iter().enumerate() {
        for plane in &env_next.planes {
            let mut row = vec![0.0; n];
            for i in 0..lay.p {
                let g = plane.grad[i];
                if g != 0.0 {
                    for (col, v) in sm.a[i].iter().enumerate() {
                        row[col] += g * v;
                    }
                    for (col, v) in sm.b[i].iter().enumerate() {
                        row[lay.p + col] += g * v;
                    }
                }
            }
            row[lay.j_k(k)] = -1.0;
            let rhs = -(plane.value + dot(&plane.grad, &sc.w) - dot(&plane.grad, &plane.base));
            lp.add_ineq(row, rhs);
        }
    }
    // (iv) dummy-state equalities s = x
    for i in 0..lay.p {
        let mut row = vec![0.0; n];
        row[lay.s(i)] = 1.0;
        lp.add_eq(row, x[i]);
    }
    Ok(lp)
}

/// Starting basis from the structure of the stage LP: `s` pinned by the
/// equalities, each `J^k` and `z_{k,t}` sitting on its active row at the
/// default action. The LP layer falls back to a cold start if infeasible.
fn crash_basis(sm: &StageModel, env_next: &Envelope, x: &[f64]) -> CrashBasis {
    let lay = Layout::of(sm);
    let mut u0 = vec![0.0; lay.m];
    let mut at_upper = Vec::new();
    for j in 0..lay.m {
        let (l, u) = sm.action_bound(j);
        if l.is_finite() {
            if u.is_finite() && u.abs() < l.abs() {
                u0[j] = u;
                at_upper.push(lay.u(j));
            } else {
                u0[j] = l;
            }
        } else if u.is_finite() {
            u0[j] = u;
            at_upper.push(lay.u(j));
        }
    }
    let mut pairs = Vec::with_capacity(lay.p + lay.k * (1 + lay.terms));
    for i in 0..lay.p {
        pairs.push((lay.s(i), RowRef::Eq(i)));
    }
    let pieces_per_scenario: usize = sm.cost_terms.iter().map(|t| t.pieces.len()).sum();
    let epi_rows = lay.k * pieces_per_scenario;
    let g_rows = sm.constraints.len();
    for (k, sc) in sm.scenarios.iter().enumerate() {
        // active epigraph piece per term
        let mut row_base = k * pieces_per_scenario;
        for (ti, term) in sm.cost_terms.iter().enumerate() {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (pi, piece) in term.pieces.iter().enumerate() {
                let v = piece.eval(x, &u0, &sc.w);
                if v > best_v {
                    best_v = v;
                    best = pi;
                }
            }
            pairs.push((lay.z(k, ti), RowRef::Ineq(row_base + best)));
            row_base += term.pieces.len();
        }
        // active hyperplane for J^k
        let x_next = sm.transition(x, &u0, &sc.w);
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (j, plane) in env_next.planes.iter().enumerate() {
            let v = plane.eval(&x_next);
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        let row = epi_rows + g_rows + k * env_next.len() + best;
        pairs.push((lay.j_k(k), RowRef::Ineq(row)));
    }
    CrashBasis { pairs, at_upper }
}

/// Solves the stage LP at `x`: value, subgradient (from the `s = x`
/// multipliers), and optimal action.
pub fn solve_stage(sm: &StageModel, env_next: &Envelope, x: &[f64]) -> Result<StageSolveResult> {
    let lp_prob = build_stage_lp(sm, env_next, x)?;
    let crash = crash_basis(sm, env_next, x);
    let sol = lp::solve_lp_with_start(&lp_prob, Some(&crash))?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::InfeasibleState {
                stage: sm.t,
                state: x.to_vec(),
            })
        }
        LpStatus::Unbounded => return Err(Error::UnboundedStage { stage: sm.t }),
    }
    let lay = Layout::of(sm);
    Ok(StageSolveResult {
        value: sol.objective,
        subgrad: sol.duals_eq.clone(),
        action: sol.x[lay.p..lay.p + lay.m].to_vec(),
    })
}

/// Policy extraction: the optimal action of the stage LP at `x`.
pub fn greedy_action(sm: &StageModel, env_next: &Envelope, x: &[f64]) -> Result<Vec<f64>> {
    Ok(solve_stage(sm, env_next, x)?.action)
}
