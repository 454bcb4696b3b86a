//! Self-contained dense linear-programming solver.
//!
//! Solves `min c.x  s.t.  E x = f,  L x <= k,  l <= x <= u` and returns the
//! primal solution together with multipliers for both constraint groups.
//!
//! Algorithm: two-phase primal simplex over bounded variables. Phase 1
//! minimizes the sum of artificial variables; phase 2 runs the true
//! objective. The entering rule is most-negative reduced cost, falling back
//! to Bland's rule after a streak of `10 * (n + rows)` degenerate pivots.
//! Free variables are handled natively as nonbasic-at-zero.
//!
//! The basis always consists of structural columns plus unit (slack or
//! artificial) columns. Only the square "kernel" `A[R, S]` formed by the
//! basic structural columns `S` and the rows `R` not covered by a basic unit
//! column needs an explicit inverse; all basis exchanges reduce to rank-one
//! updates of that dense inverse. The kernel is refactorized periodically to
//! bound drift.
//!
//! Dual sign convention: `duals_eq[i]` is the sensitivity of the optimal
//! objective to the rhs of equality `i` (d obj / d f_i), and `duals_ineq[i]`
//! is the conventional nonnegative multiplier of inequality `i` (so
//! d obj / d k_i = -duals_ineq[i]).

use crate::error::{Error, Result};
use crate::math::dot;

/// Minimum magnitude accepted for a pivot element.
pub const PIVOT_TOL: f64 = 1e-9;
/// Absolute primal feasibility tolerance per constraint.
pub const FEAS_TOL: f64 = 1e-7;
/// Relative strong-duality gap tolerance.
pub const DUAL_GAP_TOL: f64 = 1e-6;
/// A step below this is counted as a degenerate pivot.
const DEGEN_TOL: f64 = 1e-12;
/// Reduced-cost threshold for entering candidates.
const RC_TOL: f64 = 1e-9;
/// Kernel refactorization cadence (basis changes).
const REFACTOR_EVERY: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Dense linear program, minimized over `n` variables.
#[derive(Clone, Debug)]
pub struct LpProblem {
    pub n: usize,
    /// Cost vector (length n); the solver minimizes.
    pub objective: Vec<f64>,
    /// Equality rows `(coefficients, rhs)`.
    pub eq: Vec<(Vec<f64>, f64)>,
    /// Inequality rows `coefficients . x <= rhs`.
    pub ineq: Vec<(Vec<f64>, f64)>,
    /// Per-variable lower bounds; `-inf` allowed.
    pub var_lower: Vec<f64>,
    /// Per-variable upper bounds; `+inf` allowed.
    pub var_upper: Vec<f64>,
}

impl LpProblem {
    /// New problem with all variables free and zero objective.
    pub fn new(n: usize) -> Self {
        LpProblem {
            n,
            objective: vec![0.0; n],
            eq: Vec::new(),
            ineq: Vec::new(),
            var_lower: vec![f64::NEG_INFINITY; n],
            var_upper: vec![f64::INFINITY; n],
        }
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        debug_assert_eq!(row.len(), self.n);
        self.eq.push((row, rhs));
    }

    pub fn add_ineq(&mut self, row: Vec<f64>, rhs: f64) {
        debug_assert_eq!(row.len(), self.n);
        self.ineq.push((row, rhs));
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.var_lower[j] = lower;
        self.var_upper[j] = upper;
    }

    pub fn rows(&self) -> usize {
        self.eq.len() + self.ineq.len()
    }

    fn validate(&self) -> Result<()> {
        let bad_len = |r: &Vec<f64>| r.len() != self.n;
        if self.objective.len() != self.n
            || self.var_lower.len() != self.n
            || self.var_upper.len() != self.n
            || self.eq.iter().any(|(r, _)| bad_len(r))
            || self.ineq.iter().any(|(r, _)| bad_len(r))
        {
            return Err(Error::InvalidArgument("LP row/vector length mismatch".into()));
        }
        let finite_rows = self
            .eq
            .iter()
            .chain(self.ineq.iter())
            .all(|(r, b)| b.is_finite() && r.iter().all(|v| v.is_finite()));
        if !finite_rows || !self.objective.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite LP coefficient".into()));
        }
        for j in 0..self.n {
            if self.var_lower[j].is_nan()
                || self.var_upper[j].is_nan()
                || self.var_lower[j] > self.var_upper[j]
            {
                return Err(Error::InvalidArgument(format!("bad bounds on variable {j}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Sensitivity d obj / d rhs per equality row.
    pub duals_eq: Vec<f64>,
    /// Nonnegative multiplier per inequality row.
    pub duals_ineq: Vec<f64>,
}

/// Row address in the caller's numbering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum RowRef {
    Eq(usize),
    Ineq(usize),
}

/// Starting basis hint: structural variables paired with the rows that pin
/// them, everything else slack-basic. Falls back to a cold start when the
/// hint is infeasible or singular.
#[derive(Clone, Debug, Default)]
pub(crate) struct CrashBasis {
    pub pairs: Vec<(usize, RowRef)>,
    /// Nonbasic variables pinned at their upper bound (default: lower/zero).
    pub at_upper: Vec<usize>,
}

pub fn solve_lp(prob: &LpProblem) -> Result<LpSolution> {
    solve_lp_with_start(prob, None)
}

pub(crate) fn solve_lp_with_start(
    prob: &LpProblem,
    start: Option<&CrashBasis>,
) -> Result<LpSolution> {
    prob.validate()?;
    let mut w = Workspace::new(prob);
    if let Some(basis) = start {
        if w.try_crash(basis) {
            return w.run(Phase::Two);
        }
        w.reset();
    }
    w.cold_start();
    w.run(Phase::One)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable, held at zero.
    FreeZero,
}

#[derive(Clone, Copy, Debug)]
enum RowState {
    /// A basic unit-column variable (slack/artificial) absorbs this row.
    Covered { var: usize },
    /// Row belongs to the kernel; `pos` indexes `r_rows`.
    Kernel { pos: usize },
}

struct Workspace<'a> {
    prob: &'a LpProblem,
    n: usize,
    m_eq: usize,
    m: usize,
    n_ineq: usize,
    /// Sparse columns of the structural variables, rows eq-first.
    cols: Vec<Vec<(u32, f64)>>,
    rhs: Vec<f64>,
    /// Variable bounds for structural + slack + artificial.
    lower: Vec<f64>,
    upper: Vec<f64>,
    art_sign: Vec<f64>,
    state: Vec<VarState>,
    val: Vec<f64>,
    row_state: Vec<RowState>,
    s_vars: Vec<usize>,
    r_rows: Vec<usize>,
    /// Inverse of `A[r_rows, s_vars]`; rows index S, columns index R.
    kinv: Vec<Vec<f64>>,
    /// S-position of each basic structural variable, `usize::MAX` otherwise.
    s_pos: Vec<usize>,
    since_refactor: usize,
    degen_streak: usize,
    iterations: usize,
    // scratch
    y: Vec<f64>,
    scratch_rows: Vec<f64>,
}

const NOT_BASIC: usize = usize::MAX;

struct Direction {
    /// Delta of each S-position variable per unit increase of the entering one.
    alpha_s: Vec<f64>,
    /// Deltas of covered-row basic logicals, sparse over rows.
    d_cov: Vec<(usize, f64)>,
}

enum Ratio {
    BoundFlip(f64),
    Leave { var: usize, theta: f64, to_upper: bool },
    Unbounded,
}

impl<'a> Workspace<'a> {
    fn new(prob: &'a LpProblem) -> Self {
        let n = prob.n;
        let m_eq = prob.eq.len();
        let n_ineq = prob.ineq.len();
        let m = m_eq + n_ineq;
        let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        let mut rhs = Vec::with_capacity(m);
        for (r, (row, b)) in prob.eq.iter().chain(prob.ineq.iter()).enumerate() {
            rhs.push(*b);
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    cols[j].push((r as u32, v));
                }
            }
        }
        let total = n + n_ineq + m;
        let mut lower = vec![0.0; total];
        let mut upper = vec![f64::INFINITY; total];
        lower[..n].copy_from_slice(&prob.var_lower);
        upper[..n].copy_from_slice(&prob.var_upper);
        Workspace {
            prob,
            n,
            m_eq,
            m,
            n_ineq,
            cols,
            rhs,
            lower,
            upper,
            art_sign: vec![1.0; m],
            state: vec![VarState::AtLower; total],
            val: vec![0.0; total],
            row_state: vec![RowState::Covered { var: 0 }; m],
            s_vars: Vec::new(),
            r_rows: Vec::new(),
            kinv: Vec::new(),
            s_pos: vec![NOT_BASIC; total],
            since_refactor: 0,
            degen_streak: 0,
            iterations: 0,
            y: vec![0.0; m],
            scratch_rows: vec![0.0; m],
        }
    }

    fn slack_var(&self, ineq_idx: usize) -> usize {
        self.n + ineq_idx
    }

    fn art_var(&self, row: usize) -> usize {
        self.n + self.n_ineq + row
    }

    fn is_artificial(&self, var: usize) -> bool {
        var >= self.n + self.n_ineq
    }

    fn var_row(&self, var: usize) -> usize {
        if self.is_artificial(var) {
            var - self.n - self.n_ineq
        } else {
            self.m_eq + (var - self.n)
        }
    }

    fn unit_sign(&self, var: usize) -> f64 {
        if self.is_artificial(var) {
            self.art_sign[self.var_row(var)]
        } else {
            1.0
        }
    }

    fn reset(&mut self) {
        let total = self.lower.len();
        self.state = vec![VarState::AtLower; total];
        self.val = vec![0.0; total];
        self.s_vars.clear();
        self.r_rows.clear();
        self.kinv.clear();
        self.s_pos = vec![NOT_BASIC; total];
        self.since_refactor = 0;
        self.degen_streak = 0;
    }

    /// Default nonbasic placement: finite bound nearest zero, or free at zero.
    fn place_nonbasic(&mut self) {
        for j in 0..self.lower.len() {
            let (l, u) = (self.lower[j], self.upper[j]);
            let (st, v) = if l.is_finite() {
                if u.is_finite() && u.abs() < l.abs() {
                    (VarState::AtUpper, u)
                } else {
                    (VarState::AtLower, l)
                }
            } else if u.is_finite() {
                (VarState::AtUpper, u)
            } else {
                (VarState::FreeZero, 0.0)
            };
            self.state[j] = st;
            self.val[j] = v;
        }
    }

    /// Row residuals `b - A x` at the current nonbasic point (basics excluded).
    fn residuals(&mut self) -> Vec<f64> {
        let mut res = self.rhs.clone();
        for j in 0..self.n {
            if self.state[j] != VarState::Basic && self.val[j] != 0.0 {
                for &(r, v) in &self.cols[j] {
                    res[r as usize] -= v * self.val[j];
                }
            }
        }
        res
    }

    fn cold_start(&mut self) {
        self.place_nonbasic();
        let res = self.residuals();
        for r in 0..self.m {
            let slack_ok = r >= self.m_eq && res[r] >= 0.0;
            if slack_ok {
                let s = self.slack_var(r - self.m_eq);
                self.state[s] = VarState::Basic;
                self.val[s] = res[r];
                self.row_state[r] = RowState::Covered { var: s };
            } else {
                self.art_sign[r] = if res[r] >= 0.0 { 1.0 } else { -1.0 };
                let a = self.art_var(r);
                self.state[a] = VarState::Basic;
                self.val[a] = res[r].abs();
                self.row_state[r] = RowState::Covered { var: a };
            }
        }
    }

    /// Installs the caller-provided basis; true on success (feasible start).
    fn try_crash(&mut self, basis: &CrashBasis) -> bool {
        let mut used_rows = vec![false; self.m];
        let mut used_vars = vec![false; self.n];
        let mut pairs = Vec::with_capacity(basis.pairs.len());
        for &(var, rref) in &basis.pairs {
            let row = match rref {
                RowRef::Eq(i) if i < self.m_eq => i,
                RowRef::Ineq(i) if i < self.n_ineq => self.m_eq + i,
                _ => return false,
            };
            if var >= self.n || used_rows[row] || used_vars[var] {
                return false;
            }
            used_rows[row] = true;
            used_vars[var] = true;
            pairs.push((var, row));
        }
        // every equality row must be pinned by a structural variable
        if (0..self.m_eq).any(|r| !used_rows[r]) {
            return false;
        }
        self.place_nonbasic();
        for &j in &basis.at_upper {
            if j >= self.n || !self.upper[j].is_finite() {
                return false;
            }
            self.state[j] = VarState::AtUpper;
            self.val[j] = self.upper[j];
        }
        for &(var, row) in &pairs {
            self.state[var] = VarState::Basic;
            self.s_pos[var] = self.s_vars.len();
            self.s_vars.push(var);
            self.r_rows.push(row);
            self.row_state[row] = RowState::Kernel {
                pos: self.r_rows.len() - 1,
            };
        }
        for r in 0..self.m {
            if !used_rows[r] {
                let s = self.slack_var(r - self.m_eq);
                self.state[s] = VarState::Basic;
                self.row_state[r] = RowState::Covered { var: s };
            }
        }
        if !self.refactor() {
            return false;
        }
        // feasibility of the implied basic values
        for &jv in &self.s_vars {
            if self.val[jv] < self.lower[jv] - FEAS_TOL || self.val[jv] > self.upper[jv] + FEAS_TOL
            {
                return false;
            }
        }
        for r in self.m_eq..self.m {
            if let RowState::Covered { var } = self.row_state[r] {
                if self.val[var] < -FEAS_TOL {
                    return false;
                }
            }
        }
        true
    }

    fn cost(&self, var: usize, phase: Phase) -> f64 {
        match phase {
            Phase::One => {
                if self.is_artificial(var) {
                    1.0
                } else {
                    0.0
                }
            }
            Phase::Two => {
                if var < self.n {
                    self.prob.objective[var]
                } else {
                    0.0
                }
            }
        }
    }

    /// Dense dual vector `y` for the current basis and phase costs.
    fn compute_y(&mut self, phase: Phase) {
        for v in self.y.iter_mut() {
            *v = 0.0;
        }
        for r in 0..self.m {
            if let RowState::Covered { var } = self.row_state[r] {
                let c = self.cost(var, phase);
                if c != 0.0 {
                    self.y[r] = c * self.unit_sign(var);
                }
            }
        }
        let s = self.s_vars.len();
        if s == 0 {
            return;
        }
        let mut rhs_s = vec![0.0; s];
        for (jpos, &var) in self.s_vars.iter().enumerate() {
            let mut acc = self.cost(var, phase);
            for &(r, v) in &self.cols[var] {
                if let RowState::Covered { .. } = self.row_state[r as usize] {
                    acc -= self.y[r as usize] * v;
                }
            }
            rhs_s[jpos] = acc;
        }
        let mut y_r = vec![0.0; s];
        for (jpos, row) in self.kinv.iter().enumerate() {
            let w = rhs_s[jpos];
            if w != 0.0 {
                for (ipos, kv) in row.iter().enumerate() {
                    y_r[ipos] += w * kv;
                }
            }
        }
        for (ipos, &r) in self.r_rows.iter().enumerate() {
            self.y[r] = y_r[ipos];
        }
    }

    fn reduced_cost(&self, var: usize, phase: Phase) -> f64 {
        let mut rc = self.cost(var, phase);
        if var < self.n {
            for &(r, v) in &self.cols[var] {
                rc -= self.y[r as usize] * v;
            }
        } else {
            rc -= self.y[self.var_row(var)] * self.unit_sign(var);
        }
        rc
    }

    /// Picks the entering variable: `(var, direction)` or None at optimality.
    fn choose_entering(&self, phase: Phase, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        let candidates = self.n + self.n_ineq; // artificials never re-enter
        for var in 0..candidates {
            if self.state[var] == VarState::Basic || self.lower[var] == self.upper[var] {
                continue;
            }
            let rc = self.reduced_cost(var, phase);
            let dir = match self.state[var] {
                VarState::AtLower if rc < -RC_TOL => 1.0,
                VarState::AtUpper if rc > RC_TOL => -1.0,
                VarState::FreeZero if rc < -RC_TOL => 1.0,
                VarState::FreeZero if rc > RC_TOL => -1.0,
                _ => continue,
            };
            if bland {
                return Some((var, dir));
            }
            let score = -(rc * dir); // positive improvement rate
            match best {
                Some((_, _, s)) if s >= score => {}
                _ => best = Some((var, dir, score)),
            }
        }
        best.map(|(v, d, _)| (v, d))
    }

    /// Basis direction for one unit of the entering variable.
    fn direction(&mut self, enter: usize) -> Direction {
        let s = self.s_vars.len();
        let mut alpha_s = vec![0.0; s];
        // alpha_S = KINV * a_e[R]
        if enter < self.n {
            for &(r, v) in &self.cols[enter] {
                if let RowState::Kernel { pos } = self.row_state[r as usize] {
                    for jpos in 0..s {
                        alpha_s[jpos] += self.kinv[jpos][pos] * v;
                    }
                }
            }
        } else {
            let r = self.var_row(enter);
            if let RowState::Kernel { pos } = self.row_state[r] {
                let sg = self.unit_sign(enter);
                for jpos in 0..s {
                    alpha_s[jpos] = self.kinv[jpos][pos] * sg;
                }
            }
        }
        // covered rows: d_r = sign_r * (a_e[r] - A[r, S] . alpha_S)
        let mut scratch = std::mem::take(&mut self.scratch_rows);
        let mut touched: Vec<usize> = Vec::new();
        let touch = |r: usize, v: f64, scratch: &mut Vec<f64>, touched: &mut Vec<usize>| {
            if scratch[r] == 0.0 && v != 0.0 {
                touched.push(r);
            }
            scratch[r] += v;
        };
        if enter < self.n {
            for &(r, v) in &self.cols[enter] {
                let r = r as usize;
                if matches!(self.row_state[r], RowState::Covered { .. }) {
                    touch(r, v, &mut scratch, &mut touched);
                }
            }
        } else {
            let r = self.var_row(enter);
            if matches!(self.row_state[r], RowState::Covered { .. }) {
                touch(r, self.unit_sign(enter), &mut scratch, &mut touched);
            }
        }
        for (jpos, &var) in self.s_vars.iter().enumerate() {
            let a = alpha_s[jpos];
            if a == 0.0 {
                continue;
            }
            for &(r, v) in &self.cols[var] {
                let r = r as usize;
                if matches!(self.row_state[r], RowState::Covered { .. }) {
                    touch(r, -v * a, &mut scratch, &mut touched);
                }
            }
        }
        let mut d_cov = Vec::with_capacity(touched.len());
        for &r in &touched {
            let raw = scratch[r];
            scratch[r] = 0.0;
            if raw != 0.0 {
                if let RowState::Covered { var } = self.row_state[r] {
                    d_cov.push((r, raw * self.unit_sign(var)));
                }
            }
        }
        self.scratch_rows = scratch;
        d_cov.sort_unstable_by_key(|&(r, _)| r);
        Direction { alpha_s, d_cov }
    }

    /// Bounded-variable ratio test for the entering variable moving `dir`.
    fn ratio_test(&self, enter: usize, dir: f64, d: &Direction, bland: bool) -> Ratio {
        let mut theta = f64::INFINITY;
        // entering variable's own range allows a bound flip
        let range = self.upper[enter] - self.lower[enter];
        if range.is_finite() {
            theta = range;
        }
        struct Cand {
            var: usize,
            theta: f64,
            to_upper: bool,
            mag: f64,
        }
        let mut cands: Vec<Cand> = Vec::new();
        let consider = |var: usize, delta_signed: f64, cands: &mut Vec<Cand>| {
            // basic value moves by -theta * delta_signed
            if delta_signed > PIVOT_TOL {
                let l = self.lower[var];
                if l.is_finite() {
                    let t = ((self.val[var] - l) / delta_signed).max(0.0);
                    cands.push(Cand {
                        var,
                        theta: t,
                        to_upper: false,
                        mag: delta_signed,
                    });
                }
            } else if delta_signed < -PIVOT_TOL {
                let u = self.upper[var];
                if u.is_finite() {
                    let t = ((self.val[var] - u) / delta_signed).max(0.0);
                    cands.push(Cand {
                        var,
                        theta: t,
                        to_upper: true,
                        mag: -delta_signed,
                    });
                }
            }
        };
        for (jpos, &var) in self.s_vars.iter().enumerate() {
            consider(var, dir * d.alpha_s[jpos], &mut cands);
        }
        for &(r, dv) in &d.d_cov {
            if let RowState::Covered { var } = self.row_state[r] {
                consider(var, dir * dv, &mut cands);
            }
        }
        let min_theta = cands
            .iter()
            .map(|c| c.theta)
            .fold(theta, f64::min);
        if min_theta.is_infinite() {
            return Ratio::Unbounded;
        }
        // essentially-exact ties only, so non-leaving basics stay feasible
        let window = min_theta + 1e-15 * (1.0 + min_theta);
        let mut pick: Option<&Cand> = None;
        for c in &cands {
            if c.theta <= window {
                pick = match pick {
                    None => Some(c),
                    Some(p) => {
                        let better = if bland {
                            c.var < p.var
                        } else {
                            // prefer kicking artificials, then numerical size
                            let ca = self.is_artificial(c.var);
                            let pa = self.is_artificial(p.var);
                            ca && !pa || (ca == pa && c.mag > p.mag)
                        };
                        Some(if better { c } else { p })
                    }
                };
            }
        }
        match pick {
            None => Ratio::BoundFlip(theta),
            Some(c) => Ratio::Leave {
                var: c.var,
                theta: c.theta.max(0.0),
                to_upper: c.to_upper,
            },
        }
    }

    /// Applies the pivot: updates values, basis sets and the kernel inverse.
    fn pivot(
        &mut self,
        enter: usize,
        dir: f64,
        theta: f64,
        leave: usize,
        to_upper: bool,
        d: &Direction,
    ) -> bool {
        let step = dir * theta;
        for (jpos, &var) in self.s_vars.iter().enumerate() {
            self.val[var] -= step * d.alpha_s[jpos];
        }
        for &(r, dv) in &d.d_cov {
            if let RowState::Covered { var } = self.row_state[r] {
                self.val[var] -= step * dv;
            }
        }
        self.val[enter] = match self.state[enter] {
            VarState::AtLower => self.lower[enter] + step,
            VarState::AtUpper => self.upper[enter] + step,
            VarState::FreeZero => step,
            VarState::Basic => unreachable!(),
        };
        // snap the leaving variable onto its bound
        self.val[leave] = if to_upper {
            self.upper[leave]
        } else {
            self.lower[leave]
        };
        let enter_struct = enter < self.n;
        let leave_struct = leave < self.n;
        let ok = match (enter_struct, leave_struct) {
            (true, true) => self.kinv_colrep(self.s_pos[leave], enter, d),
            (true, false) => self.kinv_grow(self.var_row(leave), enter, d),
            (false, true) => self.kinv_shrink(self.var_row(enter), self.s_pos[leave]),
            (false, false) => self.kinv_rowrep(self.var_row(enter), self.var_row(leave)),
        };
        if !ok {
            return false;
        }
        if !enter_struct {
            // an entering slack/artificial covers its own row again
            let r = self.var_row(enter);
            self.row_state[r] = RowState::Covered { var: enter };
        }
        self.state[enter] = VarState::Basic;
        self.state[leave] = if to_upper {
            VarState::AtUpper
        } else {
            VarState::AtLower
        };
        self.since_refactor += 1;
        true
    }

    fn kinv_colrep(&mut self, bpos: usize, enter: usize, d: &Direction) -> bool {
        let w = &d.alpha_s;
        if w[bpos].abs() < PIVOT_TOL {
            return false;
        }
        let s = self.s_vars.len();
        let inv_pivot = 1.0 / w[bpos];
        for i in 0..s {
            self.kinv[bpos][i] *= inv_pivot;
        }
        let pivot_row = self.kinv[bpos].clone();
        for (jpos, row) in self.kinv.iter_mut().enumerate() {
            if jpos == bpos {
                continue;
            }
            let f = w[jpos];
            if f != 0.0 {
                for i in 0..s {
                    row[i] -= f * pivot_row[i];
                }
            }
        }
        let old = self.s_vars[bpos];
        self.s_pos[old] = NOT_BASIC;
        self.s_vars[bpos] = enter;
        self.s_pos[enter] = bpos;
        true
    }

    fn kinv_grow(&mut self, new_row: usize, enter: usize, d: &Direction) -> bool {
        let s = self.s_vars.len();
        let p = &d.alpha_s; // KINV * a_e[R]
        // q^T = A[new_row, S] * KINV ; corner = A[new_row, enter]
        let mut q = vec![0.0; s];
        let mut corner = 0.0;
        let mut row_on_s = vec![0.0; s];
        for (jpos, &var) in self.s_vars.iter().enumerate() {
            for &(r, v) in &self.cols[var] {
                if r as usize == new_row {
                    row_on_s[jpos] = v;
                }
            }
        }
        for &(r, v) in &self.cols[enter] {
            if r as usize == new_row {
                corner = v;
            }
        }
        for jpos in 0..s {
            let w = row_on_s[jpos];
            if w != 0.0 {
                for i in 0..s {
                    q[i] += w * self.kinv[jpos][i];
                }
            }
        }
        let schur = corner - dot(&row_on_s, p);
        if schur.abs() < PIVOT_TOL {
            return false;
        }
        let inv_sc = 1.0 / schur;
        for (jpos, row) in self.kinv.iter_mut().enumerate() {
            let pj = p[jpos];
            for i in 0..s {
                row[i] += pj * q[i] * inv_sc;
            }
            row.push(-pj * inv_sc);
        }
        let mut last = vec![0.0; s + 1];
        for i in 0..s {
            last[i] = -q[i] * inv_sc;
        }
        last[s] = inv_sc;
        self.kinv.push(last);
        self.s_pos[enter] = self.s_vars.len();
        self.s_vars.push(enter);
        self.r_rows.push(new_row);
        self.row_state[new_row] = RowState::Kernel {
            pos: self.r_rows.len() - 1,
        };
        true
    }

    fn kinv_shrink(&mut self, gone_row: usize, bpos: usize) -> bool {
        let apos = match self.row_state[gone_row] {
            RowState::Kernel { pos } => pos,
            RowState::Covered { .. } => return false,
        };
        let s = self.s_vars.len();
        let h = self.kinv[bpos][apos];
        if h.abs() < PIVOT_TOL {
            return false;
        }
        let col_a: Vec<f64> = (0..s).map(|j| self.kinv[j][apos]).collect();
        let row_b = self.kinv[bpos].clone();
        for (jpos, row) in self.kinv.iter_mut().enumerate() {
            if jpos == bpos {
                continue;
            }
            let f = col_a[jpos] / h;
            if f != 0.0 {
                for i in 0..s {
                    row[i] -= f * row_b[i];
                }
            }
        }
        self.kinv.remove(bpos);
        for row in self.kinv.iter_mut() {
            row.remove(apos);
        }
        let gone_var = self.s_vars.remove(bpos);
        self.s_pos[gone_var] = NOT_BASIC;
        for (jpos, &var) in self.s_vars.iter().enumerate().skip(bpos) {
            self.s_pos[var] = jpos;
        }
        self.r_rows.remove(apos);
        for (ipos, &r) in self.r_rows.iter().enumerate().skip(apos) {
            self.row_state[r] = RowState::Kernel { pos: ipos };
        }
        true
    }

    fn kinv_rowrep(&mut self, gone_row: usize, new_row: usize) -> bool {
        let apos = match self.row_state[gone_row] {
            RowState::Kernel { pos } => pos,
            RowState::Covered { .. } => return false,
        };
        let s = self.s_vars.len();
        let mut row_on_s = vec![0.0; s];
        for (jpos, &var) in self.s_vars.iter().enumerate() {
            for &(r, v) in &self.cols[var] {
                if r as usize == new_row {
                    row_on_s[jpos] = v;
                }
            }
        }
        let mut z = vec![0.0; s];
        for jpos in 0..s {
            let w = row_on_s[jpos];
            if w != 0.0 {
                for i in 0..s {
                    z[i] += w * self.kinv[jpos][i];
                }
            }
        }
        if z[apos].abs() < PIVOT_TOL {
            return false;
        }
        let inv_pivot = 1.0 / z[apos];
        for row in self.kinv.iter_mut() {
            row[apos] *= inv_pivot;
        }
        for i in 0..s {
            if i == apos {
                continue;
            }
            let f = z[i];
            if f != 0.0 {
                for row in self.kinv.iter_mut() {
                    row[i] -= f * row[apos];
                }
            }
        }
        self.r_rows[apos] = new_row;
        self.row_state[new_row] = RowState::Kernel { pos: apos };
        true
    }

    /// Rebuilds the kernel inverse and all basic values from scratch.
    fn refactor(&mut self) -> bool {
        let s = self.s_vars.len();
        let mut sparse: Vec<Vec<(usize, f64)>> = vec![Vec::new(); s];
        for (jpos, &var) in self.s_vars.iter().enumerate() {
            for &(r, v) in &self.cols[var] {
                if let RowState::Kernel { pos } = self.row_state[r as usize] {
                    sparse[pos].push((jpos, v));
                }
            }
        }
        let inv = match invert_kernel(&sparse) {
            Some(inv) => inv,
            None => return false,
        };
        self.kinv = inv;
        let res = self.residuals();
        let mut x_s = vec![0.0; s];
        for (ipos, &r) in self.r_rows.iter().enumerate() {
            let w = res[r];
            if w != 0.0 {
                for jpos in 0..s {
                    x_s[jpos] += self.kinv[jpos][ipos] * w;
                }
            }
        }
        for (jpos, &var) in self.s_vars.iter().enumerate() {
            self.val[var] = x_s[jpos];
        }
        let mut cov = res;
        for (jpos, &var) in self.s_vars.iter().enumerate() {
            let xv = x_s[jpos];
            if xv != 0.0 {
                for &(r, v) in &self.cols[var] {
                    cov[r as usize] -= v * xv;
                }
            }
        }
        for r in 0..self.m {
            if let RowState::Covered { var } = self.row_state[r] {
                self.val[var] = cov[r] * self.unit_sign(var);
            }
        }
        self.since_refactor = 0;
        true
    }

    fn art_sum(&self) -> f64 {
        (0..self.m)
            .map(|r| self.art_var(r))
            .filter(|&a| self.state[a] == VarState::Basic)
            .map(|a| self.val[a].max(0.0))
            .sum()
    }

    /// Degenerate pivots that evict still-basic artificials after phase 1.
    fn pivot_out_artificials(&mut self) {
        let rows: Vec<usize> = (0..self.m)
            .filter(|&r| match self.row_state[r] {
                RowState::Covered { var } => self.is_artificial(var),
                RowState::Kernel { .. } => false,
            })
            .collect();
        for r in rows {
            let art = match self.row_state[r] {
                RowState::Covered { var } => var,
                RowState::Kernel { .. } => continue,
            };
            let candidates: Vec<usize> = (0..self.n + self.n_ineq)
                .filter(|&v| self.state[v] != VarState::Basic && v != art)
                .collect();
            for cand in candidates {
                let d = self.direction(cand);
                let pivot_mag = d
                    .d_cov
                    .iter()
                    .find(|&&(rr, _)| rr == r)
                    .map(|&(_, dv)| dv.abs())
                    .unwrap_or(0.0);
                if pivot_mag > 1e-7 && self.pivot(cand, 1.0, 0.0, art, false, &d) {
                    break;
                }
            }
            // still covered by the artificial: the row is redundant; the
            // pinned artificial stays basic at zero.
        }
    }

    fn pin_artificials(&mut self) {
        for r in 0..self.m {
            let a = self.art_var(r);
            self.lower[a] = 0.0;
            self.upper[a] = 0.0;
        }
    }

    fn run(&mut self, mut phase: Phase) -> Result<LpSolution> {
        let cap = 50 * (self.n + self.m + 1);
        let bland_after = 10 * (self.n + self.m);
        loop {
            self.iterations += 1;
            if self.iterations > cap {
                return Err(self.stalled());
            }
            if self.since_refactor >= REFACTOR_EVERY && !self.refactor() {
                return Err(self.stalled());
            }
            let bland = self.degen_streak > bland_after;
            self.compute_y(phase);
            let entering = self.choose_entering(phase, bland);
            let (enter, dir) = match entering {
                Some(e) => e,
                None => {
                    match phase {
                        Phase::One => {
                            if self.art_sum() > FEAS_TOL {
                                return Ok(self.finish(LpStatus::Infeasible));
                            }
                            self.pivot_out_artificials();
                            self.pin_artificials();
                            phase = Phase::Two;
                            self.degen_streak = 0;
                            continue;
                        }
                        Phase::Two => {
                            // clean up accumulated drift before reporting,
                            // unless the basis barely moved
                            if self.since_refactor > 16 && !self.refactor() {
                                return Err(self.stalled());
                            }
                            return Ok(self.finish(LpStatus::Optimal));
                        }
                    }
                }
            };
            let d = self.direction(enter);
            match self.ratio_test(enter, dir, &d, bland) {
                Ratio::Unbounded => {
                    if phase == Phase::One {
                        // the phase-1 objective is bounded below by zero, so
                        // an unbounded ray here is numerical breakdown
                        return Err(self.stalled());
                    }
                    return Ok(self.finish(LpStatus::Unbounded));
                }
                Ratio::BoundFlip(theta) => {
                    let step = dir * theta;
                    for (jpos, &var) in self.s_vars.iter().enumerate() {
                        self.val[var] -= step * d.alpha_s[jpos];
                    }
                    for &(r, dv) in &d.d_cov {
                        if let RowState::Covered { var } = self.row_state[r] {
                            self.val[var] -= step * dv;
                        }
                    }
                    let (st, v) = if dir > 0.0 {
                        (VarState::AtUpper, self.upper[enter])
                    } else {
                        (VarState::AtLower, self.lower[enter])
                    };
                    self.state[enter] = st;
                    self.val[enter] = v;
                    self.degen_streak = 0;
                }
                Ratio::Leave { var, theta, to_upper } => {
                    let degenerate = theta <= DEGEN_TOL;
                    if !self.pivot(enter, dir, theta, var, to_upper, &d) {
                        // numerically unusable pivot: refactor and retry
                        if !self.refactor() {
                            return Err(self.stalled());
                        }
                        continue;
                    }
                    if degenerate {
                        self.degen_streak += 1;
                    } else {
                        self.degen_streak = 0;
                    }
                }
            }
        }
    }

    fn stalled(&self) -> Error {
        let x: Vec<f64> = self.val[..self.n].to_vec();
        Error::SolverStalled {
            iterations: self.iterations,
            objective: dot(&self.prob.objective, &x),
            best_x: x,
        }
    }

    fn finish(&mut self, status: LpStatus) -> LpSolution {
        let x: Vec<f64> = self.val[..self.n].to_vec();
        match status {
            LpStatus::Optimal => {
                self.compute_y(Phase::Two);
                let duals_eq: Vec<f64> = (0..self.m_eq).map(|r| self.y[r]).collect();
                let duals_ineq: Vec<f64> =
                    (self.m_eq..self.m).map(|r| -self.y[r]).collect();
                let objective = dot(&self.prob.objective, &x);
                LpSolution {
                    status,
                    x,
                    objective,
                    duals_eq,
                    duals_ineq,
                }
            }
            LpStatus::Infeasible | LpStatus::Unbounded => LpSolution {
                status,
                objective: if status == LpStatus::Unbounded {
                    f64::NEG_INFINITY
                } else {
                    f64::NAN
                },
                x,
                duals_eq: vec![0.0; self.m_eq],
                duals_ineq: vec![0.0; self.n_ineq],
            },
        }
    }
}

/// Inverts the kernel given as sparse rows. Bases here are usually
/// triangularizable by row-singleton elimination, which an O(s * nnz)
/// substitution pass exploits; anything else falls back to dense
/// Gauss-Jordan.
fn invert_kernel(rows: &[Vec<(usize, f64)>]) -> Option<Vec<Vec<f64>>> {
    let s = rows.len();
    if let Some(order) = triangular_order(rows, s) {
        // kinv column i solves K x = e_i following the elimination order
        let mut kinv = vec![vec![0.0; s]; s];
        let mut x = vec![0.0; s];
        for i in 0..s {
            for &(rpos, cpos) in &order {
                let mut acc = if rpos == i { 1.0 } else { 0.0 };
                let mut diag = 0.0;
                for &(j, v) in &rows[rpos] {
                    if j == cpos {
                        diag = v;
                    } else {
                        acc -= v * x[j];
                    }
                }
                x[cpos] = acc / diag;
            }
            for j in 0..s {
                kinv[j][i] = x[j];
                x[j] = 0.0;
            }
        }
        return Some(kinv);
    }
    let mut dense = vec![vec![0.0; s]; s];
    for (rpos, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            dense[rpos][j] = v;
        }
    }
    invert(&dense)
}

/// Orders `(row, col)` pivots so each row has exactly one nonzero among the
/// columns still unassigned; None when the matrix is not triangularizable.
fn triangular_order(rows: &[Vec<(usize, f64)>], s: usize) -> Option<Vec<(usize, usize)>> {
    let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); s];
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            if v != 0.0 {
                col_rows[c].push(r);
            }
        }
    }
    let mut col_done = vec![false; s];
    let mut row_done = vec![false; s];
    let mut live: Vec<usize> = rows
        .iter()
        .map(|r| r.iter().filter(|&&(_, v)| v != 0.0).count())
        .collect();
    let mut order = Vec::with_capacity(s);
    let mut queue: Vec<usize> = (0..s).filter(|&r| live[r] == 1).collect();
    while let Some(r) = queue.pop() {
        if row_done[r] {
            continue;
        }
        let pivot = rows[r]
            .iter()
            .find(|&&(c, v)| !col_done[c] && v != 0.0 && v.abs() >= 1e-12);
        let c = match pivot {
            Some(&(c, _)) => c,
            None => return None, // singleton entry too small; use dense path
        };
        row_done[r] = true;
        col_done[c] = true;
        order.push((r, c));
        for &r2 in &col_rows[c] {
            if !row_done[r2] {
                live[r2] -= 1;
                if live[r2] == 1 {
                    queue.push(r2);
                }
            }
        }
    }
    if order.len() == s {
        Some(order)
    } else {
        None
    }
}

/// Dense Gauss-Jordan inverse with partial pivoting; None when singular.
fn invert(k: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let s = k.len();
    let mut a: Vec<Vec<f64>> = k.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..s)
        .map(|i| {
            let mut row = vec![0.0; s];
            row[i] = 1.0;
            row
        })
        .collect();
    for col in 0..s {
        let (pivot_row, pivot_val) = (col..s)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if pivot_val < 1e-12 {
            return None;
        }
        a.swap(col, pivot_row);
        inv.swap(col, pivot_row);
        let p = a[col][col];
        for j in 0..s {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..s {
            if r == col {
                continue;
            }
            let f = a[r][col];
            if f != 0.0 {
                for j in 0..s {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    // inv now satisfies inv * K = I with rows indexing K's columns (S) after
    // the row swaps were applied jointly, i.e. the plain matrix inverse.
    Some(inv)
}
