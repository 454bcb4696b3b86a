//! Problem data model: per-stage dynamics, piecewise-linear convex costs,
//! linear constraints and state domains, with structural validation.
//!
//! The accepted model class is deliberately LP-representable: stage costs are
//! sums of max-of-affine terms, constraints and dynamics are linear, state
//! domains are boxes with optional extra linear inequalities. Within this
//! class every stage subproblem is an exact linear program, and stage values
//! are convex in the state by construction.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envelope::{Envelope, Hyperplane};
use crate::error::{Error, Result};
use crate::lp::{self, LpProblem, LpStatus};
use crate::math::{all_finite, dot};

/// One affine piece `a.x + b.u + d.w + e` of a max-of-affine cost term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub d: Vec<f64>,
    pub e: f64,
}

impl AffinePiece {
    pub fn eval(&self, x: &[f64], u: &[f64], w: &[f64]) -> f64 {
        dot(&self.a, x) + dot(&self.b, u) + dot(&self.d, w) + self.e
    }
}

/// Max over affine pieces; convex in `(x, u)` for fixed `w` by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PwlTerm {
    pub pieces: Vec<AffinePiece>,
}

impl PwlTerm {
    pub fn eval(&self, x: &[f64], u: &[f64], w: &[f64]) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.eval(x, u, w))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `gx.x + gu.u <= rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub gx: Vec<f64>,
    #[serde(default)]
    pub gu: Vec<f64>,
    pub rhs: f64,
}

/// One noise realization and its probability. A missing probability means
/// the scenario set is an equally-weighted sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub w: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
}

/// Box `[lower, upper]` plus optional linear inequalities on the state alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<Vec<LinearConstraint>>,
}

impl StateDomain {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let box_ok = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol);
        box_ok
            && self
                .extra
                .iter()
                .flatten()
                .all(|c| dot(&c.gx, x) <= c.rhs + tol)
    }
}

/// One stage of the horizon: `x' = A x + B u + w`, cost = sum of PWL terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageModel {
    pub t: usize,
    pub p: usize,
    pub m: usize,
    pub q: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub scenarios: Vec<Scenario>,
    pub cost_terms: Vec<PwlTerm>,
    #[serde(default)]
    pub constraints: Vec<LinearConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_upper: Option<Vec<f64>>,
    pub domain: StateDomain,
}

impl StageModel {
    /// Scenario probabilities with the uniform-sample default filled in.
    pub fn scenario_probs(&self) -> Vec<f64> {
        let k = self.scenarios.len();
        self.scenarios
            .iter()
            .map(|s| s.prob.unwrap_or(1.0 / k as f64))
            .collect()
    }

    /// Exact stage cost `c_t(x, u, w)`.
    pub fn stage_cost(&self, x: &[f64], u: &[f64], w: &[f64]) -> f64 {
        self.cost_terms.iter().map(|t| t.eval(x, u, w)).sum()
    }

    /// `x' = A x + B u + w`.
    pub fn transition(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        (0..self.p)
            .map(|i| dot(&self.a[i], x) + dot(&self.b[i], u) + w[i])
            .collect()
    }

    pub fn action_bound(&self, j: usize) -> (f64, f64) {
        let l = self
            .action_lower
            .as_ref()
            .map_or(f64::NEG_INFINITY, |v| v[j]);
        let u = self.action_upper.as_ref().map_or(f64::INFINITY, |v| v[j]);
        (l, u)
    }
}

/// Terminal cost specification: identically zero, or an explicit convex PWL
/// function given as its supporting hyperplanes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TerminalSpec {
    Keyword(String),
    Planes { planes: Vec<Hyperplane> },
}

impl TerminalSpec {
    pub fn zero() -> Self {
        TerminalSpec::Keyword("zero".into())
    }

    /// Builds the stage-T envelope this specification denotes.
    pub fn to_envelope(&self, t: usize, p: usize) -> Envelope {
        match self {
            TerminalSpec::Keyword(_) => Envelope {
                t,
                p,
                planes: vec![Hyperplane::new(vec![0.0; p], 0.0, vec![0.0; p])],
            },
            TerminalSpec::Planes { planes } => Envelope {
                t,
                p,
                planes: planes.clone(),
            },
        }
    }
}

/// The whole finite-horizon problem: stages `t = 1..T-1` plus terminal spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    #[serde(rename = "T")]
    pub num_stages: usize,
    pub terminal: TerminalSpec,
    pub stages: Vec<StageModel>,
}

impl Horizon {
    /// Parses a model file. A single stage entry with `T > 2` declares a
    /// stationary model and is replicated across all stages.
    pub fn load(path: &Path) -> Result<Horizon> {
        let text = fs::read_to_string(path)?;
        let mut h: Horizon = serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        h.expand_stationary();
        Ok(h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = crate::envelope::tmp_path(path);
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn expand_stationary(&mut self) {
        if self.stages.len() == 1 && self.num_stages > 2 {
            let proto = self.stages[0].clone();
            self.stages = (1..self.num_stages)
                .map(|t| {
                    let mut s = proto.clone();
                    s.t = t;
                    s
                })
                .collect();
        }
    }

    pub fn stage(&self, t: usize) -> &StageModel {
        &self.stages[t - 1]
    }

    /// State dimension of stage 1 (all stages chain to the same p).
    pub fn state_dim(&self) -> usize {
        self.stages.first().map_or(0, |s| s.p)
    }

    pub fn terminal_envelope(&self) -> Envelope {
        let p = self.stages.last().map_or(0, |s| s.p);
        self.terminal.to_envelope(self.num_stages, p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    DimensionMismatch,
    ProbabilitySum,
    EmptyDomain,
    UnboundedActions,
    EmptyPieces,
    StageIndexing,
    NonFinite,
    TerminalInvalid,
}

#[derive(Clone, Debug)]
pub struct Violation {
    pub kind: ViolationKind,
    pub stage: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(t) => write!(f, "stage {t}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Every violated structural rule; the model is valid iff this is empty.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, stage: Option<usize>, message: String) {
        self.violations.push(Violation {
            kind,
            stage,
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

const PROB_SUM_TOL: f64 = 1e-9;

/// Checks every structural rule and returns the full list of violations.
pub fn validate_model(h: &Horizon) -> ValidationReport {
    let mut rep = ValidationReport::default();
    if h.num_stages < 2 {
        rep.push(
            ViolationKind::StageIndexing,
            None,
            format!("T must be at least 2, got {}", h.num_stages),
        );
    }
    if h.stages.len() + 1 != h.num_stages {
        rep.push(
            ViolationKind::StageIndexing,
            None,
            format!(
                "expected {} stage models for T={}, got {}",
                h.num_stages.saturating_sub(1),
                h.num_stages,
                h.stages.len()
            ),
        );
    }
    if let TerminalSpec::Keyword(k) = &h.terminal {
        if k != "zero" {
            rep.push(
                ViolationKind::TerminalInvalid,
                None,
                format!("terminal keyword must be \"zero\", got {k:?}"),
            );
        }
    }
    let mut prev_p: Option<usize> = None;
    for (idx, sm) in h.stages.iter().enumerate() {
        let t = Some(sm.t);
        if sm.t != idx + 1 {
            rep.push(
                ViolationKind::StageIndexing,
                t,
                format!("stage at position {} has t={}", idx + 1, sm.t),
            );
        }
        if let Some(p_prev) = prev_p {
            if sm.p != p_prev {
                rep.push(
                    ViolationKind::DimensionMismatch,
                    t,
                    format!("state dimension {} does not chain from {}", sm.p, p_prev),
                );
            }
        }
        prev_p = Some(sm.p);
        validate_stage(sm, &mut rep);
    }
    if rep.is_valid() {
        if let TerminalSpec::Planes { planes } = &h.terminal {
            let p = h.stages.last().map(|s| s.p).unwrap_or(0);
            if planes.is_empty() {
                rep.push(
                    ViolationKind::TerminalInvalid,
                    None,
                    "terminal plane list is empty".into(),
                );
            }
            for pl in planes {
                if pl.base.len() != p || pl.grad.len() != p {
                    rep.push(
                        ViolationKind::DimensionMismatch,
                        None,
                        "terminal plane dimension does not match state dimension".into(),
                    );
                } else if !pl.is_finite() {
                    rep.push(
                        ViolationKind::NonFinite,
                        None,
                        "terminal plane has non-finite coefficients".into(),
                    );
                }
            }
        }
    }
    rep
}

fn validate_stage(sm: &StageModel, rep: &mut ValidationReport) {
    let t = Some(sm.t);
    let dim_err = |rep: &mut ValidationReport, msg: String| {
        rep.push(ViolationKind::DimensionMismatch, t, msg);
    };
    if sm.a.len() != sm.p || sm.a.iter().any(|r| r.len() != sm.p) {
        dim_err(rep, format!("A must be {}x{}", sm.p, sm.p));
    }
    if sm.b.len() != sm.p || sm.b.iter().any(|r| r.len() != sm.m) {
        dim_err(rep, format!("B must be {}x{}", sm.p, sm.m));
    }
    if !sm.a.iter().chain(sm.b.iter()).all(|r| all_finite(r)) {
        rep.push(
            ViolationKind::NonFinite,
            t,
            "A or B has non-finite entries".into(),
        );
    }
    if sm.scenarios.is_empty() {
        rep.push(ViolationKind::ProbabilitySum, t, "no scenarios".into());
    } else {
        let mut sum = 0.0;
        let mut explicit = 0usize;
        for (k, sc) in sm.scenarios.iter().enumerate() {
            if sc.w.len() != sm.q {
                dim_err(rep, format!("scenario {k} has w of length {}", sc.w.len()));
            }
            if !all_finite(&sc.w) {
                rep.push(
                    ViolationKind::NonFinite,
                    t,
                    format!("scenario {k} has non-finite noise"),
                );
            }
            if let Some(p) = sc.prob {
                explicit += 1;
                if !(0.0..=1.0).contains(&p) {
                    rep.push(
                        ViolationKind::ProbabilitySum,
                        t,
                        format!("scenario {k} probability {p} outside [0, 1]"),
                    );
                }
                sum += p;
            }
        }
        if explicit != 0 && explicit != sm.scenarios.len() {
            rep.push(
                ViolationKind::ProbabilitySum,
                t,
                "scenario probabilities must be all present or all omitted".into(),
            );
        } else if explicit == sm.scenarios.len() && (sum - 1.0).abs() > PROB_SUM_TOL {
            rep.push(
                ViolationKind::ProbabilitySum,
                t,
                format!("scenario probabilities sum to {sum}"),
            );
        }
    }
    for (ti, term) in sm.cost_terms.iter().enumerate() {
        if term.pieces.is_empty() {
            rep.push(
                ViolationKind::EmptyPieces,
                t,
                format!("cost term {ti} has no pieces"),
            );
        }
        for piece in &term.pieces {
            if piece.a.len() != sm.p || piece.b.len() != sm.m || piece.d.len() != sm.q {
                dim_err(rep, format!("cost term {ti} has a piece with wrong lengths"));
            }
            if !(all_finite(&piece.a)
                && all_finite(&piece.b)
                && all_finite(&piece.d)
                && piece.e.is_finite())
            {
                rep.push(
                    ViolationKind::NonFinite,
                    t,
                    format!("cost term {ti} has non-finite coefficients"),
                );
            }
        }
    }
    for (ci, c) in sm.constraints.iter().enumerate() {
        if c.gx.len() != sm.p || c.gu.len() != sm.m {
            dim_err(rep, format!("constraint {ci} has wrong lengths"));
        }
        if !(all_finite(&c.gx) && all_finite(&c.gu) && c.rhs.is_finite()) {
            rep.push(
                ViolationKind::NonFinite,
                t,
                format!("constraint {ci} has non-finite coefficients"),
            );
        }
    }
    for (name, v) in [("action_lower", &sm.action_lower), ("action_upper", &sm.action_upper)] {
        if let Some(v) = v {
            if v.len() != sm.m {
                dim_err(rep, format!("{name} has length {}", v.len()));
            }
        }
    }
    if sm.constraints.is_empty() {
        let unbounded = (0..sm.m).any(|j| {
            let (l, u) = sm.action_bound(j);
            !(l.is_finite() && u.is_finite())
        });
        if unbounded {
            rep.push(
                ViolationKind::UnboundedActions,
                t,
                "action set is unbounded and there are no constraints".into(),
            );
        }
    }
    validate_domain(sm, rep);
}

fn validate_domain(sm: &StageModel, rep: &mut ValidationReport) {
    let t = Some(sm.t);
    let dom = &sm.domain;
    if dom.lower.len() != sm.p || dom.upper.len() != sm.p {
        rep.push(
            ViolationKind::DimensionMismatch,
            t,
            "domain bounds have wrong length".into(),
        );
        return;
    }
    if !(all_finite(&dom.lower) && all_finite(&dom.upper)) {
        rep.push(
            ViolationKind::NonFinite,
            t,
            "domain bounds must be finite".into(),
        );
        return;
    }
    if dom.lower.iter().zip(&dom.upper).any(|(l, u)| l > u) {
        rep.push(
            ViolationKind::EmptyDomain,
            t,
            "domain box is empty (lower > upper)".into(),
        );
        return;
    }
    if let Some(extra) = &dom.extra {
        for (ci, c) in extra.iter().enumerate() {
            if c.gx.len() != sm.p {
                rep.push(
                    ViolationKind::DimensionMismatch,
                    t,
                    format!("domain constraint {ci} has gx of length {}", c.gx.len()),
                );
                return;
            }
            if c.gu.iter().any(|&v| v != 0.0) {
                rep.push(
                    ViolationKind::DimensionMismatch,
                    t,
                    format!("domain constraint {ci} must not involve actions"),
                );
            }
        }
        if !extra.is_empty() {
            // feasibility of box + extra inequalities, checked by LP
            let mut lp = LpProblem::new(sm.p);
            for i in 0..sm.p {
                lp.set_bounds(i, dom.lower[i], dom.upper[i]);
            }
            for c in extra {
                lp.add_ineq(c.gx.clone(), c.rhs);
            }
            match lp::solve_lp(&lp) {
                Ok(sol) if sol.status == LpStatus::Optimal => {}
                _ => rep.push(
                    ViolationKind::EmptyDomain,
                    t,
                    "domain box with extra constraints is infeasible".into(),
                ),
            }
        }
    }
}

/// Initial simplex whose hull contains the domain box: `v_0 = lower`,
/// `v_i = lower + p (upper_i - lower_i) e_i`. Coordinates with
/// `lower_i == upper_i` are flattened and reported.
#[derive(Clone, Debug)]
pub struct InitialSimplex {
    pub vertices: Vec<Vec<f64>>,
    /// Indices of degenerate coordinates pinned at their single value.
    pub flattened: Vec<usize>,
}

pub fn default_initial_simplex(dom: &StateDomain) -> InitialSimplex {
    let p = dom.dim();
    let active: Vec<usize> = (0..p).filter(|&i| dom.upper[i] > dom.lower[i]).collect();
    let flattened: Vec<usize> = (0..p).filter(|&i| dom.upper[i] <= dom.lower[i]).collect();
    let p_eff = active.len();
    let mut vertices = vec![dom.lower.clone()];
    for &i in &active {
        let mut v = dom.lower.clone();
        v[i] += p_eff as f64 * (dom.upper[i] - dom.lower[i]);
        vertices.push(v);
    }
    InitialSimplex {
        vertices,
        flattened,
    }
}
