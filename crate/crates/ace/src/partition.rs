//! Error control and recursive simplex partitioning.
//!
//! Each tracked section is a p-simplex whose vertices carry true stage
//! values. Convexity squeezes the stage value between the envelope (below)
//! and the chord through the vertex values (above); the worst gap over a
//! section is found by an LP over barycentric coordinates. Sections whose
//! gap exceeds the tolerance get a new supporting hyperplane at the worst
//! point and are split there, until every kept section is certified or the
//! section budget is exhausted.

use serde::{Deserialize, Serialize};

use crate::envelope::{Envelope, Hyperplane};
use crate::error::{Error, Result};
use crate::lp::{self, LpProblem, LpStatus};
use crate::model::{StageModel, StateDomain};
use crate::stage_solver;

/// Barycentric weight below which a child simplex is considered degenerate.
pub const ALPHA_THRESHOLD: f64 = 1e-9;

/// A p-simplex tracked by the partition engine: p+1 vertices with their true
/// stage values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Section {
    pub id: u64,
    pub vertices: Vec<Vec<f64>>,
    #[serde(rename = "values")]
    pub vertex_values: Vec<f64>,
}

impl Section {
    pub fn dim(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }

    /// Determinant of the edge matrix; the section is full-dimensional when
    /// its magnitude is meaningfully positive.
    pub fn edge_det(&self) -> f64 {
        let p = self.dim();
        let mut m: Vec<Vec<f64>> = (1..=p)
            .map(|i| {
                (0..p)
                    .map(|c| self.vertices[i][c] - self.vertices[0][c])
                    .collect()
            })
            .collect();
        let mut det = 1.0;
        for col in 0..p {
            let (pivot_row, pivot_val) = (col..p)
                .map(|r| (r, m[r][col].abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap_or((col, 0.0));
            if pivot_val == 0.0 {
                return 0.0;
            }
            if pivot_row != col {
                m.swap(pivot_row, col);
                det = -det;
            }
            det *= m[col][col];
            for r in col + 1..p {
                let f = m[r][col] / m[col][col];
                for c in col..p {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
        det
    }

    /// Barycentric coordinates of `x` with respect to this section.
    pub fn barycentric(&self, x: &[f64]) -> Option<Vec<f64>> {
        let p = self.dim();
        // solve [v_1 - v_0 | ... | v_p - v_0] a = x - v_0
        let mut m: Vec<Vec<f64>> = (0..p)
            .map(|r| {
                (1..=p)
                    .map(|i| self.vertices[i][r] - self.vertices[0][r])
                    .collect()
            })
            .collect();
        let mut rhs: Vec<f64> = (0..p).map(|r| x[r] - self.vertices[0][r]).collect();
        for col in 0..p {
            let (pivot_row, pivot_val) = (col..p)
                .map(|r| (r, m[r][col].abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap_or((col, 0.0));
            if pivot_val < 1e-14 {
                return None;
            }
            m.swap(pivot_row, col);
            rhs.swap(pivot_row, col);
            for r in 0..p {
                if r == col {
                    continue;
                }
                let f = m[r][col] / m[col][col];
                if f != 0.0 {
                    for c in col..p {
                        m[r][c] -= f * m[col][c];
                    }
                    rhs[r] -= f * rhs[col];
                }
            }
        }
        let mut alpha = vec![0.0; p + 1];
        let mut rest = 0.0;
        for i in 0..p {
            alpha[i + 1] = rhs[i] / m[i][i];
            rest += alpha[i + 1];
        }
        alpha[0] = 1.0 - rest;
        Some(alpha)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.barycentric(x)
            .map(|a| a.iter().all(|&v| v >= -tol))
            .unwrap_or(false)
    }
}

/// Solution of the worst-point problem over one section.
#[derive(Clone, Debug)]
pub struct ErrorSeekResult {
    pub worst_point: Vec<f64>,
    pub barycentric: Vec<f64>,
    pub max_error: f64,
}

/// Finds the maximum potential error of a section: the largest gap between
/// the chord through its vertex values and the envelope, over the section
/// intersected with the state domain. Every stored hyperplane constrains the
/// lower side, not just the section's own.
pub fn max_potential_error(
    sec: &Section,
    env: &Envelope,
    dom: &StateDomain,
) -> Result<ErrorSeekResult> {
    if env.is_empty() {
        return Err(Error::EmptyEnvelope);
    }
    let p = sec.dim();
    let nv = p + 1;
    // variables: x (p), alpha (p+1), J (1); maximize sum alpha_j V_j - J
    let n = p + nv + 1;
    let x0 = 0;
    let a0 = p;
    let jv = p + nv;
    let mut prob = LpProblem::new(n);
    for j in 0..nv {
        prob.objective[a0 + j] = -sec.vertex_values[j];
        prob.set_bounds(a0 + j, 0.0, f64::INFINITY);
    }
    prob.objective[jv] = 1.0;
    for i in 0..p {
        prob.set_bounds(x0 + i, dom.lower[i], dom.upper[i]);
    }
    // x = sum alpha_j v_j
    for i in 0..p {
        let mut row = vec![0.0; n];
        row[x0 + i] = 1.0;
        for j in 0..nv {
            row[a0 + j] = -sec.vertices[j][i];
        }
        prob.add_eq(row, 0.0);
    }
    // sum alpha = 1
    let mut row = vec![0.0; n];
    for j in 0..nv {
        row[a0 + j] = 1.0;
    }
    prob.add_eq(row, 1.0);
    // domain side constraints
    for c in dom.extra.iter().flatten() {
        let mut row = vec![0.0; n];
        row[..p].copy_from_slice(&c.gx);
        prob.add_ineq(row, c.rhs);
    }
    // J >= plane(x) for every stored plane
    for plane in &env.planes {
        let mut row = vec![0.0; n];
        row[..p].copy_from_slice(&plane.grad);
        row[jv] = -1.0;
        let rhs: f64 =
            plane.grad.iter().zip(&plane.base).map(|(g, b)| g * b).sum::<f64>() - plane.value;
        prob.add_ineq(row, rhs);
    }
    let sol = lp::solve_lp(&prob)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::SectionOutsideDomain { id: sec.id }),
        LpStatus::Unbounded => {
            return Err(Error::InvalidArgument(
                "worst-point problem unbounded; envelope does not minorize the section".into(),
            ))
        }
    }
    Ok(ErrorSeekResult {
        worst_point: sol.x[x0..x0 + p].to_vec(),
        barycentric: sol.x[a0..a0 + nv].to_vec(),
        max_error: -sol.objective,
    })
}

/// Splits a section at the worst point: one child per vertex with a
/// meaningfully positive barycentric weight, the child replacing that vertex
/// by the worst point. Children for near-zero weights would be lower
/// dimensional and are omitted.
pub fn split_section(
    sec: &Section,
    r: &ErrorSeekResult,
    value_at_worst: f64,
    next_id: &mut u64,
) -> Result<Vec<Section>> {
    let nv = sec.vertices.len();
    if r.barycentric.iter().any(|&a| (a - 1.0).abs() <= ALPHA_THRESHOLD) {
        return Err(Error::NoProgress { id: sec.id });
    }
    let mut children = Vec::new();
    for j in 0..nv {
        if r.barycentric[j] > ALPHA_THRESHOLD {
            let mut vertices = sec.vertices.clone();
            let mut values = sec.vertex_values.clone();
            vertices[j] = r.worst_point.clone();
            values[j] = value_at_worst;
            children.push(Section {
                id: *next_id,
                vertices,
                vertex_values: values,
            });
            *next_id += 1;
        }
    }
    Ok(children)
}

/// Report of one stage refinement.
#[derive(Clone, Debug)]
pub struct RefineReport {
    /// Largest remaining potential error over kept sections.
    pub max_error: f64,
    pub sections_kept: usize,
    pub planes_added: usize,
    pub budget_exceeded: bool,
    /// False when the initial hull does not contain the whole domain box.
    pub hull_covers_domain: bool,
    /// Sections that stopped refining because the worst point coincided
    /// with one of their vertices while still above tolerance.
    pub stalled_sections: usize,
}

/// Outcome of refining one stage: its envelope, the kept sections, and the
/// certification report.
pub struct StageRefinement {
    pub envelope: Envelope,
    pub sections: Vec<Section>,
    pub report: RefineReport,
}

struct WorkItem {
    section: Section,
    /// Most recent certified error; stale values are still upper bounds
    /// because added planes only shrink the gap.
    last_error: Option<f64>,
    converged_with_warning: bool,
}

/// Whether the hull of the initial section contains every domain box corner.
fn hull_covers_box(init: &Section, dom: &StateDomain) -> bool {
    let p = dom.dim();
    for mask in 0..(1usize << p) {
        let corner: Vec<f64> = (0..p)
            .map(|i| {
                if mask & (1 << i) != 0 {
                    dom.upper[i]
                } else {
                    dom.lower[i]
                }
            })
            .collect();
        match init.barycentric(&corner) {
            Some(a) if a.iter().all(|&v| v >= -ALPHA_THRESHOLD) => {}
            _ => return false,
        }
    }
    true
}

/// Refines one stage to tolerance following the section-list sweep: measure
/// every section, and whenever one is out of tolerance add a plane at its
/// worst point (shared by all sections immediately) and split it in place.
/// Stops early when the section list outgrows `budget`.
pub fn refine_stage(
    sm: &StageModel,
    env_next: &Envelope,
    dom: &StateDomain,
    init: &[Vec<f64>],
    tol: f64,
    budget: usize,
) -> Result<StageRefinement> {
    let p = dom.dim();
    if init.len() != p + 1 {
        return Err(Error::DimensionMismatch {
            what: "initial vertices",
            expected: p + 1,
            got: init.len(),
        });
    }
    let mut env = Envelope::empty(sm.t, p);
    let mut values = Vec::with_capacity(init.len());
    for v in init {
        let solved = match stage_solver::solve_stage(sm, env_next, v) {
            Ok(s) => s,
            Err(Error::InfeasibleState { stage, state }) => {
                return Err(Error::InitVertexInfeasible {
                    stage,
                    vertex: state,
                })
            }
            Err(e) => return Err(e),
        };
        env.add_plane(Hyperplane::new(v.clone(), solved.value, solved.subgrad.clone()))?;
        values.push(solved.value);
    }
    let mut next_id = 0u64;
    let first = Section {
        id: next_id,
        vertices: init.to_vec(),
        vertex_values: values,
    };
    next_id += 1;
    let hull_covers_domain = hull_covers_box(&first, dom);
    let mut planes_added = init.len();
    let mut list: Vec<WorkItem> = vec![WorkItem {
        section: first,
        last_error: None,
        converged_with_warning: false,
    }];
    let mut budget_exceeded = false;
    let mut current_max = f64::INFINITY;
    while current_max > tol {
        if list.len() > budget {
            budget_exceeded = true;
            break;
        }
        current_max = 0.0;
        let mut idx = 0;
        while idx < list.len() {
            if list[idx].converged_with_warning {
                current_max = current_max.max(list[idx].last_error.unwrap_or(0.0));
                idx += 1;
                continue;
            }
            let seek = match max_potential_error(&list[idx].section, &env, dom) {
                Ok(seek) => seek,
                Err(Error::SectionOutsideDomain { .. }) => {
                    list.remove(idx);
                    continue;
                }
                Err(e) => return Err(e),
            };
            current_max = current_max.max(seek.max_error);
            list[idx].last_error = Some(seek.max_error);
            if seek.max_error <= tol {
                idx += 1;
                continue;
            }
            let solved = stage_solver::solve_stage(sm, env_next, &seek.worst_point)?;
            env.add_plane(Hyperplane::new(
                seek.worst_point.clone(),
                solved.value,
                solved.subgrad.clone(),
            ))?;
            planes_added += 1;
            match split_section(&list[idx].section, &seek, solved.value, &mut next_id) {
                Ok(children) => {
                    // keep the section count within budget at all times;
                    // the new plane above still tightens the envelope
                    if list.len() - 1 + children.len() > budget {
                        budget_exceeded = true;
                        break;
                    }
                    let n_children = children.len();
                    list.splice(
                        idx..idx + 1,
                        children.into_iter().map(|section| WorkItem {
                            section,
                            last_error: None,
                            converged_with_warning: false,
                        }),
                    );
                    idx += n_children;
                }
                Err(Error::NoProgress { .. }) => {
                    // numerically flat: keep the section, report its residual
                    list[idx].converged_with_warning = true;
                    idx += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if budget_exceeded {
            break;
        }
    }
    let max_error = if budget_exceeded {
        list.iter()
            .filter_map(|w| w.last_error)
            .fold(0.0f64, f64::max)
            .max(current_max)
    } else {
        current_max
    };
    let stalled = list.iter().filter(|w| w.converged_with_warning).count();
    Ok(StageRefinement {
        envelope: env,
        report: RefineReport {
            max_error,
            sections_kept: list.len(),
            planes_added,
            budget_exceeded,
            hull_covers_domain,
            stalled_sections: stalled,
        },
        sections: list.into_iter().map(|w| w.section).collect(),
    })
}
