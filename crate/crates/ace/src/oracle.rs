//! Brute-force discretized dynamic programming, used as ground truth on
//! low-dimensional instances. Independent of the LP machinery: stage costs
//! are evaluated directly and the continuation is multilinear interpolation
//! on a lattice of the next stage's table.

use std::path::Path;

use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::math::fmt_g17;
use crate::model::{Horizon, StageModel};

/// Cap on lattice cells times action points per stage.
pub const LATTICE_LIMIT: usize = 10_000_000;

/// Axis-aligned lattice: per-axis min, max and step.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub step: Vec<f64>,
}

impl GridSpec {
    pub fn uniform(min: Vec<f64>, max: Vec<f64>, step: f64) -> GridSpec {
        let step = vec![step; min.len()];
        GridSpec { min, max, step }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn axis_len(&self, i: usize) -> usize {
        ((self.max[i] - self.min[i]) / self.step[i]).round() as usize + 1
    }

    pub fn len(&self) -> usize {
        (0..self.dim()).map(|i| self.axis_len(i)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lattice point for a flat row-major index.
    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let p = self.dim();
        let mut out = vec![0.0; p];
        for i in (0..p).rev() {
            let n = self.axis_len(i);
            out[i] = self.min[i] + (idx % n) as f64 * self.step[i];
            idx /= n;
        }
        out
    }

    /// Halved step (doubled resolution) over the same range.
    pub fn halved(&self) -> GridSpec {
        GridSpec {
            min: self.min.clone(),
            max: self.max.clone(),
            step: self.step.iter().map(|s| s / 2.0).collect(),
        }
    }

    /// Doubled step (halved resolution) over the same range.
    pub fn doubled(&self) -> GridSpec {
        GridSpec {
            min: self.min.clone(),
            max: self.max.clone(),
            step: self.step.iter().map(|s| s * 2.0).collect(),
        }
    }
}

/// Table of values on a lattice, interpolated multilinearly with clamping.
#[derive(Clone, Debug)]
pub struct GridValueFunction {
    pub t: usize,
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridValueFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let p = self.grid.dim();
        debug_assert!(p <= 2);
        // clamped axis positions
        let mut i0 = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for i in 0..p {
            let n = self.grid.axis_len(i);
            let pos = ((x[i] - self.grid.min[i]) / self.grid.step[i])
                .clamp(0.0, (n - 1) as f64);
            let fl = pos.floor().min((n - 2).max(0) as f64);
            i0[i] = fl as usize;
            frac[i] = if n > 1 { pos - fl } else { 0.0 };
        }
        match p {
            1 => {
                let a = self.values[i0[0]];
                let b = self.values[(i0[0] + 1).min(self.grid.axis_len(0) - 1)];
                a + frac[0] * (b - a)
            }
            2 => {
                let n1 = self.grid.axis_len(1);
                let at = |r: usize, c: usize| self.values[r * n1 + c];
                let r1 = (i0[0] + 1).min(self.grid.axis_len(0) - 1);
                let c1 = (i0[1] + 1).min(n1 - 1);
                let top = at(i0[0], i0[1]) + frac[1] * (at(i0[0], c1) - at(i0[0], i0[1]));
                let bot = at(r1, i0[1]) + frac[1] * (at(r1, c1) - at(r1, i0[1]));
                top + frac[0] * (bot - top)
            }
            _ => unreachable!(),
        }
    }
}

/// Per-stage scenario precomputation for the inner minimization.
struct StagePrep {
    probs: Vec<f64>,
    /// d.w + e for every (scenario, term, piece), flattened.
    dwe: Vec<f64>,
    pieces_per_term: Vec<usize>,
}

impl StagePrep {
    fn new(sm: &StageModel) -> StagePrep {
        let mut dwe = Vec::new();
        for sc in &sm.scenarios {
            for term in &sm.cost_terms {
                for piece in &term.pieces {
                    dwe.push(
                        piece
                            .d
                            .iter()
                            .zip(&sc.w)
                            .map(|(d, w)| d * w)
                            .sum::<f64>()
                            + piece.e,
                    );
                }
            }
        }
        StagePrep {
            probs: sm.scenario_probs(),
            dwe,
            pieces_per_term: sm.cost_terms.iter().map(|t| t.pieces.len()).collect(),
        }
    }
}

/// Exhaustive DP over the state/action lattices. Returns one table per
/// stage, `out[t-1]` for stage `t`. Next-stage states are clamped to the
/// lattice box during interpolation, so choose a state grid wide enough to
/// cover the states the optimal policy reaches.
pub fn grid_dp(
    h: &Horizon,
    grid: &GridSpec,
    action_grid: &GridSpec,
) -> Result<Vec<GridValueFunction>> {
    let p = h.state_dim();
    if p > 2 || p == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid oracle supports 1 or 2 state dimensions, got {p}"
        )));
    }
    if grid.dim() != p {
        return Err(Error::DimensionMismatch {
            what: "oracle state grid",
            expected: p,
            got: grid.dim(),
        });
    }
    let cells = grid.len();
    let n_actions = action_grid.len();
    if cells.saturating_mul(n_actions) > LATTICE_LIMIT {
        return Err(Error::GridTooLarge {
            cells,
            actions: n_actions,
            limit: LATTICE_LIMIT,
        });
    }
    let terminal = h.terminal_envelope();
    let mut next = GridValueFunction {
        t: h.num_stages,
        grid: grid.clone(),
        values: (0..cells)
            .map(|i| terminal.eval(&grid.point(i)))
            .collect::<Result<Vec<f64>>>()?,
    };
    let actions: Vec<Vec<f64>> = (0..n_actions).map(|i| action_grid.point(i)).collect();
    let mut out: Vec<Option<GridValueFunction>> = vec![None; h.stages.len()];
    for t in (1..=h.stages.len()).rev() {
        let sm = h.stage(t);
        if sm.m != action_grid.dim() {
            return Err(Error::DimensionMismatch {
                what: "oracle action grid",
                expected: sm.m,
                got: action_grid.dim(),
            });
        }
        let prep = StagePrep::new(sm);
        // per-action precomputation: b.u per piece, gu.u per constraint,
        // B u per state coordinate, and bound feasibility
        let per_action: Vec<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>> = actions
            .iter()
            .map(|u| {
                for j in 0..sm.m {
                    let (l, up) = sm.action_bound(j);
                    if u[j] < l - 1e-9 || u[j] > up + 1e-9 {
                        return None;
                    }
                }
                let bu: Vec<f64> = sm
                    .cost_terms
                    .iter()
                    .flat_map(|term| term.pieces.iter())
                    .map(|piece| piece.b.iter().zip(u).map(|(b, uu)| b * uu).sum())
                    .collect();
                let guu: Vec<f64> = sm
                    .constraints
                    .iter()
                    .map(|c| c.gu.iter().zip(u).map(|(g, uu)| g * uu).sum())
                    .collect();
                let tbu: Vec<f64> = (0..sm.p)
                    .map(|i| sm.b[i].iter().zip(u).map(|(b, uu)| b * uu).sum())
                    .collect();
                Some((bu, guu, tbu))
            })
            .collect();
        let n_pieces: usize = prep.pieces_per_term.iter().sum();
        let mut values = vec![f64::INFINITY; cells];
        let mut x_next = [0.0f64; 2];
        for (ci, value) in values.iter_mut().enumerate() {
            let x = grid.point(ci);
            // per-state precomputation mirroring the per-action one
            let ax: Vec<f64> = sm
                .cost_terms
                .iter()
                .flat_map(|term| term.pieces.iter())
                .map(|piece| piece.a.iter().zip(&x).map(|(a, xx)| a * xx).sum())
                .collect();
            let gxx: Vec<f64> = sm
                .constraints
                .iter()
                .map(|c| c.gx.iter().zip(&x).map(|(g, xx)| g * xx).sum())
                .collect();
            let tax: Vec<f64> = (0..sm.p)
                .map(|i| sm.a[i].iter().zip(&x).map(|(a, xx)| a * xx).sum())
                .collect();
            let mut best = f64::INFINITY;
            for pa in per_action.iter() {
                let (bu, guu, tbu) = match pa {
                    Some(t) => t,
                    None => continue,
                };
                if gxx
                    .iter()
                    .zip(guu)
                    .zip(&sm.constraints)
                    .any(|((gx, gu), c)| gx + gu > c.rhs + 1e-9)
                {
                    continue;
                }
                let mut acc = 0.0;
                let mut off = 0;
                for (k, sc) in sm.scenarios.iter().enumerate() {
                    // exact stage cost: sum over terms of max over pieces
                    let mut cost = 0.0;
                    let mut piece_idx = 0;
                    for &np in &prep.pieces_per_term {
                        let mut term_v = f64::NEG_INFINITY;
                        for _ in 0..np {
                            let v = ax[piece_idx] + bu[piece_idx] + prep.dwe[off + piece_idx];
                            if v > term_v {
                                term_v = v;
                            }
                            piece_idx += 1;
                        }
                        cost += term_v;
                    }
                    for i in 0..sm.p {
                        x_next[i] = tax[i] + tbu[i] + sc.w[i];
                    }
                    acc += prep.probs[k] * (cost + next.eval(&x_next[..sm.p]));
                    off += n_pieces;
                }
                if acc < best {
                    best = acc;
                }
            }
            *value = best;
        }
        let vf = GridValueFunction {
            t,
            grid: grid.clone(),
            values,
        };
        next = vf.clone();
        out[t - 1] = Some(vf);
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// Per-stage deviation summary of envelope versus oracle.
#[derive(Clone, Debug)]
pub struct StageDeviation {
    pub t: usize,
    /// max over the lattice of oracle - envelope (positive: envelope below).
    pub max_dev: f64,
    pub argmax: Vec<f64>,
    /// min over the lattice (negative values flag soundness violations).
    pub min_dev: f64,
    pub argmin: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub per_stage: Vec<StageDeviation>,
    pub max_deviation: f64,
    pub argmax_stage: usize,
    pub argmax: Vec<f64>,
}

/// Signed deviation oracle minus envelope over `grid` for each stage.
pub fn compare(
    envelopes: &[Envelope],
    oracle: &[GridValueFunction],
    grid: &GridSpec,
) -> Result<Comparison> {
    let mut per_stage = Vec::new();
    let mut max_dev = f64::NEG_INFINITY;
    let mut argmax_stage = 0;
    let mut argmax = Vec::new();
    for vf in oracle {
        let env = &envelopes[vf.t - 1];
        let mut st = StageDeviation {
            t: vf.t,
            max_dev: f64::NEG_INFINITY,
            argmax: Vec::new(),
            min_dev: f64::INFINITY,
            argmin: Vec::new(),
        };
        for i in 0..grid.len() {
            let x = grid.point(i);
            let dev = vf.eval(&x) - env.eval(&x)?;
            if dev > st.max_dev {
                st.max_dev = dev;
                st.argmax = x.clone();
            }
            if dev < st.min_dev {
                st.min_dev = dev;
                st.argmin = x;
            }
        }
        if st.max_dev > max_dev {
            max_dev = st.max_dev;
            argmax_stage = st.t;
            argmax = st.argmax.clone();
        }
        per_stage.push(st);
    }
    Ok(Comparison {
        per_stage,
        max_deviation: max_dev,
        argmax_stage,
        argmax,
    })
}

/// State grid for oracle runs: the stage-1 domain box extended by twice the
/// one-step noise span on each side (rounded to whole steps), so that the
/// states a sensible policy reaches stay inside the lattice instead of being
/// clamped at its edge.
pub fn suggested_state_grid(h: &Horizon, step: f64) -> GridSpec {
    let p = h.state_dim();
    let dom = &h.stages[0].domain;
    let mut lo = dom.lower.clone();
    let mut hi = dom.upper.clone();
    for i in 0..p {
        let mut w_min = 0.0f64;
        let mut w_max = 0.0f64;
        for sm in &h.stages {
            for sc in &sm.scenarios {
                w_min = w_min.min(sc.w[i]);
                w_max = w_max.max(sc.w[i]);
            }
        }
        let down = (2.0 * (-w_min).max(0.0) / step).ceil() * step;
        let up = (2.0 * w_max.max(0.0) / step).ceil() * step;
        lo[i] -= down;
        hi[i] += up;
    }
    GridSpec::uniform(lo, hi, step)
}

/// Action grid spanning the stage-1 action bounds.
pub fn suggested_action_grid(h: &Horizon, step: f64) -> Result<GridSpec> {
    let sm = &h.stages[0];
    let mut lo = Vec::with_capacity(sm.m);
    let mut hi = Vec::with_capacity(sm.m);
    for j in 0..sm.m {
        let (l, u) = sm.action_bound(j);
        if !(l.is_finite() && u.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "action {j} needs finite bounds for the oracle action grid"
            )));
        }
        lo.push(l);
        hi.push(u);
    }
    Ok(GridSpec::uniform(lo, hi, step))
}

/// Richardson-style estimate: largest change of any table value when the
/// state and action steps are halved. The halved companion must also fit
/// the lattice cap.
pub fn estimate_grid_error(
    h: &Horizon,
    grid: &GridSpec,
    action_grid: &GridSpec,
) -> Result<f64> {
    let coarse = grid_dp(h, grid, action_grid)?;
    let fine = grid_dp(h, &grid.halved(), &action_grid.halved())?;
    let mut worst = 0.0f64;
    for (c, f) in coarse.iter().zip(&fine) {
        for i in 0..c.grid.len() {
            let x = c.grid.point(i);
            worst = worst.max((c.values[i] - f.eval(&x)).abs());
        }
    }
    Ok(worst)
}

/// CSV export: `x_1..x_p` then one `J_t` column per stage.
pub fn oracle_to_csv(path: &Path, oracle: &[GridValueFunction]) -> Result<()> {
    let grid = &oracle[0].grid;
    let p = grid.dim();
    let mut out = String::new();
    for i in 0..p {
        out.push_str(&format!("x_{},", i + 1));
    }
    let cols: Vec<String> = oracle.iter().map(|vf| format!("J_{}", vf.t)).collect();
    out.push_str(&cols.join(","));
    out.push('\n');
    for i in 0..grid.len() {
        let x = grid.point(i);
        for v in &x {
            out.push_str(&fmt_g17(*v));
            out.push(',');
        }
        let vals: Vec<String> = oracle.iter().map(|vf| fmt_g17(vf.values[i])).collect();
        out.push_str(&vals.join(","));
        out.push('\n');
    }
    let tmp = crate::envelope::tmp_path(path);
    std::fs::write(&tmp, out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
