//! Backward sweep over stages, error accounting across stages, policy
//! simulation, and simulation-guided refinement.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envelope::{Envelope, Hyperplane};
use crate::error::{Error, Result};
use crate::model::{self, Horizon, StageModel};
use crate::partition::{self, Section};
use crate::stage_solver;

/// Per-stage certification counters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageReport {
    pub t: usize,
    /// Certified error of this stage's envelope relative to the next one.
    pub relative_error: f64,
    pub planes: usize,
    pub sections: usize,
    pub budget_exceeded: bool,
}

/// Horizon-wide solve report. `absolute_bounds[t-1]` bounds the gap between
/// envelope t and the true cost-to-go: the suffix sum of relative errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub per_stage: Vec<StageReport>,
    pub absolute_bounds: Vec<f64>,
    pub wall_time: f64,
}

/// Everything a solve produces: envelopes for stages `1..=T` (terminal
/// last), kept sections per stage, and the report.
pub struct HorizonSolution {
    pub envelopes: Vec<Envelope>,
    pub sections: Vec<Vec<Section>>,
    pub report: SolveReport,
}

impl HorizonSolution {
    pub fn envelope(&self, t: usize) -> &Envelope {
        &self.envelopes[t - 1]
    }
}

/// Suffix sums of per-stage relative errors: `out[t] = sum_{tau >= t} rel[tau]`.
pub fn accumulated_error_bound(relative_errors: &[f64]) -> Vec<f64> {
    assert!(
        relative_errors.iter().all(|&e| e >= 0.0),
        "relative errors must be nonnegative"
    );
    let mut out = vec![0.0; relative_errors.len()];
    let mut acc = 0.0;
    for (i, &e) in relative_errors.iter().enumerate().rev() {
        acc += e;
        out[i] = acc;
    }
    out
}

/// Solves the whole horizon backward: builds the terminal envelope, then for
/// each stage t = T-1 down to 1 finds initial vertices, refines to
/// tolerance, and accounts errors. Budget exhaustion is reported per stage,
/// not fatal.
pub fn solve_horizon(h: &Horizon, tol: f64, budget: usize) -> Result<HorizonSolution> {
    let started = Instant::now();
    let validation = model::validate_model(h);
    if !validation.is_valid() {
        return Err(Error::ModelInvalid(validation));
    }
    let n_stages = h.stages.len();
    let mut envelopes: Vec<Option<Envelope>> = vec![None; n_stages];
    let mut sections: Vec<Vec<Section>> = vec![Vec::new(); n_stages];
    let mut per_stage: Vec<Option<StageReport>> = vec![None; n_stages];
    let mut env_next = h.terminal_envelope();
    for t in (1..=n_stages).rev() {
        let sm = h.stage(t);
        let init = model::default_initial_simplex(&sm.domain);
        if !init.flattened.is_empty() {
            return Err(Error::DegenerateDomain {
                coords: init.flattened,
            });
        }
        let refined = partition::refine_stage(sm, &env_next, &sm.domain, &init.vertices, tol, budget)?;
        per_stage[t - 1] = Some(StageReport {
            t,
            relative_error: refined.report.max_error,
            planes: refined.envelope.len(),
            sections: refined.report.sections_kept,
            budget_exceeded: refined.report.budget_exceeded,
        });
        sections[t - 1] = refined.sections;
        env_next = refined.envelope.clone();
        envelopes[t - 1] = Some(refined.envelope);
    }
    let per_stage: Vec<StageReport> = per_stage.into_iter().map(Option::unwrap).collect();
    let rel: Vec<f64> = per_stage.iter().map(|s| s.relative_error).collect();
    let absolute_bounds = accumulated_error_bound(&rel);
    let mut envelopes: Vec<Envelope> = envelopes.into_iter().map(Option::unwrap).collect();
    envelopes.push(h.terminal_envelope());
    Ok(HorizonSolution {
        envelopes,
        sections,
        report: SolveReport {
            per_stage,
            absolute_bounds,
            wall_time: started.elapsed().as_secs_f64(),
        },
    })
}

/// One simulated trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimPath {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub noises: Vec<Vec<f64>>,
    pub stage_costs: Vec<f64>,
    /// Stage at which the path hit an infeasible state, if any.
    pub failed_at: Option<usize>,
}

/// Seeded Monte Carlo rollout of the greedy policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationResult {
    pub paths: Vec<SimPath>,
    pub costs: Vec<f64>,
    pub seed: u64,
}

impl SimulationResult {
    /// Mean and standard deviation of total cost over completed paths.
    pub fn cost_stats(&self) -> (f64, f64, usize) {
        let done: Vec<f64> = self
            .paths
            .iter()
            .zip(&self.costs)
            .filter(|(p, _)| p.failed_at.is_none())
            .map(|(_, &c)| c)
            .collect();
        let n = done.len();
        if n == 0 {
            return (f64::NAN, f64::NAN, 0);
        }
        let mean = done.iter().sum::<f64>() / n as f64;
        let var = done.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>()
            / (n.max(2) - 1) as f64;
        (mean, var.sqrt(), n)
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Inverse-CDF draw over the stage's scenario set.
fn draw_scenario(sm: &StageModel, u: f64) -> usize {
    let probs = sm.scenario_probs();
    let mut cum = 0.0;
    for (k, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return k;
        }
    }
    probs.len() - 1
}

/// Simulates `n_paths` greedy-policy rollouts from `x1`. Paths draw noise
/// from per-path deterministic streams, so the result is reproducible given
/// the seed and inputs. Total cost includes the terminal function.
pub fn simulate_policy(
    h: &Horizon,
    envelopes: &[Envelope],
    x1: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<SimulationResult> {
    let n_stages = h.stages.len();
    if envelopes.len() < n_stages + 1 {
        return Err(Error::MissingArtifact(format!(
            "expected {} envelopes, got {}",
            n_stages + 1,
            envelopes.len()
        )));
    }
    let mut paths = Vec::with_capacity(n_paths);
    let mut costs = Vec::with_capacity(n_paths);
    for path_idx in 0..n_paths {
        let mut rng = path_rng(seed, path_idx);
        let mut x = x1.to_vec();
        let mut path = SimPath {
            states: vec![x.clone()],
            actions: Vec::new(),
            noises: Vec::new(),
            stage_costs: Vec::new(),
            failed_at: None,
        };
        let mut total = 0.0;
        for t in 1..=n_stages {
            let sm = h.stage(t);
            let k = draw_scenario(sm, rng.random::<f64>());
            let w = sm.scenarios[k].w.clone();
            let action = match stage_solver::greedy_action(sm, &envelopes[t], &x) {
                Ok(a) => a,
                Err(Error::InfeasibleState { .. }) => {
                    path.failed_at = Some(t);
                    break;
                }
                Err(e) => return Err(e),
            };
            let cost = sm.stage_cost(&x, &action, &w);
            total += cost;
            x = sm.transition(&x, &action, &w);
            path.actions.push(action);
            path.noises.push(w);
            path.stage_costs.push(cost);
            path.states.push(x.clone());
        }
        if path.failed_at.is_none() {
            total += envelopes[n_stages].eval(path.states.last().unwrap())?;
        }
        costs.push(total);
        paths.push(path);
    }
    Ok(SimulationResult { paths, costs, seed })
}

/// Log of one importance-refinement run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ImportanceLog {
    pub planes_added_per_stage: Vec<usize>,
    /// Visited states that fell outside every kept section.
    pub skipped_outside: usize,
    /// Paths that hit an infeasible state mid-rollout.
    pub failed_paths: usize,
    /// Every state the rollouts visited, per stage.
    pub visited_per_stage: Vec<Vec<Vec<f64>>>,
}

/// Simulation-guided refinement: rolls out one path at a time under the
/// current policy, then walks it backward; any visited section whose
/// potential error exceeds `tol` gets a plane at the visited state and is
/// split there. Later paths see the updated policy.
pub fn refine_by_importance(
    h: &Horizon,
    envelopes: &mut [Envelope],
    sections: &mut [Vec<Section>],
    x1: &[f64],
    n_paths: usize,
    tol: f64,
    seed: u64,
) -> Result<ImportanceLog> {
    let n_stages = h.stages.len();
    if envelopes.len() < n_stages + 1 || sections.len() < n_stages {
        return Err(Error::MissingArtifact(
            "need envelopes and sections for every stage".into(),
        ));
    }
    let mut next_ids: Vec<u64> = sections
        .iter()
        .map(|list| list.iter().map(|s| s.id + 1).max().unwrap_or(0))
        .collect();
    let mut log = ImportanceLog {
        planes_added_per_stage: vec![0; n_stages],
        visited_per_stage: vec![Vec::new(); n_stages],
        ..Default::default()
    };
    for path_idx in 0..n_paths {
        let mut rng = path_rng(seed, path_idx);
        let mut x = x1.to_vec();
        let mut visited: Vec<Vec<f64>> = vec![x.clone()];
        let mut failed = false;
        for t in 1..=n_stages {
            let sm = h.stage(t);
            let k = draw_scenario(sm, rng.random::<f64>());
            let w = &sm.scenarios[k].w;
            let action = match stage_solver::greedy_action(sm, &envelopes[t], &x) {
                Ok(a) => a,
                Err(Error::InfeasibleState { .. }) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            x = sm.transition(&x, &action, w);
            visited.push(x.clone());
        }
        if failed {
            log.failed_paths += 1;
        }
        // walk the observed states backward, refining where they land
        for t in (1..=n_stages.min(visited.len())).rev() {
            let xt = &visited[t - 1];
            log.visited_per_stage[t - 1].push(xt.clone());
            let sm = h.stage(t);
            // containing section, smallest id first
            let found = sections[t - 1]
                .iter()
                .enumerate()
                .filter(|(_, s)| s.contains(xt, 1e-7))
                .min_by_key(|(_, s)| s.id)
                .map(|(i, _)| i);
            let idx = match found {
                Some(i) => i,
                None => {
                    log.skipped_outside += 1;
                    continue;
                }
            };
            let seek =
                match partition::max_potential_error(&sections[t - 1][idx], &envelopes[t - 1], &sm.domain) {
                    Ok(s) => s,
                    Err(Error::SectionOutsideDomain { .. }) => {
                        log.skipped_outside += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
            if seek.max_error <= tol {
                continue;
            }
            // split at the visited state itself; skip when it coincides with
            // a vertex (splitting there makes no progress and the plane
            // would duplicate an existing one)
            let alpha = match sections[t - 1][idx].barycentric(xt) {
                Some(a) => a,
                None => {
                    log.skipped_outside += 1;
                    continue;
                }
            };
            if alpha
                .iter()
                .any(|&a| (a - 1.0).abs() <= partition::ALPHA_THRESHOLD)
            {
                continue;
            }
            let solved = stage_solver::solve_stage(sm, &envelopes[t], xt)?;
            envelopes[t - 1].add_plane(Hyperplane::new(
                xt.clone(),
                solved.value,
                solved.subgrad.clone(),
            ))?;
            log.planes_added_per_stage[t - 1] += 1;
            let at_state = partition::ErrorSeekResult {
                worst_point: xt.clone(),
                barycentric: alpha,
                max_error: seek.max_error,
            };
            match partition::split_section(
                &sections[t - 1][idx],
                &at_state,
                solved.value,
                &mut next_ids[t - 1],
            ) {
                Ok(children) => {
                    sections[t - 1].splice(idx..idx + 1, children);
                }
                Err(Error::NoProgress { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(log)
}

/// File names used by the artifact writers.
pub fn sections_file_name(t: usize) -> String {
    format!("sections_{t}.jsonl")
}

/// Writes envelopes (stages only), kept sections, and report.json.
pub fn write_artifacts(dir: &Path, sol: &HorizonSolution) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let n_stages = sol.sections.len();
    for t in 1..=n_stages {
        sol.envelope(t).save(&dir.join(Envelope::file_name(t)))?;
        write_sections(&dir.join(sections_file_name(t)), &sol.sections[t - 1])?;
    }
    let report_path = dir.join("report.json");
    let tmp = crate::envelope::tmp_path(&report_path);
    std::fs::write(&tmp, serde_json::to_string_pretty(&sol.report)?)?;
    std::fs::rename(&tmp, &report_path)?;
    Ok(())
}

pub fn write_sections(path: &Path, sections: &[Section]) -> Result<()> {
    let tmp = crate::envelope::tmp_path(path);
    let mut out = String::new();
    for s in sections {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    std::fs::write(&tmp, out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_sections(path: &Path) -> Result<Vec<Section>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|e| Error::MalformedFile {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
