//! Command-line front end: load models, run solves, simulate, refine,
//! export plot data, and run oracle comparisons.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::driver::{self, HorizonSolution};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::math::fmt_g17;
use crate::model::{self, Horizon};
use crate::oracle::{self, GridSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_INIT_VERTEX: i32 = 4;
pub const EXIT_BUDGET: i32 = 5;
pub const EXIT_MISSING: i32 = 6;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "ace",
    about = "Adaptive convex enveloping solver for convex stochastic dynamic programs",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve a model: build certified envelopes for every stage.
    Solve {
        #[arg(long)]
        model: PathBuf,
        /// Per-stage error tolerance.
        #[arg(long, default_value_t = 0.1)]
        tol: f64,
        /// Maximum number of sections per stage.
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
        /// Output directory for envelopes, sections and report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out the greedy policy with seeded scenario draws.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Directory holding the solve artifacts.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        /// Initial state, comma-separated; defaults to the domain lower corner.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        x1: Option<Vec<f64>>,
        /// Write every path to paths.csv in the output directory.
        #[arg(long, default_value_t = false)]
        dump_paths: bool,
    },
    /// Refine the envelopes along simulated trajectories.
    Refine {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        x1: Option<Vec<f64>>,
    },
    /// Export envelope values on a grid as CSV for plotting.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        grid_step: f64,
    },
    /// Run the grid-DP oracle and compare it against the envelopes.
    Oracle {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        grid_step: f64,
        #[arg(long, default_value_t = 0.05)]
        action_step: f64,
        /// Also estimate the grid error by halving both steps (slower).
        #[arg(long, default_value_t = false)]
        estimate_error: bool,
    },
}

/// Runs the CLI and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Solve { model, tol, budget, out } => cmd_solve(&model, tol, budget, &out),
        Command::Simulate {
            model,
            out,
            seed,
            paths,
            x1,
            dump_paths,
        } => cmd_simulate(&model, &out, seed, paths, x1, dump_paths),
        Command::Refine {
            model,
            out,
            tol,
            seed,
            paths,
            x1,
        } => cmd_refine(&model, &out, tol, seed, paths, x1),
        Command::Export { model, out, grid_step } => cmd_export(&model, &out, grid_step),
        Command::Oracle {
            model,
            out,
            grid_step,
            action_step,
            estimate_error,
        } => cmd_oracle(&model, &out, grid_step, action_step, estimate_error),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::ModelInvalid(_) => EXIT_VALIDATION,
        Error::InitVertexInfeasible { .. } => EXIT_INIT_VERTEX,
        Error::MissingArtifact(_) => EXIT_MISSING,
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
        _ => EXIT_FAILURE,
    }
}

fn load_model(path: &Path) -> Result<Horizon> {
    let h = Horizon::load(path)?;
    let report = model::validate_model(&h);
    if !report.is_valid() {
        return Err(Error::ModelInvalid(report));
    }
    Ok(h)
}

fn cmd_solve(model_path: &Path, tol: f64, budget: usize, out: &Path) -> Result<i32> {
    if tol <= 0.0 || budget == 0 {
        return Err(Error::InvalidArgument(
            "tolerance must be positive and budget at least 1".into(),
        ));
    }
    let h = load_model(model_path)?;
    let sol = driver::solve_horizon(&h, tol, budget)?;
    driver::write_artifacts(out, &sol)?;
    print_solve_report(&sol);
    if sol.report.per_stage.iter().any(|s| s.budget_exceeded) {
        println!("Budget exceeded.");
        return Ok(EXIT_BUDGET);
    }
    Ok(EXIT_OK)
}

fn print_solve_report(sol: &HorizonSolution) {
    for s in &sol.report.per_stage {
        println!(
            "stage {:>3}: planes {:>5}  sections {:>5}  relative_error {:.6e}  absolute_bound {:.6e}{}",
            s.t,
            s.planes,
            s.sections,
            s.relative_error,
            sol.report.absolute_bounds[s.t - 1],
            if s.budget_exceeded { "  [budget exceeded]" } else { "" },
        );
    }
    println!("wall time: {:.3}s", sol.report.wall_time);
}

/// Loads stage envelopes `J_1..J_{T-1}` from a solve directory and appends
/// the terminal envelope reconstructed from the model.
fn load_envelopes(h: &Horizon, dir: &Path) -> Result<Vec<Envelope>> {
    let mut envelopes = Vec::with_capacity(h.num_stages);
    for t in 1..h.num_stages {
        let path = dir.join(Envelope::file_name(t));
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        envelopes.push(Envelope::load(&path)?);
    }
    envelopes.push(h.terminal_envelope());
    Ok(envelopes)
}

fn load_sections(h: &Horizon, dir: &Path) -> Result<Vec<Vec<crate::partition::Section>>> {
    let mut out = Vec::new();
    for t in 1..h.num_stages {
        let path = dir.join(driver::sections_file_name(t));
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        out.push(driver::read_sections(&path)?);
    }
    Ok(out)
}

fn default_x1(h: &Horizon) -> Vec<f64> {
    h.stages[0].domain.lower.clone()
}

fn cmd_simulate(
    model_path: &Path,
    out: &Path,
    seed: u64,
    paths: usize,
    x1: Option<Vec<f64>>,
    dump_paths: bool,
) -> Result<i32> {
    let h = load_model(model_path)?;
    let envelopes = load_envelopes(&h, out)?;
    let x1 = x1.unwrap_or_else(|| default_x1(&h));
    let sim = driver::simulate_policy(&h, &envelopes, &x1, paths, seed)?;
    let (mean, sd, n) = sim.cost_stats();
    let failed = sim.paths.iter().filter(|p| p.failed_at.is_some()).count();
    println!("paths: {n} completed, {failed} failed");
    println!("mean total cost: {mean:.6}");
    println!("std dev: {sd:.6}");
    if dump_paths {
        write_paths_csv(&out.join("paths.csv"), &h, &sim)?;
        println!("wrote paths.csv");
    }
    Ok(EXIT_OK)
}

fn write_paths_csv(path: &Path, h: &Horizon, sim: &driver::SimulationResult) -> Result<()> {
    let p = h.state_dim();
    let m = h.stages[0].m;
    let q = h.stages[0].q;
    let mut out = String::from("t");
    for i in 1..=p {
        out.push_str(&format!(",x_{i}"));
    }
    for j in 1..=m {
        out.push_str(&format!(",u_{j}"));
    }
    for l in 1..=q {
        out.push_str(&format!(",w_{l}"));
    }
    out.push_str(",stage_cost\n");
    for sp in &sim.paths {
        for (i, cost) in sp.stage_costs.iter().enumerate() {
            out.push_str(&format!("{}", i + 1));
            for v in &sp.states[i] {
                out.push(',');
                out.push_str(&fmt_g17(*v));
            }
            for v in &sp.actions[i] {
                out.push(',');
                out.push_str(&fmt_g17(*v));
            }
            for v in &sp.noises[i] {
                out.push(',');
                out.push_str(&fmt_g17(*v));
            }
            out.push(',');
            out.push_str(&fmt_g17(*cost));
            out.push('\n');
        }
    }
    let tmp = crate::envelope::tmp_path(path);
    std::fs::write(&tmp, out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_refine(
    model_path: &Path,
    out: &Path,
    tol: f64,
    seed: u64,
    paths: usize,
    x1: Option<Vec<f64>>,
) -> Result<i32> {
    if tol <= 0.0 {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let h = load_model(model_path)?;
    let mut envelopes = load_envelopes(&h, out)?;
    let mut sections = load_sections(&h, out)?;
    let x1 = x1.unwrap_or_else(|| default_x1(&h));
    let log =
        driver::refine_by_importance(&h, &mut envelopes, &mut sections, &x1, paths, tol, seed)?;
    for t in 1..h.num_stages {
        envelopes[t - 1].save(&out.join(Envelope::file_name(t)))?;
        driver::write_sections(&out.join(driver::sections_file_name(t)), &sections[t - 1])?;
    }
    for (i, added) in log.planes_added_per_stage.iter().enumerate() {
        println!("stage {:>3}: planes added {added}", i + 1);
    }
    if log.skipped_outside > 0 {
        println!("visited states outside kept sections: {}", log.skipped_outside);
    }
    if log.failed_paths > 0 {
        println!("failed paths: {}", log.failed_paths);
    }
    Ok(EXIT_OK)
}

fn cmd_export(model_path: &Path, out: &Path, grid_step: f64) -> Result<i32> {
    if grid_step <= 0.0 {
        return Err(Error::InvalidArgument("grid step must be positive".into()));
    }
    let h = load_model(model_path)?;
    let p = h.state_dim();
    if p > 2 {
        return Err(Error::InvalidArgument(
            "export supports 1 or 2 state dimensions".into(),
        ));
    }
    let envelopes = load_envelopes(&h, out)?;
    let dom = &h.stages[0].domain;
    let grid = GridSpec::uniform(dom.lower.clone(), dom.upper.clone(), grid_step);
    for t in 1..h.num_stages {
        let env = &envelopes[t - 1];
        let mut text = String::new();
        for i in 1..=p {
            text.push_str(&format!("x_{i},"));
        }
        text.push_str(&format!("J_{t}\n"));
        for i in 0..grid.len() {
            let x = grid.point(i);
            for v in &x {
                text.push_str(&fmt_g17(*v));
                text.push(',');
            }
            text.push_str(&fmt_g17(env.eval(&x)?));
            text.push('\n');
        }
        let path = out.join(format!("env_{t}.csv"));
        let tmp = crate::envelope::tmp_path(&path);
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, &path)?;
    }
    println!("wrote env_<t>.csv for t = 1..{}", h.num_stages - 1);
    Ok(EXIT_OK)
}

fn cmd_oracle(
    model_path: &Path,
    out: &Path,
    grid_step: f64,
    action_step: f64,
    estimate_error: bool,
) -> Result<i32> {
    if grid_step <= 0.0 || action_step <= 0.0 {
        return Err(Error::InvalidArgument("grid steps must be positive".into()));
    }
    let h = load_model(model_path)?;
    if h.state_dim() > 2 {
        return Err(Error::InvalidArgument(
            "the grid oracle supports 1 or 2 state dimensions".into(),
        ));
    }
    let envelopes = load_envelopes(&h, out)?;
    let grid = oracle::suggested_state_grid(&h, grid_step);
    let action_grid = oracle::suggested_action_grid(&h, action_step)?;
    let vfs = oracle::grid_dp(&h, &grid, &action_grid)?;
    let dom = &h.stages[0].domain;
    let compare_grid = GridSpec::uniform(dom.lower.clone(), dom.upper.clone(), grid_step);
    let cmp = oracle::compare(&envelopes, &vfs, &compare_grid)?;
    for st in &cmp.per_stage {
        println!(
            "stage {:>3}: max deviation {:.6e} at {:?}, min deviation {:.6e}",
            st.t, st.max_dev, st.argmax, st.min_dev
        );
    }
    if estimate_error {
        let err = oracle::estimate_grid_error(&h, &grid, &action_grid)?;
        println!("grid error estimate (step halving): {err:.3e}");
    }
    oracle::oracle_to_csv(&out.join("oracle.csv"), &vfs)?;
    println!("wrote oracle.csv");
    Ok(EXIT_OK)
}
