//! Cross-module integration: end-to-end solves against the grid oracle,
//! partition properties on real stages, file artifacts, and CLI behavior.

mod common;

use std::process::Command;

use ace::driver;
use ace::envelope::Envelope;
use ace::oracle::{self, GridSpec};
use ace::partition;
use ace::stage_solver;
use common::{load_battery2d, load_inventory, random_model_with_envelope, rng};
use rand::Rng;

#[test]
fn inventory_sandwich_and_certificate() {
    let h = load_inventory();
    let mut short = h.clone();
    short.num_stages = 4;
    short.stages.truncate(3);
    let sol = driver::solve_horizon(&short, 0.1, 100_000).unwrap();
    let grid = oracle::suggested_state_grid(&short, 0.05);
    let agrid = oracle::suggested_action_grid(&short, 0.05).unwrap();
    let vfs = oracle::grid_dp(&short, &grid, &agrid).unwrap();
    let compare_grid = GridSpec::uniform(vec![0.0], vec![15.0], 0.05);
    let cmp = oracle::compare(&sol.envelopes, &vfs, &compare_grid).unwrap();
    for st in &cmp.per_stage {
        let bound = sol.report.absolute_bounds[st.t - 1];
        // certificate: oracle within [envelope, envelope + bound]
        assert!(
            st.min_dev >= -1e-6,
            "stage {}: envelope above oracle by {}",
            st.t,
            -st.min_dev
        );
        assert!(
            st.max_dev <= bound + 1e-6,
            "stage {}: deviation {} above bound {bound}",
            st.t,
            st.max_dev
        );
    }
}

#[test]
fn sandwich_property_on_sections() {
    // envelope <= true value <= barycentric chord on every kept section
    let h = load_inventory();
    let sm = &h.stages[9];
    let env_next = h.terminal_envelope();
    let refined = partition::refine_stage(
        sm,
        &env_next,
        &sm.domain,
        &[vec![0.0], vec![15.0]],
        0.2,
        100_000,
    )
    .unwrap();
    let mut rng = rng(5);
    for sec in &refined.sections {
        for _ in 0..20 {
            let theta: f64 = rng.random_range(0.0..1.0);
            let x =
                vec![sec.vertices[0][0] + theta * (sec.vertices[1][0] - sec.vertices[0][0])];
            let alpha = sec.barycentric(&x).unwrap();
            let chord: f64 = alpha
                .iter()
                .zip(&sec.vertex_values)
                .map(|(a, v)| a * v)
                .sum();
            let truth = stage_solver::solve_stage(sm, &env_next, &x).unwrap().value;
            let env_val = refined.envelope.eval(&x).unwrap();
            assert!(env_val <= truth + 1e-9, "envelope above truth at {x:?}");
            assert!(truth <= chord + 1e-9, "chord below truth at {x:?}");
        }
    }
}

#[test]
fn coverage_of_domain_by_kept_sections() {
    let h = load_battery2d();
    let sol = driver::solve_horizon(&h, 0.3, 100_000).unwrap();
    let mut rng = rng(17);
    for t in 1..=3usize {
        for _ in 0..200 {
            let x = vec![rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
            let covered = sol.sections[t - 1].iter().any(|s| s.contains(&x, 1e-7));
            assert!(covered, "stage {t}: {x:?} not covered");
        }
    }
}

#[test]
fn subgradients_on_random_models() {
    let mut rng = rng(0xBEEF);
    for case in 0..5 {
        let (sm, env) = random_model_with_envelope(&mut rng, 1);
        let dim = sm.p;
        let sample =
            |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
        let mut solves = Vec::new();
        for _ in 0..12 {
            let x = sample(&mut rng);
            let r = stage_solver::solve_stage(&sm, &env, &x).unwrap();
            solves.push((x, r));
        }
        let mut pairs = 0;
        for (xi, ri) in &solves {
            for (xj, rj) in &solves {
                let lower: f64 = ri.value
                    + ri.subgrad
                        .iter()
                        .zip(xj.iter().zip(xi))
                        .map(|(g, (a, b))| g * (a - b))
                        .sum::<f64>();
                assert!(
                    rj.value >= lower - 1e-6,
                    "case {case}: subgradient inequality violated by {}",
                    lower - rj.value
                );
                pairs += 1;
            }
        }
        assert!(pairs >= 50);
    }
}

#[test]
fn bundled_models_are_valid() {
    for h in [load_inventory(), load_battery2d()] {
        let rep = ace::model::validate_model(&h);
        assert!(rep.is_valid(), "{rep}");
    }
    // the inventory file matches its published parameters
    let h = load_inventory();
    assert_eq!(h.num_stages, 11);
    assert_eq!(h.stages.len(), 10);
    let sm = &h.stages[0];
    assert_eq!(sm.scenarios.len(), 100);
    assert!((sm.scenarios[37].w[0] + 3.7).abs() < 1e-15);
    assert_eq!(sm.domain.lower, vec![0.0]);
    assert_eq!(sm.domain.upper, vec![15.0]);
    // purchasing 2.0, penalty 4.0, holding 0.2 as piece coefficients
    let pieces = &sm.cost_terms[0].pieces;
    assert_eq!(pieces[0].a, vec![-4.0]);
    assert_eq!(pieces[0].b, vec![-2.0]);
    assert_eq!(pieces[1].a, vec![0.2]);
    assert_eq!(pieces[1].b, vec![2.2]);
}

#[test]
fn dropping_last_plane_worsens_deviation() {
    let h = load_inventory();
    let mut short = h.clone();
    short.num_stages = 2;
    short.stages.truncate(1);
    let sol = driver::solve_horizon(&short, 0.1, 100_000).unwrap();
    let grid = oracle::suggested_state_grid(&short, 0.05);
    let agrid = oracle::suggested_action_grid(&short, 0.05).unwrap();
    let vfs = oracle::grid_dp(&short, &grid, &agrid).unwrap();
    let compare_grid = GridSpec::uniform(vec![0.0], vec![15.0], 0.05);
    let full = oracle::compare(&sol.envelopes, &vfs, &compare_grid).unwrap();
    let mut trimmed = sol.envelopes.clone();
    trimmed[0].planes.pop();
    let less = oracle::compare(&trimmed, &vfs, &compare_grid).unwrap();
    assert!(
        less.max_deviation > full.max_deviation,
        "removing a plane should loosen the envelope: {} vs {}",
        less.max_deviation,
        full.max_deviation
    );
}

#[test]
fn budget_bounds_section_count() {
    let h = load_inventory();
    let mut short = h.clone();
    short.num_stages = 2;
    short.stages.truncate(1);
    for budget in [2usize, 5, 9] {
        let sol = driver::solve_horizon(&short, 1e-9, budget).unwrap();
        let s = &sol.report.per_stage[0];
        assert!(s.budget_exceeded);
        assert!(
            s.sections <= budget,
            "budget {budget} but {} sections kept",
            s.sections
        );
    }
}

#[test]
fn budget_exhaustion_reports_partial_result() {
    let h = load_inventory();
    let mut short = h.clone();
    short.num_stages = 2;
    short.stages.truncate(1);
    let sol = driver::solve_horizon(&short, 1e-6, 3).unwrap();
    assert!(sol.report.per_stage[0].budget_exceeded);
    // partial envelope still sound against a fine direct evaluation
    let env_next = short.terminal_envelope();
    for i in 0..=150 {
        let x = vec![i as f64 * 0.1];
        let truth = stage_solver::solve_stage(&short.stages[0], &env_next, &x)
            .unwrap()
            .value;
        assert!(sol.envelope(1).eval(&x).unwrap() <= truth + 1e-8);
    }
}

fn ace_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ace"))
}

fn model_path(name: &str) -> String {
    common::models_dir().join(name).display().to_string()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    // unknown flag -> usage error 2
    let st = ace_bin().args(["solve", "--frobnicate"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
    // invalid model -> 3
    let bad = dir.path().join("bad.json");
    let mut text = std::fs::read_to_string(model_path("inventory.json")).unwrap();
    text = text.replace("\"B\": [[1.0]]", "\"B\": [[1.0, 2.0]]");
    std::fs::write(&bad, text).unwrap();
    let st = ace_bin()
        .args(["solve", "--model"])
        .arg(&bad)
        .args(["--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));
    // missing artifacts -> 6
    let st = ace_bin()
        .args(["simulate", "--model", &model_path("inventory.json"), "--out"])
        .arg(dir.path().join("nowhere"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(6));
    // budget exhaustion -> 5, prints the verbatim line, artifacts written
    let out2 = dir.path().join("tight");
    let o = ace_bin()
        .args([
            "solve",
            "--model",
            &model_path("inventory.json"),
            "--tol",
            "0.0001",
            "--budget",
            "2",
            "--out",
        ])
        .arg(&out2)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(5));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("Budget exceeded."), "{stdout}");
    assert!(out2.join("J_1.jsonl").exists());
    assert!(out2.join("report.json").exists());
}

#[test]
fn cli_solve_simulate_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let model = model_path("inventory.json");
    let st = ace_bin()
        .args(["solve", "--model", &model, "--tol", "0.2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    for t in 1..=10 {
        assert!(out.join(format!("J_{t}.jsonl")).exists());
        assert!(out.join(format!("sections_{t}.jsonl")).exists());
    }
    // deterministic artifacts: re-solving into a fresh directory produces
    // byte-identical envelopes and sections (report differs in wall_time)
    let out_b = dir.path().join("run_b");
    ace_bin()
        .args(["solve", "--model", &model, "--tol", "0.2", "--out"])
        .arg(&out_b)
        .status()
        .unwrap();
    for t in 1..=10 {
        for prefix in ["J", "sections"] {
            let a = std::fs::read(out.join(format!("{prefix}_{t}.jsonl"))).unwrap();
            let b = std::fs::read(out_b.join(format!("{prefix}_{t}.jsonl"))).unwrap();
            assert_eq!(a, b, "{prefix}_{t} differs between identical runs");
        }
    }
    // simulate twice with the same seed: identical outputs
    let run_sim = |seed: &str| {
        let o = ace_bin()
            .args([
                "simulate", "--model", &model, "--seed", seed, "--paths", "64", "--x1", "0",
                "--dump-paths", "--out",
            ])
            .arg(&out)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        (
            String::from_utf8_lossy(&o.stdout).to_string(),
            std::fs::read(out.join("paths.csv")).unwrap(),
        )
    };
    let (stdout_a, csv_a) = run_sim("11");
    let (stdout_b, csv_b) = run_sim("11");
    assert_eq!(stdout_a, stdout_b);
    assert_eq!(csv_a, csv_b);
    // export produces one CSV per stage
    let st = ace_bin()
        .args(["export", "--model", &model, "--grid-step", "0.5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("env_10.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 31); // header + [0, 15] step 0.5
    assert!(csv.lines().next().unwrap().starts_with("x_1,J_10"));
    // the last stage keeps the kinked newsvendor shape: purchase slope on
    // the left of the order-up-to level, holding slope right of max demand
    let rows: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',');
            (
                it.next().unwrap().parse().unwrap(),
                it.next().unwrap().parse().unwrap(),
            )
        })
        .collect();
    for pair in rows.windows(2) {
        let slope = (pair[1].1 - pair[0].1) / (pair[1].0 - pair[0].0);
        if pair[1].0 <= 4.5 {
            assert!((slope + 2.0).abs() < 0.02, "left slope {slope} at {}", pair[0].0);
        }
        if pair[0].0 >= 10.0 {
            assert!((slope - 0.2).abs() < 0.02, "right slope {slope} at {}", pair[0].0);
        }
    }
    // step 0 is a usage error, as is a malformed seed
    let st = ace_bin()
        .args(["export", "--model", &model, "--grid-step", "0", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
    let st = ace_bin()
        .args(["simulate", "--model", &model, "--seed", "banana", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn cli_refine_requires_sections() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let model = model_path("inventory.json");
    ace_bin()
        .args(["solve", "--model", &model, "--tol", "1.0", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    std::fs::remove_file(out.join("sections_3.jsonl")).unwrap();
    let st = ace_bin()
        .args([
            "refine", "--model", &model, "--tol", "0.5", "--paths", "2", "--x1", "0", "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(6));
}

#[test]
fn envelope_round_trip_large() {
    // 500-plane 3-D envelope evaluates identically after save/load
    let mut rng = rng(99);
    let mut env = Envelope::empty(2, 3);
    for _ in 0..500 {
        let base: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let grad: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let value = rng.random_range(-10.0..10.0);
        env.add_plane(ace::Hyperplane::new(base, value, grad)).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("J_2.jsonl");
    env.save(&path).unwrap();
    let back = Envelope::load(&path).unwrap();
    assert_eq!(back, env);
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        assert_eq!(
            env.eval(&x).unwrap().to_bits(),
            back.eval(&x).unwrap().to_bits()
        );
    }
}
