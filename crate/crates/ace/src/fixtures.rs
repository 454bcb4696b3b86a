//! Shared unit-test models.

use crate::model::{
    AffinePiece, Horizon, PwlTerm, Scenario, StageModel, StateDomain, TerminalSpec,
};

/// The bundled inventory stage: purchasing 2.0, penalty 4.0, holding 0.2,
/// demand sample 0.0, 0.1, ..., 9.9 entering the transition negated
/// (`x' = x + u + w` with `w = -D`).
pub(crate) fn newsvendor_stage(t: usize) -> StageModel {
    let scenarios: Vec<Scenario> = (0..100)
        .map(|k| Scenario {
            w: vec![-(k as f64) / 10.0],
            prob: None,
        })
        .collect();
    StageModel {
        t,
        p: 1,
        m: 1,
        q: 1,
        a: vec![vec![1.0]],
        b: vec![vec![1.0]],
        scenarios,
        cost_terms: vec![PwlTerm {
            pieces: vec![
                AffinePiece {
                    a: vec![-4.0],
                    b: vec![-2.0],
                    d: vec![-4.0],
                    e: 0.0,
                },
                AffinePiece {
                    a: vec![0.2],
                    b: vec![2.2],
                    d: vec![0.2],
                    e: 0.0,
                },
            ],
        }],
        constraints: vec![],
        action_lower: Some(vec![0.0]),
        action_upper: Some(vec![15.0]),
        domain: StateDomain {
            lower: vec![0.0],
            upper: vec![15.0],
            extra: None,
        },
    }
}

pub(crate) fn inventory_horizon(num_stages: usize) -> Horizon {
    Horizon {
        num_stages,
        terminal: TerminalSpec::zero(),
        stages: (1..num_stages).map(newsvendor_stage).collect(),
    }
}
