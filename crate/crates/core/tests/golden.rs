//! Engine reward values against `fixtures/scoring_golden.json`, produced by
//! `scripts/scoring_golden.py`.

use serde::Deserialize;

use amtgen::backends::{LmStats, NliScores};
use amtgen::scoring::{chain_score, finalize_siblings, redundancy, RawEdgeMeasurement, RewardConfig};
use amtgen::text::token_set;

const TOL: f64 = 1e-12;

#[derive(Deserialize)]
struct Edge {
    x: String,
    y: String,
    emb_x: Vec<f64>,
    emb_y: Vec<f64>,
    nli: NliScores,
    lm: Vec<LmStats>,
}

#[derive(Deserialize)]
struct Expected {
    redundancy: f64,
    effect: f64,
    cost_per_model: Vec<f64>,
    relevance_per_model: Vec<f64>,
    relevance: f64,
}

#[derive(Deserialize)]
struct Case {
    reward: RewardConfig,
    edges: Vec<Edge>,
    expected: Vec<Expected>,
    chain_score: f64,
}

fn close(a: f64, b: f64, what: &str) {
    assert!((a - b).abs() <= TOL, "{what}: {a} vs {b}");
}

#[test]
fn engine_matches_python_golden_values() {
    let text = include_str!("fixtures/scoring_golden.json");
    let cases: Vec<Case> = serde_json::from_str(text).unwrap();
    assert!(cases.len() >= 50);
    for (n, c) in cases.iter().enumerate() {
        let raws: Vec<RawEdgeMeasurement> = c
            .edges
            .iter()
            .map(|e| RawEdgeMeasurement {
                nli: e.nli,
                lm: e.lm.clone(),
                redundancy: redundancy(&e.emb_x, &e.emb_y, &token_set(&e.x), &token_set(&e.y), &c.reward),
            })
            .collect();
        let got = finalize_siblings(&raws, &c.reward).unwrap();
        for (k, (g, w)) in got.iter().zip(&c.expected).enumerate() {
            let at = format!("case {n} edge {k}");
            close(g.redundancy, w.redundancy, &format!("{at} redundancy"));
            close(g.effect, w.effect, &format!("{at} effect"));
            for (m, (a, b)) in g.cost_per_model.iter().zip(&w.cost_per_model).enumerate() {
                close(*a, *b, &format!("{at} cost[{m}]"));
            }
            for (m, (a, b)) in g.relevance_per_model.iter().zip(&w.relevance_per_model).enumerate() {
                close(*a, *b, &format!("{at} r[{m}]"));
            }
            close(g.relevance, w.relevance, &format!("{at} relevance"));
        }
        let rel: Vec<f64> = got.iter().map(|s| s.relevance).collect();
        close(chain_score(&rel, None).unwrap(), c.chain_score, &format!("case {n} chain"));
    }
}
