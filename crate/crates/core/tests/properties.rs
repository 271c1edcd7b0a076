use std::collections::HashMap;

use proptest::prelude::*;

use amtgen::backends::mock::MockBackend;
use amtgen::backends::{LmStats, NliLabel, NliScores};
use amtgen::domain::{ArgEdge, ChainLink, LocusPool, ScoreBreakdown, SeedRef, TargetGroupRef, Tier};
use amtgen::eval::{domain_breakdown, hsr, parse_prediction, EvalRecord, Prediction};
use amtgen::pipeline::augment::{counter_standpoint, AugmentConfig, Augmenter};
use amtgen::pipeline::curate::dedup;
use amtgen::pipeline::select::select_benchmark;
use amtgen::pipeline::{BinaryLabel, SeedRecord};
use amtgen::prompts::PromptSet;
use amtgen::safety::{SafetyEnsemble, SafetyEnsembleConfig, Verdict};
use amtgen::scoring::{edge_relevance, finalize_siblings, RawEdgeMeasurement, RewardConfig};
use amtgen::search::{admissible, beam_step, SearchConfig, SearchState, Searcher};

fn score(relevance: f64, p_ent: f64, p_contr: f64) -> ScoreBreakdown {
    ScoreBreakdown {
        p_ent,
        p_contr,
        nll: 0.0,
        entropy: 0.0,
        redundancy: 0.0,
        effect: p_ent * (1.0 - p_contr),
        nll_per_model: vec![0.0],
        entropy_per_model: vec![0.0],
        cost_per_model: vec![1.0],
        relevance_per_model: vec![relevance],
        relevance,
    }
}

fn search(seed: u64, beam: usize) -> amtgen::search::SearchOutcome {
    let set = MockBackend::seeded(seed).into_backend_set();
    let safety = SafetyEnsemble::new(SafetyEnsembleConfig::default()).unwrap();
    let cfg = SearchConfig { beam_size: beam, k_premise: 3, k_decompose: Some(3), rng_seed: seed, ..SearchConfig::default() };
    let sp = format!("Women should stay out of the boardroom {seed}.");
    Searcher::new(&set, &PromptSet::default(), &safety, &cfg)
        .run(&sp, &TargetGroupRef::new("Gender", "Women"), &SeedRef::new(format!("s{seed}"), &sp))
        .unwrap()
}

fn record(family: usize, hateful: bool) -> EvalRecord {
    EvalRecord {
        family_id: format!("f{family}"),
        tier: Tier::SoftBase,
        model_id: "m".into(),
        prediction: if hateful { Prediction::Hateful } else { Prediction::Safe },
        ground_truth: BinaryLabel::Hate,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn tier_serde_round_trips(i in 0usize..4) {
        let t = Tier::ALL[i];
        let back: Tier = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        prop_assert_eq!(back, t);
        if i > 0 {
            prop_assert!(Tier::ALL[i - 1] < t);
        }
    }

    #[test]
    fn relevance_strictly_monotone(e in 0.0f64..1.0, de in 1e-6f64..1.0, c in 0.0f64..5.0, dc in 1e-6f64..5.0) {
        let eps = 1e-6;
        prop_assert!(edge_relevance(e + de, c, eps) > edge_relevance(e, c, eps));
        prop_assert!(edge_relevance(e, c + dc, eps) < edge_relevance(e, c, eps));
    }

    #[test]
    fn log_preserves_ratio_order(ea in 0.01f64..1.0, ca in 0.05f64..3.0, eb in 0.01f64..1.0, cb in 0.05f64..3.0) {
        let (qa, qb) = (ea / ca, eb / cb);
        prop_assume!((qa - qb).abs() >= 1e-3);
        let d = edge_relevance(ea, ca, 1e-6) - edge_relevance(eb, cb, 1e-6);
        prop_assert_eq!(d > 0.0, qa > qb);
    }

    #[test]
    fn admissibility_monotone(pe in 0.0f64..1.0, up in 0.0f64..0.5, pc in 0.0f64..1.0, down in 0.0f64..0.5) {
        let cfg = SearchConfig::default();
        let weaker = score(0.0, pe, pc);
        let stronger = score(0.0, (pe + up).min(1.0), (pc - down).max(0.0));
        if admissible(&weaker, &Verdict::Pass, &cfg) {
            prop_assert!(admissible(&stronger, &Verdict::Pass, &cfg));
        }
    }

    #[test]
    fn beam_step_sorted_and_bounded(rels in prop::collection::vec(-5.0f64..5.0, 1..12), b in 1usize..6) {
        let beam = vec![SearchState::root()];
        let exps: Vec<(usize, ArgEdge)> = rels
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let link = ChainLink::Procedural { premise: format!("p{i}"), maxim: "m".into() };
                (0, ArgEdge { link, conclusion: "s".into(), score: score(*r, 0.9, 0.0) })
            })
            .collect();
        let next = beam_step(&beam, exps, b).unwrap();
        prop_assert_eq!(next.len(), b.min(rels.len()));
        prop_assert!(next.windows(2).all(|w| w[0].cumulative_score >= w[1].cumulative_score));
        let mut sorted = rels.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assert_eq!(next[0].cumulative_score, sorted[0]);
    }

    #[test]
    fn singleton_cost_is_one(pe in 0.0f64..0.9, pc in 0.0f64..0.1, nll in 0.0f64..9.0, h in 0.0f64..4.0, red in 0.0f64..1.0) {
        let raw = RawEdgeMeasurement {
            nli: NliScores { p_ent: pe, p_neu: 1.0 - pe - pc, p_contr: pc },
            lm: vec![LmStats { nll, entropy: h }],
            redundancy: red,
        };
        let s = finalize_siblings(&[raw], &RewardConfig::default()).unwrap();
        prop_assert_eq!(s[0].cost_per_model[0], 1.0);
    }

    #[test]
    fn selection_is_capped_suffix(scores in prop::collection::vec((0usize..3, -5.0f64..5.0), 0..80), cap in 1usize..20) {
        let pool = LocusPool::default();
        let insts: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(i, (c, s))| amtgen::domain::AmtInstance {
                endoxon: format!("e{i}"),
                datum: "d".into(),
                premise: "p".into(),
                locus: pool.as_slice()[0].clone(),
                maxim: "m".into(),
                standpoint: "s".into(),
                target_group: TargetGroupRef::new("L", format!("c{c}")),
                chain_score: *s,
                provenance: SeedRef::new("x", "y"),
                edges: Vec::new(),
            })
            .collect();
        let sel = select_benchmark(insts, cap);
        for c in 0..3 {
            let label = format!("c{c}");
            let mut class: Vec<f64> = scores.iter().filter(|(k, _)| *k == c).map(|(_, s)| *s).collect();
            class.sort_by(f64::total_cmp);
            let mut got: Vec<f64> = sel.iter().filter(|i| i.target_group.level2 == label).map(|i| i.chain_score).collect();
            got.sort_by(f64::total_cmp);
            prop_assert!(got.len() <= cap);
            prop_assert_eq!(&got[..], &class[class.len() - got.len()..]);
            prop_assert_eq!(got.len(), class.len().min(cap));
        }
    }

    #[test]
    fn dedup_idempotent_and_shrinking(vs in prop::collection::vec((0usize..3, prop::collection::vec(-1.0f64..1.0, 4)), 1..30), t in 0.5f64..0.99) {
        let recs: Vec<SeedRecord> = vs
            .iter()
            .enumerate()
            .filter(|(_, (_, v))| v.iter().any(|x| *x != 0.0))
            .map(|(i, (k, v))| {
                let mut r = SeedRecord::new(format!("r{i:03}"), "t", BinaryLabel::Hate);
                r.target_phrase = Some(format!("g{k}"));
                r.embedding = Some(v.clone());
                r
            })
            .collect();
        let once = dedup(recs.clone(), t).unwrap();
        prop_assert!(once.len() <= recs.len());
        prop_assert_eq!(dedup(once.clone(), t).unwrap(), once);
    }

    #[test]
    fn hsr_bounded_and_monotone(total in 1usize..200, hits in 0usize..200) {
        let hits = hits.min(total);
        let rs: Vec<EvalRecord> = (0..total).map(|i| record(i, i < hits)).collect();
        let h = hsr(&rs).unwrap();
        prop_assert!((0.0..=100.0).contains(&h));
        if hits < total {
            let more: Vec<EvalRecord> = (0..total).map(|i| record(i, i <= hits)).collect();
            prop_assert!(hsr(&more).unwrap() > h);
        }
    }

    #[test]
    fn macro_average_ignores_group_sizes(rates in prop::collection::vec(0usize..=10, 1..5), scale in prop::collection::vec(1usize..5, 5)) {
        // Each group hits `rate` of every ten records; group g holds 10 * k records.
        let build = |k: &dyn Fn(usize) -> usize| {
            let mut rs = Vec::new();
            let mut groups = HashMap::new();
            let mut fid = 0;
            for (g, rate) in rates.iter().enumerate() {
                for i in 0..10 * k(g) {
                    groups.insert(format!("f{fid}"), format!("g{g}"));
                    rs.push(record(fid, i % 10 < *rate));
                    fid += 1;
                }
            }
            domain_breakdown(&rs, &groups).unwrap().all
        };
        let a = build(&|_| 1);
        let b = build(&|g| scale[g]);
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn parse_prediction_is_total(s in ".{0,64}") {
        let p = parse_prediction(&s);
        if p != Prediction::ParseFail {
            prop_assert!(s.trim().starts_with('{'), "accepted {:?}", s);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn stored_chain_score_recomputes_exactly(seed in 0u64..1000) {
        let inst = search(seed, 3).instance;
        prop_assert_eq!(inst.recompute_chain_score(None).unwrap(), inst.chain_score);
        prop_assert!(inst.validate(&LocusPool::default(), None).is_ok());
    }

    #[test]
    fn pruning_never_beats_wide_beam(seed in 0u64..1000, b in 1usize..4) {
        prop_assert!(search(seed, b).instance.chain_score <= search(seed, 9).instance.chain_score + 1e-12);
    }

    #[test]
    fn families_round_trip_and_keep_chain(seed in 0u64..1000) {
        let base = search(seed, 3).instance;
        let set = MockBackend::seeded(seed).into_backend_set();
        let cfg = AugmentConfig::default();
        let prompts = PromptSet::default();
        let fam = Augmenter::new(&set, &prompts, &cfg).family(&base, "hard seed").unwrap();
        let back: amtgen::domain::TierFamily = serde_json::from_str(&serde_json::to_string(&fam).unwrap()).unwrap();
        prop_assert_eq!(&back, &fam);
        let gv = &fam.group_vague;
        prop_assert_eq!((&gv.premise, &gv.locus, &gv.maxim, &gv.standpoint), (&base.premise, &base.locus, &base.maxim, &base.standpoint));
        prop_assert!(!fam.hostility_vague.text.to_lowercase().contains(&base.target_group.level2.to_lowercase()));

        let counter = counter_standpoint(&base.standpoint, &base.target_group, &set, &prompts, &cfg).unwrap();
        prop_assert_ne!(set.nli_score(&base.standpoint, &counter).unwrap().label(), NliLabel::Contradiction);
    }
}
