use std::collections::HashMap;

use diffcore::rng::seeded;
use ontoplace::error::Error;
use ontoplace::ontology::{
    build_by_completion, build_by_scoring, edge_weights, evaluate_against_reference, load, retained_prefix, save,
    CompletionConfig, Judgment, PlantedChat, PromptTemplates, RelationLabel, ScoringConfig, ScriptedChat,
    SpatialOntology, TableScorer,
};
use ontoplace::scenegraph::planted_ontology;
use proptest::prelude::*;
use rand::Rng;

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn scorer_for(low: &str, highs: &[&str], scores: &[f64]) -> TableScorer {
    let t = PromptTemplates::default();
    let table: HashMap<String, f64> = highs
        .iter()
        .zip(scores)
        .map(|(h, &s)| (t.render_score(low, h), s))
        .collect();
    TableScorer::new(table)
}

/// Independent softmax and greedy prefix, written out longhand.
fn oracle_prefix(scores: &[f64], temperature: f64, threshold: f64) -> (Vec<f64>, usize) {
    let exps: Vec<f64> = scores.iter().map(|s| (s / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    let w: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let mut sorted = w.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut count = 0;
    for v in sorted {
        acc += v;
        count += 1;
        if acc > threshold {
            break;
        }
    }
    (w, count)
}

#[test]
fn scoring_fixture_keeps_two_edges() {
    let highs = ["kitchen", "bathroom", "bedroom", "garage"];
    let scorer = scorer_for("sink", &highs, &[-1.0, -2.0, -3.0, -4.0]);
    let cfg = ScoringConfig {
        temperature: 1.0,
        threshold: 0.8,
    };
    let t = PromptTemplates::default();
    let w = edge_weights(&scorer, &strings(&["sink"]), &strings(&highs), &cfg, &t).unwrap();
    assert!((w[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let (oracle, count) = oracle_prefix(&[-1.0, -2.0, -3.0, -4.0], 1.0, 0.8);
    for (a, b) in w[0].iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(count, 2);
    let onto = build_by_scoring(&scorer, &strings(&["sink"]), &strings(&highs), &cfg, &t).unwrap();
    assert_eq!(onto.edges(), vec![(0, 0), (1, 0)]);
}

#[test]
fn infinite_temperature_is_uniform() {
    let highs = ["a", "b", "c", "d", "e"];
    let scorer = scorer_for("x", &highs, &[-1.0, -7.0, -0.5, -30.0, -2.0]);
    let t = PromptTemplates::default();
    for temperature in [1e9, f64::INFINITY] {
        let cfg = ScoringConfig {
            temperature,
            threshold: 0.5,
        };
        let w = edge_weights(&scorer, &strings(&["x"]), &strings(&highs), &cfg, &t).unwrap();
        assert!(w[0].iter().all(|v| (v - 0.2).abs() < 1e-8), "{:?}", w[0]);
    }
}

#[test]
fn unknown_high_level_is_never_scored() {
    let scorer = TableScorer::default().with_fallback(0.0);
    let cfg = ScoringConfig {
        temperature: 1.0,
        threshold: 0.9,
    };
    let onto = build_by_scoring(
        &scorer,
        &strings(&["bed"]),
        &strings(&["bedroom", "unknown", "hall"]),
        &cfg,
        &PromptTemplates::default(),
    )
    .unwrap();
    assert_eq!(onto.high_levels(), strings(&["bedroom", "hall"]).as_slice());
}

#[test]
fn scoring_rejects_bad_hyperparameters() {
    let scorer = TableScorer::default().with_fallback(0.0);
    let t = PromptTemplates::default();
    for (temperature, threshold) in [(0.0, 0.5), (-1.0, 0.5), (1.0, 0.0), (1.0, 1.0), (f64::NAN, 0.5)] {
        let cfg = ScoringConfig { temperature, threshold };
        let r = build_by_scoring(&scorer, &strings(&["x"]), &strings(&["a"]), &cfg, &t);
        assert!(matches!(r, Err(Error::Config(_))), "K={temperature} gamma={threshold}");
    }
}

proptest! {
    #[test]
    fn scoring_prefix_is_minimal(
        scores in prop::collection::vec(-10.0f64..0.0, 1..8),
        threshold in 0.01f64..0.99,
        temperature in 0.1f64..5.0,
    ) {
        let highs: Vec<String> = (0..scores.len()).map(|i| format!("h{i}")).collect();
        let hs: Vec<&str> = highs.iter().map(String::as_str).collect();
        let scorer = scorer_for("x", &hs, &scores);
        let cfg = ScoringConfig { temperature, threshold };
        let w = edge_weights(&scorer, &strings(&["x"]), &highs, &cfg, &PromptTemplates::default()).unwrap();
        let w = &w[0];
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let kept = retained_prefix(w, threshold);
        prop_assert!(!kept.is_empty());
        let kept_sum: f64 = kept.iter().map(|&j| w[j]).sum();
        let dropped_sum: f64 = kept[..kept.len() - 1].iter().map(|&j| w[j]).sum();
        // exceeds the threshold, and dropping the last edge would not
        prop_assert!(kept_sum > threshold || kept.len() == w.len());
        prop_assert!(dropped_sum <= threshold);
        // every kept weight is at least every dropped weight
        let min_kept = kept.iter().map(|&j| w[j]).fold(f64::INFINITY, f64::min);
        for j in 0..w.len() {
            if !kept.contains(&j) {
                prop_assert!(w[j] <= min_kept);
            }
        }
        let (_, count) = oracle_prefix(&scores, temperature, threshold);
        prop_assert_eq!(kept.len(), count);
    }
}

#[test]
fn completion_recovers_planted_ontology() {
    for seed in 0..5 {
        let planted = planted_ontology(6, 20, 3, seed).unwrap();
        let chat = PlantedChat::new(planted.clone(), seed).with_hallucination_rate(0.3);
        let cfg = CompletionConfig {
            k: 3,
            repetitions: 3,
            max_retries: 5,
        };
        let built = build_by_completion(
            &chat,
            planted.low_levels(),
            planted.high_levels(),
            &cfg,
            &PromptTemplates::default(),
        )
        .unwrap();
        assert_eq!(built, planted, "seed {seed}");
    }
}

#[test]
fn hallucination_triggers_one_exclusion_requery() {
    let lows = strings(&["bed", "sofa", "lamp"]);
    let highs = strings(&["bedroom", "living room"]);
    let chat = ScriptedChat::new(["['sofa bed', 'bed']", "['bed', 'lamp']", "['sofa', 'lamp']"]);
    let cfg = CompletionConfig {
        k: 2,
        repetitions: 1,
        max_retries: 3,
    };
    let onto = build_by_completion(&chat, &lows, &highs, &cfg, &PromptTemplates::default()).unwrap();
    let prompts = chat.transcript();
    assert_eq!(prompts.len(), 3);
    assert!(!prompts[0].contains("Do not respond"));
    assert!(prompts[1].starts_with(&prompts[0]));
    assert!(prompts[1].ends_with(" Do not respond with concepts in ['sofa bed']."));
    assert!(prompts[2].contains("distinguish living room from ['bedroom']"));
    assert!(!prompts[2].contains("Do not respond"));
    assert_eq!(onto.lows_of(0), vec![0, 2]);
    assert_eq!(onto.lows_of(1), vec![1, 2]);
}

#[test]
fn repetitions_are_tallied() {
    let lows = strings(&["a", "b", "c", "d"]);
    let highs = strings(&["x"]);
    let chat = ScriptedChat::new(["['a', 'b']", "['a', 'c']", "['c', 'a']"]);
    let cfg = CompletionConfig {
        k: 2,
        repetitions: 3,
        max_retries: 1,
    };
    let onto = build_by_completion(&chat, &lows, &highs, &cfg, &PromptTemplates::default()).unwrap();
    // a: 3, c: 2, b: 1
    assert_eq!(onto.lows_of(0), vec![0, 2]);

    // ties are broken lexicographically
    let chat = ScriptedChat::new(["['d', 'b']", "['c', 'b']"]);
    let cfg = CompletionConfig {
        k: 2,
        repetitions: 2,
        max_retries: 1,
    };
    let onto = build_by_completion(&chat, &lows, &highs, &cfg, &PromptTemplates::default()).unwrap();
    assert_eq!(onto.lows_of(0), vec![1, 2]);
}

#[test]
fn persistent_hallucination_is_bounded() {
    let lows = strings(&["a", "b"]);
    let highs = strings(&["x", "y"]);
    let replies: Vec<String> = (0..50).map(|i| format!("['ghost{i}']")).collect();
    let chat = ScriptedChat::new(replies);
    let cfg = CompletionConfig {
        k: 1,
        repetitions: 4,
        max_retries: 3,
    };
    let err = build_by_completion(&chat, &lows, &highs, &cfg, &PromptTemplates::default()).unwrap_err();
    assert!(
        matches!(&err, Error::Construction { concept, .. } if concept == "x"),
        "{err}"
    );
    let prompts = chat.transcript();
    assert!(prompts.len() <= cfg.repetitions * cfg.max_retries);
    assert_eq!(prompts.len(), cfg.max_retries);
    // the exclusion list grows with every hallucination
    assert!(prompts[2].ends_with("['ghost0', 'ghost1']."));
}

#[test]
fn backend_failure_names_the_prompt() {
    let chat = ScriptedChat::new(Vec::<String>::new());
    let cfg = CompletionConfig {
        k: 1,
        repetitions: 1,
        max_retries: 1,
    };
    let err = build_by_completion(
        &chat,
        &strings(&["a"]),
        &strings(&["x"]),
        &cfg,
        &PromptTemplates::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Backend { ref prompt, .. } if prompt.contains("distinguish x")));
}

fn judgment(low: &str, high: &str, label: RelationLabel) -> Judgment {
    Judgment {
        low: low.into(),
        high: high.into(),
        label,
    }
}

#[test]
fn metrics_fixture() {
    let onto = SpatialOntology::with_edges(
        strings(&["l0", "l1", "l2"]),
        strings(&["h0", "h1"]),
        &[(0, 0), (0, 1), (1, 2)],
    )
    .unwrap();
    use RelationLabel::*;
    let judgments = vec![
        judgment("l0", "h0", Likely),    // tp
        judgment("l1", "h0", Likely),    // tp
        judgment("l2", "h1", Sometimes), // fp
        judgment("l0", "h1", Likely),    // fn
        judgment("l2", "h0", Rarely),    // tn
    ];
    let m = evaluate_against_reference(&onto, &judgments).unwrap();
    assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.accuracy - 3.0 / 5.0).abs() < 1e-12);

    let perfect = vec![
        judgment("l0", "h0", Likely),
        judgment("l2", "h1", Likely),
        judgment("l0", "h1", Rarely),
    ];
    let m = evaluate_against_reference(&onto, &perfect).unwrap();
    assert_eq!((m.precision, m.recall, m.accuracy), (1.0, 1.0, 1.0));
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded(21);
    for trial in 0..20 {
        let n = rng.random_range(1..12);
        let m = rng.random_range(1..6);
        let lows = (0..n).map(|i| format!("low {i}")).collect();
        let highs = (0..m).map(|i| format!("high'{i}")).collect();
        let mut onto = SpatialOntology::new(lows, highs).unwrap();
        for h in 0..m {
            for l in 0..n {
                onto.set_edge(h, l, rng.random_bool(0.3)).unwrap();
            }
        }
        let path = dir.path().join(format!("onto{trial}.json"));
        save(&onto, &path).unwrap();
        assert_eq!(load(&path).unwrap(), onto);
    }
}

#[test]
fn duplicate_vocabulary_is_rejected() {
    assert!(SpatialOntology::new(strings(&["a", "a"]), strings(&["x"])).is_err());
    assert!(SpatialOntology::new(strings(&["a"]), strings(&["x", "x"])).is_err());
    assert!(SpatialOntology::with_edges(strings(&["a"]), strings(&["x"]), &[(0, 1)]).is_err());
}

#[test]
fn normalized_biadjacency_columns() {
    let onto = SpatialOntology::with_edges(
        strings(&["l0", "l1", "l2"]),
        strings(&["h0", "h1"]),
        &[(0, 0), (1, 0), (0, 1)],
    )
    .unwrap();
    let w = onto.normalized_biadjacency();
    // column l0 splits between two rooms, l2 has no room
    assert_eq!(w, vec![0.5, 1.0, 0.0, 0.5, 0.0, 0.0]);
}
