use diffcore::rng::seeded;
use diffcore::{Tape, Tensor, Var};
use ontoplace::error::{Error, Result};
use ontoplace::fuzzy::AggregatorConfig;
use ontoplace::grounding::{
    apply_masking, compute_loss, evaluate, is_similar, is_valid, run_ablation, train, AblationConfig, LossKind,
    OntologyTargets, Predictor, Supervision, TrainConfig, TrainedModel,
};
use ontoplace::ontology::SpatialOntology;
use ontoplace::scenegraph::{generate_synthetic, planted_ontology, SceneGraph, Split, SynthConfig};
use rand::Rng;

/// Sum over low-level concepts that have at least one edge, written without
/// the normalized biadjacency.
fn oracle_valid(edges: &[Vec<bool>], q: &[f64]) -> f64 {
    let n = q.len();
    (0..n).filter(|&l| edges.iter().any(|row| row[l])).map(|l| q[l]).sum()
}

fn random_instance(rng: &mut impl Rng) -> (SpatialOntology, Vec<Vec<bool>>, Vec<f64>) {
    let m = rng.random_range(1..6);
    let n = rng.random_range(1..10);
    let edges: Vec<Vec<bool>> = (0..m).map(|_| (0..n).map(|_| rng.random_bool(0.4)).collect()).collect();
    let mut onto = SpatialOntology::new(
        (0..n).map(|i| format!("l{i}")).collect(),
        (0..m).map(|i| format!("h{i}")).collect(),
    )
    .unwrap();
    for (h, row) in edges.iter().enumerate() {
        for (l, &e) in row.iter().enumerate() {
            onto.set_edge(h, l, e).unwrap();
        }
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let z: f64 = raw.iter().sum();
    (onto, edges, raw.iter().map(|v| v / z).collect())
}

#[test]
fn is_valid_matches_oracle() {
    let mut rng = seeded(31);
    for _ in 0..100 {
        let (onto, edges, q) = random_instance(&mut rng);
        let got = is_valid(&onto.normalized_biadjacency(), onto.num_high(), &q).unwrap();
        let want = oracle_valid(&edges, &q);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn is_similar_is_a_truth_value() {
    let mut rng = seeded(32);
    for _ in 0..1000 {
        let (onto, _, q) = random_instance(&mut rng);
        let raw: Vec<f64> = (0..onto.num_high()).map(|_| rng.random_range(0.0..1.0)).collect();
        let z: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let s = is_similar(&p, &onto.normalized_biadjacency(), &q).unwrap();
        let valid = is_valid(&onto.normalized_biadjacency(), onto.num_high(), &q).unwrap();
        assert!((0.0..=1.0 + 1e-12).contains(&s));
        // similarity never exceeds the mass the ontology can explain
        assert!(s <= valid + 1e-12);
    }
}

/// Targets for nodes given their (validity, target row) directly.
fn targets(rows: &[&[f64]]) -> OntologyTargets {
    OntologyTargets {
        num_classes: rows[0].len(),
        targets: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        validity: rows.iter().map(|r| r.iter().sum()).collect(),
    }
}

fn loss_of(kind: LossKind, probs: &[&[f64]], sup: &Supervision) -> Result<(f64, Option<f64>, Option<f64>)> {
    let mut tape = Tape::new();
    let m = probs[0].len();
    let p = tape.constant(Tensor::new(vec![probs.len(), m], probs.concat()).unwrap());
    let out = compute_loss(&mut tape, kind, p, sup, &AggregatorConfig::default())?;
    Ok((tape.value(out.loss).item(), out.equiv, out.incl))
}

#[test]
fn cross_entropy_of_uniform_prediction() {
    let t = targets(&[&[0.0; 4], &[0.0; 4]]);
    let sup = Supervision::new(&[(0, 2), (1, 0)], 4, &[], &t).unwrap();
    let (loss, _, _) = loss_of(LossKind::CrossEntropy, &[&[0.25; 4], &[0.25; 4]], &sup).unwrap();
    assert!((loss - 4.0f64.ln()).abs() < 1e-12);
}

#[test]
fn equivalence_axiom_examples() {
    let t = targets(&[&[0.0, 0.0], &[0.0, 0.0]]);
    let sup = Supervision::new(&[(0, 0), (1, 0)], 2, &[], &t).unwrap();
    // one right, one wrong: 1 - sqrt(1/2)
    let (loss, equiv, incl) = loss_of(LossKind::SatEquiv, &[&[1.0, 0.0], &[0.0, 1.0]], &sup).unwrap();
    let equiv = equiv.unwrap();
    assert!((equiv - (1.0 - 0.5f64.sqrt())).abs() < 1e-6, "{equiv}");
    assert!((equiv - 0.29289).abs() < 1e-5);
    assert_eq!(incl, None);
    // a single axiom aggregates to itself
    assert!((loss - (1.0 - equiv)).abs() < 1e-12);

    let single = Supervision::new(&[(0, 1)], 2, &[], &t).unwrap();
    let (_, equiv, _) = loss_of(LossKind::SatEquiv, &[&[0.3, 0.7], &[0.5, 0.5]], &single).unwrap();
    assert!((equiv.unwrap() - 0.7).abs() < 1e-12);

    let (loss, equiv, _) = loss_of(LossKind::SatEquiv, &[&[1.0, 0.0], &[1.0, 0.0]], &sup).unwrap();
    assert!((equiv.unwrap() - 1.0).abs() < 1e-6);
    assert!(loss.abs() < 1e-6);
}

#[test]
fn inclusion_axiom_examples() {
    // validity 0.8, target mass on class 0; p0 = 0.5 gives similarity 0.4
    let t = targets(&[&[0.8, 0.0], &[0.0, 0.0]]);
    let sup = Supervision::new(&[], 2, &[0], &t).unwrap();
    let (_, _, incl) = loss_of(LossKind::SatIncl, &[&[0.5, 0.5], &[0.5, 0.5]], &sup).unwrap();
    assert!((incl.unwrap() - 0.5).abs() < 1e-9);

    // nothing the ontology explains: vacuously true
    let sup = Supervision::new(&[], 2, &[1], &t).unwrap();
    let (loss, _, incl) = loss_of(LossKind::SatIncl, &[&[0.5, 0.5], &[0.9, 0.1]], &sup).unwrap();
    assert!((incl.unwrap() - 1.0).abs() < 1e-6);
    assert!(loss.abs() < 1e-6);
}

#[test]
fn perfect_prediction_has_zero_sat_loss() {
    let t = targets(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let sup = Supervision::new(&[(0, 0), (1, 1)], 2, &[0, 1], &t).unwrap();
    let (loss, equiv, incl) = loss_of(LossKind::SatBoth, &[&[1.0, 0.0], &[0.0, 1.0]], &sup).unwrap();
    assert!(loss.abs() < 1e-6, "{loss}");
    assert!(equiv.is_some() && incl.is_some());
}

#[test]
fn two_axioms_aggregate_with_p_mean_error() {
    // equivalence truth 0.9 (single node), inclusion truth 0.5
    let t = targets(&[&[0.0, 0.0], &[0.8, 0.0]]);
    let sup = Supervision::new(&[(0, 0)], 2, &[1], &t).unwrap();
    let (loss, equiv, incl) = loss_of(LossKind::SatBoth, &[&[0.9, 0.1], &[0.5, 0.5]], &sup).unwrap();
    assert!((equiv.unwrap() - 0.9).abs() < 1e-12);
    assert!((incl.unwrap() - 0.5).abs() < 1e-9);
    assert!((loss - 0.3606).abs() < 1e-4, "{loss}");
}

#[test]
fn empty_domains() {
    let t = targets(&[&[0.5, 0.5], &[0.0, 1.0]]);
    let no_labels = Supervision::new(&[], 2, &[0, 1], &t).unwrap();
    let probs: [&[f64]; 2] = [&[0.5, 0.5], &[0.2, 0.8]];
    for kind in [LossKind::CrossEntropy, LossKind::SatEquiv] {
        assert!(
            matches!(loss_of(kind, &probs, &no_labels), Err(Error::NoActiveAxioms(_))),
            "{kind}"
        );
    }
    // sat_both falls back to the inclusion axiom alone
    let (both, equiv, incl) = loss_of(LossKind::SatBoth, &probs, &no_labels).unwrap();
    let (only, _, _) = loss_of(LossKind::SatIncl, &probs, &no_labels).unwrap();
    assert_eq!(equiv, None);
    assert!(incl.is_some());
    assert!((both - only).abs() < 1e-12);

    let nothing = Supervision::new(&[], 2, &[], &t).unwrap();
    assert!(loss_of(LossKind::SatBoth, &probs, &nothing).is_err());
}

#[test]
fn vacuous_inclusion_passes_no_gradient() {
    let zero: &[f64] = &[0.0; 3];
    let t = targets(&[zero; 3]);
    let sup = Supervision::new(&[], 3, &[0, 1, 2], &t).unwrap();
    let mut tape = Tape::new();
    let logits: Var = tape.param(Tensor::new(vec![3, 3], vec![0.3, -1.0, 2.0, 0.1, 0.2, 0.3, -0.5, 0.5, 0.0]).unwrap());
    let probs = tape.softmax_rows(logits).unwrap();
    let out = compute_loss(&mut tape, LossKind::SatIncl, probs, &sup, &AggregatorConfig::default()).unwrap();
    tape.backward(out.loss).unwrap();
    let grad = tape.grad(logits).map(<[f64]>::to_vec).unwrap_or_default();
    assert!(grad.iter().all(|&g| g == 0.0), "{grad:?}");
}

#[test]
fn sat_losses_decrease_as_predictions_improve() {
    let t = targets(&[&[0.6, 0.2, 0.0], &[0.0, 0.0, 1.0]]);
    let sup = Supervision::new(&[(0, 0), (1, 2)], 3, &[0, 1], &t).unwrap();
    let mut rng = seeded(33);
    for _ in 0..200 {
        let a: f64 = rng.random_range(0.0..0.9);
        let b: f64 = rng.random_range(a..1.0);
        let rows = |s: f64| -> Vec<Vec<f64>> {
            vec![
                vec![s, (1.0 - s) / 2.0, (1.0 - s) / 2.0],
                vec![(1.0 - s) / 2.0, (1.0 - s) / 2.0, s],
            ]
        };
        let (lo, hi) = (rows(a), rows(b));
        for kind in LossKind::ALL {
            let l_lo = loss_of(kind, &[&lo[0], &lo[1]], &sup).unwrap().0;
            let l_hi = loss_of(kind, &[&hi[0], &hi[1]], &sup).unwrap().0;
            assert!(l_hi <= l_lo + 1e-9, "{kind}: {a} -> {b}");
        }
    }
}

#[test]
fn equivalence_and_cross_entropy_agree_on_hard_predictions() {
    // at one-hot predictions both losses rank by the number of mistakes
    let zero: &[f64] = &[0.0; 3];
    let t = targets(&[zero; 3]);
    let sup = Supervision::new(&[(0, 0), (1, 1), (2, 2)], 3, &[], &t).unwrap();
    let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut last = (-1.0, -1.0);
    for mistakes in 0..=3 {
        let rows: Vec<&[f64]> = (0..3)
            .map(|i| {
                if i < mistakes {
                    &eye[(i + 1) % 3][..]
                } else {
                    &eye[i][..]
                }
            })
            .collect();
        let ce = loss_of(LossKind::CrossEntropy, &rows, &sup).unwrap().0;
        let eq = loss_of(LossKind::SatEquiv, &rows, &sup).unwrap().0;
        assert!(ce > last.0 && eq > last.1);
        last = (ce, eq);
    }
}

fn synth(num_nodes: usize, noise_rate: f64, seed: u64) -> (SceneGraph, SpatialOntology) {
    let ontology = planted_ontology(6, 20, 3, 0).unwrap();
    let graph = generate_synthetic(&SynthConfig {
        ontology: ontology.clone(),
        num_nodes,
        num_regions_per_class: 2,
        knn_k: 4,
        histogram_draws: 20,
        noise_rate,
        region_spread: 0.05,
        seed,
    })
    .unwrap();
    (graph, ontology)
}

fn small_config(kind: LossKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        loss_kind: kind,
        learning_rate: 1e-2,
        max_epochs: epochs,
        embed_dim: 8,
        hidden_dim: 8,
        heads: 2,
        gat_layers: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn frozen_parameters_converge_after_patience_epochs() {
    let (g, o) = synth(120, 0.2, 1);
    let config = TrainConfig {
        learning_rate: 0.0,
        dropout: 0.0,
        convergence_patience: 7,
        ..small_config(LossKind::SatBoth, 100)
    };
    let outcome = train(&[g], &o, &config).unwrap();
    assert!(outcome.history.converged);
    assert_eq!(outcome.history.epochs_run(), 7);
}

#[test]
fn training_is_deterministic() {
    let (g, o) = synth(150, 0.2, 2);
    let config = small_config(LossKind::SatBoth, 15);
    let a = train(std::slice::from_ref(&g), &o, &config).unwrap();
    let b = train(std::slice::from_ref(&g), &o, &config).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
    let c = train(&[g], &o, &TrainConfig { seed: 2, ..config }).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn ontology_alone_teaches_noiseless_classes() {
    let (g, o) = synth(300, 0.0, 3);
    let config = TrainConfig {
        keep_fraction: 0.0,
        ..small_config(LossKind::SatIncl, 150)
    };
    let outcome = train(std::slice::from_ref(&g), &o, &config).unwrap();
    let metrics = evaluate(&outcome.model, &g, Split::Test, &[], false).unwrap();
    assert!(metrics.accuracy > 1.0 / 6.0 + 0.2, "accuracy {}", metrics.accuracy);
}

#[test]
fn training_rejects_mismatched_vocabularies() {
    let (mut g, o) = synth(60, 0.2, 4);
    g.high_levels.swap(0, 1);
    assert!(matches!(
        train(&[g], &o, &small_config(LossKind::SatBoth, 2)),
        Err(Error::Ontology(_))
    ));
}

#[test]
fn cross_entropy_without_labels_aborts() {
    let (g, o) = synth(60, 0.2, 5);
    let config = TrainConfig {
        keep_fraction: 0.0,
        ..small_config(LossKind::CrossEntropy, 2)
    };
    assert!(matches!(
        train(&[g], &o, &config),
        Err(Error::Training { epoch: 0, .. })
    ));
}

struct Oracle;

impl Predictor for Oracle {
    fn predict_probs(&self, graph: &SceneGraph) -> Result<Tensor> {
        let m = graph.num_classes();
        let mut data = vec![0.0; graph.num_nodes() * m];
        for (v, node) in graph.nodes.iter().enumerate() {
            data[v * m + node.label.unwrap_or(0)] = 1.0;
        }
        Ok(Tensor::new(vec![graph.num_nodes(), m], data)?)
    }
}

struct Uniform;

impl Predictor for Uniform {
    fn predict_probs(&self, graph: &SceneGraph) -> Result<Tensor> {
        let m = graph.num_classes();
        Ok(Tensor::full(vec![graph.num_nodes(), m], 1.0 / m as f64))
    }
}

#[test]
fn evaluation_with_reference_predictors() {
    let (g, _) = synth(400, 0.2, 6);
    let perfect = evaluate(&Oracle, &g, Split::Test, &[2], false).unwrap();
    assert_eq!(perfect.accuracy, 1.0);
    assert_eq!(perfect.masked_class_accuracy, Some(1.0));
    assert_eq!(perfect.nodes, g.labeled(Split::Test).len());
    assert_eq!(perfect.inference_seconds_per_graph, None);

    let uniform = evaluate(&Uniform, &g, Split::Test, &[2], true).unwrap();
    // every prediction goes to class 0
    let class0 = g.labeled(Split::Test).iter().filter(|&&(_, l)| l == 0).count();
    assert_eq!(uniform.accuracy, class0 as f64 / uniform.nodes as f64);
    assert!((uniform.accuracy - 1.0 / 6.0).abs() < 0.1);
    assert_eq!(uniform.masked_class_accuracy, Some(0.0));
    for (c, row) in uniform.confusion.iter().enumerate() {
        let count = g.labeled(Split::Test).iter().filter(|&&(_, l)| l == c).count();
        assert_eq!(row.iter().sum::<usize>(), count);
        assert_eq!(row[0], count);
    }
    assert!(uniform.inference_seconds_per_graph.is_some());
}

#[test]
fn masking_is_shared_across_loss_kinds() {
    let (g, o) = synth(200, 0.2, 7);
    let graphs = vec![g.clone(), g];
    let masked = [3usize];
    let base = TrainConfig {
        keep_fraction: 0.1,
        ..small_config(LossKind::SatBoth, 1)
    };
    let a = apply_masking(&graphs, &masked, &base).unwrap();
    for kind in LossKind::ALL {
        let b = apply_masking(
            &graphs,
            &masked,
            &TrainConfig {
                loss_kind: kind,
                ..base.clone()
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }
    // the two copies get different samples
    assert_ne!(a[0].labeled(Split::Train), a[1].labeled(Split::Train));
    assert!(a[0].labeled(Split::Train).iter().all(|&(_, l)| l != 3));
    let _ = o;
}

#[test]
fn ablation_accounting() {
    let (g, o) = synth(150, 0.2, 8);
    let config = AblationConfig {
        train: small_config(LossKind::SatBoth, 5),
        loss_kinds: vec![LossKind::CrossEntropy, LossKind::SatIncl],
        keep_fractions: vec![1.0, 0.1, 0.0],
        trials: 2,
    };
    let report = run_ablation(&[g], &o, &config, 2).unwrap();
    assert_eq!(report.rows.len(), 2 * 3 * 2);
    assert_eq!(report.cells.len(), 2 * 3);
    let mut i = 0;
    for kind in &config.loss_kinds {
        for &frac in &config.keep_fractions {
            for trial in 1..=2 {
                let row = &report.rows[i];
                assert_eq!((row.loss_kind, row.keep_fraction, row.trial), (*kind, frac, trial));
                i += 1;
            }
        }
    }
    // cross-entropy has nothing to learn from with no labels
    let ce_zero = &report.cells[2];
    assert!(!ce_zero.complete && ce_zero.completed == 0 && ce_zero.mean_accuracy.is_none());
    assert!(report.rows[4].error.is_some());
    // the inclusion loss never reads labels
    let incl: Vec<f64> = report.rows[6..].iter().map(|r| r.accuracy.unwrap()).collect();
    assert_eq!(incl[0].to_bits(), incl[2].to_bits());
    assert_eq!(incl[0].to_bits(), incl[4].to_bits());
    assert_eq!(incl[1].to_bits(), incl[5].to_bits());
    assert!(report.rows.iter().all(|r| r.train_seconds.is_none()));
}

#[test]
fn trained_model_round_trip() {
    let (g, o) = synth(100, 0.2, 9);
    let outcome = train(&[g.clone()], &o, &small_config(LossKind::SatBoth, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    outcome.model.save(&path).unwrap();
    let loaded = TrainedModel::load(&path).unwrap();
    assert_eq!(loaded, outcome.model);
    assert_eq!(
        loaded.predict_probs(&g).unwrap().data(),
        outcome.model.predict_probs(&g).unwrap().data()
    );
}
