use ontoplace::grounding::is_valid;
use ontoplace::scenegraph::{
    generate_synthetic, knn_edges, load, mask_classes, mask_labels, planted_ontology, save, MaskScope, SceneGraph,
    Split, SynthConfig,
};

fn config(num_nodes: usize, noise_rate: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        ontology: planted_ontology(6, 20, 3, 0).unwrap(),
        num_nodes,
        num_regions_per_class: 2,
        knn_k: 4,
        histogram_draws: 20,
        noise_rate,
        region_spread: 0.05,
        seed,
    }
}

fn split_count(g: &SceneGraph, split: Split) -> usize {
    g.split_nodes(split).len()
}

#[test]
fn pure_noise_histograms_are_uniform() {
    let cfg = SynthConfig {
        histogram_draws: 10_000,
        ..config(10, 1.0, 3)
    };
    let g = generate_synthetic(&cfg).unwrap();
    let n = g.low_levels.len();
    let mut counts = vec![0u64; n];
    for node in &g.nodes {
        for (c, &h) in counts.iter_mut().zip(&node.histogram) {
            *c += h as u64;
        }
    }
    let total: u64 = counts.iter().sum();
    assert_eq!(total, 100_000);
    let expected = total as f64 / n as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square with 19 degrees of freedom
    assert!(chi2 < 43.82, "chi-square {chi2}");
}

#[test]
fn noiseless_nodes_are_fully_valid() {
    let cfg = config(300, 0.0, 4);
    let g = generate_synthetic(&cfg).unwrap();
    let omega = cfg.ontology.normalized_biadjacency();
    let m = cfg.ontology.num_high();
    for v in 0..g.num_nodes() {
        let q = g.normalized_histogram(v);
        let valid = is_valid(&omega, m, &q).unwrap();
        assert!((valid - 1.0).abs() < 1e-12, "node {v}: {valid}");
        // every basis point comes from the node's own class
        let label = g.nodes[v].label.unwrap();
        for (l, &c) in g.nodes[v].histogram.iter().enumerate() {
            assert!(c == 0 || cfg.ontology.has_edge(label, l));
        }
    }
}

#[test]
fn splits_follow_seventy_fifteen_fifteen() {
    for n in [20, 101, 2000] {
        let g = generate_synthetic(&config(n, 0.2, 5)).unwrap();
        let (tr, va, te) = (
            split_count(&g, Split::Train),
            split_count(&g, Split::Val),
            split_count(&g, Split::Test),
        );
        assert_eq!(tr + va + te, n);
        assert!((tr as f64 - 0.7 * n as f64).abs() <= 1.0, "{n}: train {tr}");
        assert!((va as f64 - 0.15 * n as f64).abs() <= 1.0, "{n}: val {va}");
        assert!((te as f64 - 0.15 * n as f64).abs() <= 1.0, "{n}: test {te}");
    }
}

#[test]
fn generator_is_deterministic_and_valid() {
    let a = generate_synthetic(&config(500, 0.2, 6)).unwrap();
    let b = generate_synthetic(&config(500, 0.2, 6)).unwrap();
    let c = generate_synthetic(&config(500, 0.2, 7)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    a.validate().unwrap();
    assert!(a.nodes.iter().all(|n| n.label.is_some()));
    assert!(a.nodes.iter().all(|n| n.histogram.iter().sum::<u32>() == 20));
}

#[test]
fn knn_graph_is_symmetric_and_covers_neighbors() {
    let positions: Vec<[f64; 3]> = (0..30)
        .map(|i| {
            let t = i as f64;
            [t.sin() * 3.0, (t * 0.7).cos(), t * 0.01]
        })
        .collect();
    let k = 3;
    let edges = knn_edges(&positions, k);
    assert!(edges.iter().all(|&(u, v)| u < v));
    let mut sorted = edges.clone();
    sorted.dedup();
    assert_eq!(sorted.len(), edges.len());
    for u in 0..positions.len() {
        // brute-force k nearest
        let mut d: Vec<(f64, usize)> = (0..positions.len())
            .filter(|&v| v != u)
            .map(|v| {
                let dist: f64 = (0..3).map(|a| (positions[u][a] - positions[v][a]).powi(2)).sum();
                (dist, v)
            })
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, v) in &d[..k] {
            assert!(edges.contains(&(u.min(v), u.max(v))), "{u} misses neighbor {v}");
        }
    }
}

#[test]
fn label_masking_counts_and_nesting() {
    let g = generate_synthetic(&config(2000, 0.2, 8)).unwrap();
    let train = g.labeled(Split::Train).len();
    assert_eq!(train, 1400);
    let mut previous: Option<Vec<usize>> = None;
    for frac in [1.0, 0.5, 0.1, 0.01, 0.001] {
        let masked = mask_labels(&g, frac, 9).unwrap();
        let kept: Vec<usize> = masked.labeled(Split::Train).into_iter().map(|(i, _)| i).collect();
        assert_eq!(
            kept.len(),
            ((frac * train as f64) - 1e-9).ceil().max(1.0) as usize,
            "{frac}"
        );
        // validation and test untouched
        assert_eq!(masked.labeled(Split::Val), g.labeled(Split::Val));
        assert_eq!(masked.labeled(Split::Test), g.labeled(Split::Test));
        if let Some(prev) = &previous {
            assert!(kept.iter().all(|i| prev.contains(i)));
        }
        previous = Some(kept);
    }
    assert_eq!(mask_labels(&g, 0.0, 9).unwrap().labeled(Split::Train).len(), 0);
    assert!(mask_labels(&g, 1.5, 9).is_err());
}

#[test]
fn class_masking_removes_exactly_the_masked_labels() {
    let g = generate_synthetic(&config(600, 0.2, 10)).unwrap();
    let count =
        |g: &SceneGraph, split: Split, class: usize| g.labeled(split).iter().filter(|&&(_, l)| l == class).count();
    let masked = mask_classes(&g, &[1, 4], MaskScope::TrainOnly).unwrap();
    for class in 0..6 {
        let expect_train = if class == 1 || class == 4 {
            0
        } else {
            count(&g, Split::Train, class)
        };
        assert_eq!(count(&masked, Split::Train, class), expect_train);
        assert_eq!(count(&masked, Split::Val, class), count(&g, Split::Val, class));
        assert_eq!(count(&masked, Split::Test, class), count(&g, Split::Test, class));
    }
    let both = mask_classes(&g, &[1, 4], MaskScope::TrainAndVal).unwrap();
    assert_eq!(count(&both, Split::Val, 1), 0);
    assert_eq!(count(&both, Split::Test, 1), count(&g, Split::Test, 1));
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = mask_labels(&generate_synthetic(&config(120, 0.3, 11)).unwrap(), 0.5, 1).unwrap();
    let path = dir.path().join("graph.json");
    save(&g, &path).unwrap();
    assert_eq!(load(&path).unwrap(), g);
}

#[test]
fn invalid_graphs_are_rejected() {
    let mut g = generate_synthetic(&config(50, 0.2, 12)).unwrap();
    g.edges.push((3, 3));
    assert!(g.validate().is_err());
    g.edges.pop();
    g.edges.push((0, 50));
    assert!(g.validate().is_err());
    g.edges.pop();
    g.nodes[0].histogram.pop();
    assert!(g.validate().is_err());
}
