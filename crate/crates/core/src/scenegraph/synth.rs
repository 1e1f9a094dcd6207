//! Synthetic places layers planted from a known ontology.

use diffcore::rng::stream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{PlaceNode, SceneGraph, Split};
use crate::error::{Error, Result};
use crate::ontology::SpatialOntology;

/// Generator settings. Region seeds are uniform in the unit cube; nodes are
/// Gaussian blobs of standard deviation `region_spread` around them.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub ontology: SpatialOntology,
    pub num_nodes: usize,
    pub num_regions_per_class: usize,
    pub knn_k: usize,
    /// Basis points per node.
    pub histogram_draws: usize,
    /// Probability that a basis point ignores the ontology.
    pub noise_rate: f64,
    pub region_spread: f64,
    pub seed: u64,
}

const SEED_STREAM: u64 = 1;
const POSITION_STREAM: u64 = 2;
const HISTOGRAM_STREAM: u64 = 3;
const SPLIT_STREAM: u64 = 4;

/// `num_high` regions and `num_low` objects; region `h` links to
/// `edges_per_high` objects taken consecutively (cyclically) from a seeded
/// permutation, so link sets overlap only when `num_high * edges_per_high`
/// exceeds `num_low`.
pub fn planted_ontology(num_high: usize, num_low: usize, edges_per_high: usize, seed: u64) -> Result<SpatialOntology> {
    if num_high == 0 || num_low == 0 || edges_per_high == 0 || edges_per_high > num_low {
        return Err(Error::Config(format!(
            "cannot plant {edges_per_high} edges per region over {num_low} objects and {num_high} regions"
        )));
    }
    let lows = (0..num_low).map(|l| format!("object_{l:02}")).collect();
    let highs = (0..num_high).map(|h| format!("region_{h}")).collect();
    let mut perm: Vec<usize> = (0..num_low).collect();
    perm.shuffle(&mut stream(seed, 0x504c_4e54));
    let mut edges = Vec::new();
    for h in 0..num_high {
        for j in 0..edges_per_high {
            edges.push((h, perm[(h * edges_per_high + j) % num_low]));
        }
    }
    SpatialOntology::with_edges(lows, highs, &edges)
}

/// Symmetric k-nearest-neighbor graph: `(u, v)` with `u < v` whenever either
/// endpoint is among the other's `k` nearest (ties by index).
pub fn knn_edges(positions: &[[f64; 3]], k: usize) -> Vec<(usize, usize)> {
    let n = positions.len();
    let mut edges = Vec::with_capacity(n * k);
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for u in 0..n {
        dist.clear();
        for v in 0..n {
            if v != u {
                let d: f64 = (0..3).map(|a| (positions[u][a] - positions[v][a]).powi(2)).sum();
                dist.push((d, v));
            }
        }
        let k = k.min(dist.len());
        if k == 0 {
            continue;
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        dist.select_nth_unstable_by(k - 1, cmp);
        for &(_, v) in &dist[..k] {
            edges.push((u.min(v), u.max(v)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SceneGraph> {
    let onto = &config.ontology;
    let (m, n) = (onto.num_high(), onto.num_low());
    if config.num_nodes == 0 {
        return Err(Error::Config("num_nodes must be positive".into()));
    }
    if config.knn_k == 0 || config.knn_k >= config.num_nodes {
        return Err(Error::Config(format!(
            "knn_k must lie in 1..{}, got {}",
            config.num_nodes, config.knn_k
        )));
    }
    if config.num_regions_per_class == 0 {
        return Err(Error::Config("num_regions_per_class must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.noise_rate) {
        return Err(Error::Config(format!(
            "noise_rate must lie in [0, 1], got {}",
            config.noise_rate
        )));
    }
    if !(config.region_spread >= 0.0 && config.region_spread.is_finite()) {
        return Err(Error::Config("region_spread must be finite and >= 0".into()));
    }
    let class_lows: Vec<Vec<usize>> = (0..m).map(|h| onto.lows_of(h)).collect();
    if let Some(h) = class_lows.iter().position(Vec::is_empty) {
        return Err(Error::Config(format!(
            "planted ontology has no edge for {:?}",
            onto.high_levels()[h]
        )));
    }

    let regions = m * config.num_regions_per_class;
    let mut seed_rng = stream(config.seed, SEED_STREAM);
    let seeds: Vec<[f64; 3]> = (0..regions)
        .map(|_| [seed_rng.random(), seed_rng.random(), seed_rng.random()])
        .collect();

    let normal = Normal::new(0.0, config.region_spread).map_err(|e| Error::Config(format!("region_spread: {e}")))?;
    let mut pos_rng = stream(config.seed, POSITION_STREAM);
    let mut hist_rng = stream(config.seed, HISTOGRAM_STREAM);
    let mut positions = Vec::with_capacity(config.num_nodes);
    let mut nodes = Vec::with_capacity(config.num_nodes);
    for i in 0..config.num_nodes {
        let region = i % regions;
        let class = region % m;
        let c = seeds[region];
        let p = [
            c[0] + normal.sample(&mut pos_rng),
            c[1] + normal.sample(&mut pos_rng),
            c[2] + normal.sample(&mut pos_rng),
        ];
        positions.push(p);

        let mut histogram = vec![0u32; n];
        for _ in 0..config.histogram_draws {
            let low = if hist_rng.random_bool(1.0 - config.noise_rate) {
                class_lows[class][hist_rng.random_range(0..class_lows[class].len())]
            } else {
                hist_rng.random_range(0..n)
            };
            histogram[low] += 1;
        }
        nodes.push(PlaceNode {
            position: p,
            histogram,
            label: Some(class),
            split: Split::Train,
        });
    }

    let mut order: Vec<usize> = (0..config.num_nodes).collect();
    order.shuffle(&mut stream(config.seed, SPLIT_STREAM));
    let total = config.num_nodes as f64;
    let n_train = (0.70 * total).round() as usize;
    let n_val = ((0.15 * total).round() as usize).min(config.num_nodes - n_train);
    for (rank, &i) in order.iter().enumerate() {
        nodes[i].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let graph = SceneGraph {
        low_levels: onto.low_levels().to_vec(),
        high_levels: onto.high_levels().to_vec(),
        nodes,
        edges: knn_edges(&positions, config.knn_k),
    };
    graph.validate()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(noise_rate: f64) -> SynthConfig {
        SynthConfig {
            ontology: planted_ontology(4, 10, 2, 7).unwrap(),
            num_nodes: 200,
            num_regions_per_class: 2,
            knn_k: 4,
            histogram_draws: 12,
            noise_rate,
            region_spread: 0.05,
            seed: 5,
        }
    }

    #[test]
    fn planted_sets_are_disjoint_when_they_fit() {
        let o = planted_ontology(6, 20, 3, 1).unwrap();
        assert_eq!(o.num_edges(), 18);
        for l in 0..20 {
            assert!((0..6).filter(|&h| o.has_edge(h, l)).count() <= 1);
        }
        assert!(planted_ontology(2, 3, 4, 1).is_err());
    }

    #[test]
    fn zero_noise_histograms_follow_ontology() {
        let cfg = config(0.0);
        let g = generate_synthetic(&cfg).unwrap();
        for node in &g.nodes {
            let allowed = cfg.ontology.lows_of(node.label.unwrap());
            for (l, &c) in node.histogram.iter().enumerate() {
                assert!(c == 0 || allowed.contains(&l));
            }
            assert_eq!(node.histogram.iter().sum::<u32>(), 12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&config(0.2)).unwrap();
        let b = generate_synthetic(&config(0.2)).unwrap();
        assert_eq!(a, b);
        let mut other = config(0.2);
        other.seed = 6;
        assert_ne!(a, generate_synthetic(&other).unwrap());
    }

    #[test]
    fn split_proportions() {
        let g = generate_synthetic(&config(0.2)).unwrap();
        assert_eq!(g.split_nodes(Split::Train).len(), 140);
        assert_eq!(g.split_nodes(Split::Val).len(), 30);
        assert_eq!(g.split_nodes(Split::Test).len(), 30);
    }

    #[test]
    fn knn_is_symmetric_and_loop_free() {
        let g = generate_synthetic(&config(0.2)).unwrap();
        for &(u, v) in &g.edges {
            assert!(u < v);
        }
        let mut degree = vec![0; g.num_nodes()];
        for &(u, v) in &g.edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        assert!(degree.iter().all(|&d| d >= 4));
    }

    #[test]
    fn degenerate_configs_rejected() {
        let mut c = config(0.1);
        c.num_nodes = 0;
        assert!(generate_synthetic(&c).is_err());
        let mut c = config(0.1);
        c.knn_k = 200;
        assert!(generate_synthetic(&c).is_err());
        let mut c = config(0.1);
        c.noise_rate = 1.5;
        assert!(generate_synthetic(&c).is_err());
    }
}
