//! Seeded synthetic heterogeneous graphs: a stochastic-block fixture with
//! planted classes for end-to-end checks, and a tiny deterministic fixture
//! for gradient verification.

use super::{FeatureMatrix, GraphBuilder, HeteroGraph};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Parameters of the planted-class fixture. Two auxiliary node types carry
/// class-correlated structure; target features carry class-correlated but
/// noisy attributes, so no single view is sufficient on its own.
#[derive(Debug, Clone)]
pub struct SbmConfig {
    pub seed: u64,
    pub n_target: usize,
    pub n_classes: usize,
    /// Auxiliary pool sizes per class for the two aux types.
    pub aux_pool: [usize; 2],
    /// Edges per target node into each aux type.
    pub aux_degree: [usize; 2],
    /// Probability an edge stays in the own-class pool.
    pub affinity: [f64; 2],
    /// Class-agnostic hub nodes appended to the first aux type; every
    /// target also links to `hub_degree` of them. Hubs pollute the
    /// meta-path neighborhoods (any two items sharing a hub become
    /// meta-path neighbors) while first-order attention can still single
    /// out the class-informative pool neighbors.
    pub hub_nodes: usize,
    pub hub_degree: usize,
    pub feature_dim: usize,
    pub feature_noise: f64,
    /// Labeled nodes per class in the train split.
    pub train_per_class: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_target: 300,
            n_classes: 3,
            aux_pool: [30, 15],
            aux_degree: [3, 2],
            affinity: [0.85, 0.6],
            hub_nodes: 12,
            hub_degree: 2,
            feature_dim: 32,
            feature_noise: 1.6,
            train_per_class: 20,
            val_size: 90,
            test_size: 150,
        }
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Builds the planted-class heterogeneous stochastic-block fixture.
pub fn sbm_fixture(cfg: &SbmConfig) -> HeteroGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_target;
    let c = cfg.n_classes;
    let labels: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();

    // Class-correlated features. Class means sit on distinct coordinate
    // axes, but classes 1 and 2 are drawn closer together so attributes
    // alone cannot fully separate them.
    let mut means = vec![vec![0.0; cfg.feature_dim]; c];
    for (k, m) in means.iter_mut().enumerate() {
        m[k % cfg.feature_dim] = 1.0;
        if k >= 1 {
            m[1 % cfg.feature_dim] += 0.45;
        }
    }
    let mut x = Array2::zeros((n, cfg.feature_dim));
    for i in 0..n {
        let m = &means[labels[i] as usize];
        for j in 0..cfg.feature_dim {
            x[(i, j)] = m[j] + cfg.feature_noise * gauss(&mut rng) * 0.35;
        }
    }

    let mut b = GraphBuilder::new();
    b.add_node_type("item", n);
    let aux_names = ["alpha", "beta"];
    for (a, &pool) in cfg.aux_pool.iter().enumerate() {
        let hubs = if a == 0 { cfg.hub_nodes } else { 0 };
        b.add_node_type(aux_names[a], pool * c + hubs);
    }
    for (a, name) in aux_names.iter().enumerate() {
        let pool = cfg.aux_pool[a];
        let mut pairs = Vec::new();
        for i in 0..n {
            let own = labels[i] as usize;
            for _ in 0..cfg.aux_degree[a] {
                let class = if rng.random::<f64>() < cfg.affinity[a] {
                    own
                } else {
                    rng.random_range(0..c)
                };
                let node = class * pool + rng.random_range(0..pool);
                pairs.push((i as u32, node as u32));
            }
            if a == 0 {
                for _ in 0..cfg.hub_degree.min(cfg.hub_nodes) {
                    let node = c * pool + rng.random_range(0..cfg.hub_nodes);
                    pairs.push((i as u32, node as u32));
                }
            }
        }
        let rel = format!("I-{}", name.to_uppercase());
        b.add_relation(&rel, "item", name, pairs).unwrap();
    }
    b.set_features("item", FeatureMatrix::Dense(x)).unwrap();
    b.set_target("item");
    b.set_labels(labels.clone());
    b.set_num_classes(c);
    b.add_metapath("IAI", &["I-ALPHA", "I-ALPHA"]);
    b.add_metapath("IBI", &["I-BETA", "I-BETA"]);

    // Splits: pick train nodes per class, then val/test from the rest.
    let mut order: Vec<u32> = (0..n as u32).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut train = Vec::new();
    let mut taken = vec![false; n];
    let mut per_class = vec![0usize; c];
    for &i in &order {
        let cls = labels[i as usize] as usize;
        if per_class[cls] < cfg.train_per_class {
            per_class[cls] += 1;
            taken[i as usize] = true;
            train.push(i);
        }
    }
    let rest: Vec<u32> = order.iter().copied().filter(|&i| !taken[i as usize]).collect();
    let val: Vec<u32> = rest[..cfg.val_size.min(rest.len())].to_vec();
    let test: Vec<u32> = rest[cfg.val_size..(cfg.val_size + cfg.test_size).min(rest.len())].to_vec();
    train.sort_unstable();
    b.add_split("train20", train);
    b.add_split("val", val);
    b.add_split("test", test);
    b.build().expect("generator output is always valid")
}

/// Tiny deterministic fixture for gradient checks: 6 target nodes and 4
/// auxiliary nodes (10 nodes total, 2 types) with two relations, hence two
/// meta-paths through the auxiliary type.
pub fn grad_fixture() -> HeteroGraph {
    let mut b = GraphBuilder::new();
    b.add_node_type("t", 6).add_node_type("u", 4);
    b.add_relation(
        "r1",
        "t",
        "u",
        vec![(0, 0), (1, 0), (1, 1), (2, 1), (3, 2), (4, 2), (5, 3), (0, 3)],
    )
    .unwrap();
    b.add_relation(
        "r2",
        "t",
        "u",
        vec![(0, 1), (2, 1), (3, 1), (4, 0), (5, 0), (1, 2)],
    )
    .unwrap();
    let xt = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin() * 0.8);
    let xu = Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64 * 0.53).cos() * 0.8);
    b.set_features("t", FeatureMatrix::Dense(xt)).unwrap();
    b.set_features("u", FeatureMatrix::Dense(xu)).unwrap();
    b.set_target("t");
    b.set_labels(vec![0, 1, 0, 1, 0, 1]);
    b.set_num_classes(2);
    b.add_metapath("TR1T", &["r1", "r1"]);
    b.add_metapath("TR2T", &["r2", "r2"]);
    b.build().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sbm_is_reproducible_and_valid() {
        let cfg = SbmConfig::default();
        let a = sbm_fixture(&cfg);
        let b = sbm_fixture(&cfg);
        assert_eq!(a.n_target(), 300);
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.relations()[0].pairs, b.relations()[0].pairs);
        assert_eq!(a.split("train20").unwrap().len(), 60);
        assert_eq!(a.split("val").unwrap().len(), 90);
        assert_eq!(a.split("test").unwrap().len(), 150);
    }

    #[test]
    fn sbm_structure_is_class_correlated() {
        let g = sbm_fixture(&SbmConfig::default());
        let labels = g.labels().unwrap();
        let rel = &g.relations()[0];
        let pool = 30;
        let mut own = 0usize;
        for &(i, a) in &rel.pairs {
            if (a as usize) / pool == labels[i as usize] as usize {
                own += 1;
            }
        }
        let frac = own as f64 / rel.pairs.len() as f64;
        assert!(frac > 0.7, "own-pool fraction {frac} too low");
    }

    #[test]
    fn grad_fixture_shape() {
        let g = grad_fixture();
        assert_eq!(g.n_types(), 2);
        assert_eq!(g.n_target() + g.node_count(crate::graph::NodeTypeId(1)), 10);
        assert_eq!(g.metapaths().len(), 2);
    }
}
