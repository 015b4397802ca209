use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, Split, TaskKind};
use crate::seed::salted;
use crate::synth::{generate_ba, label_triangles, wl_distinguishable, BaParams};

/// Node classification: does a node lie on a triangle?
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsTriangleConfig {
    /// Graphs in the training set (split into train and valid).
    pub num_graphs: usize,
    pub num_nodes: usize,
    pub m_train: usize,
    /// Attachment parameter of the extrapolation test set.
    pub m_test: usize,
    /// Graphs in each of the two test sets.
    pub test_graphs: usize,
    /// Fraction of training graphs held out for validation.
    pub valid_fraction: f64,
    /// Labeled nodes per split, sampled uniformly over the split's nodes.
    pub labeled_per_split: usize,
    pub seed: u64,
}

impl Default for IsTriangleConfig {
    fn default() -> Self {
        IsTriangleConfig {
            num_graphs: 100,
            num_nodes: 100,
            m_train: 2,
            m_test: 3,
            test_graphs: 20,
            valid_fraction: 0.2,
            labeled_per_split: 500,
            seed: 0,
        }
    }
}

/// Training data plus interpolation (same `m`) and extrapolation (larger `m`)
/// test sets. Test graphs are generated from separate seed streams.
pub struct IsTriangleData {
    pub train: Dataset,
    pub interp: Dataset,
    pub extrap: Dataset,
}

fn ba_graphs(count: usize, n: usize, m: usize, seed: u64, salt: &str) -> Result<Vec<Graph>> {
    (0..count)
        .map(|i| {
            let g = generate_ba(BaParams {
                n,
                m,
                seed: salted(seed, salt, i as u64),
            })?;
            let labels = label_triangles(&g);
            Ok(g.with_node_labels(labels))
        })
        .collect()
}

/// Marks `budget` nodes (or all, if fewer exist) across `members` as labeled.
fn subsample_labels(graphs: &mut [Graph], members: &[usize], budget: usize, rng: &mut ChaCha8Rng) {
    let slots: Vec<(usize, usize)> = members
        .iter()
        .flat_map(|&g| (0..graphs[g].num_nodes).map(move |v| (g, v)))
        .collect();
    for &g in members {
        graphs[g].labeled_nodes = Some(Vec::new());
    }
    let take = budget.min(slots.len());
    for i in index::sample(rng, slots.len(), take) {
        let (g, v) = slots[i];
        graphs[g].labeled_nodes.as_mut().expect("initialized above").push(v);
    }
    for &g in members {
        graphs[g].labeled_nodes.as_mut().expect("initialized above").sort_unstable();
    }
}

pub fn build_istriangle_dataset(cfg: &IsTriangleConfig) -> Result<IsTriangleData> {
    if cfg.num_graphs < 2 || cfg.test_graphs == 0 || cfg.labeled_per_split == 0 {
        return Err(Error::Contract("isInTriangle needs >= 2 training graphs, >= 1 test graph and a positive label budget".into()));
    }
    if !(0.0..1.0).contains(&cfg.valid_fraction) {
        return Err(Error::Contract(format!("valid_fraction {} outside [0, 1)", cfg.valid_fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(salted(cfg.seed, "istriangle-labels", 0));

    let mut train_graphs = ba_graphs(cfg.num_graphs, cfg.num_nodes, cfg.m_train, cfg.seed, "istriangle-train")?;
    let n_valid = ((cfg.num_graphs as f64 * cfg.valid_fraction).round() as usize).min(cfg.num_graphs - 1);
    let mut order: Vec<usize> = (0..cfg.num_graphs).collect();
    order.shuffle(&mut rng);
    let (valid, train) = order.split_at(n_valid);
    let (mut train, mut valid) = (train.to_vec(), valid.to_vec());
    train.sort_unstable();
    valid.sort_unstable();
    subsample_labels(&mut train_graphs, &train, cfg.labeled_per_split, &mut rng);
    subsample_labels(&mut train_graphs, &valid, cfg.labeled_per_split, &mut rng);
    let train_ds = Dataset::new(
        train_graphs,
        Split {
            train,
            valid,
            test: Vec::new(),
        },
        TaskKind::NodeClassification,
        2,
    )?;

    let mut test_set = |m: usize, salt: &str| -> Result<Dataset> {
        let mut graphs = ba_graphs(cfg.test_graphs, cfg.num_nodes, m, cfg.seed, salt)?;
        let all: Vec<usize> = (0..graphs.len()).collect();
        subsample_labels(&mut graphs, &all, cfg.labeled_per_split, &mut rng);
        Dataset::new(
            graphs,
            Split {
                test: all,
                ..Split::default()
            },
            TaskKind::NodeClassification,
            2,
        )
    };
    let interp = test_set(cfg.m_train, "istriangle-interp")?;
    let extrap = test_set(cfg.m_test, "istriangle-extrap")?;
    Ok(IsTriangleData {
        train: train_ds,
        interp,
        extrap,
    })
}

/// Pairs of 2-regular graphs that 1-WL cannot tell apart.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WlHardConfig {
    pub num_pairs: usize,
    /// Candidate node counts `2k`; each pair draws one.
    pub sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for WlHardConfig {
    fn default() -> Self {
        WlHardConfig {
            num_pairs: 100,
            sizes: vec![6, 8],
            seed: 0,
        }
    }
}

fn cycle_edges(nodes: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..nodes.len()).map(move |i| (nodes[i], nodes[(i + 1) % nodes.len()]))
}

/// Graph indices `(2i, 2i + 1)` of each pair in a dataset from
/// [`build_wlhard_pairs`].
pub fn pair_indices(dataset: &Dataset) -> Vec<(usize, usize)> {
    (0..dataset.graphs.len() / 2).map(|i| (2 * i, 2 * i + 1)).collect()
}

/// Pair `i` is graphs `2i` (one cycle `C_{2k}`, label 0) and `2i + 1` (two
/// cycles `C_k`, label 1), each with shuffled node order and constant
/// features. Splits are 60/20/20 over pairs, so both members of a pair always
/// share a split.
pub fn build_wlhard_pairs(num_pairs: usize, sizes: &[usize], seed: u64) -> Result<Dataset> {
    if num_pairs == 0 || sizes.is_empty() {
        return Err(Error::Contract("need at least one pair and one size".into()));
    }
    if let Some(&bad) = sizes.iter().find(|&&s| s < 6 || s % 2 == 1) {
        return Err(Error::Contract(format!("pair size {bad} must be even and >= 6")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(salted(seed, "wlhard", 0));
    let mut graphs = Vec::with_capacity(2 * num_pairs);
    for p in 0..num_pairs {
        let size = sizes[rng.gen_range(0..sizes.len())];
        let k = size / 2;
        let mut perm: Vec<usize> = (0..size).collect();
        perm.shuffle(&mut rng);
        let one = Graph::from_edges(size, cycle_edges(&perm));
        perm.shuffle(&mut rng);
        let two = Graph::from_edges(size, cycle_edges(&perm[..k]).chain(cycle_edges(&perm[k..])));
        if wl_distinguishable(&one, &two) {
            return Err(Error::Internal(format!("pair {p} is 1-WL distinguishable; generator bug")));
        }
        let features = vec![vec![1.0]; size];
        graphs.push(one.with_graph_label(0).with_features(features.clone()));
        graphs.push(two.with_graph_label(1).with_features(features));
    }
    let mut order: Vec<usize> = (0..num_pairs).collect();
    order.shuffle(&mut rng);
    let n_train = (num_pairs as f64 * 0.6).round() as usize;
    let n_valid = (num_pairs as f64 * 0.2).round() as usize;
    let expand = |pairs: &[usize]| {
        let mut ids: Vec<usize> = pairs.iter().flat_map(|&p| [2 * p, 2 * p + 1]).collect();
        ids.sort_unstable();
        ids
    };
    let split = Split {
        train: expand(&order[..n_train]),
        valid: expand(&order[n_train..(n_train + n_valid).min(num_pairs)]),
        test: expand(&order[(n_train + n_valid).min(num_pairs)..]),
    };
    Dataset::new(graphs, split, TaskKind::GraphClassification, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SplitName;
    use std::collections::HashSet;

    fn small_triangle_cfg() -> IsTriangleConfig {
        IsTriangleConfig {
            num_graphs: 10,
            num_nodes: 30,
            test_graphs: 4,
            labeled_per_split: 40,
            seed: 5,
            ..IsTriangleConfig::default()
        }
    }

    #[test]
    fn istriangle_budgets_and_disjointness() {
        let data = build_istriangle_dataset(&small_triangle_cfg()).unwrap();
        let count = |ds: &Dataset, s: SplitName| -> usize {
            ds.split_graphs(s).iter().map(|g| g.supervised_nodes().len()).sum()
        };
        assert_eq!(count(&data.train, SplitName::Train), 40);
        assert_eq!(count(&data.train, SplitName::Valid), 40);
        assert_eq!(count(&data.interp, SplitName::Test), 40);
        assert_eq!(count(&data.extrap, SplitName::Test), 40);
        assert_eq!(data.train.split.valid.len(), 2);

        let edges = |ds: &Dataset| ds.graphs.iter().map(|g| g.edges.clone()).collect::<HashSet<_>>();
        assert!(edges(&data.train).is_disjoint(&edges(&data.interp)));
        assert_eq!(data.extrap.graphs[0].edges.len(), 6 + 3 * 26);
    }

    #[test]
    fn istriangle_is_deterministic() {
        let a = build_istriangle_dataset(&small_triangle_cfg()).unwrap();
        let b = build_istriangle_dataset(&small_triangle_cfg()).unwrap();
        assert_eq!(a.train.graphs, b.train.graphs);
        assert_eq!(a.extrap.graphs, b.extrap.graphs);
    }

    #[test]
    fn wlhard_shape() {
        let ds = build_wlhard_pairs(10, &[6, 8, 10], 3).unwrap();
        assert_eq!(ds.graphs.len(), 20);
        assert_eq!(ds.split.train.len(), 12);
        assert_eq!(ds.split.valid.len(), 4);
        assert_eq!(ds.split.test.len(), 4);
        let ones = ds.graphs.iter().filter(|g| g.graph_label == Some(1)).count();
        assert_eq!(ones, 10);
        for (a, b) in pair_indices(&ds) {
            assert_eq!(ds.graphs[a].num_nodes, ds.graphs[b].num_nodes);
            let side = |i| ds.split.train.contains(&i);
            assert_eq!(side(a), side(b));
        }
    }

    #[test]
    fn wlhard_rejects_bad_sizes() {
        assert!(build_wlhard_pairs(3, &[5], 0).is_err());
        assert!(build_wlhard_pairs(3, &[4], 0).is_err());
        assert!(build_wlhard_pairs(0, &[6], 0).is_err());
    }
}
