mod common;

use common::{in_triangle, random_graph, rng};
use idgnn::constructive::{canonicalize_ids, exact_match, triangle_net};
use idgnn::graph::{load_jsonl, make_batch, save_jsonl, Dataset, Graph, Split, TaskKind};
use idgnn::ids::{sample_ids, IdAssignment, IdDistribution};
use idgnn::invariance::ratio_from_predictions;
use idgnn::synth::{generate_ba, label_triangles, triangle_labels_bruteforce, wl_distinguishable, wl_refine, BaParams};
use idgnn::tensor::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn arb_graph(max_nodes: usize) -> impl Strategy<Value = Graph> {
    (1..=max_nodes, any::<u64>(), 0.05f64..0.7).prop_map(|(n, seed, p)| random_graph(n, p, &mut rng(seed)))
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng(seed));
    perm
}

fn is_connected(g: &Graph) -> bool {
    let adj = g.adjacency();
    let mut seen = vec![false; g.num_nodes];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn triangle_labels_match_definition(g in arb_graph(14)) {
        let fast = label_triangles(&g);
        prop_assert_eq!(&fast, &triangle_labels_bruteforce(&g));
        for v in 0..g.num_nodes {
            prop_assert_eq!(fast[v] == 1, in_triangle(&g, v));
        }
    }

    #[test]
    fn batching_round_trips(graphs in prop::collection::vec((arb_graph(8), 0usize..3), 1..5)) {
        let graphs: Vec<Graph> = graphs
            .into_iter()
            .enumerate()
            .map(|(i, (g, y))| {
                let n = g.num_nodes;
                if i % 2 == 0 {
                    g.with_graph_label(y).with_features((0..n).map(|v| vec![v as f64]).collect())
                } else {
                    g.with_node_labels(vec![y; n]).with_features(vec![vec![0.5]; n])
                }
            })
            .collect();
        let refs: Vec<&Graph> = graphs.iter().collect();
        let batch = make_batch(&refs).unwrap();
        prop_assert_eq!(batch.num_nodes, graphs.iter().map(|g| g.num_nodes).sum::<usize>());
        prop_assert_eq!(batch.unbatch(), graphs);
    }

    #[test]
    fn jsonl_round_trips(graphs in prop::collection::vec((arb_graph(8), 0usize..2), 2..6)) {
        let graphs: Vec<Graph> = graphs.into_iter().map(|(g, y)| g.with_graph_label(y)).collect();
        let n = graphs.len();
        let ds = Dataset::new(graphs, Split { train: (0..n - 1).collect(), valid: vec![n - 1], test: vec![] }, TaskKind::GraphClassification, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_jsonl(&ds, &path).unwrap();
        let back = load_jsonl(&path).unwrap();
        prop_assert_eq!(back.graphs, ds.graphs);
        prop_assert_eq!(back.split, ds.split);
    }

    #[test]
    fn wl_histogram_is_isomorphism_invariant(g in arb_graph(12), seed in any::<u64>()) {
        let perm = shuffled(g.num_nodes, seed);
        let h = g.permute(&perm);
        prop_assert_eq!(wl_refine(&g, None).histogram(), wl_refine(&h, None).histogram());
        prop_assert!(!wl_distinguishable(&g, &h));
    }

    #[test]
    fn wl_fixpoint_is_idempotent(g in arb_graph(12)) {
        let fixed = wl_refine(&g, None);
        let again = wl_refine(&g, Some(&fixed.colors));
        prop_assert_eq!(again.num_colors(), fixed.num_colors());
        prop_assert_eq!(again.rounds, 1);
        for u in 0..g.num_nodes {
            for v in 0..g.num_nodes {
                prop_assert_eq!(fixed.colors[u] == fixed.colors[v], again.colors[u] == again.colors[v]);
            }
        }
    }

    #[test]
    fn ba_is_reproducible_and_well_formed(n in 2usize..80, m in 1usize..5, seed in any::<u64>()) {
        prop_assume!(m < n);
        let p = BaParams { n, m, seed };
        let g = generate_ba(p).unwrap();
        prop_assert_eq!(&g, &generate_ba(p).unwrap());
        prop_assert_eq!(g.edges.len(), m * (m + 1) / 2 + m * (n - m - 1));
        let mut sorted = g.edges.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), g.edges.len());
        prop_assert!(g.edges.iter().all(|&(u, v)| u < v && v < n));
        prop_assert!(is_connected(&g));
    }

    #[test]
    fn canonical_ids_ignore_identifier_values(g in arb_graph(15), s1 in any::<u64>(), s2 in any::<u64>()) {
        let mut r1 = rng(s1);
        let mut r2 = rng(s2);
        let a = canonicalize_ids(&g, &sample_ids(g.num_nodes, 2, IdDistribution::Uniform, &mut r1).unwrap(), exact_match).unwrap();
        let b = canonicalize_ids(&g, &sample_ids(g.num_nodes, 3, IdDistribution::Normal, &mut r2).unwrap(), exact_match).unwrap();
        prop_assert_eq!(&a.values, &b.values);
        let mut vals: Vec<usize> = a.values.data().iter().map(|&x| x as usize).collect();
        vals.sort_unstable();
        prop_assert_eq!(vals, (1..=g.num_nodes).collect::<Vec<_>>());
    }

    #[test]
    fn triangle_net_is_exact_and_id_invariant(n in 3usize..40, seed in any::<u64>()) {
        let g = generate_ba(BaParams { n, m: 2, seed }).unwrap();
        let oracle: Vec<bool> = (0..n).map(|v| in_triangle(&g, v)).collect();
        let mut r = rng(seed);
        for _ in 0..5 {
            let ids = sample_ids(n, 1, IdDistribution::Uniform, &mut r).unwrap();
            prop_assert_eq!(&triangle_net(&g, &ids).unwrap(), &oracle);
        }
    }

    #[test]
    fn ratio_lies_in_bounds(k in 1usize..60, items in 1usize..5, classes in 2usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let preds: Vec<Vec<usize>> = (0..k).map(|_| (0..items).map(|_| r.gen_range(0..classes)).collect()).collect();
        let ratio = ratio_from_predictions(&preds, classes).unwrap();
        prop_assert!(ratio >= 1.0 / classes as f64 - 1e-12 && ratio <= 1.0);
        // Direct count per item, averaged.
        let direct: f64 = (0..items)
            .map(|i| {
                let mut counts = vec![0usize; classes];
                for p in &preds {
                    counts[p[i]] += 1;
                }
                *counts.iter().max().unwrap() as f64 / k as f64
            })
            .sum::<f64>()
            / items as f64;
        prop_assert!((ratio - direct).abs() < 1e-12);
    }

    #[test]
    fn sampled_ids_are_distinct_rows(n in 1usize..200, r in 1usize..4, seed in any::<u64>(), normal in any::<bool>()) {
        let dist = if normal { IdDistribution::Normal } else { IdDistribution::Uniform };
        let ids = sample_ids(n, r, dist, &mut rng(seed)).unwrap();
        prop_assert_eq!(ids.values.shape(), &[n, r]);
        if !normal {
            prop_assert!(ids.values.data().iter().all(|&x| (0.0..1.0).contains(&x)));
        }
        let mut rows: Vec<Vec<u64>> = (0..n).map(|v| ids.values.row(v).iter().map(|x| x.to_bits()).collect()).collect();
        rows.sort();
        rows.dedup();
        prop_assert_eq!(rows.len(), n);
    }
}

/// Degree tail of a large BA graph against an Erdos-Renyi graph with the same
/// edge count: the BA maximum is far larger, and the complementary CDF decays
/// like a power law with exponent near -2.
#[test]
fn ba_degrees_are_heavy_tailed() {
    let n = 5000;
    let ba = generate_ba(BaParams { n, m: 2, seed: 11 }).unwrap();
    let mean = 2.0 * ba.edges.len() as f64 / n as f64;
    let max_ba = *ba.degrees().iter().max().unwrap();
    let er = random_graph(n, mean / (n - 1) as f64, &mut rng(11));
    let max_er = *er.degrees().iter().max().unwrap();
    assert!(max_ba as f64 > 10.0 * mean, "max BA degree {max_ba}");
    assert!(max_ba > 3 * max_er, "BA {max_ba} vs ER {max_er}");

    let ccdf = |k: usize| ba.degrees().iter().filter(|&&d| d >= k).count() as f64 / n as f64;
    let slope = (ccdf(40).ln() - ccdf(5).ln()) / (40f64.ln() - 5f64.ln());
    assert!((-2.6..-1.4).contains(&slope), "tail slope {slope}");
}

#[test]
fn canonicalizer_uses_only_the_oracle() {
    let g = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)]);
    let ids = IdAssignment::from_tensor(Tensor::matrix(4, 1, vec![0.9, 0.1, 0.5, 0.3]).unwrap()).unwrap();
    let calls = std::cell::Cell::new(0);
    let counted = |a: &[f64], b: &[f64]| {
        calls.set(calls.get() + 1);
        exact_match(a, b)
    };
    let out = canonicalize_ids(&g, &ids, counted).unwrap();
    assert!(calls.get() > 0);
    assert_eq!(out.values.data(), &[1.0, 2.0, 3.0, 4.0]);
}
