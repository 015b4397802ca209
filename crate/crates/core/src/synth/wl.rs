use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::Graph;

/// Stable 1-WL coloring.
///
/// Colors are ranks of sorted refinement signatures, so they depend only on
/// the graph's structure (and the initial colors), never on node order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WlColoring {
    pub colors: Vec<usize>,
    pub rounds: usize,
}

impl WlColoring {
    pub fn num_colors(&self) -> usize {
        self.colors.iter().max().map_or(0, |&c| c + 1)
    }

    /// Color -> node count.
    pub fn histogram(&self) -> BTreeMap<usize, usize> {
        histogram(&self.colors)
    }
}

fn histogram(colors: &[usize]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for &c in colors {
        *h.entry(c).or_insert(0) += 1;
    }
    h
}

/// Replaces each value by its rank among the distinct values.
fn rank<T: Ord + Clone>(values: &[T]) -> Vec<usize> {
    let mut distinct: Vec<T> = values.to_vec();
    distinct.sort();
    distinct.dedup();
    values
        .iter()
        .map(|v| distinct.binary_search(v).expect("value is present"))
        .collect()
}

/// Color refinement until the partition stops splitting.
///
/// Each round maps a node to `(color, sorted neighbor colors)` and recolors by
/// rank. The number of classes never shrinks, and once it stops growing the
/// next round reproduces the same colors.
pub fn wl_refine(graph: &Graph, initial_colors: Option<&[usize]>) -> WlColoring {
    let adj = graph.adjacency();
    let mut colors = match initial_colors {
        Some(c) => rank(c),
        None => vec![0; graph.num_nodes],
    };
    let mut classes = colors.iter().max().map_or(0, |&c| c + 1);
    let mut rounds = 0;
    loop {
        let signatures: Vec<(usize, Vec<usize>)> = adj
            .iter()
            .enumerate()
            .map(|(v, nbrs)| {
                let mut ms: Vec<usize> = nbrs.iter().map(|&u| colors[u]).collect();
                ms.sort_unstable();
                (colors[v], ms)
            })
            .collect();
        let next = rank(&signatures);
        let next_classes = next.iter().max().map_or(0, |&c| c + 1);
        rounds += 1;
        let stable = next_classes == classes;
        colors = next;
        classes = next_classes;
        if stable {
            return WlColoring { colors, rounds };
        }
    }
}

/// Whether 1-WL tells the two graphs apart. Both graphs are refined jointly
/// (as a disjoint union) so their colors share one palette.
pub fn wl_distinguishable(g1: &Graph, g2: &Graph) -> bool {
    if g1.num_nodes != g2.num_nodes || g1.edges.len() != g2.edges.len() {
        return true;
    }
    let n1 = g1.num_nodes;
    let union = Graph::from_edges(
        n1 + g2.num_nodes,
        g1.edges
            .iter()
            .copied()
            .chain(g2.edges.iter().map(|&(u, v)| (u + n1, v + n1))),
    );
    let coloring = wl_refine(&union, None);
    histogram(&coloring.colors[..n1]) != histogram(&coloring.colors[n1..])
}
