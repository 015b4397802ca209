use std::collections::HashSet;

use crate::graph::Graph;

/// `1` for nodes that lie on a triangle, else `0`, by checking every pair of
/// neighbors for adjacency.
pub fn label_triangles(graph: &Graph) -> Vec<usize> {
    let adj = graph.adjacency();
    let edges: HashSet<(usize, usize)> = graph.edges.iter().copied().collect();
    let linked = |a: usize, b: usize| edges.contains(&(a.min(b), a.max(b)));
    adj.iter()
        .map(|nbrs| {
            let hit = nbrs
                .iter()
                .enumerate()
                .any(|(i, &u)| nbrs[i + 1..].iter().any(|&w| linked(u, w)));
            usize::from(hit)
        })
        .collect()
}

/// Triple loop over a dense adjacency matrix. Cubic; meant as a reference.
pub fn triangle_labels_bruteforce(graph: &Graph) -> Vec<usize> {
    let n = graph.num_nodes;
    let mut a = vec![false; n * n];
    for &(u, v) in &graph.edges {
        a[u * n + v] = true;
        a[v * n + u] = true;
    }
    let mut labels = vec![0; n];
    for u in 0..n {
        for v in u + 1..n {
            for w in v + 1..n {
                if a[u * n + v] && a[v * n + w] && a[u * n + w] {
                    labels[u] = 1;
                    labels[v] = 1;
                    labels[w] = 1;
                }
            }
        }
    }
    labels
}
