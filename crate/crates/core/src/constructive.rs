//! Hand-built networks that operate on identifiers exactly: a three-layer
//! triangle detector whose hidden layers depend on identifier values while
//! its output does not, and a canonicalizer that rewrites arbitrary unique
//! identifiers into `1..=n` using only an equality oracle.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ids::IdAssignment;
use crate::tensor::Tensor;

/// Nested identifier messages built by concatenation.
#[derive(Clone, Debug, PartialEq)]
pub enum IdList {
    Id(f64),
    List(Vec<IdList>),
}

impl IdList {
    fn head(&self) -> Option<f64> {
        match self {
            IdList::Id(x) => Some(*x),
            IdList::List(items) => items.first().and_then(IdList::head),
        }
    }

    fn items(&self) -> &[IdList] {
        match self {
            IdList::Id(_) => &[],
            IdList::List(items) => items,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleNetTrace {
    /// Per node: `[own id, neighbor ids...]`.
    pub layer1: Vec<IdList>,
    /// Per node: the layer-1 messages of its neighbors.
    pub layer2: Vec<IdList>,
    pub output: Vec<bool>,
}

fn scalar_ids(graph: &Graph, ids: &IdAssignment) -> Result<Vec<f64>> {
    if ids.dim() != 1 || ids.num_nodes() != graph.num_nodes {
        return Err(Error::shape("triangle_net", ids.values.shape(), &[graph.num_nodes, 1]));
    }
    let values = ids.values.data().to_vec();
    let mut sorted: Vec<u64> = values.iter().map(|x| x.to_bits()).collect();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Contract("triangle_net requires unique identifiers".into()));
    }
    Ok(values)
}

/// Runs all three layers and keeps the intermediate messages.
///
/// Layer 3 marks `v` when its own identifier shows up inside a neighbor's
/// layer-2 message, looking only at sub-messages that did not originate at
/// `v` itself (those merely echo `v -> u -> v`).
pub fn triangle_net_trace(graph: &Graph, ids: &IdAssignment) -> Result<TriangleNetTrace> {
    let id = scalar_ids(graph, ids)?;
    let adj = graph.adjacency();
    let layer1: Vec<IdList> = adj
        .iter()
        .enumerate()
        .map(|(v, nbrs)| IdList::List(std::iter::once(v).chain(nbrs.iter().copied()).map(|u| IdList::Id(id[u])).collect()))
        .collect();
    let layer2: Vec<IdList> = adj
        .iter()
        .map(|nbrs| IdList::List(nbrs.iter().map(|&u| layer1[u].clone()).collect()))
        .collect();
    let output = adj
        .iter()
        .enumerate()
        .map(|(v, nbrs)| {
            let own = IdList::Id(id[v]);
            nbrs.iter().any(|&u| {
                layer2[u]
                    .items()
                    .iter()
                    .filter(|msg| msg.head() != Some(id[v]))
                    .any(|msg| msg.items()[1..].contains(&own))
            })
        })
        .collect();
    Ok(TriangleNetTrace { layer1, layer2, output })
}

/// Triangle membership computed purely by matching identifiers.
pub fn triangle_net(graph: &Graph, ids: &IdAssignment) -> Result<Vec<bool>> {
    Ok(triangle_net_trace(graph, ids)?.output)
}

/// Previously seen identifiers with their canonical values `1, 2, ...`.
#[derive(Clone, Debug, Default)]
pub struct IdCache {
    entries: Vec<(Vec<f64>, usize)>,
}

impl IdCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical value of `id`, inserting it as `len() + 1` if unseen.
    pub fn lookup_or_insert(&mut self, id: &[f64], oracle: &impl Fn(&[f64], &[f64]) -> bool) -> usize {
        if let Some((_, value)) = self.entries.iter().find(|(seen, _)| oracle(seen, id)) {
            return *value;
        }
        let value = self.entries.len() + 1;
        self.entries.push((id.to_vec(), value));
        value
    }
}

/// Exact identifier equality: the matching oracle for unique identifiers.
pub fn exact_match(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Breadth-first visiting order, restarting at the lowest unvisited node.
/// Every edge is traversed from both ends, so nodes are met repeatedly.
fn traversal(graph: &Graph) -> Vec<usize> {
    let adj = graph.adjacency();
    let mut visited = vec![false; graph.num_nodes];
    let mut order = Vec::with_capacity(graph.num_nodes + 2 * graph.edges.len());
    for root in 0..graph.num_nodes {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        order.push(root);
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                order.push(u);
                if !visited[u] {
                    visited[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    order
}

/// Rewrites identifiers to `1..=n` by first occurrence along a fixed
/// traversal. Identifier values are only ever passed to `oracle`, so with an
/// exact oracle the result does not depend on them.
pub fn canonicalize_ids(graph: &Graph, ids: &IdAssignment, oracle: impl Fn(&[f64], &[f64]) -> bool) -> Result<IdAssignment> {
    if ids.num_nodes() != graph.num_nodes {
        return Err(Error::shape("canonicalize_ids", ids.values.shape(), &[graph.num_nodes]));
    }
    let mut cache = IdCache::default();
    let mut canonical = vec![0.0; graph.num_nodes];
    for v in traversal(graph) {
        canonical[v] = cache.lookup_or_insert(ids.values.row(v), &oracle) as f64;
    }
    Ok(IdAssignment {
        values: Tensor::matrix(graph.num_nodes, 1, canonical)?,
        dist: ids.dist,
    })
}
