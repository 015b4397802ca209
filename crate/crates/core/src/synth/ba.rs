use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Barabási–Albert parameters: `n` nodes, `m` edges per new node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaParams {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

/// Preferential attachment starting from the clique `K_{m+1}`.
///
/// Targets are drawn from an urn holding every edge endpoint, so a node is
/// picked with probability proportional to its degree. Duplicate picks are
/// rejected and redrawn. The result has `C(m+1, 2) + m (n - m - 1)` edges.
pub fn generate_ba(params: BaParams) -> Result<Graph> {
    let BaParams { n, m, seed } = params;
    if m < 1 || m >= n {
        return Err(Error::Contract(format!("BA needs 1 <= m < n, got m={m}, n={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(m * (m + 1) / 2 + m * (n - m - 1));
    let mut urn = Vec::with_capacity(2 * edges.capacity());
    for u in 0..=m {
        for v in u + 1..=m {
            edges.push((u, v));
            urn.extend([u, v]);
        }
    }
    let mut targets = Vec::with_capacity(m);
    for v in m + 1..n {
        targets.clear();
        while targets.len() < m {
            let t = urn[rng.gen_range(0..urn.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((t, v));
            urn.extend([t, v]);
        }
    }
    Ok(Graph::from_edges(n, edges))
}
