//! Monte-Carlo invariance ratio.
//!
//! For an example `x` the ratio is `max_i P[f(x) = i]` over identifier draws,
//! estimated from `K` independent draws. It is 1 when every draw yields the same
//! class and at least `1/L` for `L` classes. Node-level examples average the
//! ratio over their supervised nodes; a set's ratio is the mean over examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{make_batch, Dataset, Graph, SplitName};
use crate::ids::{sample_ids, IdAssignment, IdDistribution};
use crate::ids::IdMode;
use crate::layers::{model_forward, Model, Pooling};
use crate::seed::stream_seed;
use crate::tensor::Tensor;

/// Anything that classifies a graph's items given node identifiers.
pub trait IdClassifier {
    fn num_classes(&self) -> usize;

    /// Identifier width to sample. Classifiers that ignore identifiers still
    /// receive a draw, which they may disregard.
    fn id_dim(&self) -> usize;

    fn id_dist(&self) -> IdDistribution {
        IdDistribution::Uniform
    }

    /// Predicted class of each item of `graph` (the graph itself for graph
    /// tasks, each supervised node for node tasks).
    fn predict(&self, graph: &Graph, ids: &IdAssignment) -> Result<Vec<usize>>;

    /// `predict` over aligned slices of graphs and identifier draws.
    fn predict_batch(&self, graphs: &[&Graph], draws: &[IdAssignment]) -> Result<Vec<Vec<usize>>> {
        graphs.iter().zip(draws).map(|(g, ids)| self.predict(g, ids)).collect()
    }

    fn predict_many(&self, graph: &Graph, draws: &[IdAssignment]) -> Result<Vec<Vec<usize>>> {
        self.predict_batch(&vec![graph; draws.len()], draws)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

// Upper bound on merged nodes per batched forward.
const NODE_BUDGET: usize = 16_384;

impl IdClassifier for Model {
    fn num_classes(&self) -> usize {
        self.config.readout.num_classes
    }

    fn id_dim(&self) -> usize {
        self.config.id_dim.max(1)
    }

    fn id_dist(&self) -> IdDistribution {
        self.config.id_dist
    }

    fn predict(&self, graph: &Graph, ids: &IdAssignment) -> Result<Vec<usize>> {
        Ok(self.predict_batch(&[graph], std::slice::from_ref(ids))?.remove(0))
    }

    /// Merges graphs into batches of at most a fixed node budget.
    fn predict_batch(&self, graphs: &[&Graph], draws: &[IdAssignment]) -> Result<Vec<Vec<usize>>> {
        if graphs.len() != draws.len() {
            return Err(Error::Contract(format!("{} graphs but {} identifier draws", graphs.len(), draws.len())));
        }
        let graph_task = self.config.readout.pooling != Pooling::None;
        let uses_ids = self.config.id_mode == IdMode::Rni;
        let mut out = Vec::with_capacity(graphs.len());
        let mut start = 0;
        while start < graphs.len() {
            let mut end = start + 1;
            let mut nodes = graphs[start].num_nodes;
            while end < graphs.len() && nodes + graphs[end].num_nodes <= NODE_BUDGET {
                nodes += graphs[end].num_nodes;
                end += 1;
            }
            let batch = make_batch(&graphs[start..end])?;
            let stacked = if uses_ids {
                let r = self.config.id_dim;
                let mut data = Vec::with_capacity(batch.num_nodes * r);
                for (g, ids) in graphs[start..end].iter().zip(&draws[start..end]) {
                    if ids.values.shape() != [g.num_nodes, r] {
                        return Err(Error::shape("identifier draw", ids.values.shape(), &[g.num_nodes, r]));
                    }
                    data.extend_from_slice(ids.values.data());
                }
                Some(IdAssignment {
                    values: Tensor::matrix(batch.num_nodes, r, data)?,
                    dist: self.config.id_dist,
                })
            } else {
                None
            };
            let (_, logits) = model_forward(self, &batch, stacked.as_ref())?;
            for (c, g) in graphs[start..end].iter().enumerate() {
                let preds = if graph_task {
                    vec![argmax(logits.row(c))]
                } else {
                    let offset = batch.offsets[c];
                    item_nodes(g).iter().map(|&v| argmax(logits.row(offset + v))).collect()
                };
                out.push(preds);
            }
            start = end;
        }
        Ok(out)
    }
}

fn item_nodes(graph: &Graph) -> Vec<usize> {
    match graph.node_labels {
        Some(_) => graph.supervised_nodes(),
        None => (0..graph.num_nodes).collect(),
    }
}

/// Ratio from per-draw predictions (`draws x items`), averaged over items.
pub fn ratio_from_predictions(predictions: &[Vec<usize>], num_classes: usize) -> Result<f64> {
    let k = predictions.len();
    if k == 0 {
        return Err(Error::Contract("invariance ratio needs K >= 1".into()));
    }
    let items = predictions[0].len();
    if items == 0 {
        return Err(Error::Contract("example has no items to classify".into()));
    }
    let mut counts = vec![0usize; items * num_classes];
    for draw in predictions {
        if draw.len() != items {
            return Err(Error::Internal("draws disagree on item count".into()));
        }
        for (i, &c) in draw.iter().enumerate() {
            if c >= num_classes {
                return Err(Error::Index {
                    op: "invariance_ratio",
                    index: c,
                    bound: num_classes,
                });
            }
            counts[i * num_classes + c] += 1;
        }
    }
    let total: f64 = counts
        .chunks(num_classes)
        .map(|row| *row.iter().max().expect("num_classes >= 1") as f64 / k as f64)
        .sum();
    Ok(total / items as f64)
}

/// Estimates the invariance ratio of one example from `k` identifier draws.
pub fn invariance_ratio<M: IdClassifier + ?Sized, R: Rng + ?Sized>(model: &M, example: &Graph, k: usize, rng: &mut R) -> Result<f64> {
    if k == 0 {
        return Err(Error::Contract("invariance ratio needs K >= 1".into()));
    }
    let draws = (0..k)
        .map(|_| sample_ids(example.num_nodes, model.id_dim(), model.id_dist(), rng))
        .collect::<Result<Vec<_>>>()?;
    let preds = model.predict_many(example, &draws)?;
    ratio_from_predictions(&preds, model.num_classes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub per_example: Vec<f64>,
    pub mean: f64,
    pub k: usize,
    pub split: String,
}

/// Per-example ratios over `examples`. Example `i` draws from its own stream
/// seeded by `(seed, i)`, so results do not depend on evaluation order.
pub fn invariance_report<M: IdClassifier + ?Sized>(
    model: &M,
    examples: &[&Graph],
    k: usize,
    split: &str,
    seed: u64,
) -> Result<InvarianceReport> {
    let mut per_example = Vec::with_capacity(examples.len());
    for (i, g) in examples.iter().enumerate() {
        if g.node_labels.is_some() && g.supervised_nodes().is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, i as u64));
        per_example.push(invariance_ratio(model, g, k, &mut rng)?);
    }
    if per_example.is_empty() {
        return Err(Error::Contract(format!("no examples to evaluate in split {split}")));
    }
    let mean = per_example.iter().sum::<f64>() / per_example.len() as f64;
    Ok(InvarianceReport {
        per_example,
        mean,
        k,
        split: split.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub report: InvarianceReport,
}

/// One report per snapshot for the given split of `dataset`.
pub fn invariance_curve<M: IdClassifier>(
    snapshots: &[(usize, M)],
    dataset: &Dataset,
    split: SplitName,
    k: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    let examples = dataset.split_graphs(split);
    snapshots
        .iter()
        .map(|(epoch, model)| {
            Ok(CurvePoint {
                epoch: *epoch,
                report: invariance_report(model, &examples, k, split.as_str(), seed)?,
            })
        })
        .collect()
}

/// The ID-invariant property used by the witness: "has an even number of edges".
pub fn even_edge_count(graph: &Graph) -> bool {
    graph.edges.len().is_multiple_of(2)
}

/// A function that is ID-invariant on graphs in `S` and not elsewhere: on `S`
/// it returns an ID-invariant property of the graph, otherwise the sum of all
/// identifier entries.
pub fn theorem1_witness(graph: &Graph, ids: &IdAssignment, member_of_s: &dyn Fn(&Graph) -> bool) -> f64 {
    if member_of_s(graph) {
        if even_edge_count(graph) {
            1.0
        } else {
            0.0
        }
    } else {
        ids.values.data().iter().sum()
    }
}

/// The witness as a two-class classifier. Property values map to their class;
/// identifier sums are binned by whether the mean identifier is at least 1/2.
pub struct WitnessClassifier<F: Fn(&Graph) -> bool> {
    pub member_of_s: F,
}

impl<F: Fn(&Graph) -> bool> IdClassifier for WitnessClassifier<F> {
    fn num_classes(&self) -> usize {
        2
    }

    fn id_dim(&self) -> usize {
        1
    }

    fn predict(&self, graph: &Graph, ids: &IdAssignment) -> Result<Vec<usize>> {
        let value = theorem1_witness(graph, ids, &self.member_of_s);
        let class = if (self.member_of_s)(graph) {
            value as usize
        } else {
            let mean = value / ids.values.numel().max(1) as f64;
            usize::from(mean >= 0.5)
        };
        Ok(vec![class])
    }
}

/// Labels of the items `predict` reports on.
pub fn item_labels(graph: &Graph) -> Vec<usize> {
    match (&graph.node_labels, graph.graph_label) {
        (Some(labels), _) => graph.supervised_nodes().iter().map(|&v| labels[v]).collect(),
        (None, Some(y)) => vec![y],
        (None, None) => Vec::new(),
    }
}
