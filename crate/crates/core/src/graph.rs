//! Graphs, datasets, batching and the JSON-lines dataset format.
//!
//! One graph per line:
//!
//! ```text
//! {"num_nodes": 3, "edges": [[0,1],[1,2],[0,2]], "graph_label": 1}
//! {"num_nodes": 4, "edges": [[0,1]], "node_labels": [1,1,0,0], "labeled_nodes": [0,2]}
//! ```
//!
//! `features` (n rows of equal width) is optional. `labeled_nodes` is an optional
//! extension that restricts which node labels take part in training and
//! evaluation; when absent every node label counts. The split lives in a
//! sidecar `<stem>.split.json` holding `{"train":[..],"valid":[..],"test":[..]}`
//! plus the class count.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub num_nodes: usize,
    /// Undirected edges, each stored once as `(u, v)` with `u < v`.
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_nodes: Option<Vec<usize>>,
}

impl Graph {
    /// Unlabeled graph from an edge list; each edge is normalized to `u < v`.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(u, v)| if u < v { (u, v) } else { (v, u) })
            .collect();
        Graph {
            num_nodes,
            edges,
            features: None,
            graph_label: None,
            node_labels: None,
            labeled_nodes: None,
        }
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Self {
        self.node_labels = Some(labels);
        self
    }

    pub fn with_features(mut self, features: Vec<Vec<f64>>) -> Self {
        self.features = Some(features);
        self
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.features
            .as_ref()
            .map(|f| f.first().map_or(0, Vec::len))
    }

    pub fn features_tensor(&self) -> Option<Tensor> {
        let f = self.features.as_ref()?;
        let cols = f.first().map_or(0, Vec::len);
        let data = f.iter().flatten().copied().collect();
        Tensor::matrix(f.len(), cols, data).ok()
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Nodes whose labels are supervised (all nodes unless restricted).
    pub fn supervised_nodes(&self) -> Vec<usize> {
        match (&self.labeled_nodes, &self.node_labels) {
            (Some(sel), _) => sel.clone(),
            (None, Some(_)) => (0..self.num_nodes).collect(),
            (None, None) => Vec::new(),
        }
    }

    /// Structural and label checks. `index` is only used for error reporting.
    pub fn validate(&self, index: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation { graph: index, msg });
        let mut seen = HashSet::with_capacity(self.edges.len());
        for &(u, v) in &self.edges {
            if u >= self.num_nodes || v >= self.num_nodes {
                return fail(format!("edge ({u}, {v}) has endpoint outside [0, {})", self.num_nodes));
            }
            if u == v {
                return fail(format!("self-loop on node {u}"));
            }
            if u > v {
                return fail(format!("edge ({u}, {v}) not stored as u < v"));
            }
            if !seen.insert((u, v)) {
                return fail(format!("duplicate edge ({u}, {v})"));
            }
        }
        if let Some(f) = &self.features {
            if f.len() != self.num_nodes {
                return fail(format!("{} feature rows for {} nodes", f.len(), self.num_nodes));
            }
            let d = f.first().map_or(0, Vec::len);
            if f.iter().any(|row| row.len() != d) {
                return fail("ragged feature rows".into());
            }
        }
        if let Some(labels) = &self.node_labels {
            if labels.len() != self.num_nodes {
                return fail(format!("{} node labels for {} nodes", labels.len(), self.num_nodes));
            }
        }
        if let Some(sel) = &self.labeled_nodes {
            if self.node_labels.is_none() {
                return fail("labeled_nodes without node_labels".into());
            }
            if let Some(&bad) = sel.iter().find(|&&v| v >= self.num_nodes) {
                return fail(format!("labeled node {bad} out of range"));
            }
        }
        Ok(())
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permute(&self, perm: &[usize]) -> Graph {
        let n = self.num_nodes;
        let mut inv = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let mut g = Graph::from_edges(n, self.edges.iter().map(|&(u, v)| (perm[u], perm[v])));
        g.graph_label = self.graph_label;
        g.features = self
            .features
            .as_ref()
            .map(|f| inv.iter().map(|&old| f[old].clone()).collect());
        g.node_labels = self
            .node_labels
            .as_ref()
            .map(|l| inv.iter().map(|&old| l[old]).collect());
        g.labeled_nodes = self.labeled_nodes.as_ref().map(|sel| {
            let mut s: Vec<usize> = sel.iter().map(|&v| perm[v]).collect();
            s.sort_unstable();
            s
        });
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    GraphClassification,
    NodeClassification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    valid: Vec<usize>,
    test: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub split: Split,
    pub task_kind: TaskKind,
    pub num_classes: usize,
}

impl Dataset {
    /// Builds and validates a dataset.
    pub fn new(graphs: Vec<Graph>, split: Split, task_kind: TaskKind, num_classes: usize) -> Result<Self> {
        let ds = Dataset {
            graphs,
            split,
            task_kind,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Contract(format!("num_classes = {} < 2", self.num_classes)));
        }
        for (i, g) in self.graphs.iter().enumerate() {
            g.validate(i)?;
            let fail = |msg: &str| {
                Err(Error::Validation {
                    graph: i,
                    msg: msg.to_string(),
                })
            };
            match self.task_kind {
                TaskKind::GraphClassification => {
                    if g.node_labels.is_some() {
                        return fail("node_labels present in a graph-classification dataset");
                    }
                    match g.graph_label {
                        None => return fail("missing graph_label"),
                        Some(y) if y >= self.num_classes => return fail("graph_label >= num_classes"),
                        _ => {}
                    }
                }
                TaskKind::NodeClassification => {
                    if g.graph_label.is_some() {
                        return fail("graph_label present in a node-classification dataset");
                    }
                    match &g.node_labels {
                        None => return fail("missing node_labels"),
                        Some(l) if l.iter().any(|&y| y >= self.num_classes) => {
                            return fail("node label >= num_classes")
                        }
                        _ => {}
                    }
                }
            }
        }
        let mut seen = HashSet::new();
        for name in [SplitName::Train, SplitName::Valid, SplitName::Test] {
            for &i in self.split.get(name) {
                if i >= self.graphs.len() {
                    return Err(Error::Contract(format!("split {name} references graph {i}")));
                }
                if !seen.insert(i) {
                    return Err(Error::Contract(format!("graph {i} appears in more than one split")));
                }
            }
        }
        Ok(())
    }

    pub fn split_graphs(&self, name: SplitName) -> Vec<&Graph> {
        self.split.get(name).iter().map(|&i| &self.graphs[i]).collect()
    }

    /// Feature width shared by all graphs (`None` for featureless datasets).
    pub fn feature_dim(&self) -> Option<usize> {
        self.graphs.first().and_then(Graph::feature_dim)
    }
}

#[derive(Deserialize)]
struct RecordIn {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    features: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    graph_label: Option<usize>,
    #[serde(default)]
    node_labels: Option<Vec<usize>>,
    #[serde(default)]
    labeled_nodes: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    features: &'a Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    graph_label: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    node_labels: &'a Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labeled_nodes: &'a Option<Vec<usize>>,
}

/// Path of the split sidecar for a dataset file: `dir/name.jsonl` → `dir/name.split.json`.
pub fn split_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.split.json"))
}

pub fn parse_graph_line(line: &str, line_no: usize) -> Result<Graph> {
    let rec: RecordIn = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        msg: e.to_string(),
    })?;
    if rec.graph_label.is_some() == rec.node_labels.is_some() {
        return Err(Error::Parse {
            line: line_no,
            msg: "exactly one of graph_label / node_labels is required".into(),
        });
    }
    Ok(Graph {
        num_nodes: rec.num_nodes,
        edges: rec.edges.into_iter().map(|[u, v]| (u, v)).collect(),
        features: rec.features,
        graph_label: rec.graph_label,
        node_labels: rec.node_labels,
        labeled_nodes: rec.labeled_nodes,
    })
}

/// Reads a dataset. Without a split sidecar every graph is placed in `train` and
/// the class count is inferred from the largest label (at least 2).
pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut graphs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        graphs.push(parse_graph_line(&line, i + 1)?);
    }
    let task_kind = if graphs.iter().any(|g| g.node_labels.is_some()) {
        TaskKind::NodeClassification
    } else {
        TaskKind::GraphClassification
    };
    let max_label = graphs
        .iter()
        .flat_map(|g| g.graph_label.into_iter().chain(g.node_labels.iter().flatten().copied()))
        .max()
        .unwrap_or(0);
    let sp = split_path(path);
    let (split, num_classes) = if sp.exists() {
        let f: SplitFile = serde_json::from_reader(BufReader::new(File::open(&sp)?))?;
        let split = Split {
            train: f.train,
            valid: f.valid,
            test: f.test,
        };
        (split, f.num_classes.unwrap_or((max_label + 1).max(2)))
    } else {
        let split = Split {
            train: (0..graphs.len()).collect(),
            ..Split::default()
        };
        (split, (max_label + 1).max(2))
    };
    Dataset::new(graphs, split, task_kind, num_classes)
}

/// Writes the JSONL file and its split sidecar.
pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for g in &dataset.graphs {
        let rec = RecordOut {
            num_nodes: g.num_nodes,
            edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
            features: &g.features,
            graph_label: g.graph_label,
            node_labels: &g.node_labels,
            labeled_nodes: &g.labeled_nodes,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let split = SplitFile {
        train: dataset.split.train.clone(),
        valid: dataset.split.valid.clone(),
        test: dataset.split.test.clone(),
        num_classes: Some(dataset.num_classes),
    };
    let mut sw = BufWriter::new(File::create(split_path(path))?);
    serde_json::to_writer(&mut sw, &split)?;
    sw.write_all(b"\n")?;
    sw.flush()?;
    Ok(())
}

/// Supervision targets of a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// One label per graph (graphs without a label are skipped).
    Graph { graphs: Vec<usize>, labels: Vec<usize> },
    /// Labels for selected nodes, indexed in the merged node space.
    Node { nodes: Vec<usize>, labels: Vec<usize> },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Graph { labels, .. } | Targets::Node { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> &[usize] {
        match self {
            Targets::Graph { labels, .. } | Targets::Node { labels, .. } => labels,
        }
    }
}

/// Several graphs merged into one disconnected graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub num_nodes: usize,
    pub num_graphs: usize,
    pub features: Option<Tensor>,
    pub edges: Rc<[(usize, usize)]>,
    /// Graph index of each merged node; non-decreasing.
    pub membership: Rc<[usize]>,
    /// Cumulative node offsets, length `num_graphs + 1`.
    pub offsets: Vec<usize>,
    pub targets: Targets,
    // Retained so unbatching is exact.
    graph_labels: Vec<Option<usize>>,
    node_labels: Vec<Option<Vec<usize>>>,
    labeled_nodes: Vec<Option<Vec<usize>>>,
}

impl GraphBatch {
    pub fn graph_node_count(&self, g: usize) -> usize {
        self.offsets[g + 1] - self.offsets[g]
    }

    /// Directed (source, destination) pairs covering both directions of every
    /// edge plus one self-loop per node, grouped for attention.
    pub fn attention_edges(&self) -> (Rc<[usize]>, Rc<[usize]>) {
        let cap = 2 * self.edges.len() + self.num_nodes;
        let mut src = Vec::with_capacity(cap);
        let mut dst = Vec::with_capacity(cap);
        for &(u, v) in self.edges.iter() {
            src.push(u);
            dst.push(v);
            src.push(v);
            dst.push(u);
        }
        for v in 0..self.num_nodes {
            src.push(v);
            dst.push(v);
        }
        (src.into(), dst.into())
    }

    /// Splits the batch back into its graphs.
    pub fn unbatch(&self) -> Vec<Graph> {
        let mut edge_lists = vec![Vec::new(); self.num_graphs];
        for &(u, v) in self.edges.iter() {
            let g = self.membership[u];
            let o = self.offsets[g];
            edge_lists[g].push((u - o, v - o));
        }
        (0..self.num_graphs)
            .map(|g| {
                let (start, end) = (self.offsets[g], self.offsets[g + 1]);
                let features = self.features.as_ref().map(|f| (start..end).map(|r| f.row(r).to_vec()).collect());
                Graph {
                    num_nodes: end - start,
                    edges: std::mem::take(&mut edge_lists[g]),
                    features,
                    graph_label: self.graph_labels[g],
                    node_labels: self.node_labels[g].clone(),
                    labeled_nodes: self.labeled_nodes[g].clone(),
                }
            })
            .collect()
    }
}

/// Merges graphs into a batch, offsetting node indices by cumulative node counts.
pub fn make_batch(graphs: &[&Graph]) -> Result<GraphBatch> {
    let dims: HashSet<Option<usize>> = graphs.iter().map(|g| g.feature_dim()).collect();
    if dims.len() > 1 {
        return Err(Error::Batch(format!("mixed feature dimensions {dims:?}")));
    }
    let feat_dim = dims.into_iter().next().flatten();
    let total: usize = graphs.iter().map(|g| g.num_nodes).sum();
    let mut offsets = Vec::with_capacity(graphs.len() + 1);
    let mut edges = Vec::with_capacity(graphs.iter().map(|g| g.edges.len()).sum());
    let mut membership = Vec::with_capacity(total);
    let mut feat = feat_dim.map(|d| Vec::with_capacity(total * d));
    let mut graph_targets = (Vec::new(), Vec::new());
    let mut node_targets = (Vec::new(), Vec::new());
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        offsets.push(offset);
        edges.extend(g.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
        membership.extend(std::iter::repeat_n(gi, g.num_nodes));
        if let (Some(buf), Some(f)) = (feat.as_mut(), g.features.as_ref()) {
            for row in f {
                buf.extend_from_slice(row);
            }
        }
        if let Some(y) = g.graph_label {
            graph_targets.0.push(gi);
            graph_targets.1.push(y);
        }
        if let Some(labels) = &g.node_labels {
            for v in g.supervised_nodes() {
                node_targets.0.push(v + offset);
                node_targets.1.push(labels[v]);
            }
        }
        offset += g.num_nodes;
    }
    offsets.push(offset);
    let targets = if graphs.iter().any(|g| g.node_labels.is_some()) {
        Targets::Node {
            nodes: node_targets.0,
            labels: node_targets.1,
        }
    } else {
        Targets::Graph {
            graphs: graph_targets.0,
            labels: graph_targets.1,
        }
    };
    let features = match (feat, feat_dim) {
        (Some(buf), Some(d)) => Some(Tensor::matrix(total, d, buf)?),
        _ => None,
    };
    Ok(GraphBatch {
        num_nodes: total,
        num_graphs: graphs.len(),
        features,
        edges: edges.into(),
        membership: membership.into(),
        offsets,
        targets,
        graph_labels: graphs.iter().map(|g| g.graph_label).collect(),
        node_labels: graphs.iter().map(|g| g.node_labels.clone()).collect(),
        labeled_nodes: graphs.iter().map(|g| g.labeled_nodes.clone()).collect(),
    })
}
