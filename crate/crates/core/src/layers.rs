//! Message-passing layers (GraphConv, GIN, GAT), readout heads and model assembly.
//!
//! A [`Model`] owns flat parameter tensors. Each forward pass binds them onto a
//! fresh [`Tape`] through [`Model::bind`], runs the layer stack to get the final
//! node embeddings `H_final`, then applies the readout head to produce logits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::ids::{assemble_input, input_dim, IdAssignment, IdDistribution, IdMode};
use crate::tensor::{Tape, Tensor, Var};

pub const CHECKPOINT_MAGIC: &str = "IDGNN-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const GAT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    GraphConv,
    Gin,
    Gat,
}

impl LayerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "graphconv" | "graph_conv" => Some(LayerKind::GraphConv),
            "gin" => Some(LayerKind::Gin),
            "gat" => Some(LayerKind::Gat),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::GraphConv => "graphconv",
            LayerKind::Gin => "gin",
            LayerKind::Gat => "gat",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: Var<'_>) -> Var<'_> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Attention heads (GAT only); `out_dim` must be divisible by it.
    pub gat_heads: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl LayerConfig {
    pub fn new(kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        LayerConfig {
            kind,
            in_dim,
            out_dim,
            gat_heads: 1,
            activation: Activation::Relu,
            dropout_rate: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Contract("layer dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Contract(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.gat_heads == 0 || (self.kind == LayerKind::Gat && !self.out_dim.is_multiple_of(self.gat_heads)) {
            return Err(Error::Contract(format!(
                "gat_heads = {} incompatible with out_dim = {}",
                self.gat_heads, self.out_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Sum,
    Mean,
    /// Node-level prediction; no pooling.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub pooling: Pooling,
    /// Number of linear maps in the head; 1 is a plain linear classifier.
    pub num_linear: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: Vec<LayerConfig>,
    pub readout: ReadoutConfig,
    /// Width of the raw node features (`None` for featureless data).
    pub feature_dim: Option<usize>,
    pub id_mode: IdMode,
    pub id_dim: usize,
    pub id_dist: IdDistribution,
}

impl ModelConfig {
    /// `num_layers` identical layers of width `hidden_dim` over the assembled input.
    #[allow(clippy::too_many_arguments)]
    pub fn stack(
        kind: LayerKind,
        feature_dim: Option<usize>,
        id_mode: IdMode,
        id_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        pooling: Pooling,
        num_classes: usize,
    ) -> Self {
        let first = input_dim(feature_dim, id_mode, id_dim);
        let layers = (0..num_layers)
            .map(|i| LayerConfig::new(kind, if i == 0 { first } else { hidden_dim }, hidden_dim))
            .collect();
        ModelConfig {
            layers,
            readout: ReadoutConfig {
                pooling,
                num_linear: 1,
                hidden_dim,
                num_classes,
            },
            feature_dim,
            id_mode,
            id_dim,
            id_dist: IdDistribution::Uniform,
        }
    }

    pub fn input_dim(&self) -> usize {
        input_dim(self.feature_dim, self.id_mode, self.id_dim)
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim(), |l| l.out_dim)
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.layers.iter_mut().for_each(|l| l.dropout_rate = rate);
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = self.input_dim();
        for l in &self.layers {
            l.validate()?;
            if l.in_dim != prev {
                return Err(Error::shape("model layers", &[prev], &[l.in_dim]));
            }
            prev = l.out_dim;
        }
        let r = &self.readout;
        if r.num_linear == 0 || r.num_classes < 2 || r.hidden_dim == 0 {
            return Err(Error::Contract("readout needs >= 1 linear map, >= 2 classes".into()));
        }
        if self.id_mode == IdMode::Rni && self.id_dim == 0 {
            return Err(Error::Contract("id_mode=rni needs id_dim >= 1".into()));
        }
        Ok(())
    }

    /// Parameter names and shapes in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let (din, dout) = (l.in_dim, l.out_dim);
            match l.kind {
                LayerKind::GraphConv => {
                    out.push((format!("layer{i}.w_self"), vec![din, dout]));
                    out.push((format!("layer{i}.w_neigh"), vec![din, dout]));
                    out.push((format!("layer{i}.bias"), vec![dout]));
                }
                LayerKind::Gin => {
                    out.push((format!("layer{i}.eps"), vec![]));
                    out.push((format!("layer{i}.w1"), vec![din, dout]));
                    out.push((format!("layer{i}.b1"), vec![dout]));
                    out.push((format!("layer{i}.w2"), vec![dout, dout]));
                    out.push((format!("layer{i}.b2"), vec![dout]));
                }
                LayerKind::Gat => {
                    let per_head = dout / l.gat_heads;
                    for h in 0..l.gat_heads {
                        out.push((format!("layer{i}.head{h}.w"), vec![din, per_head]));
                        out.push((format!("layer{i}.head{h}.a_src"), vec![per_head, 1]));
                        out.push((format!("layer{i}.head{h}.a_dst"), vec![per_head, 1]));
                    }
                    out.push((format!("layer{i}.bias"), vec![dout]));
                }
            }
        }
        let r = &self.readout;
        let mut din = self.embedding_dim();
        for j in 0..r.num_linear {
            let dout = if j + 1 == r.num_linear { r.num_classes } else { r.hidden_dim };
            out.push((format!("readout{j}.w"), vec![din, dout]));
            out.push((format!("readout{j}.b"), vec![dout]));
            din = dout;
        }
        out
    }
}

fn glorot<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let (fan_in, fan_out) = match shape {
        [a, b] => (*a, *b),
        [a] => (*a, *a),
        _ => (1, 1),
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Tensor>,
}

impl Model {
    /// Glorot-uniform weights, zero biases, GIN epsilon zero.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = config
            .param_layout()
            .into_iter()
            .map(|(name, shape)| {
                let is_zero_init = name.ends_with("bias") || name.ends_with(".b") || name.ends_with("b1") || name.ends_with("b2") || name.ends_with("eps");
                if is_zero_init {
                    Tensor::zeros(&shape)
                } else {
                    glorot(&shape, rng)
                }
            })
            .collect();
        Ok(Model { config, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.config.param_layout().iter().position(|(n, _)| n == name)
    }

    /// Binds parameters as trainable leaves.
    pub fn bind<'t>(&'t self, tape: &'t Tape) -> BoundModel<'t> {
        BoundModel {
            config: &self.config,
            params: self.params.iter().map(|p| tape.leaf(p.clone())).collect(),
            tape,
        }
    }

    /// Binds parameters as constants (no gradient bookkeeping).
    pub fn bind_frozen<'t>(&'t self, tape: &'t Tape) -> BoundModel<'t> {
        BoundModel {
            config: &self.config,
            params: self.params.iter().map(|p| tape.constant(p.clone())).collect(),
            tape,
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            magic: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self
                .config
                .param_layout()
                .into_iter()
                .zip(&self.params)
                .map(|((name, shape), t)| NamedParam {
                    name,
                    shape,
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &ckpt)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Model> {
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ckpt.magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {:?}", ckpt.magic)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        ckpt.config.validate()?;
        let layout = ckpt.config.param_layout();
        if layout.len() != ckpt.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                ckpt.params.len()
            )));
        }
        let mut params = Vec::with_capacity(layout.len());
        for ((name, shape), p) in layout.into_iter().zip(ckpt.params) {
            if p.name != name || p.shape != shape {
                return Err(Error::Checkpoint(format!("parameter {} does not match layout entry {name}", p.name)));
            }
            params.push(Tensor::new(shape, p.data)?);
        }
        Ok(Model {
            config: ckpt.config,
            params,
        })
    }
}

/// On-disk model: magic string, format version, config and named flat parameters.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    magic: String,
    version: u32,
    config: ModelConfig,
    params: Vec<NamedParam>,
}

#[derive(Serialize, Deserialize)]
struct NamedParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub struct GraphConvParams<'t> {
    pub w_self: Var<'t>,
    pub w_neigh: Var<'t>,
    pub bias: Var<'t>,
}

pub struct GinParams<'t> {
    pub eps: Var<'t>,
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
}

pub struct GatHead<'t> {
    pub w: Var<'t>,
    pub a_src: Var<'t>,
    pub a_dst: Var<'t>,
}

pub struct GatParams<'t> {
    pub heads: Vec<GatHead<'t>>,
    pub bias: Var<'t>,
}

/// Directed message edges for attention: both directions of each edge plus self-loops.
pub struct AttentionEdges {
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    pub num_nodes: usize,
}

impl AttentionEdges {
    pub fn from_batch(batch: &GraphBatch) -> Self {
        let (src, dst) = batch.attention_edges();
        AttentionEdges {
            src,
            dst,
            num_nodes: batch.num_nodes,
        }
    }
}

fn check_in_dim(h: Var<'_>, w: Var<'_>, op: &'static str) -> Result<()> {
    let (hs, ws) = (h.shape(), w.shape());
    if hs.len() != 2 || ws.len() != 2 || hs[1] != ws[0] {
        return Err(Error::shape(op, &hs, &ws));
    }
    Ok(())
}

/// `act(W_self h_v + W_neigh Σ_{u∈N(v)} h_u + b)`.
pub fn graphconv_forward<'t>(
    h: Var<'t>,
    edges: &Rc<[(usize, usize)]>,
    p: &GraphConvParams<'t>,
    act: Activation,
) -> Result<Var<'t>> {
    check_in_dim(h, p.w_self, "graphconv")?;
    let agg = h.segment_sum(edges.clone())?;
    let out = h.matmul(p.w_self)?.add(agg.matmul(p.w_neigh)?)?.add_row(p.bias)?;
    Ok(act.apply(out))
}

/// `act(MLP((1 + eps) h_v + Σ_{u∈N(v)} h_u))` with a two-layer ReLU MLP.
pub fn gin_forward<'t>(h: Var<'t>, edges: &Rc<[(usize, usize)]>, p: &GinParams<'t>, act: Activation) -> Result<Var<'t>> {
    check_in_dim(h, p.w1, "gin")?;
    let agg = h.segment_sum(edges.clone())?;
    let z = h.scale_by(p.eps.add_scalar(1.0))?.add(agg)?;
    let hidden = z.matmul(p.w1)?.add_row(p.b1)?.relu();
    let out = hidden.matmul(p.w2)?.add_row(p.b2)?;
    Ok(act.apply(out))
}

/// Graph attention; returns the layer output and each head's attention weights
/// (one entry per directed attention edge, in `edges` order).
pub fn gat_forward_with_attention<'t>(
    h: Var<'t>,
    edges: &AttentionEdges,
    p: &GatParams<'t>,
    act: Activation,
) -> Result<(Var<'t>, Vec<Tensor>)> {
    let mut outs = Vec::with_capacity(p.heads.len());
    let mut attn = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        check_in_dim(h, head.w, "gat")?;
        let z = h.matmul(head.w)?;
        let s_dst = z.matmul(head.a_dst)?.gather_rows(edges.dst.clone())?;
        let s_src = z.matmul(head.a_src)?.gather_rows(edges.src.clone())?;
        let scores = s_dst.add(s_src)?.leaky_relu(GAT_NEGATIVE_SLOPE);
        let alpha = scores.softmax_over_segments(edges.dst.clone(), edges.num_nodes)?;
        attn.push(alpha.to_tensor());
        let msgs = z.gather_rows(edges.src.clone())?.mul_col(alpha)?;
        outs.push(msgs.scatter_add_rows(edges.dst.clone(), edges.num_nodes)?);
    }
    let joined = if outs.len() == 1 { outs[0] } else { Var::concat_cols(&outs)? };
    Ok((act.apply(joined.add_row(p.bias)?), attn))
}

pub fn gat_forward<'t>(h: Var<'t>, edges: &AttentionEdges, p: &GatParams<'t>, act: Activation) -> Result<Var<'t>> {
    Ok(gat_forward_with_attention(h, edges, p, act)?.0)
}

/// Output of a forward pass: pre-readout node embeddings and logits.
pub struct ForwardOutput<'t> {
    pub h_final: Var<'t>,
    pub logits: Var<'t>,
}

/// A model's parameters placed on a tape.
pub struct BoundModel<'t> {
    config: &'t ModelConfig,
    params: Vec<Var<'t>>,
    tape: &'t Tape,
}

impl<'t> BoundModel<'t> {
    pub fn params(&self) -> &[Var<'t>] {
        &self.params
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    /// Runs layers and readout on an assembled input `H0`.
    pub fn forward_input(
        &self,
        batch: &GraphBatch,
        input: Tensor,
        train: bool,
        rng: &mut dyn RngCore,
    ) -> Result<ForwardOutput<'t>> {
        let expected = self.config.input_dim();
        if input.shape() != [batch.num_nodes, expected] {
            return Err(Error::shape("model input", input.shape(), &[batch.num_nodes, expected]));
        }
        let mut h = self.tape.constant(input);
        let mut k = 0;
        let attention = self
            .config
            .layers
            .iter()
            .any(|l| l.kind == LayerKind::Gat)
            .then(|| AttentionEdges::from_batch(batch));
        let last = self.config.layers.len().saturating_sub(1);
        for (i, layer) in self.config.layers.iter().enumerate() {
            h = match layer.kind {
                LayerKind::GraphConv => {
                    let p = GraphConvParams {
                        w_self: self.params[k],
                        w_neigh: self.params[k + 1],
                        bias: self.params[k + 2],
                    };
                    k += 3;
                    graphconv_forward(h, &batch.edges, &p, layer.activation)?
                }
                LayerKind::Gin => {
                    let p = GinParams {
                        eps: self.params[k],
                        w1: self.params[k + 1],
                        b1: self.params[k + 2],
                        w2: self.params[k + 3],
                        b2: self.params[k + 4],
                    };
                    k += 5;
                    gin_forward(h, &batch.edges, &p, layer.activation)?
                }
                LayerKind::Gat => {
                    let heads = (0..layer.gat_heads)
                        .map(|j| GatHead {
                            w: self.params[k + 3 * j],
                            a_src: self.params[k + 3 * j + 1],
                            a_dst: self.params[k + 3 * j + 2],
                        })
                        .collect();
                    k += 3 * layer.gat_heads;
                    let p = GatParams {
                        heads,
                        bias: self.params[k],
                    };
                    k += 1;
                    let edges = attention.as_ref().expect("built when a GAT layer is present");
                    gat_forward(h, edges, &p, layer.activation)?
                }
            };
            if i != last {
                h = h.dropout(layer.dropout_rate, train, rng)?;
            }
        }
        let h_final = h;
        let r = &self.config.readout;
        let mut x = match r.pooling {
            Pooling::Sum => h_final.sum_pool(batch.membership.clone(), batch.num_graphs)?,
            Pooling::Mean => h_final.mean_pool(batch.membership.clone(), batch.num_graphs)?,
            Pooling::None => h_final,
        };
        for j in 0..r.num_linear {
            x = x.matmul(self.params[k])?.add_row(self.params[k + 1])?;
            k += 2;
            if j + 1 != r.num_linear {
                x = x.relu();
            }
        }
        Ok(ForwardOutput { h_final, logits: x })
    }

    /// Assembles `[X ‖ I]` according to the model's identifier mode, then runs the model.
    pub fn forward(
        &self,
        batch: &GraphBatch,
        ids: Option<&IdAssignment>,
        train: bool,
        rng: &mut dyn RngCore,
    ) -> Result<ForwardOutput<'t>> {
        let input = assemble_input(batch.features.as_ref(), batch.num_nodes, ids, self.config.id_mode)?;
        self.forward_input(batch, input, train, rng)
    }
}

/// Evaluation-mode forward returning `(H_final, logits)` as plain tensors.
pub fn model_forward(model: &Model, batch: &GraphBatch, ids: Option<&IdAssignment>) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    let bound = model.bind_frozen(&tape);
    let mut unused = rand::rngs::mock::StepRng::new(0, 0);
    let out = bound.forward(batch, ids, false, &mut unused)?;
    Ok((out.h_final.to_tensor(), out.logits.to_tensor()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_batch, Graph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tri() -> Graph {
        Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)])
    }

    fn one_hot3() -> Tensor {
        Tensor::identity(3)
    }

    #[test]
    fn graphconv_edgeless_has_no_aggregation() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = tape.constant(glorot(&[4, 3], &mut rng));
        let p = GraphConvParams {
            w_self: tape.constant(glorot(&[3, 2], &mut rng)),
            w_neigh: tape.constant(glorot(&[3, 2], &mut rng)),
            bias: tape.constant(Tensor::vector(vec![0.5, -0.5])),
        };
        let out = graphconv_forward(h, &Rc::from(vec![]), &p, Activation::Identity).unwrap();
        let expected = h.matmul(p.w_self).unwrap().add_row(p.bias).unwrap();
        assert_eq!(out.to_tensor(), expected.to_tensor());
    }

    #[test]
    fn graphconv_pure_neighbor_sum() {
        let tape = Tape::new();
        let h = tape.constant(one_hot3());
        let p = GraphConvParams {
            w_self: tape.constant(Tensor::zeros(&[3, 3])),
            w_neigh: tape.constant(Tensor::identity(3)),
            bias: tape.constant(Tensor::zeros(&[3])),
        };
        let edges: Rc<[(usize, usize)]> = tri().edges.into();
        let out = graphconv_forward(h, &edges, &p, Activation::Identity).unwrap().to_tensor();
        let expected = Tensor::from_rows(&[[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(out, expected);
    }

    #[test]
    fn gin_special_cases() {
        let tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [0.5, 0.0], [3.0, 1.0]]).unwrap());
        let ident = GinParams {
            eps: tape.constant(Tensor::scalar(-1.0)),
            w1: tape.constant(Tensor::identity(2)),
            b1: tape.constant(Tensor::zeros(&[2])),
            w2: tape.constant(Tensor::identity(2)),
            b2: tape.constant(Tensor::zeros(&[2])),
        };
        let edges: Rc<[(usize, usize)]> = tri().edges.into();
        let out = gin_forward(h, &edges, &ident, Activation::Identity).unwrap();
        assert_eq!(out.to_tensor(), h.segment_sum(edges.clone()).unwrap().to_tensor());

        let eps0 = GinParams {
            eps: tape.constant(Tensor::scalar(0.0)),
            ..ident
        };
        let out = gin_forward(h, &Rc::from(vec![]), &eps0, Activation::Identity).unwrap();
        assert_eq!(out.to_tensor(), h.to_tensor());
    }

    #[test]
    fn gat_single_node_and_zero_attention() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let single = make_batch(&[&Graph::from_edges(1, [])]).unwrap();
        let h = tape.constant(Tensor::from_rows(&[[0.3, -0.2]]).unwrap());
        let p = GatParams {
            heads: vec![GatHead {
                w: tape.constant(glorot(&[2, 3], &mut rng)),
                a_src: tape.constant(glorot(&[3, 1], &mut rng)),
                a_dst: tape.constant(glorot(&[3, 1], &mut rng)),
            }],
            bias: tape.constant(Tensor::zeros(&[3])),
        };
        let (out, attn) =
            gat_forward_with_attention(h, &AttentionEdges::from_batch(&single), &p, Activation::Relu).unwrap();
        assert_eq!(attn[0].data(), &[1.0]);
        assert_eq!(out.to_tensor(), h.matmul(p.heads[0].w).unwrap().relu().to_tensor());

        // a = 0 gives uniform attention over N(v) ∪ {v}.
        let path = make_batch(&[&Graph::from_edges(3, [(0, 1), (1, 2)])]).unwrap();
        let hp = tape.constant(glorot(&[3, 2], &mut rng));
        let w = glorot(&[2, 2], &mut rng);
        let pz = GatParams {
            heads: vec![GatHead {
                w: tape.constant(w.clone()),
                a_src: tape.constant(Tensor::zeros(&[2, 1])),
                a_dst: tape.constant(Tensor::zeros(&[2, 1])),
            }],
            bias: tape.constant(Tensor::zeros(&[2])),
        };
        let out = gat_forward(hp, &AttentionEdges::from_batch(&path), &pz, Activation::Identity)
            .unwrap()
            .to_tensor();
        let z = hp.matmul(pz.heads[0].w).unwrap().to_tensor();
        let groups = [vec![0, 1], vec![0, 1, 2], vec![1, 2]];
        for (v, group) in groups.iter().enumerate() {
            for j in 0..2 {
                let mean = group.iter().map(|&u| z.at(u, j)).sum::<f64>() / group.len() as f64;
                assert!((out.at(v, j) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::stack(LayerKind::Gat, None, IdMode::Rni, 4, 8, 2, Pooling::Sum, 2);
        cfg.validate().unwrap();
        cfg.layers[1].gat_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::stack(LayerKind::Gin, None, IdMode::Rni, 4, 8, 2, Pooling::Sum, 2);
        cfg.layers[1].in_dim = 7;
        assert!(matches!(cfg.validate(), Err(Error::Shape { .. })));
    }

    #[test]
    fn checkpoint_round_trip_and_magic() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [LayerKind::GraphConv, LayerKind::Gin, LayerKind::Gat] {
            let cfg = ModelConfig::stack(kind, Some(2), IdMode::Rni, 3, 4, 2, Pooling::Mean, 3);
            let model = Model::new(cfg, &mut rng).unwrap();
            let path = dir.path().join(format!("{}.json", kind.name()));
            model.save_checkpoint(&path).unwrap();
            assert_eq!(Model::load_checkpoint(&path).unwrap(), model);
        }
        let bad = dir.path().join("bad.json");
        let text = std::fs::read_to_string(dir.path().join("gin.json")).unwrap();
        std::fs::write(&bad, text.replace(CHECKPOINT_MAGIC, "NOPE")).unwrap();
        assert!(matches!(Model::load_checkpoint(&bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn input_dim_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ModelConfig::stack(LayerKind::GraphConv, None, IdMode::Rni, 4, 8, 2, Pooling::Sum, 2);
        let model = Model::new(cfg, &mut rng).unwrap();
        let batch = make_batch(&[&tri()]).unwrap();
        let tape = Tape::new();
        let err = model
            .bind(&tape)
            .forward_input(&batch, Tensor::zeros(&[3, 2]), false, &mut rng)
            .err()
            .expect("shape mismatch must fail");
        assert!(matches!(err, Error::Shape { .. }));
    }
}
