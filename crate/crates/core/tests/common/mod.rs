//! Oracles and generators shared by the integration test targets.
#![allow(dead_code)]

use idgnn::graph::{make_batch, Graph};
use idgnn::icon::{icon_loss_with_ids, task_loss, IconConfig, TaskLossSource};
use idgnn::ids::{sample_ids, IdAssignment, IdDistribution, IdMode};
use idgnn::layers::{BoundModel, LayerKind, Model, ModelConfig, Pooling};
use idgnn::tensor::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdos-Renyi style graph with `n` nodes and edge probability `p`.
pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, edges)
}

/// Dense symmetric adjacency matrix.
pub fn dense_adjacency(g: &Graph) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; g.num_nodes]; g.num_nodes];
    for &(u, v) in &g.edges {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    a
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

/// Rows of a `[rows, cols]` tensor as nested vectors.
pub fn to_rows(t: &idgnn::tensor::Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Relative error `|a - n| / max(|a| + |n|, tiny)` over whole gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let norm_a: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let norm_n: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (norm_a + norm_n).max(1e-12)
}

/// Outcome of a finite-difference check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Relative error between the tape gradient and central differences at
    /// step [`FD_STEP`].
    pub rel_error: f64,
    /// Some coordinate's central difference changes with the step size, so a
    /// ReLU kink lies within one step and the finite difference is not a
    /// derivative there. A wrong backward pass does not trigger this: its
    /// finite differences agree across steps and disagree with the tape.
    pub near_kink: bool,
}

/// Compares the tape's gradient of `loss` with central differences over every
/// parameter entry.
pub fn gradient_check<F>(model: &Model, loss: F) -> GradCheck
where
    F: for<'t> Fn(&BoundModel<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let l = loss(&bound);
    let grads = tape.backward(l).expect("backward");
    let mut analytic = Vec::new();
    for p in bound.params() {
        analytic.extend_from_slice(grads.get_or_zeros(*p).data());
    }

    let eval = |m: &Model| -> f64 {
        let tape = Tape::new();
        let bound = m.bind_frozen(&tape);
        loss(&bound).item()
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut near_kink = false;
    let mut probe = model.clone();
    for pi in 0..model.params.len() {
        for j in 0..model.params[pi].numel() {
            let orig = probe.params[pi].data()[j];
            let mut central = |h: f64| {
                probe.params[pi].data_mut()[j] = orig + h;
                let up = eval(&probe);
                probe.params[pi].data_mut()[j] = orig - h;
                let down = eval(&probe);
                probe.params[pi].data_mut()[j] = orig;
                (up - down) / (2.0 * h)
            };
            let coarse = central(FD_STEP);
            let fine = central(FD_STEP / 10.0);
            near_kink |= (coarse - fine).abs() > 1e-3 * coarse.abs().max(1.0);
            numeric.push(coarse);
        }
    }
    GradCheck {
        rel_error: relative_error(&analytic, &numeric),
        near_kink,
    }
}

/// Moves every parameter by uniform noise. Zero-initialized biases put
/// pre-activations of dead units exactly on the ReLU kink, where central
/// differences are meaningless.
pub fn jitter(model: &mut Model, rng: &mut impl Rng) {
    for p in &mut model.params {
        for w in p.data_mut() {
            *w += rng.gen_range(-0.2..0.2);
        }
    }
}

/// Most instances allowed to be replaced because they sit on a kink.
pub const MAX_KINK_REDRAWS: usize = 5;

/// Checks `count` kink-free random instances of `kind` under `loss`. Returns
/// the worst relative error and the number of instances redrawn.
pub fn check_layer_kind(kind: LayerKind, loss: LossKind, count: usize, base_seed: u64) -> (f64, usize) {
    let (mut worst, mut redrawn, mut done) = (0.0f64, 0, 0);
    let mut seed = base_seed;
    while done < count {
        let inst = grad_instance(kind, done, seed);
        seed += 1;
        let check = instance_check(&inst, loss);
        if check.near_kink {
            redrawn += 1;
            assert!(redrawn <= MAX_KINK_REDRAWS, "{kind:?} {loss:?}: too many instances on a kink");
            continue;
        }
        assert!(check.rel_error.is_finite());
        worst = worst.max(check.rel_error);
        done += 1;
    }
    (worst, redrawn)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Task,
    Icon,
}

/// A small random model and batch for gradient checks. Even instances are
/// node tasks; odd ones are graph tasks with a two-layer readout.
pub struct GradInstance {
    pub model: Model,
    pub graphs: Vec<Graph>,
    pub r1: IdAssignment,
    pub r2: IdAssignment,
    pub dropout_seed: u64,
}

pub fn grad_instance(kind: LayerKind, index: usize, seed: u64) -> GradInstance {
    let mut rng = rng(seed);
    let graph_task = index % 2 == 1;
    let num_graphs = rng.gen_range(1..=3);
    let graphs: Vec<Graph> = (0..num_graphs)
        .map(|_| {
            let n = rng.gen_range(3..=6);
            let g = random_graph(n, 0.5, &mut rng);
            let feats: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
            let g = g.with_features(feats);
            if graph_task {
                g.with_graph_label(rng.gen_range(0..3))
            } else {
                let labels = (0..n).map(|_| rng.gen_range(0..3)).collect();
                g.with_node_labels(labels)
            }
        })
        .collect();
    let pooling = if !graph_task {
        Pooling::None
    } else if index % 4 == 1 {
        Pooling::Sum
    } else {
        Pooling::Mean
    };
    let mut cfg = ModelConfig::stack(kind, Some(1), IdMode::Rni, 2, 4, 2, pooling, 3);
    if graph_task {
        cfg.readout.num_linear = 2;
    }
    for l in &mut cfg.layers {
        l.gat_heads = if kind == LayerKind::Gat && index.is_multiple_of(3) { 2 } else { 1 };
        l.dropout_rate = 0.25;
    }
    let mut model = Model::new(cfg, &mut rng).expect("model");
    jitter(&mut model, &mut rng);
    let total: usize = graphs.iter().map(|g| g.num_nodes).sum();
    let r1 = sample_ids(total, 2, IdDistribution::Normal, &mut rng).unwrap();
    let r2 = sample_ids(total, 2, IdDistribution::Normal, &mut rng).unwrap();
    GradInstance {
        model,
        graphs,
        r1,
        r2,
        dropout_seed: rng.gen(),
    }
}

/// Gradient check of one instance under the given loss. Dropout is active
/// with a fixed seed, so the loss is a deterministic function.
pub fn instance_check(inst: &GradInstance, loss: LossKind) -> GradCheck {
    let refs: Vec<&Graph> = inst.graphs.iter().collect();
    let batch = make_batch(&refs).unwrap();
    let icon = IconConfig {
        task_loss_source: TaskLossSource::Average,
        ..IconConfig::enabled(0.7)
    };
    gradient_check(&inst.model, |bound| match loss {
        LossKind::Task => {
            let mut drop = rng(inst.dropout_seed);
            let out = bound.forward(&batch, Some(&inst.r1), true, &mut drop).unwrap();
            task_loss(out.logits, &batch).unwrap()
        }
        LossKind::Icon => icon_loss_with_ids(bound, &batch, &icon, &inst.r1, &inst.r2, true, inst.dropout_seed).unwrap().0,
    })
}

/// Triangle membership straight from the definition.
pub fn in_triangle(g: &Graph, v: usize) -> bool {
    let a = dense_adjacency(g);
    let n = g.num_nodes;
    (0..n).any(|u| (0..n).any(|w| u != w && a[v][u] > 0.0 && a[v][w] > 0.0 && a[u][w] > 0.0))
}
