//! Training loop, evaluation, model selection and run records.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{make_batch, Dataset, Graph, SplitName, TaskKind};
use crate::icon::{icon_step_loss, rni_step_loss, IconConfig};
use crate::ids::{sample_ids, IdDistribution, IdMode};
use crate::invariance::{invariance_report, item_labels, IdClassifier};
use crate::layers::{LayerKind, Model, ModelConfig, Pooling};
use crate::optim::{Optimizer, OptimizerKind};
use crate::seed::{salted, stream_seed};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub layer_kind: LayerKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub gat_heads: usize,
    pub dropout: f64,
    /// Graph-level pooling; ignored for node tasks.
    pub pooling: Pooling,
    pub readout_layers: usize,
    pub id_mode: IdMode,
    pub id_dim: usize,
    pub id_dist: IdDistribution,
    pub icon: IconConfig,
    pub seeds: Vec<u64>,
    pub eval_every: usize,
    /// Resamples per invariance estimate.
    #[serde(alias = "invariance_K")]
    pub invariance_k: usize,
    /// Epoch interval for invariance estimates during training; 0 means only
    /// after training, on the selected model.
    pub invariance_every: usize,
    /// Splits that get invariance estimates; empty means all.
    pub invariance_splits: Vec<String>,
    pub eval_seed: u64,
    /// Worker threads across seeds.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            batch_size: 32,
            epochs: 500,
            layer_kind: LayerKind::Gin,
            num_layers: 3,
            hidden_dim: 32,
            gat_heads: 1,
            dropout: 0.1,
            pooling: Pooling::Sum,
            readout_layers: 1,
            id_mode: IdMode::Rni,
            id_dim: 8,
            id_dist: IdDistribution::Uniform,
            icon: IconConfig::default(),
            seeds: vec![0, 1, 2],
            eval_every: 1,
            invariance_k: 200,
            invariance_every: 0,
            invariance_splits: Vec::new(),
            eval_seed: 12_345,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.num_layers == 0 || self.hidden_dim == 0 {
            return bad("batch_size, eval_every, num_layers and hidden_dim must be >= 1".into());
        }
        if self.icon.enabled && self.id_mode != IdMode::Rni {
            return bad("ICON needs id_mode = rni".into());
        }
        if self.id_mode == IdMode::Rni && self.id_dim == 0 {
            return bad("id_mode = rni needs id_dim >= 1".into());
        }
        Ok(())
    }

    /// `"icon"` for regularized runs, otherwise the identifier mode.
    pub fn method(&self) -> &'static str {
        match (self.icon.enabled, self.id_mode) {
            (true, _) => "icon",
            (false, IdMode::Rni) => "rni",
            (false, IdMode::Constant) => "constant",
            (false, IdMode::None) => "none",
        }
    }

    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        let pooling = match dataset.task_kind {
            TaskKind::GraphClassification => self.pooling,
            TaskKind::NodeClassification => Pooling::None,
        };
        let mut cfg = ModelConfig::stack(
            self.layer_kind,
            dataset.feature_dim(),
            self.id_mode,
            self.id_dim,
            self.hidden_dim,
            self.num_layers,
            pooling,
            dataset.num_classes,
        );
        cfg.id_dist = self.id_dist;
        cfg.readout.num_linear = self.readout_layers;
        for layer in &mut cfg.layers {
            layer.gat_heads = self.gat_heads;
        }
        cfg.set_dropout(self.dropout);
        cfg
    }
}

/// A named set of graphs to evaluate on.
#[derive(Clone, Debug)]
pub struct EvalSet<'a> {
    pub name: String,
    pub graphs: Vec<&'a Graph>,
}

impl<'a> EvalSet<'a> {
    pub fn from_split(dataset: &'a Dataset, split: SplitName) -> Self {
        EvalSet {
            name: split.as_str().to_string(),
            graphs: dataset.split_graphs(split),
        }
    }

    pub fn whole(name: &str, dataset: &'a Dataset) -> Self {
        EvalSet {
            name: name.to_string(),
            graphs: dataset.graphs.iter().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

/// Accuracy over every supervised item. Example `i` gets identifiers from
/// the stream `(eval_seed, i)`, fixed across calls.
pub fn evaluate<M: IdClassifier + ?Sized>(model: &M, graphs: &[&Graph], eval_seed: u64) -> Result<EvalMetrics> {
    let graphs: Vec<&Graph> = graphs.iter().copied().filter(|g| !item_labels(g).is_empty()).collect();
    if graphs.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    let draws = graphs
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(eval_seed, i as u64));
            sample_ids(g.num_nodes, model.id_dim(), model.id_dist(), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let preds = model.predict_batch(&graphs, &draws)?;
    let mut correct = 0;
    let mut total = 0;
    for (g, p) in graphs.iter().zip(&preds) {
        let labels = item_labels(g);
        if labels.len() != p.len() {
            return Err(Error::Internal("prediction count differs from label count".into()));
        }
        correct += labels.iter().zip(p).filter(|(y, q)| y == q).count();
        total += labels.len();
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / total as f64,
        correct,
        total,
    })
}

pub fn evaluate_split<M: IdClassifier + ?Sized>(model: &M, dataset: &Dataset, split: SplitName, eval_seed: u64) -> Result<EvalMetrics> {
    evaluate(model, &dataset.split_graphs(split), eval_seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    pub accuracy: f64,
    pub invariance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub reg: f64,
    /// Empty on epochs without evaluation.
    pub metrics: Vec<SplitMetrics>,
}

impl EpochRecord {
    pub fn accuracy(&self, split: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.split == split).map(|m| m.accuracy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { epoch: usize, step: usize, reason: String },
}

/// Picks the best epoch from validation scores and records every split it
/// was shown.
#[derive(Clone, Debug, Default)]
pub struct ModelSelector {
    best: Option<(usize, f64)>,
    access_log: Vec<String>,
}

impl ModelSelector {
    /// Returns whether `epoch` is the new best. Ties keep the earlier epoch.
    pub fn observe(&mut self, epoch: usize, split: &str, score: f64) -> bool {
        self.access_log.push(split.to_string());
        match self.best {
            Some((_, best)) if score <= best => false,
            _ => {
                self.best = Some((epoch, score));
                true
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn access_log(&self) -> &[String] {
        &self.access_log
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub steps_per_epoch: usize,
    pub total_steps: usize,
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    /// Splits whose metrics were fed to model selection, in order.
    pub selection_log: Vec<String>,
    /// Metrics of the selected model.
    pub final_metrics: Vec<SplitMetrics>,
    pub status: RunStatus,
    #[serde(skip)]
    pub model: Model,
}

impl SeedRun {
    pub fn final_metric(&self, split: &str) -> Option<&SplitMetrics> {
        self.final_metrics.iter().find(|m| m.split == split)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub split: String,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub invariance_mean: Option<f64>,
    pub invariance_std: Option<f64>,
    /// Completed seeds contributing.
    pub n: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub dataset: String,
    pub config: TrainConfig,
    pub runs: Vec<SeedRun>,
    pub summary: Vec<Aggregate>,
}

impl RunRecord {
    pub fn aggregate(&self, split: &str) -> Option<&Aggregate> {
        self.summary.iter().find(|a| a.split == split)
    }
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarize(runs: &[SeedRun]) -> Vec<Aggregate> {
    let done: Vec<&SeedRun> = runs.iter().filter(|r| r.status == RunStatus::Completed).collect();
    let Some(first) = done.first() else {
        return Vec::new();
    };
    first
        .final_metrics
        .iter()
        .map(|m| {
            let acc: Vec<f64> = done.iter().filter_map(|r| r.final_metric(&m.split)).map(|x| x.accuracy).collect();
            let inv: Vec<f64> = done
                .iter()
                .filter_map(|r| r.final_metric(&m.split).and_then(|x| x.invariance))
                .collect();
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (invariance_mean, invariance_std) = if inv.len() == acc.len() {
                let (a, b) = mean_std(&inv);
                (Some(a), Some(b))
            } else {
                (None, None)
            };
            Aggregate {
                split: m.split.clone(),
                accuracy_mean,
                accuracy_std,
                invariance_mean,
                invariance_std,
                n: acc.len(),
            }
        })
        .collect()
}

/// Trains on the dataset's own splits.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<RunRecord> {
    train_with(dataset, "dataset", &[], cfg)
}

/// Trains one model per seed. Metrics are reported for the dataset's
/// non-empty splits followed by `extra` sets.
pub fn train_with(dataset: &Dataset, name: &str, extra: &[EvalSet<'_>], cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let mut sets: Vec<EvalSet<'_>> = [SplitName::Train, SplitName::Valid, SplitName::Test]
        .into_iter()
        .map(|s| EvalSet::from_split(dataset, s))
        .filter(|s| s.graphs.iter().any(|g| !item_labels(g).is_empty()))
        .collect();
    sets.extend(extra.iter().cloned());

    let runs = if cfg.jobs <= 1 || cfg.seeds.len() == 1 {
        cfg.seeds
            .iter()
            .map(|&seed| train_seed(dataset, &sets, cfg, seed))
            .collect::<Result<Vec<_>>>()?
    } else {
        let mut runs = Vec::with_capacity(cfg.seeds.len());
        for chunk in cfg.seeds.chunks(cfg.jobs) {
            let results: Vec<Result<SeedRun>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&seed| {
                        let sets = &sets;
                        scope.spawn(move || train_seed(dataset, sets, cfg, seed))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Internal("training worker panicked".into()))))
                    .collect()
            });
            for r in results {
                runs.push(r?);
            }
        }
        runs
    };
    Ok(RunRecord {
        dataset: name.to_string(),
        config: cfg.clone(),
        summary: summarize(&runs),
        runs,
    })
}

fn wants_invariance(cfg: &TrainConfig, split: &str) -> bool {
    cfg.invariance_k > 0 && (cfg.invariance_splits.is_empty() || cfg.invariance_splits.iter().any(|s| s == split))
}

fn measure(model: &Model, sets: &[EvalSet<'_>], cfg: &TrainConfig, with_invariance: bool) -> Result<Vec<SplitMetrics>> {
    sets.iter()
        .map(|set| {
            let accuracy = evaluate(model, &set.graphs, cfg.eval_seed)?.accuracy;
            let invariance = if with_invariance && wants_invariance(cfg, &set.name) {
                Some(invariance_report(model, &set.graphs, cfg.invariance_k, &set.name, cfg.eval_seed)?.mean)
            } else {
                None
            };
            Ok(SplitMetrics {
                split: set.name.clone(),
                accuracy,
                invariance,
            })
        })
        .collect()
}

fn train_seed(dataset: &Dataset, sets: &[EvalSet<'_>], cfg: &TrainConfig, seed: u64) -> Result<SeedRun> {
    let mut model = Model::new(cfg.model_config(dataset), &mut ChaCha8Rng::seed_from_u64(salted(seed, "init", 0)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(salted(seed, "train", 0));
    let mut examples: Vec<usize> = dataset
        .split
        .train
        .iter()
        .copied()
        .filter(|&i| !item_labels(&dataset.graphs[i]).is_empty())
        .collect();
    if examples.is_empty() {
        return Err(Error::Contract("training split has no supervised examples".into()));
    }
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &model.params);
    let mut selector = ModelSelector::default();
    let mut best_params: Option<Vec<Tensor>> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut total_steps = 0;
    let mut status = RunStatus::Completed;

    'outer: for epoch in 1..=cfg.epochs {
        examples.shuffle(&mut rng);
        let (mut loss_sum, mut reg_sum) = (0.0, 0.0);
        for (step, chunk) in examples.chunks(cfg.batch_size).enumerate() {
            let graphs: Vec<&Graph> = chunk.iter().map(|&i| &dataset.graphs[i]).collect();
            let batch = make_batch(&graphs)?;
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let (loss, reg) = if cfg.icon.enabled {
                let (loss, parts) = icon_step_loss(&bound, &batch, &cfg.icon, true, &mut rng)?;
                (loss, parts.reg)
            } else {
                (rni_step_loss(&bound, &batch, true, &mut rng)?, 0.0)
            };
            let value = loss.item();
            if !value.is_finite() {
                status = RunStatus::Aborted {
                    epoch,
                    step,
                    reason: Error::NonFiniteLoss { epoch, step }.to_string(),
                };
                break 'outer;
            }
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = bound.params().iter().map(|&p| grads.get_or_zeros(p)).collect();
            drop(bound);
            optimizer.step(&mut model.params, &grads)?;
            loss_sum += value;
            reg_sum += reg;
            total_steps += 1;
        }
        let mut record = EpochRecord {
            epoch,
            loss: loss_sum / steps_per_epoch as f64,
            reg: reg_sum / steps_per_epoch as f64,
            metrics: Vec::new(),
        };
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let with_inv = cfg.invariance_every > 0 && epoch % cfg.invariance_every == 0;
            record.metrics = measure(&model, sets, cfg, with_inv)?;
            if let Some(valid) = record.metrics.iter().find(|m| m.split == SplitName::Valid.as_str()) {
                if selector.observe(epoch, &valid.split, valid.accuracy) {
                    best_params = Some(model.params.clone());
                }
            }
        }
        epochs.push(record);
    }

    let last_epoch = epochs.last().map_or(0, |e| e.epoch);
    let selected_epoch = selector.best_epoch().unwrap_or(last_epoch);
    if let Some(params) = best_params {
        model.params = params;
    }
    let final_metrics = if status == RunStatus::Completed {
        measure(&model, sets, cfg, true)?
    } else {
        Vec::new()
    };
    Ok(SeedRun {
        seed,
        steps_per_epoch,
        total_steps,
        epochs,
        selected_epoch,
        selection_log: selector.access_log().to_vec(),
        final_metrics,
        status,
        model,
    })
}

/// One cell of the hyperparameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub batch_size: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
}

/// Learning rate {1e-3, 5e-4} x batch {32, 64} x layers {3, 5} x hidden {32, 64}.
pub fn default_grid() -> Vec<GridPoint> {
    let mut cells = Vec::with_capacity(16);
    for lr in [1e-3, 5e-4] {
        for batch_size in [32, 64] {
            for num_layers in [3, 5] {
                for hidden_dim in [32, 64] {
                    cells.push(GridPoint {
                        lr,
                        batch_size,
                        num_layers,
                        hidden_dim,
                    });
                }
            }
        }
    }
    cells
}

pub struct GridResult {
    pub cells: Vec<(GridPoint, RunRecord)>,
    /// Index of the cell with the best mean validation accuracy.
    pub best: usize,
}

/// Trains every cell and selects by mean validation accuracy (ties: first).
pub fn grid_search(dataset: &Dataset, name: &str, extra: &[EvalSet<'_>], base: &TrainConfig, grid: &[GridPoint]) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Contract("empty grid".into()));
    }
    let mut cells = Vec::with_capacity(grid.len());
    let mut best = (0, f64::NEG_INFINITY);
    for (i, point) in grid.iter().enumerate() {
        let cfg = TrainConfig {
            lr: point.lr,
            batch_size: point.batch_size,
            num_layers: point.num_layers,
            hidden_dim: point.hidden_dim,
            ..base.clone()
        };
        let record = train_with(dataset, name, extra, &cfg)?;
        let score = record.aggregate(SplitName::Valid.as_str()).map_or(f64::NEG_INFINITY, |a| a.accuracy_mean);
        if score > best.1 {
            best = (i, score);
        }
        cells.push((*point, record));
    }
    Ok(GridResult { cells, best: best.0 })
}
