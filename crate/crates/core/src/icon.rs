//! Training objectives: the plain random-identifier loss and the ICON loss,
//! which adds a penalty on the difference between final node embeddings
//! computed under two independent identifier draws.

use std::rc::Rc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBatch, Targets};
use crate::ids::{sample_ids, IdAssignment, IdMode};
use crate::layers::{BoundModel, ForwardOutput};
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLossSource {
    /// Task loss from the first forward pass only.
    #[default]
    First,
    /// Mean of the task losses of both passes.
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IconConfig {
    pub enabled: bool,
    pub lambda_reg: f64,
    pub task_loss_source: TaskLossSource,
}

impl Default for IconConfig {
    fn default() -> Self {
        IconConfig {
            enabled: false,
            lambda_reg: 1.0,
            task_loss_source: TaskLossSource::First,
        }
    }
}

impl IconConfig {
    pub fn enabled(lambda_reg: f64) -> Self {
        IconConfig {
            enabled: true,
            lambda_reg,
            ..IconConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub task: f64,
    pub reg: f64,
    pub total: f64,
}

/// Mean cross-entropy over the batch's supervised graphs or nodes.
pub fn task_loss<'t>(logits: Var<'t>, batch: &GraphBatch) -> Result<Var<'t>> {
    let (rows, labels): (Rc<[usize]>, Rc<[usize]>) = match &batch.targets {
        Targets::Graph { graphs, labels } => (graphs.as_slice().into(), labels.as_slice().into()),
        Targets::Node { nodes, labels } => (nodes.as_slice().into(), labels.as_slice().into()),
    };
    if labels.is_empty() {
        return Err(Error::Contract("batch has no supervised targets".into()));
    }
    logits.gather_rows(rows)?.cross_entropy(labels)
}

fn sample_batch_ids(bound: &BoundModel<'_>, batch: &GraphBatch, rng: &mut dyn RngCore) -> Result<Option<IdAssignment>> {
    let cfg = bound.config();
    match cfg.id_mode {
        IdMode::Rni => Ok(Some(sample_ids(batch.num_nodes, cfg.id_dim, cfg.id_dist, rng)?)),
        IdMode::None | IdMode::Constant => Ok(None),
    }
}

/// Single forward with fresh identifiers (or none, for the constant/none
/// baselines) and the plain task loss.
pub fn rni_step_loss<'t>(bound: &BoundModel<'t>, batch: &GraphBatch, train: bool, rng: &mut dyn RngCore) -> Result<Var<'t>> {
    let ids = sample_batch_ids(bound, batch, rng)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let out = bound.forward(batch, ids.as_ref(), train, &mut dropout_rng)?;
    task_loss(out.logits, batch)
}

/// ICON loss with fresh identifier draws `R1`, `R2` from `rng`.
///
/// Draw order is `R1`, dropout seed, `R2`, so with `lambda_reg = 0` and
/// [`TaskLossSource::First`] the result matches [`rni_step_loss`] on an
/// identically seeded stream.
pub fn icon_step_loss<'t>(
    bound: &BoundModel<'t>,
    batch: &GraphBatch,
    cfg: &IconConfig,
    train: bool,
    rng: &mut dyn RngCore,
) -> Result<(Var<'t>, LossParts)> {
    if !cfg.enabled {
        return Err(Error::Contract("icon_step_loss called with ICON disabled".into()));
    }
    if bound.config().id_mode != IdMode::Rni {
        return Err(Error::Contract("ICON needs a model that consumes random identifiers".into()));
    }
    let r1 = sample_batch_ids(bound, batch, rng)?.expect("rni mode");
    let dropout_seed = rng.next_u64();
    let r2 = sample_batch_ids(bound, batch, rng)?.expect("rni mode");
    icon_loss_with_ids(bound, batch, cfg, &r1, &r2, train, dropout_seed)
}

/// ICON loss for explicit identifier assignments. Both passes share the
/// dropout masks, so the penalty only reflects identifier sensitivity.
pub fn icon_loss_with_ids<'t>(
    bound: &BoundModel<'t>,
    batch: &GraphBatch,
    cfg: &IconConfig,
    r1: &IdAssignment,
    r2: &IdAssignment,
    train: bool,
    dropout_seed: u64,
) -> Result<(Var<'t>, LossParts)> {
    if cfg.lambda_reg < 0.0 {
        return Err(Error::Contract(format!("lambda_reg = {} < 0", cfg.lambda_reg)));
    }
    let pass = |ids: &IdAssignment| -> Result<ForwardOutput<'t>> {
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        bound.forward(batch, Some(ids), train, &mut dropout_rng)
    };
    let first = pass(r1)?;
    let second = pass(r2)?;
    if first.h_final.shape() != second.h_final.shape() {
        return Err(Error::Internal("embedding shapes differ between the two passes".into()));
    }
    let task1 = task_loss(first.logits, batch)?;
    let task = match cfg.task_loss_source {
        TaskLossSource::First => task1,
        TaskLossSource::Average => task1.add(task_loss(second.logits, batch)?)?.scale(0.5),
    };
    let reg = first
        .h_final
        .sq_frobenius_diff(second.h_final)?
        .scale(1.0 / batch.num_graphs.max(1) as f64);
    let total = task.add(reg.scale(cfg.lambda_reg))?;
    let parts = LossParts {
        task: task.item(),
        reg: reg.item(),
        total: total.item(),
    };
    Ok((total, parts))
}
