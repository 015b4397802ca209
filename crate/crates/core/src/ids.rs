//! Random node identifiers and assembly of the model input `[X ‖ I]`.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdMode {
    /// Input features only (a constant 1 column for featureless graphs).
    None,
    /// A constant 1 column in place of identifiers.
    #[default]
    Constant,
    /// Random node identifiers.
    Rni,
}

impl IdMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(IdMode::None),
            "constant" => Some(IdMode::Constant),
            "rni" => Some(IdMode::Rni),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdDistribution {
    /// Uniform on `[0, 1)`.
    #[default]
    Uniform,
    /// Standard normal.
    Normal,
}

const MAX_COLLISION_RETRIES: usize = 3;

/// An `n x r` matrix of per-node identifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct IdAssignment {
    pub values: Tensor,
    pub dist: IdDistribution,
}

impl IdAssignment {
    /// Wraps an explicit identifier matrix (rows must be pairwise distinct).
    pub fn from_tensor(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::shape("ids", values.shape(), &[]));
        }
        if !rows_distinct(&values) {
            return Err(Error::Contract("identifier rows are not unique".into()));
        }
        Ok(IdAssignment {
            values,
            dist: IdDistribution::Uniform,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

fn rows_distinct(t: &Tensor) -> bool {
    let mut seen = HashSet::with_capacity(t.rows());
    (0..t.rows()).all(|r| seen.insert(t.row(r).iter().map(|x| x.to_bits()).collect::<Vec<u64>>()))
}

/// Draws an `n x r` identifier matrix with pairwise-distinct rows.
pub fn sample_ids<R: Rng + ?Sized>(n: usize, r: usize, dist: IdDistribution, rng: &mut R) -> Result<IdAssignment> {
    if n == 0 || r == 0 {
        return Err(Error::Contract(format!("sample_ids needs n >= 1 and r >= 1, got n={n}, r={r}")));
    }
    for _ in 0..=MAX_COLLISION_RETRIES {
        let data: Vec<f64> = match dist {
            IdDistribution::Uniform => (0..n * r).map(|_| rng.gen::<f64>()).collect(),
            IdDistribution::Normal => (0..n * r).map(|_| StandardNormal.sample(rng)).collect(),
        };
        let values = Tensor::matrix(n, r, data)?;
        if rows_distinct(&values) {
            return Ok(IdAssignment { values, dist });
        }
    }
    Err(Error::Internal(format!(
        "identifier rows collided {} times in a row; the RNG stream is broken",
        MAX_COLLISION_RETRIES + 1
    )))
}

/// Width of the assembled input for a given feature width.
pub fn input_dim(feature_dim: Option<usize>, mode: IdMode, id_dim: usize) -> usize {
    let base = feature_dim.unwrap_or(1);
    match (mode, feature_dim) {
        (IdMode::None, _) | (IdMode::Constant, None) => base,
        (IdMode::Constant, Some(_)) => base + 1,
        (IdMode::Rni, _) => base + id_dim,
    }
}

/// Builds `H0`. Column order is always features first, then identifiers.
pub fn assemble_input(features: Option<&Tensor>, num_nodes: usize, ids: Option<&IdAssignment>, mode: IdMode) -> Result<Tensor> {
    let x = match features {
        Some(f) => {
            if f.rows() != num_nodes {
                return Err(Error::shape("assemble_input", f.shape(), &[num_nodes]));
            }
            f.clone()
        }
        None => Tensor::full(&[num_nodes, 1], 1.0),
    };
    let extra = match mode {
        IdMode::None => None,
        IdMode::Constant => features.map(|_| Tensor::full(&[num_nodes, 1], 1.0)),
        IdMode::Rni => {
            let ids = ids.ok_or_else(|| Error::Contract("id_mode=rni requires an identifier assignment".into()))?;
            if ids.num_nodes() != num_nodes {
                return Err(Error::shape("assemble_input", &[num_nodes], ids.values.shape()));
            }
            Some(ids.values.clone())
        }
    };
    match extra {
        None => Ok(x),
        Some(e) => {
            let (d, r) = (x.cols(), e.cols());
            let mut data = Vec::with_capacity(num_nodes * (d + r));
            for row in 0..num_nodes {
                data.extend_from_slice(x.row(row));
                data.extend_from_slice(e.row(row));
            }
            Tensor::matrix(num_nodes, d + r, data)
        }
    }
}
