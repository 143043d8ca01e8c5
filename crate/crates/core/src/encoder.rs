//! Trainable scalar-to-hypervector encoder.
//!
//! Each parameter is min-max scaled with training-set extrema, mapped to
//! `[-1, 1]`, multiplied into its own embedding `e_j ∈ R^d`, projected
//! through the fixed basis and squashed with tanh.

use log::warn;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::DatasetTable;
use crate::error::{Error, Result};
use crate::hdc::{Hypervector, RandomBasis};
use crate::kernel;
use crate::rng::{self, Stream};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Per-parameter training-set extrema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub epsilon: f64,
}

impl ScalerStats {
    /// Extrema over `train_idx` only.
    pub fn fit(table: &DatasetTable, train_idx: &[usize], epsilon: f64) -> Result<Self> {
        if train_idx.is_empty() {
            return Err(Error::EmptyTrainSet);
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
        }
        let p = table.n_params();
        let mut min = vec![f64::INFINITY; p];
        let mut max = vec![f64::NEG_INFINITY; p];
        for &i in train_idx {
            for (j, &x) in table.row(i).iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        for j in 0..p {
            if min[j] == max[j] {
                warn!(
                    "parameter '{}' is constant on the training rows; every value scales to -1",
                    table.param_names()[j]
                );
            }
        }
        Ok(ScalerStats { min, max, epsilon })
    }

    pub fn n_params(&self) -> usize {
        self.min.len()
    }

    /// Signed scaled value `2·clip(x̂) − 1` for parameter `j`.
    pub fn scale(&self, j: usize, x: f64) -> f64 {
        scale(x, self.min[j], self.max[j], self.epsilon)
    }

    pub fn scale_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| self.scale(j, x))
            .collect()
    }
}

/// `x̂ = (x − min)/(max − min + ε)`, `x̃ = 2·clip₀₁(x̂) − 1`.
pub fn scale(x: f64, min: f64, max: f64, epsilon: f64) -> f64 {
    let hat = (x - min) / (max - min + epsilon);
    2.0 * hat.clamp(0.0, 1.0) - 1.0
}

/// Trainable embeddings, one `d`-vector per parameter, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub n_params: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EmbeddingSet {
    /// i.i.d. `N(0, 1/d)` entries from the embedding stream of `seed`.
    pub fn init(seed: u64, n_params: usize, dim: usize) -> Self {
        let mut rng = rng::stream(seed, Stream::Embeddings);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive std");
        let values = (0..n_params * dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        EmbeddingSet {
            n_params,
            dim,
            values,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            if r.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Ok(EmbeddingSet {
            n_params: rows.len(),
            dim,
            values,
        })
    }

    pub fn get(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Embeddings pushed through the basis once: `u_j = e_jᵀB`, so that
/// `h_{ij} = tanh(x̃_{ij} u_j)`.
#[derive(Debug, Clone)]
pub struct ProjectedEmbeddings {
    pub dim: usize,
    values: Vec<f64>,
    peaks: Vec<f64>,
}

impl ProjectedEmbeddings {
    pub fn new(embeddings: &EmbeddingSet, basis: &RandomBasis) -> Self {
        assert_eq!(embeddings.dim, basis.rows(), "embedding dim vs basis rows");
        let dim = basis.dim();
        let mut values = vec![0.0; embeddings.n_params * dim];
        for (j, out) in values.chunks_mut(dim).enumerate() {
            basis.project_into(embeddings.get(j), out);
        }
        let peaks = values.chunks(dim.max(1)).map(kernel::abs_max).collect();
        ProjectedEmbeddings { dim, values, peaks }
    }

    pub fn get(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// `max_t |u_j[t]|`.
    pub fn peak(&self, j: usize) -> f64 {
        self.peaks[j]
    }
}

/// `tanh((x̃ e_j)ᵀB)` into `out`.
pub fn encode_projected(scaled: f64, projected: &[f64], out: &mut [f64]) {
    kernel::tanh_scaled(scaled, projected, out);
}

/// Parameter hypervector for one scaled scalar.
pub fn encode_parameter(
    scaled: f64,
    embedding: &[f64],
    basis: &RandomBasis,
) -> Result<Hypervector> {
    if embedding.len() != basis.rows() {
        return Err(Error::Dimension {
            expected: basis.rows(),
            actual: embedding.len(),
        });
    }
    let mut projected = vec![0.0; basis.dim()];
    basis.project_into(embedding, &mut projected);
    let mut out = vec![0.0; basis.dim()];
    encode_projected(scaled, &projected, &mut out);
    Ok(Hypervector::new(out))
}
