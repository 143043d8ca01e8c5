//! Full-batch training of the parameter embeddings.
//!
//! Each epoch encodes every training row, rebuilds the class prototypes from
//! those encodings, scores rows by cosine similarity to the prototypes and
//! minimizes softmax cross-entropy. Gradients are propagated by hand through
//! the prototype construction, the graph composition and the encoder down to
//! the embeddings, which Adam then updates. The basis never changes.

mod adam;
mod checkpoint;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{BasisRef, Checkpoint, CHECKPOINT_VERSION};

use std::collections::BTreeSet;
use std::io::Write;
use std::ops::AddAssign;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{format_float, DatasetTable};
use crate::encoder::{EmbeddingSet, ProjectedEmbeddings, ScalerStats, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::hdc::{cosine, normalize_in_place, Hypervector, RandomBasis};
use crate::kernel;
use crate::memory::{argmax, retrieve, ComponentMemoryBank, PrototypeMemory, Retrieval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Hypervector dimension `D`.
    pub dim: usize,
    /// Embedding dimension `d`.
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Scaler denominator guard.
    pub epsilon: f64,
    /// Attribution temperature.
    pub beta: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 5000,
            embed_dim: 32,
            learning_rate: 1e-3,
            epochs: 300,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            beta: 1.0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 1 || self.dim < self.embed_dim {
            return Err(Error::Config(format!(
                "need D >= d >= 1, got D = {} and d = {}",
                self.dim, self.embed_dim
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        self.adam.validate()
    }
}

/// Counts of zero-norm intermediates met during a pass. Each one took the
/// zero-Jacobian convention in the backward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degeneracy {
    pub zero_groups: usize,
    pub zero_samples: usize,
    pub zero_prototypes: usize,
    pub degenerate_logits: usize,
}

impl Degeneracy {
    pub fn total(&self) -> usize {
        self.zero_groups + self.zero_samples + self.zero_prototypes + self.degenerate_logits
    }
}

impl AddAssign for Degeneracy {
    fn add_assign(&mut self, o: Self) {
        self.zero_groups += o.zero_groups;
        self.zero_samples += o.zero_samples;
        self.zero_prototypes += o.zero_prototypes;
        self.degenerate_logits += o.degenerate_logits;
    }
}

/// Scaled inputs for a run. `rows` covers the whole table; only the rows
/// named by the split are read.
#[derive(Debug, Clone)]
pub struct ScaledData {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub scaler: ScalerStats,
}

impl ScaledData {
    /// Fits the scaler on `train_idx` and scales every row.
    pub fn fit(table: &DatasetTable, train_idx: &[usize], epsilon: f64) -> Result<Self> {
        let labels = table.require_labels()?.to_vec();
        let scaler = ScalerStats::fit(table, train_idx, epsilon)?;
        let rows = (0..table.n_rows())
            .map(|i| scaler.scale_row(table.row(i)))
            .collect();
        Ok(ScaledData {
            rows,
            labels,
            n_classes: table.n_classes(),
            scaler,
        })
    }
}

/// Encoding of one row at every stage of the composition.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub params: Vec<Hypervector>,
    /// Normalized group vectors before binding.
    pub groups: Vec<Hypervector>,
    pub sample: Hypervector,
}

/// Writes group and sample vectors of one scaled row into flat buffers and
/// returns the pre-normalization norm of the sample. Parameter vectors are
/// kept only when `params` is given.
#[allow(clippy::too_many_arguments)]
fn encode_into(
    x: &[f64],
    proj: &ProjectedEmbeddings,
    spec: &GraphSpec,
    preds: &[Vec<usize>],
    mut params: Option<&mut [f64]>,
    groups: &mut [f64],
    group_norms: &mut [f64],
    bound: &mut [f64],
    sample: &mut [f64],
) -> f64 {
    let dim = proj.dim;
    for (k, group) in spec.groups.iter().enumerate() {
        let g = &mut groups[k * dim..(k + 1) * dim];
        g.fill(0.0);
        for &j in &group.params {
            match params.as_deref_mut() {
                Some(ps) => {
                    let h = &mut ps[j * dim..(j + 1) * dim];
                    kernel::tanh_scaled_bounded(x[j], proj.get(j), proj.peak(j), h);
                    kernel::add_assign(g, h);
                }
                None => kernel::tanh_scaled_accumulate(x[j], proj.get(j), proj.peak(j), g),
            }
        }
        group_norms[k] = normalize_in_place(g);
    }
    sample.fill(0.0);
    for (k, pk) in preds.iter().enumerate() {
        let nk = &groups[k * dim..(k + 1) * dim];
        if pk.is_empty() {
            kernel::add_assign(sample, nk);
        } else {
            bound.copy_from_slice(nk);
            for &u in pk {
                kernel::mul_assign(bound, &groups[u * dim..(u + 1) * dim]);
            }
            kernel::add_assign(sample, bound);
        }
    }
    normalize_in_place(sample)
}

/// `out = (dy − y (y·dy)) / ‖v‖` where `y = v/‖v‖`; zero when `‖v‖ = 0`.
fn normalize_backward(y: &[f64], norm: f64, dy: &[f64], out: &mut [f64]) {
    if norm == 0.0 {
        out.fill(0.0);
        return;
    }
    let proj = kernel::dot(y, dy);
    let inv = 1.0 / norm;
    for ((o, &a), &b) in out.iter_mut().zip(y).zip(dy) {
        *o = (b - a * proj) * inv;
    }
}

/// Everything the forward pass computes over the training rows.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub loss: f64,
    /// `z[i][c] = sim(h_i, m_c)`, rows in `train_idx` order.
    pub logits: Vec<Vec<f64>>,
    pub probabilities: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
    pub train_accuracy: f64,
    pub memory: PrototypeMemory,
    pub degeneracy: Degeneracy,
    dim: usize,
    projected: Option<ProjectedEmbeddings>,
    groups: Vec<f64>,
    group_norms: Vec<f64>,
    samples: Vec<f64>,
    sample_norms: Vec<f64>,
    proto_norms: Vec<f64>,
    logit_degenerate: Vec<bool>,
}

impl ForwardPass {
    fn empty(n: usize, k: usize, c: usize, dim: usize) -> Self {
        ForwardPass {
            loss: f64::NAN,
            logits: vec![vec![0.0; c]; n],
            probabilities: vec![vec![0.0; c]; n],
            predictions: vec![0; n],
            train_accuracy: 0.0,
            memory: PrototypeMemory {
                prototypes: vec![Hypervector::zeros(dim); c],
                class_counts: vec![0; c],
            },
            degeneracy: Degeneracy::default(),
            dim,
            projected: None,
            groups: vec![0.0; n * k * dim],
            group_norms: vec![0.0; n * k],
            samples: vec![0.0; n * dim],
            sample_norms: vec![0.0; n],
            proto_norms: vec![0.0; c],
            logit_degenerate: vec![false; n * c],
        }
    }

    /// Sample hypervector of the `i`-th training row (in `train_idx` order).
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn n_rows(&self) -> usize {
        self.sample_norms.len()
    }
}

/// Embedding gradient, row-major `P × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    pub degeneracy: Degeneracy,
}

/// One row of the training history. Row `t` describes the model after `t`
/// updates; `rho_bar` compares its prototypes with those of row `t − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub rho_bar: Option<f64>,
}

/// Model snapshot at an epoch boundary.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: TrainConfig,
    pub basis: Arc<RandomBasis>,
    pub embeddings: EmbeddingSet,
    pub scaler: ScalerStats,
    pub spec: GraphSpec,
    pub memory: PrototypeMemory,
    pub epoch: usize,
    pub train_idx: Vec<usize>,
}

impl ModelState {
    pub fn projected(&self) -> ProjectedEmbeddings {
        ProjectedEmbeddings::new(&self.embeddings, &self.basis)
    }

    /// Encodes raw rows with this state's scaler and embeddings.
    pub fn encode_rows(&self, table: &DatasetTable, rows: &[usize]) -> Vec<Encoding> {
        let proj = self.projected();
        let preds: Vec<Vec<usize>> = (0..self.spec.n_groups())
            .map(|k| self.spec.predecessors(k))
            .collect();
        let (p, k, dim) = (
            self.scaler.n_params(),
            self.spec.n_groups(),
            self.basis.dim(),
        );
        let mut params = vec![0.0; p * dim];
        let mut groups = vec![0.0; k * dim];
        let mut norms = vec![0.0; k];
        let mut bound = vec![0.0; dim];
        let mut sample = vec![0.0; dim];
        rows.iter()
            .map(|&i| {
                let x = self.scaler.scale_row(table.row(i));
                encode_into(
                    &x,
                    &proj,
                    &self.spec,
                    &preds,
                    Some(&mut params),
                    &mut groups,
                    &mut norms,
                    &mut bound,
                    &mut sample,
                );
                Encoding {
                    params: params
                        .chunks(dim)
                        .map(|c| Hypervector::new(c.to_vec()))
                        .collect(),
                    groups: groups
                        .chunks(dim)
                        .map(|c| Hypervector::new(c.to_vec()))
                        .collect(),
                    sample: Hypervector::new(sample.clone()),
                }
            })
            .collect()
    }

    /// Sample hypervectors for `rows`.
    pub fn sample_hvs(&self, table: &DatasetTable, rows: &[usize]) -> Vec<Hypervector> {
        self.encode_rows(table, rows)
            .into_iter()
            .map(|e| e.sample)
            .collect()
    }

    pub fn predict(&self, table: &DatasetTable, rows: &[usize]) -> Vec<Retrieval> {
        self.sample_hvs(table, rows)
            .iter()
            .map(|h| retrieve(h, &self.memory))
            .collect()
    }

    /// Class-partitioned parameter and group memories over the training rows.
    pub fn component_bank(&self, table: &DatasetTable) -> Result<ComponentMemoryBank> {
        let labels = table.require_labels()?;
        let all: Vec<usize> = (0..table.n_rows()).collect();
        let enc = self.encode_rows(table, &all);
        let params: Vec<Vec<Hypervector>> = enc.iter().map(|e| e.params.clone()).collect();
        let groups: Vec<Vec<Hypervector>> = enc.into_iter().map(|e| e.groups).collect();
        ComponentMemoryBank::build(
            &params,
            &groups,
            labels,
            &self.train_idx,
            self.memory.n_classes(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: ModelState,
    pub final_state: ModelState,
    pub history: Vec<EpochRecord>,
    /// Summed over every forward and backward pass of the run.
    pub degeneracy: Degeneracy,
}

/// Fixed inputs of one run plus buffers reused across epochs.
#[derive(Debug)]
pub struct Trainer {
    config: TrainConfig,
    basis: Arc<RandomBasis>,
    spec: GraphSpec,
    preds: Vec<Vec<usize>>,
    scaler: ScalerStats,
    n_params: usize,
    n_classes: usize,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
    train_x: Vec<f64>,
    train_y: Vec<usize>,
    test_x: Vec<f64>,
    test_y: Vec<usize>,
    /// Epochs at which held-out accuracy is recorded; `None` means all.
    test_epochs: Option<BTreeSet<usize>>,
    pass: ForwardPass,
}

impl Trainer {
    /// Fits the scaler on the training rows and draws the basis from
    /// `config.seed`.
    pub fn new(
        table: &DatasetTable,
        train_idx: &[usize],
        test_idx: &[usize],
        spec: &GraphSpec,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let data = ScaledData::fit(table, train_idx, config.epsilon)?;
        let basis = RandomBasis::generate(config.seed, config.embed_dim, config.dim);
        Self::from_scaled(data, train_idx, test_idx, spec, Arc::new(basis), config)
    }

    /// Builds a trainer from already scaled rows and an explicit basis.
    pub fn from_scaled(
        data: ScaledData,
        train_idx: &[usize],
        test_idx: &[usize],
        spec: &GraphSpec,
        basis: Arc<RandomBasis>,
        config: &TrainConfig,
    ) -> Result<Self> {
        if train_idx.is_empty() {
            return Err(Error::EmptyTrainSet);
        }
        let n_params = data.scaler.n_params();
        spec.validate(n_params, false).map_err(Error::Graph)?;
        if data.n_classes < 2 {
            return Err(Error::Config(format!(
                "training needs at least 2 classes, got {}",
                data.n_classes
            )));
        }
        if basis.rows() != config.embed_dim || basis.dim() != config.dim {
            return Err(Error::Config(format!(
                "basis is {}x{} but config asks for d = {} and D = {}",
                basis.rows(),
                basis.dim(),
                config.embed_dim,
                config.dim
            )));
        }
        let mut counts = vec![0usize; data.n_classes];
        for &i in train_idx {
            let y = data.labels[i];
            if y >= data.n_classes {
                return Err(Error::Data(format!("row {i} has out-of-range label {y}")));
            }
            counts[y] += 1;
        }
        if let Some(class) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass { class });
        }
        let gather = |idx: &[usize]| -> Vec<f64> {
            idx.iter()
                .flat_map(|&i| data.rows[i].iter().copied())
                .collect()
        };
        let preds = (0..spec.n_groups()).map(|k| spec.predecessors(k)).collect();
        let pass = ForwardPass::empty(train_idx.len(), spec.n_groups(), data.n_classes, config.dim);
        Ok(Trainer {
            config: config.clone(),
            spec: spec.clone(),
            preds,
            n_params,
            n_classes: data.n_classes,
            train_x: gather(train_idx),
            train_y: train_idx.iter().map(|&i| data.labels[i]).collect(),
            test_x: gather(test_idx),
            test_y: test_idx.iter().map(|&i| data.labels[i]).collect(),
            train_idx: train_idx.to_vec(),
            test_idx: test_idx.to_vec(),
            scaler: data.scaler,
            basis,
            test_epochs: None,
            pass,
        })
    }

    pub fn basis(&self) -> &Arc<RandomBasis> {
        &self.basis
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Embeddings drawn from `config.seed`.
    pub fn initial_embeddings(&self) -> EmbeddingSet {
        EmbeddingSet::init(self.config.seed, self.n_params, self.config.embed_dim)
    }

    pub fn pass(&self) -> &ForwardPass {
        &self.pass
    }

    /// Encodes the training rows, rebuilds prototypes and evaluates the loss.
    pub fn forward(&mut self, embeddings: &EmbeddingSet) -> Result<&ForwardPass> {
        let dim = self.config.dim;
        let (p, k, c) = (self.n_params, self.spec.n_groups(), self.n_classes);
        let n = self.train_y.len();
        let proj = ProjectedEmbeddings::new(embeddings, &self.basis);
        let pass = &mut self.pass;
        let mut bound = vec![0.0; dim];
        let mut deg = Degeneracy::default();

        for i in 0..n {
            let norm = encode_into(
                &self.train_x[i * p..(i + 1) * p],
                &proj,
                &self.spec,
                &self.preds,
                None,
                &mut pass.groups[i * k * dim..(i + 1) * k * dim],
                &mut pass.group_norms[i * k..(i + 1) * k],
                &mut bound,
                &mut pass.samples[i * dim..(i + 1) * dim],
            );
            pass.sample_norms[i] = norm;
            deg.zero_samples += usize::from(norm == 0.0);
        }
        deg.zero_groups += pass.group_norms.iter().filter(|&&g| g == 0.0).count();

        for (cls, proto) in pass.memory.prototypes.iter_mut().enumerate() {
            proto.fill(0.0);
            pass.memory.class_counts[cls] = 0;
        }
        for i in 0..n {
            let y = self.train_y[i];
            kernel::add_assign(
                &mut pass.memory.prototypes[y],
                &pass.samples[i * dim..(i + 1) * dim],
            );
            pass.memory.class_counts[y] += 1;
        }
        for (cls, proto) in pass.memory.prototypes.iter_mut().enumerate() {
            pass.proto_norms[cls] = normalize_in_place(proto);
            deg.zero_prototypes += usize::from(pass.proto_norms[cls] == 0.0);
        }

        let mut total = 0.0;
        let mut correct = 0usize;
        for i in 0..n {
            let h = &pass.samples[i * dim..(i + 1) * dim];
            for cls in 0..c {
                let s = cosine(h, &pass.memory.prototypes[cls]);
                pass.logits[i][cls] = s.value;
                pass.logit_degenerate[i * c + cls] = s.degenerate;
                deg.degenerate_logits += usize::from(s.degenerate);
            }
            let z = &pass.logits[i];
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
            for cls in 0..c {
                pass.probabilities[i][cls] = (z[cls] - lse).exp();
            }
            total += lse - z[self.train_y[i]];
            pass.predictions[i] = argmax(z);
            correct += usize::from(pass.predictions[i] == self.train_y[i]);
        }
        pass.loss = total / n as f64;
        pass.train_accuracy = correct as f64 / n as f64;
        pass.degeneracy = deg;
        pass.projected = Some(proj);
        Ok(&self.pass)
    }

    /// Reverse-mode gradient of the last forward pass's loss.
    pub fn backward(&self) -> Gradient {
        let pass = &self.pass;
        let proj = pass
            .projected
            .as_ref()
            .expect("backward called before forward");
        let dim = self.config.dim;
        let (p, k, c) = (self.n_params, self.spec.n_groups(), self.n_classes);
        let n = self.train_y.len();
        let inv_n = 1.0 / n as f64;
        let mut deg = Degeneracy::default();

        // Logit layer: both arguments of every cosine.
        let mut dh = vec![0.0; n * dim];
        let mut dm = vec![vec![0.0; dim]; c];
        for i in 0..n {
            let h = pass.sample(i);
            let nh = kernel::norm(h);
            let dhi = &mut dh[i * dim..(i + 1) * dim];
            for cls in 0..c {
                if pass.logit_degenerate[i * c + cls] {
                    deg.degenerate_logits += 1;
                    continue;
                }
                let m = &pass.memory.prototypes[cls];
                let nm = kernel::norm(m);
                let z = pass.logits[i][cls];
                let target = if cls == self.train_y[i] { 1.0 } else { 0.0 };
                let dz = (pass.probabilities[i][cls] - target) * inv_n;
                let inv = 1.0 / (nh * nm);
                kernel::axpy(dz * inv, m, dhi);
                kernel::axpy(-dz * z / (nh * nh), h, dhi);
                kernel::axpy(dz * inv, h, &mut dm[cls]);
                kernel::axpy(-dz * z / (nm * nm), m, &mut dm[cls]);
            }
        }

        // Prototype normalization, then back into each member's sample vector.
        let mut dr = vec![vec![0.0; dim]; c];
        for cls in 0..c {
            deg.zero_prototypes += usize::from(pass.proto_norms[cls] == 0.0);
            normalize_backward(
                &pass.memory.prototypes[cls],
                pass.proto_norms[cls],
                &dm[cls],
                &mut dr[cls],
            );
        }

        let mut du = vec![0.0; p * dim];
        let mut ds = vec![0.0; dim];
        let mut dn = vec![0.0; k * dim];
        let mut dg = vec![0.0; dim];
        let mut tmp = vec![0.0; dim];
        for i in 0..n {
            let dhi = &mut dh[i * dim..(i + 1) * dim];
            kernel::add_assign(dhi, &dr[self.train_y[i]]);
            deg.zero_samples += usize::from(pass.sample_norms[i] == 0.0);
            normalize_backward(pass.sample(i), pass.sample_norms[i], dhi, &mut ds);

            let groups = &pass.groups[i * k * dim..(i + 1) * k * dim];
            let group = |g: usize| &groups[g * dim..(g + 1) * dim];
            dn.fill(0.0);
            for (kk, pk) in self.preds.iter().enumerate() {
                if pk.is_empty() {
                    kernel::add_assign(&mut dn[kk * dim..(kk + 1) * dim], &ds);
                    continue;
                }
                // d/dn_k: product of the predecessors.
                tmp.copy_from_slice(&ds);
                for &u in pk {
                    kernel::mul_assign(&mut tmp, group(u));
                }
                kernel::add_assign(&mut dn[kk * dim..(kk + 1) * dim], &tmp);
                // d/dn_u: n_k times every other predecessor.
                for &u in pk {
                    kernel::mul_into(&ds, group(kk), &mut tmp);
                    for &v in pk.iter().filter(|&&v| v != u) {
                        kernel::mul_assign(&mut tmp, group(v));
                    }
                    kernel::add_assign(&mut dn[u * dim..(u + 1) * dim], &tmp);
                }
            }

            let x = &self.train_x[i * p..(i + 1) * p];
            for (kk, g) in self.spec.groups.iter().enumerate() {
                let norm = pass.group_norms[i * k + kk];
                if norm == 0.0 {
                    deg.zero_groups += 1;
                    continue;
                }
                normalize_backward(group(kk), norm, &dn[kk * dim..(kk + 1) * dim], &mut dg);
                for &j in &g.params {
                    kernel::tanh_backward_accumulate(
                        x[j],
                        proj.get(j),
                        proj.peak(j),
                        &dg,
                        &mut du[j * dim..(j + 1) * dim],
                    );
                }
            }
        }

        let d = self.config.embed_dim;
        let mut values = vec![0.0; p * d];
        for j in 0..p {
            self.basis
                .adjoint_into(&du[j * dim..(j + 1) * dim], &mut values[j * d..(j + 1) * d]);
        }
        Gradient {
            values,
            degeneracy: deg,
        }
    }

    /// Forward then backward at `embeddings`.
    pub fn loss_and_gradient(&mut self, embeddings: &EmbeddingSet) -> Result<(f64, Gradient)> {
        let loss = self.forward(embeddings)?.loss;
        Ok((loss, self.backward()))
    }

    /// Accuracy on the held-out rows against the last forward pass's
    /// prototypes; `None` without held-out rows.
    pub fn test_accuracy(&self) -> Option<f64> {
        if self.test_y.is_empty() {
            return None;
        }
        let proj = self.pass.projected.as_ref()?;
        let dim = self.config.dim;
        let (p, k) = (self.n_params, self.spec.n_groups());
        let mut groups = vec![0.0; k * dim];
        let mut norms = vec![0.0; k];
        let mut bound = vec![0.0; dim];
        let mut sample = vec![0.0; dim];
        let mut correct = 0usize;
        for (i, &y) in self.test_y.iter().enumerate() {
            encode_into(
                &self.test_x[i * p..(i + 1) * p],
                proj,
                &self.spec,
                &self.preds,
                None,
                &mut groups,
                &mut norms,
                &mut bound,
                &mut sample,
            );
            correct += usize::from(retrieve(&sample, &self.pass.memory).class == y);
        }
        Some(correct as f64 / self.test_y.len() as f64)
    }

    fn snapshot(&self, embeddings: &EmbeddingSet, epoch: usize) -> ModelState {
        ModelState {
            config: self.config.clone(),
            basis: Arc::clone(&self.basis),
            embeddings: embeddings.clone(),
            scaler: self.scaler.clone(),
            spec: self.spec.clone(),
            memory: self.pass.memory.clone(),
            epoch,
            train_idx: self.train_idx.clone(),
        }
    }

    /// Restricts held-out scoring during `run` to the given epochs. `None`
    /// scores every epoch.
    pub fn set_test_epochs(&mut self, epochs: Option<&[usize]>) {
        self.test_epochs = epochs.map(|e| e.iter().copied().collect());
    }

    fn scores_test(&self, epoch: usize) -> bool {
        self.test_epochs
            .as_ref()
            .map_or(true, |e| e.contains(&epoch))
    }

    /// Held-out row indices.
    pub fn test_idx(&self) -> &[usize] {
        &self.test_idx
    }

    /// Runs `config.epochs` Adam updates from `embeddings`.
    pub fn run(&mut self, embeddings: EmbeddingSet) -> Result<TrainOutcome> {
        let epochs = self.config.epochs;
        let mut emb = embeddings;
        let mut adam = Adam::new(
            self.config.learning_rate,
            self.config.adam,
            emb.values.len(),
        );
        let mut history = Vec::with_capacity(epochs + 1);
        let mut degeneracy = Degeneracy::default();
        let mut previous: Option<PrototypeMemory> = None;
        let mut initial = None;

        for t in 0..=epochs {
            let loss = self.forward(&emb)?.loss;
            degeneracy += self.pass.degeneracy;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch: t,
                    detail: format!(
                        "loss = {loss}; train accuracy {}; embeddings finite: {}; \
                         zero groups {}, zero samples {}, zero prototypes {}",
                        self.pass.train_accuracy,
                        emb.is_finite(),
                        self.pass.degeneracy.zero_groups,
                        self.pass.degeneracy.zero_samples,
                        self.pass.degeneracy.zero_prototypes,
                    ),
                });
            }
            let rho_bar = previous
                .as_ref()
                .map(|prev| prototype_similarity(prev, &self.pass.memory));
            history.push(EpochRecord {
                epoch: t,
                loss,
                train_acc: self.pass.train_accuracy,
                test_acc: if self.scores_test(t) {
                    self.test_accuracy()
                } else {
                    None
                },
                rho_bar,
            });
            if t == 0 {
                initial = Some(self.snapshot(&emb, 0));
            }
            if t == epochs {
                break;
            }
            previous = Some(self.pass.memory.clone());
            let grad = self.backward();
            degeneracy += grad.degeneracy;
            adam.step(&mut emb.values, &grad.values);
        }

        Ok(TrainOutcome {
            initial: initial.expect("epoch 0 recorded"),
            final_state: self.snapshot(&emb, epochs),
            history,
            degeneracy,
        })
    }
}

/// Trains from the seeded initialization for `config.epochs` epochs.
/// `test_idx` only feeds the reported test accuracy.
pub fn train(
    table: &DatasetTable,
    train_idx: &[usize],
    test_idx: &[usize],
    spec: &GraphSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(table, train_idx, test_idx, spec, config)?;
    let init = trainer.initial_embeddings();
    trainer.run(init)
}

/// `(1/C) Σ_c sim(m_c, m'_c)`.
pub fn prototype_similarity(a: &PrototypeMemory, b: &PrototypeMemory) -> f64 {
    let c = a.n_classes();
    a.prototypes
        .iter()
        .zip(&b.prototypes)
        .map(|(x, y)| cosine(x, y).value)
        .sum::<f64>()
        / c as f64
}

/// `ρ̄(t)` for `t = 1..=E`.
pub fn prototype_stability(history: &[EpochRecord]) -> Result<Vec<f64>> {
    if history.len() < 2 {
        return Err(Error::Data(
            "prototype stability needs at least two recorded epochs".into(),
        ));
    }
    history[1..]
        .iter()
        .map(|r| {
            r.rho_bar
                .ok_or_else(|| Error::Data(format!("epoch {} has no rho_bar", r.epoch)))
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

pub fn history_csv_bytes(history: &[EpochRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss", "train_acc", "test_acc", "rho_bar"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format_float(r.loss),
            format_float(r.train_acc),
            opt(r.test_acc),
            opt(r.rho_bar),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let bytes = history_csv_bytes(history)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
