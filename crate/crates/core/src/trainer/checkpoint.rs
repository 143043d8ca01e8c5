use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ModelState, TrainConfig};
use crate::data::DatasetTable;
use crate::encoder::{EmbeddingSet, ScalerStats};
use crate::error::{Error, Result};
use crate::graph::GraphSpecFile;
use crate::hdc::RandomBasis;
use crate::memory::PrototypeMemory;
use crate::rng::RNG_ALGORITHM;

pub const CHECKPOINT_VERSION: u32 = 1;

/// The basis is regenerated from its seed on load; the hash guards against
/// a different generator producing different rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisRef {
    pub seed: u64,
    pub rows: usize,
    pub dim: usize,
    pub rng: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub tool_version: String,
    pub epoch: usize,
    pub config: TrainConfig,
    pub basis: BasisRef,
    pub scaler: ScalerStats,
    pub embeddings: EmbeddingSet,
    pub param_names: Vec<String>,
    pub graph: GraphSpecFile,
    pub train_idx: Vec<usize>,
    pub dataset_sha256: Option<String>,
}

impl Checkpoint {
    pub fn from_state(state: &ModelState, table: &DatasetTable) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            epoch: state.epoch,
            config: state.config.clone(),
            basis: BasisRef {
                seed: state.basis.seed(),
                rows: state.basis.rows(),
                dim: state.basis.dim(),
                rng: RNG_ALGORITHM.to_string(),
                sha256: state.basis.fingerprint(),
            },
            scaler: state.scaler.clone(),
            embeddings: state.embeddings.clone(),
            param_names: table.param_names().to_vec(),
            graph: GraphSpecFile::from_spec(&state.spec, table.param_names()),
            train_idx: state.train_idx.clone(),
            dataset_sha256: table.provenance().map(|p| p.sha256.clone()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!(
                "checkpoint version {} (this build reads {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds the model against `table`: regenerates and verifies the
    /// basis, then recomputes prototypes from the training rows.
    pub fn restore(&self, table: &DatasetTable) -> Result<ModelState> {
        if self.basis.rng != RNG_ALGORITHM {
            return Err(Error::Unsupported(format!(
                "checkpoint basis drawn with '{}', this build uses '{RNG_ALGORITHM}'",
                self.basis.rng
            )));
        }
        if table.param_names() != self.param_names.as_slice() {
            return Err(Error::Data(format!(
                "dataset parameters {:?} differ from checkpoint parameters {:?}",
                table.param_names(),
                self.param_names
            )));
        }
        if let (Some(want), Some(have)) = (&self.dataset_sha256, table.provenance()) {
            if want != &have.sha256 {
                return Err(Error::Data(format!(
                    "dataset hash {} does not match checkpoint hash {want}",
                    have.sha256
                )));
            }
        }
        let basis = RandomBasis::generate(self.basis.seed, self.basis.rows, self.basis.dim);
        if basis.fingerprint() != self.basis.sha256 {
            return Err(Error::Data(
                "regenerated basis does not match the checkpoint fingerprint".into(),
            ));
        }
        let spec = self.graph.resolve(table.param_names())?;
        let mut state = ModelState {
            config: self.config.clone(),
            basis: Arc::new(basis),
            embeddings: self.embeddings.clone(),
            scaler: self.scaler.clone(),
            spec,
            memory: PrototypeMemory {
                prototypes: Vec::new(),
                class_counts: Vec::new(),
            },
            epoch: self.epoch,
            train_idx: self.train_idx.clone(),
        };
        let labels = table.require_labels()?;
        let samples = state.sample_hvs(table, &(0..table.n_rows()).collect::<Vec<_>>());
        state.memory =
            PrototypeMemory::build(&samples, labels, &self.train_idx, table.n_classes())?;
        Ok(state)
    }
}
