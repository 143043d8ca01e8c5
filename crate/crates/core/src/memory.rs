//! Class prototypes, retrieval and class-partitioned component memories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdc::{cosine, normalize_in_place, Hypervector};
use crate::kernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeMemory {
    pub prototypes: Vec<Hypervector>,
    pub class_counts: Vec<usize>,
}

/// Per-class normalized sums over the training rows of each class. Returns
/// the empty-class error naming the first class without rows.
fn class_bundles<'a, F>(
    n_classes: usize,
    dim: usize,
    labels: &[usize],
    train_idx: &[usize],
    get: F,
) -> Result<(Vec<Hypervector>, Vec<usize>)>
where
    F: Fn(usize) -> &'a [f64],
{
    let mut sums = vec![vec![0.0; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for &i in train_idx {
        let c = labels[i];
        if c >= n_classes {
            return Err(Error::Data(format!(
                "row {i} has label {c} but only {n_classes} classes are configured"
            )));
        }
        kernel::add_assign(&mut sums[c], get(i));
        counts[c] += 1;
    }
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass { class });
    }
    let protos = sums
        .into_iter()
        .map(|mut s| {
            normalize_in_place(&mut s);
            Hypervector::new(s)
        })
        .collect();
    Ok((protos, counts))
}

impl PrototypeMemory {
    /// `m_c = normalize(Σ_{i∈T_c} h_i)`.
    pub fn build(
        samples: &[Hypervector],
        labels: &[usize],
        train_idx: &[usize],
        n_classes: usize,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!(
                "prototype memory needs at least 2 classes, got {n_classes}"
            )));
        }
        let dim = samples.first().map(|h| h.dim()).unwrap_or(0);
        let (prototypes, class_counts) =
            class_bundles(n_classes, dim, labels, train_idx, |i| samples[i].as_slice())?;
        Ok(PrototypeMemory {
            prototypes,
            class_counts,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map(|p| p.dim()).unwrap_or(0)
    }

    /// Classes whose prototype is the zero vector.
    pub fn degenerate_classes(&self) -> Vec<usize> {
        self.prototypes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_zero())
            .map(|(c, _)| c)
            .collect()
    }

    pub fn retrieve(&self, h: &[f64]) -> Retrieval {
        retrieve(h, self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub class: usize,
    pub similarities: Vec<f64>,
    /// Top-1 minus top-2 similarity.
    pub margin: f64,
    /// Query was the zero vector.
    pub degenerate: bool,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in values.iter().enumerate() {
        if s > values[best] {
            best = c;
        }
    }
    best
}

/// `argmax_c sim(h, m_c)`, ties to the lowest class index.
pub fn retrieve(h: &[f64], mem: &PrototypeMemory) -> Retrieval {
    let similarities: Vec<f64> = mem.prototypes.iter().map(|m| cosine(h, m).value).collect();
    let degenerate = h.iter().all(|&v| v == 0.0);
    let best = argmax(&similarities);
    let runner_up = similarities
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != best)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = if runner_up.is_finite() {
        similarities[best] - runner_up
    } else {
        0.0
    };
    Retrieval {
        class: best,
        similarities,
        margin,
        degenerate,
    }
}

/// One perceptron-style prototype correction: pull `m_y` toward `h`, push
/// `m_ŷ` away, renormalize both. Not used by the default training loop.
pub fn retrain_step(
    mem: &PrototypeMemory,
    h: &[f64],
    y: usize,
    y_hat: usize,
    eta: f64,
) -> Result<PrototypeMemory> {
    if !(eta > 0.0) {
        return Err(Error::Config(format!(
            "retrain rate must be > 0, got {eta}"
        )));
    }
    if y == y_hat {
        return Err(Error::Config(
            "retrain step needs a misclassified sample".into(),
        ));
    }
    if y >= mem.n_classes() || y_hat >= mem.n_classes() {
        return Err(Error::Data(format!(
            "class index out of range for {} classes",
            mem.n_classes()
        )));
    }
    let mut out = mem.clone();
    kernel::axpy(eta, h, &mut out.prototypes[y]);
    normalize_in_place(&mut out.prototypes[y]);
    kernel::axpy(-eta, h, &mut out.prototypes[y_hat]);
    normalize_in_place(&mut out.prototypes[y_hat]);
    Ok(out)
}

/// Class-partitioned memories at parameter (`C × P`) and group (`C × K`)
/// granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMemoryBank {
    pub params: Vec<Vec<Hypervector>>,
    pub groups: Vec<Vec<Hypervector>>,
}

impl ComponentMemoryBank {
    /// `param_hvs[i][j]` and `group_hvs[i][k]` are indexed by row; only rows
    /// in `train_idx` are read.
    pub fn build(
        param_hvs: &[Vec<Hypervector>],
        group_hvs: &[Vec<Hypervector>],
        labels: &[usize],
        train_idx: &[usize],
        n_classes: usize,
    ) -> Result<Self> {
        let first = *train_idx.first().ok_or(Error::EmptyTrainSet)?;
        let n_params = param_hvs[first].len();
        let n_groups = group_hvs[first].len();
        let dim = param_hvs[first].first().map(|h| h.dim()).unwrap_or(0);

        let mut params = vec![Vec::with_capacity(n_params); n_classes];
        for j in 0..n_params {
            let (protos, _) = class_bundles(n_classes, dim, labels, train_idx, |i| {
                param_hvs[i][j].as_slice()
            })?;
            for (c, p) in protos.into_iter().enumerate() {
                params[c].push(p);
            }
        }
        let mut groups = vec![Vec::with_capacity(n_groups); n_classes];
        for k in 0..n_groups {
            let (protos, _) = class_bundles(n_classes, dim, labels, train_idx, |i| {
                group_hvs[i][k].as_slice()
            })?;
            for (c, p) in protos.into_iter().enumerate() {
                groups[c].push(p);
            }
        }
        Ok(ComponentMemoryBank { params, groups })
    }

    pub fn n_classes(&self) -> usize {
        self.params.len()
    }
}
