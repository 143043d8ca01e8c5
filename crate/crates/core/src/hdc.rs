//! Real-valued hypervector algebra.
//!
//! Hypervectors are dense `f64` vectors. Binding is the Hadamard product,
//! bundling is the elementwise sum, and similarity is cosine. Zero vectors
//! are legal values: they normalize to zero and have similarity 0 with
//! everything (reported through [`Similarity::degenerate`]).

use std::ops::{Deref, DerefMut};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hypervector(Vec<f64>);

impl Hypervector {
    pub fn new(values: Vec<f64>) -> Self {
        Hypervector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Hypervector(vec![0.0; dim])
    }

    pub fn ones(dim: usize) -> Self {
        Hypervector(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        kernel::norm(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for Hypervector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Hypervector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Hypervector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Hypervector {
    fn from(values: Vec<f64>) -> Self {
        Hypervector(values)
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { expected, actual })
    }
}

/// Normalizes `v` in place and returns the norm it had. A zero vector is
/// left as is.
pub fn normalize_in_place(v: &mut [f64]) -> f64 {
    let n = kernel::norm(v);
    if n > 0.0 {
        let inv = 1.0 / n;
        for x in v.iter_mut() {
            *x *= inv;
        }
    }
    n
}

/// `v / ‖v‖`, or the zero vector when `‖v‖ = 0`.
pub fn normalize(v: &Hypervector) -> Hypervector {
    let mut out = v.clone();
    normalize_in_place(&mut out);
    out
}

/// Hadamard product.
pub fn bind(a: &Hypervector, b: &Hypervector) -> Result<Hypervector> {
    check_dim(a.dim(), b.dim())?;
    Ok(Hypervector(
        a.iter().zip(b.iter()).map(|(x, y)| x * y).collect(),
    ))
}

/// Elementwise sum of a nonempty set.
pub fn bundle<'a, I>(vectors: I) -> Result<Hypervector>
where
    I: IntoIterator<Item = &'a Hypervector>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next().ok_or(Error::EmptyAggregate {
        what: "hypervectors",
    })?;
    let mut acc = first.clone();
    for v in iter {
        check_dim(acc.dim(), v.dim())?;
        kernel::add_assign(&mut acc, v);
    }
    Ok(acc)
}

/// `normalize(bundle(vectors))`.
pub fn nbundle<'a, I>(vectors: I) -> Result<Hypervector>
where
    I: IntoIterator<Item = &'a Hypervector>,
{
    let mut acc = bundle(vectors)?;
    normalize_in_place(&mut acc);
    Ok(acc)
}

/// Cosine similarity, with a flag for zero-norm arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub value: f64,
    /// Set when either argument was the zero vector; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine(a: &[f64], b: &[f64]) -> Similarity {
    assert_eq!(a.len(), b.len(), "cosine of vectors with different lengths");
    let na = kernel::norm(a);
    let nb = kernel::norm(b);
    if na == 0.0 || nb == 0.0 {
        return Similarity {
            value: 0.0,
            degenerate: true,
        };
    }
    let value = (kernel::dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Similarity {
        value,
        degenerate: false,
    }
}

pub fn cosine_sim(h1: &Hypervector, h2: &Hypervector) -> Result<Similarity> {
    check_dim(h1.dim(), h2.dim())?;
    Ok(cosine(h1, h2))
}

/// Fixed random basis: `rows` unit-norm hypervectors of length `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomBasis {
    seed: u64,
    rows: usize,
    dim: usize,
    /// Row-major `rows × dim`.
    data: Vec<f64>,
}

impl RandomBasis {
    /// Draws i.i.d. standard normal entries and normalizes each row.
    pub fn generate(seed: u64, rows: usize, dim: usize) -> Self {
        let mut rng = rng::stream(seed, Stream::Basis);
        let mut data = Vec::with_capacity(rows * dim);
        for _ in 0..rows * dim {
            let v: f64 = StandardNormal.sample(&mut rng);
            data.push(v);
        }
        for row in data.chunks_mut(dim.max(1)) {
            normalize_in_place(row);
        }
        RandomBasis {
            seed,
            rows,
            dim,
            data,
        }
    }

    /// Builds a basis from explicit rows (used for fixtures). Rows are
    /// normalized.
    pub fn from_rows(seed: u64, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or(Error::EmptyAggregate { what: "basis rows" })?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            check_dim(dim, r.len())?;
            data.extend_from_slice(r);
        }
        for row in data.chunks_mut(dim) {
            normalize_in_place(row);
        }
        Ok(RandomBasis {
            seed,
            rows: rows.len(),
            dim,
            data,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of base hypervectors (embedding dimension).
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Hypervector dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    /// `zᵀB` written into `out`, accumulated over rows in index order.
    pub fn project_into(&self, z: &[f64], out: &mut [f64]) {
        assert_eq!(z.len(), self.rows);
        assert_eq!(out.len(), self.dim);
        out.fill(0.0);
        for (r, &w) in z.iter().enumerate() {
            if w != 0.0 {
                kernel::axpy(w, self.row(r), out);
            }
        }
    }

    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.rows, z.len())?;
        let mut out = vec![0.0; self.dim];
        self.project_into(z, &mut out);
        Ok(out)
    }

    /// `B v` for `v` of length `dim`: the adjoint of [`project`](Self::project).
    pub fn adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.dim);
        assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = kernel::dot(self.row(r), v);
        }
    }

    /// SHA-256 over the little-endian bytes of every entry.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Non-adaptive encoder: `tanh(zᵀB)`.
pub fn random_projection_encode(z: &[f64], basis: &RandomBasis) -> Result<Hypervector> {
    let pre = basis.project(z)?;
    let mut out = vec![0.0; basis.dim()];
    kernel::tanh_scaled(1.0, &pre, &mut out);
    Ok(Hypervector(out))
}

/// Random bipolar hypervector, for tests and diagnostics.
pub fn random_bipolar<R: rand::Rng>(rng: &mut R, dim: usize) -> Hypervector {
    Hypervector(
        (0..dim)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect(),
    )
}
