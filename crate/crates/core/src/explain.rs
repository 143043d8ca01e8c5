//! Attribution from class-partitioned component memories.
//!
//! Every component (parameter or group) has a memory per class. Its
//! affinity to each class prototype is a cosine similarity; a temperature
//! softmax over classes turns affinities into a distribution `π`, and the
//! mass on the correct class, normalized over components, is the
//! attribution weight. The same correct-class mass is the MAS alignment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::format_float;
use crate::error::{Error, Result};
use crate::eval::mean_std;
use crate::graph::GraphSpec;
use crate::hdc::cosine;
use crate::memory::{ComponentMemoryBank, PrototypeMemory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Parameter,
    Group,
    /// Parameters of one group against the group memories.
    WithinGroup(usize),
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Parameter => write!(f, "parameter"),
            Level::Group => write!(f, "group"),
            Level::WithinGroup(k) => write!(f, "within_group:{k}"),
        }
    }
}

impl FromStr for Level {
    type Err = Error;

    /// Accepts `param`/`parameter`, `group`, and `within:K` or
    /// `within_group:K` with a 0-based group index.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "param" | "parameter" => return Ok(Level::Parameter),
            "group" => return Ok(Level::Group),
            _ => {}
        }
        let k = s
            .strip_prefix("within_group:")
            .or_else(|| s.strip_prefix("within:"))
            .ok_or_else(|| Error::Config(format!("unknown attribution level '{s}'")))?;
        k.parse()
            .map(Level::WithinGroup)
            .map_err(|_| Error::Config(format!("bad group index in level '{s}'")))
    }
}

/// `a[c][g][ℓ]`: affinity of class-`c` memory of component `g` to the
/// class-`ℓ` reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affinities {
    pub level: Level,
    pub components: Vec<String>,
    pub values: Vec<Vec<Vec<f64>>>,
    /// `(c, g)` pairs whose memory was the zero vector; their rows are zero.
    pub degenerate: Vec<(usize, usize)>,
}

impl Affinities {
    pub fn n_classes(&self) -> usize {
        self.values.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

fn affinity_rows(
    level: Level,
    components: Vec<String>,
    memories: &[Vec<&[f64]>],
    refs: &[&[f64]],
) -> Affinities {
    let mut degenerate = Vec::new();
    let values = memories
        .iter()
        .enumerate()
        .map(|(c, row)| {
            row.iter()
                .enumerate()
                .map(|(g, m)| {
                    if m.iter().all(|&v| v == 0.0) {
                        degenerate.push((c, g));
                    }
                    refs.iter().map(|r| cosine(m, r).value).collect()
                })
                .collect()
        })
        .collect();
    Affinities {
        level,
        components,
        values,
        degenerate,
    }
}

fn check_names(names: &[String], expected: usize, what: &str) -> Result<()> {
    if names.len() != expected {
        return Err(Error::Config(format!(
            "{} {what} names for {expected} {what}s",
            names.len()
        )));
    }
    Ok(())
}

/// `a_{c,g,ℓ} = sim(m^comp_{c,g}, m_ℓ)` at parameter or group level.
pub fn component_affinity(
    bank: &ComponentMemoryBank,
    mem: &PrototypeMemory,
    level: Level,
    names: &[String],
) -> Result<Affinities> {
    let c = bank.n_classes();
    if c != mem.n_classes() {
        return Err(Error::Config(format!(
            "bank has {c} classes but prototypes have {}",
            mem.n_classes()
        )));
    }
    let table = match level {
        Level::Parameter => &bank.params,
        Level::Group => &bank.groups,
        Level::WithinGroup(_) => {
            return Err(Error::Config(
                "within-group affinities need within_group_affinity".into(),
            ))
        }
    };
    let n_comp = table.first().map_or(0, Vec::len);
    check_names(names, n_comp, "component")?;
    let memories: Vec<Vec<&[f64]>> = table
        .iter()
        .map(|row| row.iter().map(|h| h.as_slice()).collect())
        .collect();
    let refs: Vec<&[f64]> = mem.prototypes.iter().map(|h| h.as_slice()).collect();
    Ok(affinity_rows(level, names.to_vec(), &memories, &refs))
}

/// `a^{(k)}_{c,j,ℓ} = sim(m^par_{c,j}, m^grp_{ℓ,k})` for `j ∈ S_k`.
pub fn within_group_affinity(
    bank: &ComponentMemoryBank,
    spec: &GraphSpec,
    k: usize,
    param_names: &[String],
) -> Result<Affinities> {
    let group = spec
        .groups
        .get(k)
        .ok_or_else(|| Error::Config(format!("group index {k} out of range")))?;
    let names = group
        .params
        .iter()
        .map(|&j| {
            param_names
                .get(j)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no name for parameter {j}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let memories: Vec<Vec<&[f64]>> = bank
        .params
        .iter()
        .map(|row| group.params.iter().map(|&j| row[j].as_slice()).collect())
        .collect();
    let refs: Vec<&[f64]> = bank.groups.iter().map(|row| row[k].as_slice()).collect();
    Ok(affinity_rows(
        Level::WithinGroup(k),
        names,
        &memories,
        &refs,
    ))
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "beta must be positive and finite, got {beta}"
        )))
    }
}

/// `π = softmax(β a)` over references, and its mass on `class`. Shared by
/// attribution and MAS so the two views agree bitwise.
fn class_certainty(a: &[f64], beta: f64, class: usize) -> (Vec<f64>, f64) {
    let top = a.iter().map(|v| beta * v).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|v| (beta * v - top).exp()).collect();
    let total: f64 = e.iter().sum();
    let pi: Vec<f64> = e.iter().map(|v| v / total).collect();
    let q = pi[class];
    (pi, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub level: Level,
    pub beta: f64,
    pub components: Vec<String>,
    pub affinities: Vec<Vec<Vec<f64>>>,
    pub pi: Vec<Vec<Vec<f64>>>,
    /// Correct-class mass `q[c][g] = π[c][g][c]`.
    pub q: Vec<Vec<f64>>,
    /// `α[c][g] = q[c][g] / Σ_g q[c][g]`.
    pub alpha: Vec<Vec<f64>>,
}

pub fn attribution(aff: &Affinities, beta: f64) -> Result<AttributionReport> {
    check_beta(beta)?;
    let mut pi = Vec::with_capacity(aff.n_classes());
    let mut q = Vec::with_capacity(aff.n_classes());
    for (c, rows) in aff.values.iter().enumerate() {
        let (p, qc): (Vec<_>, Vec<_>) = rows.iter().map(|a| class_certainty(a, beta, c)).unzip();
        pi.push(p);
        q.push(qc);
    }
    let alpha = q
        .iter()
        .map(|qc| {
            let total: f64 = qc.iter().sum();
            qc.iter().map(|v| v / total).collect()
        })
        .collect();
    Ok(AttributionReport {
        level: aff.level,
        beta,
        components: aff.components.clone(),
        affinities: aff.values.clone(),
        pi,
        q,
        alpha,
    })
}

pub fn within_group_attribution(
    bank: &ComponentMemoryBank,
    spec: &GraphSpec,
    k: usize,
    beta: f64,
    param_names: &[String],
) -> Result<AttributionReport> {
    attribution(&within_group_affinity(bank, spec, k, param_names)?, beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasReport {
    pub level: Level,
    pub beta: f64,
    pub components: Vec<String>,
    /// `A[c][g] = π[c][g][c]`.
    pub alignment: Vec<Vec<f64>>,
    /// `S[c][g] = A − max_{ℓ≠c} π[c][g][ℓ]`.
    pub separation: Vec<Vec<f64>>,
    /// Plain means over components.
    pub ma: Vec<f64>,
    pub ms: Vec<f64>,
}

pub fn mas(aff: &Affinities, beta: f64) -> Result<MasReport> {
    check_beta(beta)?;
    let n_classes = aff.n_classes();
    let mut alignment = Vec::with_capacity(n_classes);
    let mut separation = Vec::with_capacity(n_classes);
    for (c, rows) in aff.values.iter().enumerate() {
        let mut ac = Vec::with_capacity(rows.len());
        let mut sc = Vec::with_capacity(rows.len());
        for a in rows {
            let (pi, align) = class_certainty(a, beta, c);
            // With two classes the competing mass is 1 − A; writing S in
            // that closed form keeps S = 2A − 1 exact in floating point.
            let sep = if n_classes == 2 {
                2.0 * align - 1.0
            } else {
                let rival = pi
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| l != c)
                    .map(|(_, &p)| p)
                    .fold(f64::NEG_INFINITY, f64::max);
                align - rival
            };
            ac.push(align);
            sc.push(sep);
        }
        alignment.push(ac);
        separation.push(sc);
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MasReport {
        level: aff.level,
        beta,
        components: aff.components.clone(),
        ma: alignment.iter().map(mean).collect(),
        ms: separation.iter().map(mean).collect(),
        alignment,
        separation,
    })
}

/// Mean attribution over several runs, renormalized per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedAttribution {
    pub level: Level,
    pub components: Vec<String>,
    pub n_reports: usize,
    pub alpha: Vec<Vec<f64>>,
}

pub fn aggregate_attributions(reports: &[AttributionReport]) -> Result<AggregatedAttribution> {
    let first = reports.first().ok_or(Error::EmptyAggregate {
        what: "attribution reports",
    })?;
    for r in reports {
        let same_shape = r.level == first.level
            && r.components == first.components
            && r.alpha.len() == first.alpha.len()
            && r.alpha
                .iter()
                .zip(&first.alpha)
                .all(|(a, b)| a.len() == b.len());
        if !same_shape {
            return Err(Error::Config(
                "attribution reports differ in level, components or shape".into(),
            ));
        }
    }
    let n = reports.len() as f64;
    let alpha = (0..first.alpha.len())
        .map(|c| {
            let mean: Vec<f64> = (0..first.alpha[c].len())
                .map(|g| reports.iter().map(|r| r.alpha[c][g]).sum::<f64>() / n)
                .collect();
            let total: f64 = mean.iter().sum();
            mean.iter().map(|v| v / total).collect()
        })
        .collect();
    Ok(AggregatedAttribution {
        level: first.level,
        components: first.components.clone(),
        n_reports: reports.len(),
        alpha,
    })
}

/// One sample placed in the plane spanned by two reference prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSample {
    pub row: usize,
    pub label: usize,
    /// `sim(h, m₁)` and `sim(h, m₂)` against the reference prototypes.
    pub coords: (f64, f64),
    /// `1 − sim(h, m_y)` against the sample's own-epoch prototypes.
    pub distance: f64,
}

/// Coordinates against the epoch-0 prototypes `axes` plus the distance to
/// the correct prototype of `own` (the prototypes of the epoch `h` comes
/// from). Defined for two classes only.
pub fn sample_embedding(
    rows: &[usize],
    samples: &[impl AsRef<[f64]>],
    labels: &[usize],
    axes: &PrototypeMemory,
    own: &PrototypeMemory,
) -> Result<Vec<EmbeddedSample>> {
    if axes.n_classes() != 2 || own.n_classes() != 2 {
        return Err(Error::Unsupported(format!(
            "sample embedding needs exactly 2 classes, got {}",
            axes.n_classes()
        )));
    }
    if rows.len() != samples.len() {
        return Err(Error::Config("rows and samples differ in length".into()));
    }
    rows.iter()
        .zip(samples)
        .map(|(&row, h)| {
            let h = h.as_ref();
            let label = *labels
                .get(row)
                .ok_or_else(|| Error::Data(format!("no label for row {row}")))?;
            Ok(EmbeddedSample {
                row,
                label,
                coords: (
                    cosine(h, &axes.prototypes[0]).value,
                    cosine(h, &axes.prototypes[1]).value,
                ),
                distance: 1.0 - cosine(h, &own.prototypes[label]).value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub class: usize,
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Mean ± std of the distance per class, classes in ascending order.
pub fn summarize_distances(points: &[EmbeddedSample]) -> Vec<DistanceSummary> {
    let n_classes = points.iter().map(|p| p.label + 1).max().unwrap_or(0);
    (0..n_classes)
        .filter_map(|c| {
            let d: Vec<f64> = points
                .iter()
                .filter(|p| p.label == c)
                .map(|p| p.distance)
                .collect();
            if d.is_empty() {
                return None;
            }
            let (mean, std) = mean_std(&d);
            Some(DistanceSummary {
                class: c,
                n: d.len(),
                mean,
                std,
            })
        })
        .collect()
}

pub fn attribution_csv_bytes(report: &AttributionReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["level", "beta", "class", "component", "weight", "q"])?;
    for (c, row) in report.alpha.iter().enumerate() {
        for (g, &a) in row.iter().enumerate() {
            w.write_record([
                report.level.to_string(),
                format_float(report.beta),
                c.to_string(),
                report.components[g].clone(),
                format_float(a),
                format_float(report.q[c][g]),
            ])?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))
}

pub fn aggregated_csv_bytes(agg: &AggregatedAttribution) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["level", "class", "component", "weight", "n_reports"])?;
    for (c, row) in agg.alpha.iter().enumerate() {
        for (g, &a) in row.iter().enumerate() {
            w.write_record([
                agg.level.to_string(),
                c.to_string(),
                agg.components[g].clone(),
                format_float(a),
                agg.n_reports.to_string(),
            ])?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))
}

/// Per-component rows followed by one summary row per class with the
/// component column set to `mean`.
pub fn mas_csv_bytes(report: &MasReport, tag: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "stage",
        "level",
        "beta",
        "class",
        "component",
        "alignment",
        "separation",
    ])?;
    for (c, row) in report.alignment.iter().enumerate() {
        for (g, &a) in row.iter().enumerate() {
            w.write_record([
                tag.to_string(),
                report.level.to_string(),
                format_float(report.beta),
                c.to_string(),
                report.components[g].clone(),
                format_float(a),
                format_float(report.separation[c][g]),
            ])?;
        }
    }
    for c in 0..report.ma.len() {
        w.write_record([
            tag.to_string(),
            report.level.to_string(),
            format_float(report.beta),
            c.to_string(),
            "mean".to_string(),
            format_float(report.ma[c]),
            format_float(report.ms[c]),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))
}
