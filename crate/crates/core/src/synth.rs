//! Seeded synthetic tables with a known class structure.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::DatasetTable;
use crate::error::{Error, Result};
use crate::graph::{GraphSpec, Group};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_params: usize,
    pub n_groups: usize,
    /// Distance between the two class means of every feature, in units of
    /// the within-class standard deviation.
    pub separation: f64,
    /// Number of regimes in the `regime` column; 0 leaves it out.
    pub n_regimes: usize,
    /// Mean offset added to every feature per regime step, in σ.
    pub regime_shift: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 60,
            n_params: 20,
            n_groups: 4,
            separation: 1.5,
            n_regimes: 0,
            regime_shift: 0.0,
            seed: 0,
        }
    }
}

pub const REGIME_COLUMN: &str = "regime";

/// Contiguous groups of near-equal size, named `G1..GK`, without edges.
pub fn block_groups(n_params: usize, n_groups: usize) -> GraphSpec {
    let base = n_params / n_groups;
    let extra = n_params % n_groups;
    let mut start = 0;
    let groups = (0..n_groups)
        .map(|k| {
            let len = base + usize::from(k < extra);
            let g = Group {
                name: format!("G{}", k + 1),
                params: (start..start + len).collect(),
            };
            start += len;
            g
        })
        .collect();
    GraphSpec {
        groups,
        edges: Vec::new(),
    }
}

/// Two balanced classes; feature `j` of class `c` is drawn from
/// `N(±separation/2 · s_j, 1)` with a seeded random sign `s_j`. Rows are
/// shuffled so classes interleave.
pub fn two_class(spec: &SyntheticSpec) -> Result<(DatasetTable, GraphSpec)> {
    if spec.n_samples < 4 || spec.n_params == 0 {
        return Err(Error::Config(
            "synthetic set needs at least 4 samples and 1 parameter".into(),
        ));
    }
    if spec.n_groups == 0 || spec.n_groups > spec.n_params {
        return Err(Error::Config(format!(
            "cannot split {} parameters into {} groups",
            spec.n_params, spec.n_groups
        )));
    }
    let mut rng = rng::stream(spec.seed, Stream::Synthetic);
    let signs: Vec<f64> = (0..spec.n_params)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let mut labels: Vec<usize> = (0..spec.n_samples).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let regimes: Vec<usize> = if spec.n_regimes > 0 {
        let mut r: Vec<usize> = (0..spec.n_samples).map(|i| i % spec.n_regimes).collect();
        r.shuffle(&mut rng);
        r
    } else {
        vec![0; spec.n_samples]
    };
    let half = spec.separation / 2.0;
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .zip(&regimes)
        .map(|(&y, &r)| {
            let class_sign = if y == 1 { 1.0 } else { -1.0 };
            signs
                .iter()
                .map(|s| {
                    let noise: f64 = rng.sample(StandardNormal);
                    noise + class_sign * half * s + r as f64 * spec.regime_shift
                })
                .collect()
        })
        .collect();
    let names = (1..=spec.n_params).map(|j| format!("p{j:02}")).collect();
    let mut table = DatasetTable::from_rows(names, rows)?.with_labels(labels)?;
    if spec.n_regimes > 0 {
        table = table.with_regime(
            REGIME_COLUMN,
            regimes.iter().map(|r| (r + 1).to_string()).collect(),
        )?;
    }
    Ok((table, block_groups(spec.n_params, spec.n_groups)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_balance() {
        let (t, g) = two_class(&SyntheticSpec::default()).unwrap();
        assert_eq!((t.n_rows(), t.n_params()), (60, 20));
        assert_eq!(g.n_groups(), 4);
        assert!(g.groups.iter().all(|grp| grp.params.len() == 5));
        let ones = t.labels().unwrap().iter().filter(|&&y| y == 1).count();
        assert_eq!(ones, 30);
        assert!(g.validate(20, true).is_ok());
    }

    #[test]
    fn seeded() {
        let a = two_class(&SyntheticSpec::default()).unwrap().0;
        let b = two_class(&SyntheticSpec::default()).unwrap().0;
        let c = two_class(&SyntheticSpec {
            seed: 1,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn class_means_are_separated() {
        let spec = SyntheticSpec {
            n_samples: 4000,
            ..SyntheticSpec::default()
        };
        let (t, _) = two_class(&spec).unwrap();
        let y = t.labels().unwrap();
        for j in 0..t.n_params() {
            let mut sums = [0.0; 2];
            for i in 0..t.n_rows() {
                sums[y[i]] += t.row(i)[j];
            }
            let gap = (sums[1] - sums[0]).abs() / 2000.0;
            assert!((gap - 1.5).abs() < 0.15, "feature {j}: {gap}");
        }
    }

    #[test]
    fn regimes_shift_features() {
        let spec = SyntheticSpec {
            n_regimes: 3,
            regime_shift: 2.0,
            ..SyntheticSpec::default()
        };
        let (t, _) = two_class(&spec).unwrap();
        let r = t.regime(REGIME_COLUMN).unwrap();
        assert_eq!(r.iter().filter(|v| *v == "3").count(), 20);
        let mean = |v: &str| {
            let rows: Vec<usize> = (0..60).filter(|&i| r[i] == v).collect();
            rows.iter()
                .map(|&i| t.row(i).iter().sum::<f64>())
                .sum::<f64>()
                / (rows.len() * 20) as f64
        };
        assert!(mean("3") - mean("1") > 3.0);
    }
}
