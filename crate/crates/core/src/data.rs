//! Dataset ingestion and data-preparation math.
//!
//! A [`DatasetTable`] holds the numeric parameter matrix, an optional raw
//! target column (with right-censoring flags for out-of-range readings),
//! categorical regime columns used by the fold protocol, and class labels.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Raw target column. Censored entries hold `f64::INFINITY` until clipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub name: String,
    pub values: Vec<f64>,
    pub censored: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathBuf,
    pub sha256: String,
}

/// Which columns to read, by header name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub parameters: Vec<String>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub regimes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    param_names: Vec<String>,
    /// Row-major `n × P`.
    values: Vec<f64>,
    n_rows: usize,
    target: Option<Target>,
    regimes: BTreeMap<String, Vec<String>>,
    labels: Option<Vec<usize>>,
    provenance: Option<Provenance>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_inf_token(s: &str) -> bool {
    let t = s.trim().trim_start_matches('+');
    t == "∞" || t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity")
}

impl DatasetTable {
    pub fn from_rows(param_names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = param_names.len();
        let mut values = Vec::with_capacity(rows.len() * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::Data(format!(
                    "row {i} has {} values, expected {p}",
                    r.len()
                )));
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "row {i}, column '{}': value must be finite",
                    param_names[j]
                )));
            }
            values.extend_from_slice(r);
        }
        Ok(DatasetTable {
            param_names,
            values,
            n_rows: rows.len(),
            target: None,
            regimes: BTreeMap::new(),
            labels: None,
            provenance: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n_rows {
            return Err(Error::Data(format!(
                "{} labels for {} rows",
                labels.len(),
                self.n_rows
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_target(mut self, target: Target) -> Result<Self> {
        if target.values.len() != self.n_rows || target.censored.len() != self.n_rows {
            return Err(Error::Data("target column length mismatch".into()));
        }
        self.target = Some(target);
        Ok(self)
    }

    pub fn with_regime(mut self, name: &str, values: Vec<String>) -> Result<Self> {
        if values.len() != self.n_rows {
            return Err(Error::Data(format!(
                "regime column '{name}' length mismatch"
            )));
        }
        self.regimes.insert(name.to_string(), values);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_params();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i)[j]).collect()
    }

    pub fn target(&self) -> Option<&Target> {
        self.target.as_ref()
    }

    pub fn regime(&self, name: &str) -> Option<&[String]> {
        self.regimes.get(name).map(Vec::as_slice)
    }

    pub fn regime_names(&self) -> impl Iterator<Item = &str> {
        self.regimes.keys().map(String::as_str)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or a data error if the table has not been labelled yet.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::Data("dataset has no class labels".into()))
    }

    pub fn n_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |&m| m + 1)
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn schema(&self) -> TableSchema {
        TableSchema {
            parameters: self.param_names.clone(),
            target: self.target.as_ref().map(|t| t.name.clone()),
            label: self.labels.as_ref().map(|_| "label".to_string()),
            regimes: self.regimes.keys().cloned().collect(),
        }
    }

    /// Drops the listed rows (0-based data-row indices).
    pub fn exclude_rows(&self, rows: &[usize]) -> Result<Self> {
        let drop: HashSet<usize> = rows.iter().copied().collect();
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_rows) {
            return Err(Error::Data(format!(
                "excluded row {bad} out of range for {} rows",
                self.n_rows
            )));
        }
        let keep: Vec<usize> = (0..self.n_rows).filter(|i| !drop.contains(i)).collect();
        Ok(self.select_rows(&keep))
    }

    fn select_rows(&self, keep: &[usize]) -> Self {
        let mut values = Vec::with_capacity(keep.len() * self.n_params());
        for &i in keep {
            values.extend_from_slice(self.row(i));
        }
        DatasetTable {
            param_names: self.param_names.clone(),
            values,
            n_rows: keep.len(),
            target: self.target.as_ref().map(|t| Target {
                name: t.name.clone(),
                values: keep.iter().map(|&i| t.values[i]).collect(),
                censored: keep.iter().map(|&i| t.censored[i]).collect(),
            }),
            regimes: self
                .regimes
                .iter()
                .map(|(k, v)| (k.clone(), keep.iter().map(|&i| v[i].clone()).collect()))
                .collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| keep.iter().map(|&i| l[i]).collect()),
            provenance: self.provenance.clone(),
        }
    }

    /// Replaces the target with its group-wise clipped version; censoring
    /// flags are kept.
    pub fn clip_censored(&self, group_column: &str) -> Result<Self> {
        let target = self
            .target
            .as_ref()
            .ok_or_else(|| Error::Data("no target column to clip".into()))?;
        let groups = self
            .regime(group_column)
            .ok_or_else(|| Error::Data(format!("unknown group column '{group_column}'")))?;
        let values = clip_censored(&target.values, &target.censored, groups)?;
        let mut out = self.clone();
        out.target = Some(Target {
            name: target.name.clone(),
            values,
            censored: target.censored.clone(),
        });
        Ok(out)
    }

    /// Labels every row from the raw target: high (1) when censored or at or
    /// above `threshold`, low (0) otherwise.
    pub fn binarize(&self, threshold: f64) -> Result<(Self, Binarization)> {
        let target = self
            .target
            .as_ref()
            .ok_or_else(|| Error::Data("no target column to binarize".into()))?;
        let b = binarize(target, threshold)?;
        let out = self.clone().with_labels(b.labels.clone())?;
        Ok((out, b))
    }

    /// Finite (uncensored) target values.
    pub fn finite_target_values(&self) -> Vec<f64> {
        self.target
            .as_ref()
            .map(|t| {
                t.values
                    .iter()
                    .zip(&t.censored)
                    .filter(|(v, &c)| !c && v.is_finite())
                    .map(|(&v, _)| v)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Writes a CSV with parameters, then target, regimes (not already
    /// parameters) and a `label` column. Returns the SHA-256 of the bytes.
    pub fn write_csv(&self, path: &Path) -> Result<String> {
        let bytes = self.to_csv_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let extra_regimes: Vec<&String> = self
            .regimes
            .keys()
            .filter(|k| !self.param_names.contains(k))
            .collect();
        let mut header: Vec<String> = self.param_names.clone();
        if let Some(t) = &self.target {
            header.push(t.name.clone());
        }
        header.extend(extra_regimes.iter().map(|s| s.to_string()));
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n_rows {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format_float(*v)).collect();
            if let Some(t) = &self.target {
                rec.push(if t.censored[i] && !t.values[i].is_finite() {
                    "inf".into()
                } else {
                    format_float(t.values[i])
                });
            }
            for k in &extra_regimes {
                rec.push(self.regimes[*k][i].clone());
            }
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.into_inner()
            .map_err(|e| Error::Data(format!("csv flush failed: {e}")))
    }
}

/// Canonical float text: shortest representation that round-trips.
pub fn format_float(v: f64) -> String {
    if v == 0.0 {
        // Avoid "-0".
        return "0".into();
    }
    format!("{v}")
}

/// Reads a UTF-8, comma-separated file with a header row.
pub fn load_csv(path: &Path, schema: &TableSchema) -> Result<DatasetTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut table = parse_csv(&bytes, path, schema)?;
    table.provenance = Some(Provenance {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    });
    Ok(table)
}

pub fn parse_csv(bytes: &[u8], path: &Path, schema: &TableSchema) -> Result<DatasetTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();

    let mut index = HashMap::new();
    let mut dupes = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if index.insert(h.clone(), i).is_some() {
            dupes.push(h.clone());
        }
    }
    if !dupes.is_empty() {
        return Err(Error::Data(format!(
            "{}: duplicate header(s): {}",
            path.display(),
            dupes.join(", ")
        )));
    }

    let mut wanted: Vec<&String> = schema.parameters.iter().collect();
    wanted.extend(schema.target.iter());
    wanted.extend(schema.label.iter());
    wanted.extend(schema.regimes.iter());
    let missing: Vec<&str> = wanted
        .iter()
        .filter(|w| !index.contains_key(w.as_str()))
        .map(|w| w.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{}: columns not found in header: {}",
            path.display(),
            missing.join(", ")
        )));
    }

    let cell_err = |row: usize, column: &str, message: String| Error::Cell {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };

    let p = schema.parameters.len();
    let mut values = Vec::new();
    let mut target_vals = Vec::new();
    let mut censored = Vec::new();
    let mut labels = Vec::new();
    let mut regimes: BTreeMap<String, Vec<String>> = schema
        .regimes
        .iter()
        .map(|r| (r.clone(), Vec::new()))
        .collect();
    let mut n_rows = 0;

    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // 1-based data row numbers, header excluded.
        let row = r + 1;
        let get = |name: &str| -> Result<&str> {
            let cell = rec.get(index[name]).unwrap_or("");
            if cell.is_empty() {
                Err(cell_err(row, name, "missing value".into()))
            } else {
                Ok(cell)
            }
        };
        for name in &schema.parameters {
            let cell = get(name)?;
            let v: f64 = cell
                .parse()
                .map_err(|_| cell_err(row, name, format!("non-numeric value '{cell}'")))?;
            if !v.is_finite() {
                return Err(cell_err(row, name, format!("non-finite value '{cell}'")));
            }
            values.push(v);
        }
        if let Some(name) = &schema.target {
            let cell = get(name)?;
            if is_inf_token(cell) {
                target_vals.push(f64::INFINITY);
                censored.push(true);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| cell_err(row, name, format!("non-numeric value '{cell}'")))?;
                if !v.is_finite() {
                    return Err(cell_err(row, name, format!("non-finite value '{cell}'")));
                }
                target_vals.push(v);
                censored.push(false);
            }
        }
        if let Some(name) = &schema.label {
            let cell = get(name)?;
            let v: usize = cell.parse().map_err(|_| {
                cell_err(
                    row,
                    name,
                    format!("label must be a class index, got '{cell}'"),
                )
            })?;
            labels.push(v);
        }
        for name in &schema.regimes {
            let cell = get(name)?;
            regimes
                .get_mut(name)
                .expect("declared")
                .push(cell.to_string());
        }
        n_rows += 1;
    }

    debug_assert_eq!(values.len(), n_rows * p);
    Ok(DatasetTable {
        param_names: schema.parameters.clone(),
        values,
        n_rows,
        target: schema.target.as_ref().map(|name| Target {
            name: name.clone(),
            values: target_vals,
            censored,
        }),
        regimes,
        labels: schema.label.as_ref().map(|_| labels),
        provenance: None,
    })
}

/// Replaces censored entries with the largest finite value of their group.
pub fn clip_censored(values: &[f64], censored: &[bool], groups: &[String]) -> Result<Vec<f64>> {
    if values.len() != censored.len() || values.len() != groups.len() {
        return Err(Error::Data("clip_censored: column lengths differ".into()));
    }
    let mut group_max: BTreeMap<&str, f64> = BTreeMap::new();
    for ((v, &c), g) in values.iter().zip(censored).zip(groups) {
        let entry = group_max.entry(g.as_str()).or_insert(f64::NEG_INFINITY);
        if !c && v.is_finite() {
            *entry = entry.max(*v);
        }
    }
    if let Some((g, _)) = group_max.iter().find(|(_, m)| !m.is_finite()) {
        return Err(Error::Data(format!(
            "group '{g}' has no finite target value"
        )));
    }
    Ok(values
        .iter()
        .zip(censored)
        .zip(groups)
        .map(|((&v, &c), g)| if c { group_max[g.as_str()] } else { v })
        .collect())
}

/// Largest adjacent gap in log space and its geometric midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapThreshold {
    pub threshold: f64,
    pub lower: f64,
    pub upper: f64,
    pub log10_gap: f64,
}

/// Sorts the values, finds the adjacent pair with the largest `log10`
/// ratio (first pair wins ties) and returns `√(lower · upper)`.
pub fn gap_threshold(values: &[f64]) -> Result<GapThreshold> {
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Data(format!(
            "gap threshold needs positive finite values, got {v}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < 2 {
        return Err(Error::Data(
            "gap threshold needs at least two distinct values".into(),
        ));
    }
    let mut best = 0;
    let mut best_ratio = sorted[1] / sorted[0];
    for i in 1..sorted.len() - 1 {
        let ratio = sorted[i + 1] / sorted[i];
        if ratio > best_ratio {
            best = i;
            best_ratio = ratio;
        }
    }
    let (lower, upper) = (sorted[best], sorted[best + 1]);
    Ok(GapThreshold {
        threshold: (lower * upper).sqrt(),
        lower,
        upper,
        log10_gap: best_ratio.log10(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binarization {
    pub threshold: f64,
    /// 0 = low, 1 = high.
    pub labels: Vec<usize>,
    pub n_low: usize,
    pub n_high: usize,
    pub single_class: bool,
}

pub fn binarize(target: &Target, threshold: f64) -> Result<Binarization> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Config(format!(
            "threshold must be positive and finite, got {threshold}"
        )));
    }
    let labels: Vec<usize> = target
        .values
        .iter()
        .zip(&target.censored)
        .map(|(&v, &c)| usize::from(c || v >= threshold))
        .collect();
    let n_high = labels.iter().filter(|&&l| l == 1).count();
    let n_low = labels.len() - n_high;
    let single_class = n_high == 0 || n_low == 0;
    if single_class {
        warn!("threshold {threshold} puts every row in one class");
    }
    Ok(Binarization {
        threshold,
        labels,
        n_low,
        n_high,
        single_class,
    })
}

/// Areal energy density `P / (v h)` in mJ/µm² for P in mW, v in µm/s, h in µm.
pub fn aed(power_mw: f64, speed_um_s: f64, hatch_um: f64) -> Result<f64> {
    if !(speed_um_s > 0.0) || !(hatch_um > 0.0) {
        return Err(Error::Data(format!(
            "scan speed and hatch spacing must be positive (v = {speed_um_s}, h = {hatch_um})"
        )));
    }
    Ok(power_mw / (speed_um_s * hatch_um))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema(params: &[&str]) -> TableSchema {
        TableSchema {
            parameters: params.iter().map(|s| s.to_string()).collect(),
            target: Some("rs".into()),
            label: None,
            regimes: vec!["conc".into()],
        }
    }

    #[test]
    fn load_flags_censored_cells() {
        let csv = "a,b,rs,conc\n1,2,3.5,5\n4,5,inf,5\n7,8,∞,10\n";
        let t = parse_csv(csv.as_bytes(), Path::new("x.csv"), &schema(&["a", "b"])).unwrap();
        assert_eq!(t.n_rows(), 3);
        let target = t.target().unwrap();
        assert_eq!(target.censored, vec![false, true, true]);
        assert_eq!(t.row(2), &[7.0, 8.0]);
        let one = "a,b,rs,conc\n1,2,Inf,5\n";
        let t = parse_csv(one.as_bytes(), Path::new("x.csv"), &schema(&["a", "b"])).unwrap();
        assert_eq!(
            t.target().unwrap().censored.iter().filter(|&&c| c).count(),
            1
        );
    }

    #[test]
    fn load_errors_carry_coordinates() {
        let bad = "a,b,rs,conc\n1,x,3,5\n";
        match parse_csv(bad.as_bytes(), Path::new("x.csv"), &schema(&["a", "b"])) {
            Err(Error::Cell { row, column, .. }) => assert_eq!((row, column.as_str()), (1, "b")),
            other => panic!("{other:?}"),
        }
        let missing = "a,rs,conc\n1,3,5\n";
        let err = parse_csv(
            missing.as_bytes(),
            Path::new("x.csv"),
            &schema(&["a", "b", "c"]),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("b, c"), "{err}");
        let dup = "a,a,rs,conc\n1,2,3,5\n";
        assert!(parse_csv(dup.as_bytes(), Path::new("x.csv"), &schema(&["a"])).is_err());
        let empty = "a,b,rs,conc\n1,,3,5\n";
        assert!(matches!(
            parse_csv(empty.as_bytes(), Path::new("x.csv"), &schema(&["a", "b"])),
            Err(Error::Cell { .. })
        ));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("a.csv");
        std::fs::write(&src, "a,b,rs,conc\n1.5,2,3.25,5\n-4,0.1,inf,10\n").unwrap();
        let t = load_csv(&src, &schema(&["a", "b"])).unwrap();
        let p1 = dir.path().join("b.csv");
        let h1 = t.write_csv(&p1).unwrap();
        let t1 = load_csv(&p1, &t.schema()).unwrap();
        let p2 = dir.path().join("c.csv");
        let h2 = t1.write_csv(&p2).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(t1.provenance().unwrap().sha256, h1);
        assert_eq!(t.row(1), t1.row(1));
        assert_eq!(t.target(), t1.target());
        assert_eq!(t.regime("conc"), t1.regime("conc"));
    }

    #[test]
    fn clip_examples() {
        let g: Vec<String> = vec!["5".into(); 3];
        let out = clip_censored(&[2.0, 7.0, f64::INFINITY], &[false, false, true], &g).unwrap();
        assert_eq!(out, vec![2.0, 7.0, 7.0]);
        let out = clip_censored(&[2.0, 7.0, 1.0], &[false; 3], &g).unwrap();
        assert_eq!(out, vec![2.0, 7.0, 1.0]);
        let err = clip_censored(&[f64::INFINITY], &[true], &["15".to_string()]).unwrap_err();
        assert!(err.to_string().contains("'15'"));
    }

    #[test]
    fn gap_examples() {
        let g = gap_threshold(&[1.0, 100.0]).unwrap();
        assert!((g.threshold - 10.0).abs() < 1e-12);
        let g = gap_threshold(&[60.0, 95.5, 123.8, 552.7, 900.0, 2000.0]).unwrap();
        assert_eq!((g.lower, g.upper), (123.8, 552.7));
        assert!((g.threshold - (123.8f64 * 552.7).sqrt()).abs() < 1e-12);
        // Uniform log gaps: the first pair wins.
        let g = gap_threshold(&[8.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!((g.lower, g.upper), (1.0, 2.0));
        assert!(gap_threshold(&[0.0, 1.0]).is_err());
        assert!(gap_threshold(&[3.0, 3.0]).is_err());
    }

    #[test]
    fn binarize_examples() {
        let t = Target {
            name: "rs".into(),
            values: vec![1.0, 260.0, 300.0, f64::INFINITY],
            censored: vec![false, false, false, true],
        };
        let b = binarize(&t, 260.0).unwrap();
        assert_eq!(b.labels, vec![0, 1, 1, 1]);
        assert_eq!((b.n_low, b.n_high), (1, 3));
        let low = Target {
            name: "rs".into(),
            values: vec![1.0, 2.0],
            censored: vec![false, false],
        };
        assert!(binarize(&low, 260.0).unwrap().single_class);
        assert!(binarize(&low, 0.0).is_err());
    }

    #[test]
    fn aed_examples() {
        assert_eq!(aed(50.0, 50.0, 5.0).unwrap(), 0.2);
        assert_eq!(aed(75.0, 500.0, 10.0).unwrap(), 0.015);
        assert_eq!(
            aed(75.0, 1000.0, 10.0).unwrap() * 2.0,
            aed(75.0, 500.0, 10.0).unwrap()
        );
        assert!(aed(1.0, 0.0, 1.0).is_err());
        assert!(aed(1.0, 1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(vals in prop::collection::vec((0.1f64..1e4, any::<bool>(), 0usize..3), 1..30)) {
            let mut values: Vec<f64> = vals.iter().map(|v| if v.1 { f64::INFINITY } else { v.0 }).collect();
            let mut censored: Vec<bool> = vals.iter().map(|v| v.1).collect();
            let groups: Vec<String> = vals.iter().map(|v| v.2.to_string()).collect();
            // Make sure every group has one finite value.
            for g in 0..3 {
                if let Some(i) = groups.iter().position(|x| x == &g.to_string()) {
                    censored[i] = false;
                    values[i] = vals[i].0;
                }
            }
            let once = clip_censored(&values, &censored, &groups).unwrap();
            let twice = clip_censored(&once, &censored, &groups).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn gap_threshold_is_scale_covariant(vals in prop::collection::vec(0.01f64..1e5, 2..20), s in 0.01f64..100.0) {
            prop_assume!(vals.iter().any(|v| *v != vals[0]));
            let a = gap_threshold(&vals).unwrap();
            let scaled: Vec<f64> = vals.iter().map(|v| v * s).collect();
            let b = gap_threshold(&scaled).unwrap();
            // Pick must be the same pair unless two gaps are within rounding.
            if (a.lower * s - b.lower).abs() <= 1e-9 * b.lower {
                prop_assert!((a.threshold * s - b.threshold).abs() <= 1e-9 * b.threshold);
            }
        }
    }
}
