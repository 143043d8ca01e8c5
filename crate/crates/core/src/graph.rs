//! Directed group graph: parameter grouping, group bundling, predecessor
//! binding and sample composition.
//!
//! Parameters are partitioned into named groups. Each group hypervector is
//! the normalized bundle of its parameter hypervectors; a group with direct
//! predecessors is bound (Hadamard) with each of them, one hop only; the
//! sample hypervector is the normalized bundle of the bound groups.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdc::{normalize_in_place, Hypervector};
use crate::kernel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    /// Parameter (column) indices, in file order.
    pub params: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub groups: Vec<Group>,
    /// Directed `(from, to)` pairs over group indices.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    ParameterInMultipleGroups { param: usize, groups: Vec<String> },
    MissingParameter { param: usize },
    UnknownParameter { group: String, param: usize },
    UnknownColumn { group: String, column: String },
    EmptyGroup { group: String },
    DuplicateGroupName { name: String },
    UnknownGroup { name: String },
    EdgeOutOfRange { from: usize, to: usize },
    SelfLoop { group: String },
    DuplicateEdge { from: String, to: String },
    Cycle,
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::ParameterInMultipleGroups { param, groups } => write!(
                f,
                "parameter {param} in {} groups ({})",
                if groups.len() == 2 {
                    "two".to_string()
                } else {
                    groups.len().to_string()
                },
                groups.join(", ")
            ),
            GraphError::MissingParameter { param } => {
                write!(f, "parameter {param} is not assigned to any group")
            }
            GraphError::UnknownParameter { group, param } => {
                write!(f, "group '{group}' references unknown parameter {param}")
            }
            GraphError::UnknownColumn { group, column } => {
                write!(f, "group '{group}' references unknown column '{column}'")
            }
            GraphError::EmptyGroup { group } => write!(f, "group '{group}' is empty"),
            GraphError::DuplicateGroupName { name } => write!(f, "duplicate group name '{name}'"),
            GraphError::UnknownGroup { name } => {
                write!(f, "edge references unknown group '{name}'")
            }
            GraphError::EdgeOutOfRange { from, to } => {
                write!(
                    f,
                    "edge ({from}, {to}) references a group index out of range"
                )
            }
            GraphError::SelfLoop { group } => write!(f, "self-loop on group '{group}'"),
            GraphError::DuplicateEdge { from, to } => {
                write!(f, "duplicate edge '{from}' -> '{to}'")
            }
            GraphError::Cycle => write!(f, "group graph contains a cycle"),
        }
    }
}

/// Non-fatal findings from [`GraphSpec::validate`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub warnings: Vec<String>,
}

impl GraphSpec {
    /// Single group holding every parameter, no edges.
    pub fn single_group(n_params: usize) -> Self {
        GraphSpec {
            groups: vec![Group {
                name: "all".into(),
                params: (0..n_params).collect(),
            }],
            edges: Vec::new(),
        }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_params(&self) -> usize {
        self.groups.iter().map(|g| g.params.len()).sum()
    }

    /// Direct predecessors of group `k`, ascending.
    pub fn predecessors(&self, k: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .edges
            .iter()
            .filter(|&&(_, to)| to == k)
            .map(|&(from, _)| from)
            .collect();
        set.into_iter().collect()
    }

    /// Group index of every parameter.
    pub fn group_of(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.n_params()];
        for (k, g) in self.groups.iter().enumerate() {
            for &j in &g.params {
                if j < out.len() {
                    out[j] = k;
                }
            }
        }
        out
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn is_cyclic(&self) -> bool {
        let mut g = DiGraph::<(), ()>::new();
        let nodes: Vec<_> = (0..self.groups.len()).map(|_| g.add_node(())).collect();
        for &(from, to) in &self.edges {
            if from < nodes.len() && to < nodes.len() {
                g.add_edge(nodes[from], nodes[to], ());
            }
        }
        petgraph::algo::is_cyclic_directed(&g)
    }

    /// Checks every structural invariant against `n_params` parameters and
    /// reports all violations. With `strict`, cycles are errors rather than
    /// warnings.
    pub fn validate(
        &self,
        n_params: usize,
        strict: bool,
    ) -> std::result::Result<ValidationReport, Vec<GraphError>> {
        let mut errors = Vec::new();
        let mut report = ValidationReport::default();

        let mut seen_names = BTreeSet::new();
        for g in &self.groups {
            if !seen_names.insert(g.name.as_str()) {
                errors.push(GraphError::DuplicateGroupName {
                    name: g.name.clone(),
                });
            }
            if g.params.is_empty() {
                errors.push(GraphError::EmptyGroup {
                    group: g.name.clone(),
                });
            }
        }

        let mut owners: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for g in &self.groups {
            for &j in &g.params {
                if j >= n_params {
                    errors.push(GraphError::UnknownParameter {
                        group: g.name.clone(),
                        param: j,
                    });
                } else {
                    owners.entry(j).or_default().push(g.name.clone());
                }
            }
        }
        for (&param, groups) in &owners {
            if groups.len() > 1 {
                errors.push(GraphError::ParameterInMultipleGroups {
                    param,
                    groups: groups.clone(),
                });
            }
        }
        for param in 0..n_params {
            if !owners.contains_key(&param) {
                errors.push(GraphError::MissingParameter { param });
            }
        }

        let k = self.groups.len();
        let name = |i: usize| self.groups[i].name.clone();
        let mut seen_edges = BTreeSet::new();
        for &(from, to) in &self.edges {
            if from >= k || to >= k {
                errors.push(GraphError::EdgeOutOfRange { from, to });
                continue;
            }
            if from == to {
                errors.push(GraphError::SelfLoop { group: name(from) });
            }
            if !seen_edges.insert((from, to)) {
                errors.push(GraphError::DuplicateEdge {
                    from: name(from),
                    to: name(to),
                });
            }
        }

        if self.is_cyclic() {
            if strict {
                errors.push(GraphError::Cycle);
            } else {
                report.warnings.push(
                    "group graph is cyclic; binding still uses direct predecessors only".into(),
                );
            }
        }

        if errors.is_empty() {
            Ok(report)
        } else {
            Err(errors)
        }
    }

    pub fn validated(self, n_params: usize, strict: bool) -> Result<(Self, ValidationReport)> {
        match self.validate(n_params, strict) {
            Ok(report) => {
                for w in &report.warnings {
                    log::warn!("{w}");
                }
                Ok((self, report))
            }
            Err(errors) => Err(Error::Graph(errors)),
        }
    }
}

/// On-disk graph description, with parameters and edge endpoints by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSpecFile {
    #[serde(default)]
    pub edges: Vec<[String; 2]>,
    pub groups: Vec<GroupFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupFile {
    pub name: String,
    pub parameters: Vec<String>,
}

impl GraphSpecFile {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            Ok(serde_json::from_str(&text)?)
        } else {
            Ok(toml::from_str(&text)?)
        }
    }

    /// Parameter names in group order; the natural dataset schema.
    pub fn parameter_names(&self) -> Vec<String> {
        self.groups
            .iter()
            .flat_map(|g| g.parameters.iter().cloned())
            .collect()
    }

    /// Resolves names against dataset columns. Reports every unknown name.
    pub fn resolve(&self, columns: &[String]) -> Result<GraphSpec> {
        let index: HashMap<&str, usize> = columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let mut errors = Vec::new();
        let mut groups = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let mut params = Vec::with_capacity(g.parameters.len());
            for c in &g.parameters {
                match index.get(c.as_str()) {
                    Some(&i) => params.push(i),
                    None => errors.push(GraphError::UnknownColumn {
                        group: g.name.clone(),
                        column: c.clone(),
                    }),
                }
            }
            groups.push(Group {
                name: g.name.clone(),
                params,
            });
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for [from, to] in &self.edges {
            let f = self.groups.iter().position(|g| &g.name == from);
            let t = self.groups.iter().position(|g| &g.name == to);
            for (name, pos) in [(from, f), (to, t)] {
                if pos.is_none() {
                    errors.push(GraphError::UnknownGroup { name: name.clone() });
                }
            }
            if let (Some(f), Some(t)) = (f, t) {
                edges.push((f, t));
            }
        }
        if errors.is_empty() {
            Ok(GraphSpec { groups, edges })
        } else {
            Err(Error::Graph(errors))
        }
    }

    pub fn from_spec(spec: &GraphSpec, columns: &[String]) -> Self {
        GraphSpecFile {
            edges: spec
                .edges
                .iter()
                .map(|&(f, t)| [spec.groups[f].name.clone(), spec.groups[t].name.clone()])
                .collect(),
            groups: spec
                .groups
                .iter()
                .map(|g| GroupFile {
                    name: g.name.clone(),
                    parameters: g.params.iter().map(|&j| columns[j].clone()).collect(),
                })
                .collect(),
        }
    }
}

/// Group hypervector: `normalize(Σ_{j∈S_k} h_j)`.
pub fn group_hv(param_hvs: &[Hypervector], spec: &GraphSpec, k: usize) -> Hypervector {
    let dim = param_hvs.first().map(|h| h.dim()).unwrap_or(0);
    let mut acc = vec![0.0; dim];
    for &j in &spec.groups[k].params {
        kernel::add_assign(&mut acc, &param_hvs[j]);
    }
    normalize_in_place(&mut acc);
    Hypervector::new(acc)
}

/// Binds each group with its direct predecessors, in ascending index order.
pub fn bind_predecessors(group: &[f64], preds: &[&[f64]], out: &mut [f64]) {
    out.copy_from_slice(group);
    for p in preds {
        kernel::mul_assign(out, p);
    }
}

/// `ñ_k = n_k ⊙ ⨀_{u∈pred(k)} n_u` for every group.
pub fn graph_bind(group_hvs: &[Hypervector], spec: &GraphSpec) -> Vec<Hypervector> {
    (0..spec.n_groups())
        .map(|k| {
            let preds: Vec<&[f64]> = spec
                .predecessors(k)
                .into_iter()
                .map(|u| group_hvs[u].as_slice())
                .collect();
            let mut out = vec![0.0; group_hvs[k].dim()];
            bind_predecessors(&group_hvs[k], &preds, &mut out);
            Hypervector::new(out)
        })
        .collect()
}

/// `normalize(Σ_k ñ_k)`.
pub fn sample_hv(bound: &[Hypervector]) -> Result<Hypervector> {
    crate::hdc::nbundle(bound)
}

/// Every intermediate of composing one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub groups: Vec<Hypervector>,
    pub bound: Vec<Hypervector>,
    pub sample: Hypervector,
}

pub fn compose(param_hvs: &[Hypervector], spec: &GraphSpec) -> Result<Composition> {
    let groups: Vec<Hypervector> = (0..spec.n_groups())
        .map(|k| group_hv(param_hvs, spec, k))
        .collect();
    let bound = graph_bind(&groups, spec);
    let sample = sample_hv(&bound)?;
    Ok(Composition {
        groups,
        bound,
        sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hdc::nbundle;

    fn spec(groups: &[&[usize]], edges: &[(usize, usize)]) -> GraphSpec {
        GraphSpec {
            groups: groups
                .iter()
                .enumerate()
                .map(|(k, p)| Group {
                    name: format!("g{}", k + 1),
                    params: p.to_vec(),
                })
                .collect(),
            edges: edges.to_vec(),
        }
    }

    fn hv(v: &[f64]) -> Hypervector {
        Hypervector::new(v.to_vec())
    }

    #[test]
    fn validate_examples() {
        let ok = spec(&[&[0, 1, 2, 3], &[4, 5, 6, 7]], &[(0, 1)]);
        assert!(ok.validate(8, true).is_ok());

        let overlap = spec(&[&[0, 1, 2, 3], &[3, 4, 5, 6, 7]], &[]);
        let errs = overlap.validate(8, false).unwrap_err();
        assert!(errs.contains(&GraphError::ParameterInMultipleGroups {
            param: 3,
            groups: vec!["g1".into(), "g2".into()]
        }));
        assert!(errs[0].to_string().contains("in two groups"));

        let self_loop = spec(&[&[0, 1, 2], &[3]], &[(2, 2)]);
        let errs = self_loop.validate(4, false).unwrap_err();
        assert_eq!(errs, vec![GraphError::EdgeOutOfRange { from: 2, to: 2 }]);
        let self_loop = spec(&[&[0, 1, 2], &[3]], &[(1, 1)]);
        let errs = self_loop.validate(4, false).unwrap_err();
        assert_eq!(errs, vec![GraphError::SelfLoop { group: "g2".into() }]);
        assert!(errs[0].to_string().contains("self-loop"));
    }

    #[test]
    fn validate_reports_every_violation() {
        let mut bad = spec(&[&[0, 1], &[1, 9], &[]], &[(0, 1), (0, 1), (2, 2)]);
        bad.groups[2].name = "g1".into();
        let errs = bad.validate(4, false).unwrap_err();
        assert!(errs.contains(&GraphError::DuplicateGroupName { name: "g1".into() }));
        assert!(errs.contains(&GraphError::EmptyGroup { group: "g1".into() }));
        assert!(errs.contains(&GraphError::UnknownParameter {
            group: "g2".into(),
            param: 9
        }));
        assert!(errs.contains(&GraphError::MissingParameter { param: 2 }));
        assert!(errs.contains(&GraphError::MissingParameter { param: 3 }));
        assert!(errs
            .iter()
            .any(|e| matches!(e, GraphError::ParameterInMultipleGroups { param: 1, .. })));
        assert!(errs
            .iter()
            .any(|e| matches!(e, GraphError::DuplicateEdge { .. })));
        assert!(errs
            .iter()
            .any(|e| matches!(e, GraphError::SelfLoop { .. })));
    }

    #[test]
    fn cycles_warn_or_fail() {
        let cyc = spec(&[&[0], &[1]], &[(0, 1), (1, 0)]);
        let report = cyc.validate(2, false).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(cyc.validate(2, true).unwrap_err(), vec![GraphError::Cycle]);
    }

    #[test]
    fn group_hv_examples() {
        let s = spec(&[&[0], &[1, 2]], &[]);
        let h = vec![hv(&[3.0, 4.0]), hv(&[1.0, -2.0]), hv(&[-1.0, 2.0])];
        let g0 = group_hv(&h, &s, 0);
        assert!((g0[0] - 0.6).abs() < 1e-15 && (g0[1] - 0.8).abs() < 1e-15);
        assert!(group_hv(&h, &s, 1).is_zero());

        // Three-member group on a 6-dim fixture against sum-then-normalize.
        let s3 = spec(&[&[0, 1, 2]], &[]);
        let h3 = vec![
            hv(&[0.1, -0.5, 0.3, 0.9, -0.2, 0.05]),
            hv(&[0.4, 0.2, -0.7, 0.1, 0.3, -0.6]),
            hv(&[-0.3, 0.8, 0.2, -0.4, 0.5, 0.1]),
        ];
        let got = group_hv(&h3, &s3, 0);
        let sum: Vec<f64> = (0..6).map(|t| h3[0][t] + h3[1][t] + h3[2][t]).collect();
        let n = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        for t in 0..6 {
            assert!((got[t] - sum[t] / n).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_bind_examples() {
        let n = vec![
            hv(&[0.5, -0.5, 0.5, 0.5]),
            hv(&[0.1, 0.2, 0.3, 0.4]),
            hv(&[-1.0, 2.0, 0.5, 3.0]),
        ];
        let edgeless = spec(&[&[0], &[1], &[2]], &[]);
        assert_eq!(graph_bind(&n, &edgeless), n);

        let ones = vec![hv(&[1.0; 4]), n[1].clone()];
        let s = spec(&[&[0], &[1]], &[(0, 1)]);
        assert_eq!(graph_bind(&ones, &s)[1], n[1]);

        // Chain 1→2→3: ñ₃ = n₃⊙n₂, not n₃⊙n₂⊙n₁.
        let chain = spec(&[&[0], &[1], &[2]], &[(0, 1), (1, 2)]);
        let b = graph_bind(&n, &chain);
        assert_eq!(b[0], n[0]);
        assert_eq!(b[1].as_slice(), &[0.05, -0.1, 0.15, 0.2]);
        let expect3: Vec<f64> = (0..4).map(|t| n[2][t] * n[1][t]).collect();
        assert_eq!(b[2].as_slice(), expect3.as_slice());
    }

    #[test]
    fn sample_hv_examples() {
        let n1 = hv(&[0.6, 0.8, 0.0]);
        let s = sample_hv(std::slice::from_ref(&n1)).unwrap();
        for t in 0..3 {
            assert!((s[t] - n1[t]).abs() < 1e-15);
        }
        let opposite = vec![hv(&[0.6, 0.8, 0.0]), hv(&[-0.6, -0.8, 0.0])];
        assert!(sample_hv(&opposite).unwrap().is_zero());

        let four = vec![
            hv(&[0.1, 0.2, 0.3]),
            hv(&[-0.4, 0.1, 0.0]),
            hv(&[0.3, 0.3, -0.2]),
            hv(&[0.05, -0.5, 0.7]),
        ];
        let got = sample_hv(&four).unwrap();
        let sum: Vec<f64> = (0..3).map(|t| four.iter().map(|v| v[t]).sum()).collect();
        let n = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        for t in 0..3 {
            assert!((got[t] - sum[t] / n).abs() < 1e-12);
        }
    }

    #[test]
    fn edgeless_composition_is_nbundle_of_groups() {
        let s = spec(&[&[0, 2], &[1]], &[]);
        let h = vec![
            hv(&[0.3, -0.1, 0.2]),
            hv(&[0.5, 0.5, -0.5]),
            hv(&[-0.2, 0.4, 0.1]),
        ];
        let c = compose(&h, &s).unwrap();
        assert_eq!(c.sample, nbundle(&c.groups).unwrap());
    }

    #[test]
    fn file_round_trip_and_resolution() {
        let text = r#"
edges = [["Process", "Composition"]]

[[groups]]
name = "Process"
parameters = ["power", "speed"]

[[groups]]
name = "Composition"
parameters = ["ag", "o"]
"#;
        let file: GraphSpecFile = toml::from_str(text).unwrap();
        let cols: Vec<String> = ["speed", "ag", "power", "o"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let s = file.resolve(&cols).unwrap();
        assert_eq!(s.groups[0].params, vec![2, 0]);
        assert_eq!(s.edges, vec![(0, 1)]);
        assert_eq!(GraphSpecFile::from_spec(&s, &cols), file);

        let missing: Vec<String> = ["speed", "ag"].iter().map(|s| s.to_string()).collect();
        match file.resolve(&missing) {
            Err(Error::Graph(errs)) => assert_eq!(errs.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
