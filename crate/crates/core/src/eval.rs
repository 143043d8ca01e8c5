//! Evaluation protocols: repeated random splits, regime hold-out folds,
//! classification metrics and the `(d, η, E)` sweep.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_float, DatasetTable};
use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::rng::{self, Stream};
use crate::trainer::{TrainConfig, TrainOutcome, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Random,
    GroupFold,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Random => "random",
            Protocol::GroupFold => "group_fold",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Protocol::Random),
            "fold" | "group_fold" => Ok(Protocol::GroupFold),
            _ => Err(Error::Config(format!("unknown protocol '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub n_repeats: usize,
    pub train_fraction: f64,
    /// Regime or parameter column whose distinct values define the folds.
    pub fold_column: Option<String>,
    pub base_seed: u64,
    /// Draw the training fraction within each class.
    pub stratified: bool,
    /// Redraws allowed per split when a class is missing from train.
    pub max_retries: usize,
    /// Use `base_seed` as the model seed of every split instead of
    /// `base_seed ^ split_index`.
    pub shared_model_seed: bool,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            protocol: Protocol::Random,
            n_repeats: 1000,
            train_fraction: 0.8,
            fold_column: None,
            base_seed: 0,
            stratified: false,
            max_retries: 100,
            shared_model_seed: false,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self, table: &DatasetTable) -> Result<()> {
        match self.protocol {
            Protocol::Random => {
                if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
                    return Err(Error::Config(format!(
                        "train_fraction must lie in (0, 1), got {}",
                        self.train_fraction
                    )));
                }
                if self.n_repeats == 0 {
                    return Err(Error::Config("n_repeats must be at least 1".into()));
                }
                if table.n_rows() < 2 {
                    return Err(Error::Config("random splits need at least 2 rows".into()));
                }
            }
            Protocol::GroupFold => {
                fold_values(table, self.fold_column.as_deref())?;
            }
        }
        Ok(())
    }

    pub fn model_seed(&self, split: usize) -> u64 {
        if self.shared_model_seed {
            self.base_seed
        } else {
            rng::split_seed(self.base_seed, split)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub index: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Held-out value for group folds.
    pub fold: Option<String>,
    /// Draws rejected before this one.
    pub redraws: usize,
}

fn fold_values(table: &DatasetTable, column: Option<&str>) -> Result<Vec<String>> {
    let name = column.ok_or_else(|| Error::Config("group_fold needs a fold_column".into()))?;
    let values: Vec<String> = if let Some(v) = table.regime(name) {
        v.to_vec()
    } else if let Some(j) = table.param_names().iter().position(|p| p == name) {
        table.column(j).into_iter().map(format_float).collect()
    } else {
        return Err(Error::Config(format!(
            "fold column '{name}' not found in the table"
        )));
    };
    let distinct: BTreeSet<&String> = values.iter().collect();
    if distinct.len() < 2 {
        return Err(Error::Config(format!(
            "fold column '{name}' has a single distinct value"
        )));
    }
    Ok(values)
}

/// Distinct values, numerically ordered when all parse as numbers.
fn ordered_levels(values: &[String]) -> Vec<String> {
    let mut levels: Vec<String> = values
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let numeric: Option<Vec<f64>> = levels.iter().map(|v| v.trim().parse().ok()).collect();
    if let Some(nums) = numeric {
        let mut paired: Vec<(f64, String)> = nums.into_iter().zip(levels).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        levels = paired.into_iter().map(|(_, v)| v).collect();
    }
    levels
}

/// Training-set size for `n` rows: `⌈fraction·n⌉`, kept within `1..n`.
pub fn train_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).clamp(1, n - 1)
}

pub fn make_splits(plan: &SplitPlan, table: &DatasetTable) -> Result<Vec<Split>> {
    plan.validate(table)?;
    let labels = table.require_labels()?;
    match plan.protocol {
        Protocol::Random => random_splits(plan, labels),
        Protocol::GroupFold => {
            let values = fold_values(table, plan.fold_column.as_deref())?;
            Ok(ordered_levels(&values)
                .into_iter()
                .enumerate()
                .map(|(index, level)| {
                    let (test, train) = (0..values.len()).partition(|&i| values[i] == level);
                    Split {
                        index,
                        train,
                        test,
                        fold: Some(level),
                        redraws: 0,
                    }
                })
                .collect())
        }
    }
}

fn random_splits(plan: &SplitPlan, labels: &[usize]) -> Result<Vec<Split>> {
    let n = labels.len();
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let mut rng = rng::stream(plan.base_seed, Stream::Splits);
    let mut by_class: Vec<Vec<usize>> = Vec::new();
    if plan.stratified {
        by_class = classes
            .iter()
            .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
            .collect();
    }
    let mut out = Vec::with_capacity(plan.n_repeats);
    for index in 0..plan.n_repeats {
        let mut redraws = 0;
        loop {
            let mut train = Vec::new();
            if plan.stratified {
                for members in &by_class {
                    let mut m = members.clone();
                    m.shuffle(&mut rng);
                    let k = if m.len() < 2 {
                        m.len()
                    } else {
                        train_size(m.len(), plan.train_fraction)
                    };
                    train.extend_from_slice(&m[..k]);
                }
            } else {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                perm.truncate(train_size(n, plan.train_fraction));
                train = perm;
            }
            let seen: BTreeSet<usize> = train.iter().map(|&i| labels[i]).collect();
            if seen == classes {
                train.sort_unstable();
                let in_train: BTreeSet<usize> = train.iter().copied().collect();
                let test = (0..n).filter(|i| !in_train.contains(i)).collect();
                out.push(Split {
                    index,
                    train,
                    test,
                    fold: None,
                    redraws,
                });
                break;
            }
            redraws += 1;
            if redraws > plan.max_retries {
                return Err(Error::Split {
                    split: index,
                    source: Box::new(Error::Data(format!(
                        "no draw with every class in train after {} retries",
                        plan.max_retries
                    ))),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy plus macro precision, recall and F1 over classes
/// `0..n_classes` and any class seen in either vector. Undefined ratios
/// count as 0.
pub fn classification_metrics(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Metrics {
    assert_eq!(y_true.len(), y_pred.len());
    let n_classes = y_true
        .iter()
        .chain(y_pred)
        .map(|&c| c + 1)
        .max()
        .unwrap_or(0)
        .max(n_classes);
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| {
        if a + b == 0 {
            0.0
        } else {
            a as f64 / (a + b) as f64
        }
    };
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in 0..n_classes {
        let p = ratio(tp[c], fp[c]);
        let r = ratio(tp[c], fn_[c]);
        p_sum += p;
        r_sum += r;
        f_sum += if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
    }
    let k = n_classes.max(1) as f64;
    let correct: usize = tp.iter().sum();
    Metrics {
        accuracy: if y_true.is_empty() {
            0.0
        } else {
            correct as f64 / y_true.len() as f64
        },
        precision: p_sum / k,
        recall: r_sum / k,
        f1: f_sum / k,
    }
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        let (mean, std) = mean_std(v);
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split_id: usize,
    pub seed: u64,
    pub fold: Option<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub redraws: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub degenerate_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAccuracy {
    pub fold: String,
    pub n_test: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub protocol: Protocol,
    pub n_splits: usize,
    /// How precision, recall and F1 are averaged over classes.
    pub averaging: String,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub folds: Vec<FoldAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricSet,
    pub records: Vec<SplitRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Record held-out accuracy at every epoch of the history.
    pub test_history: bool,
}

fn run_pool<T: Send>(jobs: Option<usize>, work: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(work()),
        Some(0) => Err(Error::Config("jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(work))
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}"))),
    }
}

/// First error in split order, so parallel and serial runs fail alike.
fn collect_ordered<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

fn annotate<T>(split: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Split {
        split,
        source: Box::new(e),
    })
}

pub fn evaluate(
    table: &DatasetTable,
    spec: &GraphSpec,
    config: &TrainConfig,
    plan: &SplitPlan,
) -> Result<Evaluation> {
    evaluate_with(table, spec, config, plan, EvalOptions::default(), |_, _| {
        Ok(())
    })
    .map(|(e, _)| e)
}

/// Trains one model per split and scores it on the held-out rows.
/// `inspect` sees every split's outcome; its results come back in split
/// order.
pub fn evaluate_with<T, F>(
    table: &DatasetTable,
    spec: &GraphSpec,
    config: &TrainConfig,
    plan: &SplitPlan,
    options: EvalOptions,
    inspect: F,
) -> Result<(Evaluation, Vec<T>)>
where
    T: Send,
    F: Fn(&Split, &TrainOutcome) -> Result<T> + Sync,
{
    config.validate()?;
    let splits = make_splits(plan, table)?;
    let labels = table.require_labels()?;
    let n_classes = table.n_classes();
    let one = |split: &Split| -> Result<(SplitRecord, T)> {
        let seed = plan.model_seed(split.index);
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let outcome = annotate(
            split.index,
            (|| {
                let mut trainer = Trainer::new(table, &split.train, &split.test, spec, &cfg)?;
                if !options.test_history {
                    trainer.set_test_epochs(Some(&[]));
                }
                let init = trainer.initial_embeddings();
                trainer.run(init)
            })(),
        )?;
        let predicted: Vec<usize> = outcome
            .final_state
            .predict(table, &split.test)
            .into_iter()
            .map(|r| r.class)
            .collect();
        let truth: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
        let record = SplitRecord {
            split_id: split.index,
            seed,
            fold: split.fold.clone(),
            n_train: split.train.len(),
            n_test: split.test.len(),
            redraws: split.redraws,
            metrics: classification_metrics(&truth, &predicted, n_classes),
            initial_loss: outcome.history[0].loss,
            final_loss: outcome.history.last().expect("history has epoch 0").loss,
            degenerate_events: outcome.degeneracy.total(),
        };
        let extra = annotate(split.index, inspect(split, &outcome))?;
        Ok((record, extra))
    };
    let results = run_pool(options.jobs, || {
        splits.par_iter().map(one).collect::<Vec<_>>()
    })?;
    let (records, extras): (Vec<_>, Vec<_>) = collect_ordered(results)?.into_iter().unzip();
    Ok((
        Evaluation {
            metrics: summarize(plan.protocol, &records),
            records,
        },
        extras,
    ))
}

pub fn summarize(protocol: Protocol, records: &[SplitRecord]) -> MetricSet {
    let col = |f: fn(&Metrics) -> f64| {
        MeanStd::of(&records.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
    };
    MetricSet {
        protocol,
        n_splits: records.len(),
        averaging: "macro".into(),
        accuracy: col(|m| m.accuracy),
        precision: col(|m| m.precision),
        recall: col(|m| m.recall),
        f1: col(|m| m.f1),
        folds: records
            .iter()
            .filter_map(|r| {
                r.fold.as_ref().map(|f| FoldAccuracy {
                    fold: f.clone(),
                    n_test: r.n_test,
                    accuracy: r.metrics.accuracy,
                })
            })
            .collect(),
    }
}

pub fn records_csv_bytes(records: &[SplitRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "split_id",
        "seed",
        "accuracy",
        "precision",
        "recall",
        "f1",
        "fold",
        "n_train",
        "n_test",
        "redraws",
        "initial_loss",
        "final_loss",
        "degenerate_events",
    ])?;
    for r in records {
        w.write_record([
            r.split_id.to_string(),
            r.seed.to_string(),
            format_float(r.metrics.accuracy),
            format_float(r.metrics.precision),
            format_float(r.metrics.recall),
            format_float(r.metrics.f1),
            r.fold.clone().unwrap_or_default(),
            r.n_train.to_string(),
            r.n_test.to_string(),
            r.redraws.to_string(),
            format_float(r.initial_loss),
            format_float(r.final_loss),
            r.degenerate_events.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))
}

pub fn folds_csv_bytes(folds: &[FoldAccuracy]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fold", "n_test", "accuracy"])?;
    for f in folds {
        w.write_record([
            f.fold.clone(),
            f.n_test.to_string(),
            format_float(f.accuracy),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub embed_dims: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
}

impl SweepGrid {
    /// `d ∈ {4, 8, 16, 32, 64}`, `η ∈ {1e-4, 5e-3, 1e-3, 5e-2, 1e-2}`,
    /// `E ∈ {100, 200, 300, 400, 500}`.
    pub fn reference() -> Self {
        SweepGrid {
            embed_dims: vec![4, 8, 16, 32, 64],
            learning_rates: vec![1e-4, 5e-3, 1e-3, 5e-2, 1e-2],
            epochs: vec![100, 200, 300, 400, 500],
        }
    }

    pub fn n_configs(&self) -> usize {
        self.embed_dims.len() * self.learning_rates.len() * self.epochs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_configs() == 0 {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        Ok(())
    }

    fn sorted_epochs(&self) -> Vec<usize> {
        self.epochs
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptimum {
    pub embed_dim: usize,
    pub learning_rate: f64,
    /// Best mean accuracy over the recorded horizons.
    pub best_acc: f64,
    /// Smallest horizon reaching `best_acc`.
    pub best_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub optima: Vec<SweepOptimum>,
}

/// For every `(d, η)`, trains each split once to the longest horizon and
/// reads held-out accuracy at each requested epoch from the history.
pub fn sweep(
    table: &DatasetTable,
    spec: &GraphSpec,
    config: &TrainConfig,
    grid: &SweepGrid,
    plan: &SplitPlan,
    jobs: Option<usize>,
) -> Result<SweepResult> {
    grid.validate()?;
    let horizons = grid.sorted_epochs();
    let max_e = *horizons.last().expect("grid validated");
    let splits = make_splits(plan, table)?;
    let pairs: Vec<(usize, f64)> = grid
        .embed_dims
        .iter()
        .flat_map(|&d| grid.learning_rates.iter().map(move |&lr| (d, lr)))
        .collect();
    let tasks: Vec<(usize, &Split)> = (0..pairs.len())
        .flat_map(|p| splits.iter().map(move |s| (p, s)))
        .collect();
    let run = |&(p, split): &(usize, &Split)| -> Result<Vec<f64>> {
        let (embed_dim, learning_rate) = pairs[p];
        let cfg = TrainConfig {
            embed_dim,
            learning_rate,
            epochs: max_e,
            seed: plan.model_seed(split.index),
            ..config.clone()
        };
        annotate(
            split.index,
            (|| {
                cfg.validate()?;
                let mut trainer = Trainer::new(table, &split.train, &split.test, spec, &cfg)?;
                trainer.set_test_epochs(Some(&horizons));
                let init = trainer.initial_embeddings();
                let outcome = trainer.run(init)?;
                horizons
                    .iter()
                    .map(|&e| {
                        outcome.history[e].test_acc.ok_or_else(|| {
                            Error::Data(format!("no held-out rows to score at epoch {e}"))
                        })
                    })
                    .collect()
            })(),
        )
    };
    let results = run_pool(jobs, || tasks.par_iter().map(run).collect::<Vec<_>>())?;
    let accs = collect_ordered(results)?;
    let n_splits = splits.len();
    let mut cells = Vec::new();
    let mut optima = Vec::new();
    for (p, &(embed_dim, learning_rate)) in pairs.iter().enumerate() {
        let rows = &accs[p * n_splits..(p + 1) * n_splits];
        let mut best: Option<(f64, usize)> = None;
        for (h, &e) in horizons.iter().enumerate() {
            let at: Vec<f64> = rows.iter().map(|r| r[h]).collect();
            let (mean, std) = mean_std(&at);
            cells.push(SweepCell {
                embed_dim,
                learning_rate,
                epochs: e,
                mean_acc: mean,
                std_acc: std,
            });
            if best.map_or(true, |(b, _)| mean > b) {
                best = Some((mean, e));
            }
        }
        let (best_acc, best_epochs) = best.expect("at least one horizon");
        optima.push(SweepOptimum {
            embed_dim,
            learning_rate,
            best_acc,
            best_epochs,
        });
    }
    Ok(SweepResult { cells, optima })
}

/// Long format, one row per `(d, η, E)`.
pub fn sweep_csv_bytes(cells: &[SweepCell]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["d", "lr", "epochs", "mean_acc", "std_acc"])?;
    for c in cells {
        w.write_record([
            c.embed_dim.to_string(),
            format_float(c.learning_rate),
            c.epochs.to_string(),
            format_float(c.mean_acc),
            format_float(c.std_acc),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))
}

/// `A*` and `E*` per `(d, η)`, heatmap-ready in long format.
pub fn optima_csv_bytes(optima: &[SweepOptimum]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["d", "lr", "best_acc", "best_epochs"])?;
    for o in optima {
        w.write_record([
            o.embed_dim.to_string(),
            format_float(o.learning_rate),
            format_float(o.best_acc),
            o.best_epochs.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))
}
