//! Command bodies. Each takes a resolved configuration and its options and
//! writes artifacts into an [`Output`]; the caller writes the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use psp_hdc::data::{format_float, gap_threshold, load_csv, DatasetTable, TableSchema};
use psp_hdc::eval::{
    self, evaluate_with, make_splits, mean_std, optima_csv_bytes, records_csv_bytes,
    sweep_csv_bytes, EvalOptions, Protocol,
};
use psp_hdc::explain::{
    aggregate_attributions, aggregated_csv_bytes, attribution, attribution_csv_bytes,
    component_affinity, mas, mas_csv_bytes, sample_embedding, summarize_distances,
    within_group_affinity, AttributionReport, EmbeddedSample, Level, MasReport,
};
use psp_hdc::graph::{GraphSpec, GraphSpecFile};
use psp_hdc::synth::{self, SyntheticSpec};
use psp_hdc::trainer::{
    history_csv_bytes, prototype_stability, train, Checkpoint, ModelState, TrainOutcome,
};
use psp_hdc::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{load_data, Loaded, RunConfig, Threshold};
use crate::manifest::Output;

/// Everything a command needs besides the run config. Stored in the
/// manifest so `rerun` can replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Train {
        /// Train on this split of the eval plan instead of every row.
        split_index: Option<usize>,
    },
    Eval {
        jobs: Option<usize>,
    },
    Sweep {
        jobs: Option<usize>,
    },
    Explain {
        checkpoint: Option<PathBuf>,
        level: String,
        beta: f64,
        aggregate: bool,
        jobs: Option<usize>,
    },
    Mas {
        initial: Option<PathBuf>,
        last: Option<PathBuf>,
        granularity: String,
        beta: f64,
    },
    Prep {
        raw: PathBuf,
        target: String,
        group_column: String,
        threshold: Threshold,
        parameters: Vec<String>,
        exclude: Vec<usize>,
    },
    Synth {
        spec: SyntheticSpec,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Train { .. } => "train",
            Invocation::Eval { .. } => "eval",
            Invocation::Sweep { .. } => "sweep",
            Invocation::Explain { .. } => "explain",
            Invocation::Mas { .. } => "mas",
            Invocation::Prep { .. } => "prep",
            Invocation::Synth { .. } => "synth",
        }
    }

    pub fn needs_config(&self) -> bool {
        !matches!(self, Invocation::Prep { .. } | Invocation::Synth { .. })
    }

    /// Files read besides those named in the config.
    pub fn extra_inputs(&self) -> Vec<PathBuf> {
        match self {
            Invocation::Explain { checkpoint, .. } => checkpoint.iter().cloned().collect(),
            Invocation::Mas { initial, last, .. } => {
                initial.iter().chain(last.iter()).cloned().collect()
            }
            Invocation::Prep { raw, .. } => vec![raw.clone()],
            _ => Vec::new(),
        }
    }
}

/// Runs one command. Returns the input files it read.
pub fn execute(
    inv: &Invocation,
    cfg: Option<&RunConfig>,
    out: &mut Output,
) -> Result<Vec<PathBuf>> {
    let need = || cfg.ok_or_else(|| Error::Config(format!("{} needs --config", inv.name())));
    match inv {
        Invocation::Train { split_index } => cmd_train(need()?, *split_index, out),
        Invocation::Eval { jobs } => cmd_eval(need()?, *jobs, out),
        Invocation::Sweep { jobs } => cmd_sweep(need()?, *jobs, out),
        Invocation::Explain {
            checkpoint,
            level,
            beta,
            aggregate,
            jobs,
        } => cmd_explain(
            need()?,
            checkpoint.as_deref(),
            level,
            *beta,
            *aggregate,
            *jobs,
            out,
        ),
        Invocation::Mas {
            initial,
            last,
            granularity,
            beta,
        } => cmd_mas(
            need()?,
            initial.as_deref(),
            last.as_deref(),
            granularity,
            *beta,
            out,
        ),
        Invocation::Prep {
            raw,
            target,
            group_column,
            threshold,
            parameters,
            exclude,
        } => cmd_prep(
            raw,
            target,
            group_column,
            threshold,
            parameters,
            exclude,
            out,
        ),
        Invocation::Synth { spec } => cmd_synth(spec, out),
    }
}

#[derive(Serialize)]
struct TrainSummary {
    n_train: usize,
    n_test: usize,
    threshold: Option<f64>,
    initial_loss: f64,
    final_loss: f64,
    final_train_acc: f64,
    final_test_acc: Option<f64>,
    final_rho_bar: Option<f64>,
    degenerate_events: usize,
}

fn cmd_train(
    cfg: &RunConfig,
    split_index: Option<usize>,
    out: &mut Output,
) -> Result<Vec<PathBuf>> {
    let data = load_data(&cfg.data)?;
    let (train_idx, test_idx) = match split_index {
        Some(i) => {
            let splits = make_splits(&cfg.eval, &data.table)?;
            let s = splits.get(i).ok_or_else(|| {
                Error::Config(format!("split {i} out of range ({} splits)", splits.len()))
            })?;
            (s.train.clone(), s.test.clone())
        }
        None => ((0..data.table.n_rows()).collect(), Vec::new()),
    };
    info!(
        "training on {} rows for {} epochs",
        train_idx.len(),
        cfg.train.epochs
    );
    let outcome = train(&data.table, &train_idx, &test_idx, &data.spec, &cfg.train)?;
    out.write_json(
        "checkpoint_initial.json",
        &Checkpoint::from_state(&outcome.initial, &data.table),
    )?;
    out.write_json(
        "checkpoint.json",
        &Checkpoint::from_state(&outcome.final_state, &data.table),
    )?;
    out.write("history.csv", &history_csv_bytes(&outcome.history)?)?;
    let last = outcome.history.last().expect("history has epoch 0");
    out.write_json(
        "summary.json",
        &TrainSummary {
            n_train: train_idx.len(),
            n_test: test_idx.len(),
            threshold: data.threshold,
            initial_loss: outcome.history[0].loss,
            final_loss: last.loss,
            final_train_acc: last.train_acc,
            final_test_acc: last.test_acc,
            final_rho_bar: last.rho_bar,
            degenerate_events: outcome.degeneracy.total(),
        },
    )?;
    Ok(data.inputs)
}

/// Distances to the correct prototype before and after training, and the
/// sample coordinates in the epoch-0 prototype plane.
#[derive(Debug, Clone, Default)]
struct Movement {
    rows: Vec<DistanceRow>,
    points: Vec<(&'static str, &'static str, EmbeddedSample)>,
}

#[derive(Debug, Clone, Serialize)]
struct DistanceRow {
    split_id: usize,
    subset: &'static str,
    class: usize,
    n: usize,
    mean_initial: f64,
    std_initial: f64,
    mean_final: f64,
    std_final: f64,
    change: f64,
}

fn movement(
    table: &DatasetTable,
    split_id: usize,
    subsets: [(&'static str, &[usize]); 2],
    outcome: &TrainOutcome,
) -> Result<Movement> {
    let labels = table.require_labels()?;
    let (first, last) = (&outcome.initial, &outcome.final_state);
    let mut m = Movement::default();
    for (subset, rows) in subsets {
        if rows.is_empty() {
            continue;
        }
        let before = sample_embedding(
            rows,
            &first.sample_hvs(table, rows),
            labels,
            &first.memory,
            &first.memory,
        )?;
        let after = sample_embedding(
            rows,
            &last.sample_hvs(table, rows),
            labels,
            &first.memory,
            &last.memory,
        )?;
        let (s0, s1) = (summarize_distances(&before), summarize_distances(&after));
        for (a, b) in s0.iter().zip(&s1) {
            m.rows.push(DistanceRow {
                split_id,
                subset,
                class: a.class,
                n: a.n,
                mean_initial: a.mean,
                std_initial: a.std,
                mean_final: b.mean,
                std_final: b.std,
                change: b.mean - a.mean,
            });
        }
        m.points
            .extend(before.into_iter().map(|p| (subset, "initial", p)));
        m.points
            .extend(after.into_iter().map(|p| (subset, "final", p)));
    }
    Ok(m)
}

#[derive(Debug, Clone)]
struct SplitDiagnostics {
    rho_final: f64,
    rho_min: f64,
    loss_decreased: bool,
    movement: Option<Movement>,
}

#[derive(Serialize)]
struct DistanceSummary {
    subset: &'static str,
    class: usize,
    mean_initial: f64,
    mean_final: f64,
    change: f64,
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    metrics: &'a eval::MetricSet,
    threshold: Option<f64>,
    splits_with_loss_decrease: usize,
    rho_bar_final_min: f64,
    rho_bar_all_in_range: bool,
    distances: Vec<DistanceSummary>,
}

fn cmd_eval(cfg: &RunConfig, jobs: Option<usize>, out: &mut Output) -> Result<Vec<PathBuf>> {
    let data = load_data(&cfg.data)?;
    let table = &data.table;
    let two_class = table.n_classes() == 2;
    info!(
        "evaluating {} protocol on {} rows",
        cfg.eval.protocol,
        table.n_rows()
    );
    let (evaluation, diags) = evaluate_with(
        table,
        &data.spec,
        &cfg.train,
        &cfg.eval,
        EvalOptions {
            jobs,
            test_history: false,
        },
        |split, outcome| {
            let rho = prototype_stability(&outcome.history)?;
            let movement = if two_class {
                Some(movement(
                    table,
                    split.index,
                    [("train", &split.train), ("test", &split.test)],
                    outcome,
                )?)
            } else {
                None
            };
            let last = outcome.history.last().expect("history has epoch 0");
            Ok(SplitDiagnostics {
                rho_final: *rho.last().unwrap_or(&1.0),
                rho_min: rho.iter().copied().fold(1.0, f64::min),
                loss_decreased: last.loss < outcome.history[0].loss,
                movement,
            })
        },
    )?;
    out.write("splits.csv", &records_csv_bytes(&evaluation.records)?)?;
    if cfg.eval.protocol == Protocol::GroupFold {
        out.write(
            "folds.csv",
            &eval::folds_csv_bytes(&evaluation.metrics.folds)?,
        )?;
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["split_id", "rho_bar_final", "rho_bar_min"])?;
    for (r, d) in evaluation.records.iter().zip(&diags) {
        w.write_record([
            r.split_id.to_string(),
            format_float(d.rho_final),
            format_float(d.rho_min),
        ])?;
    }
    out.write("stability.csv", &csv_bytes(w)?)?;

    let mut distances = Vec::new();
    if two_class {
        let rows: Vec<&DistanceRow> = diags
            .iter()
            .filter_map(|d| d.movement.as_ref())
            .flat_map(|m| &m.rows)
            .collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &rows {
            w.serialize(r)?;
        }
        out.write("distances.csv", &csv_bytes(w)?)?;
        let mut groups: BTreeMap<(&'static str, usize), StagePair> = BTreeMap::new();
        for r in &rows {
            let e = groups.entry((r.subset, r.class)).or_default();
            e.0.push(r.mean_initial);
            e.1.push(r.mean_final);
        }
        for ((subset, class), (a, b)) in groups {
            let (m0, _) = mean_std(&a);
            let (m1, _) = mean_std(&b);
            distances.push(DistanceSummary {
                subset,
                class,
                mean_initial: m0,
                mean_final: m1,
                change: m1 - m0,
            });
        }
        if let Some(m) = diags.first().and_then(|d| d.movement.as_ref()) {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "row",
                "subset",
                "stage",
                "label",
                "sim_class0",
                "sim_class1",
                "distance",
            ])?;
            for (subset, stage, p) in &m.points {
                w.write_record([
                    p.row.to_string(),
                    subset.to_string(),
                    stage.to_string(),
                    p.label.to_string(),
                    format_float(p.coords.0),
                    format_float(p.coords.1),
                    format_float(p.distance),
                ])?;
            }
            out.write("embedding_split0.csv", &csv_bytes(w)?)?;
        }
    }
    out.write_json(
        "summary.json",
        &EvalSummary {
            metrics: &evaluation.metrics,
            threshold: data.threshold,
            splits_with_loss_decrease: diags.iter().filter(|d| d.loss_decreased).count(),
            rho_bar_final_min: diags
                .iter()
                .map(|d| d.rho_final)
                .fold(f64::INFINITY, f64::min),
            rho_bar_all_in_range: diags
                .iter()
                .all(|d| (-1.0..=1.0).contains(&d.rho_min) && (-1.0..=1.0).contains(&d.rho_final)),
            distances,
        },
    )?;
    Ok(data.inputs)
}

/// Per-split mean distances before and after training.
type StagePair = (Vec<f64>, Vec<f64>);

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))
}

fn cmd_sweep(cfg: &RunConfig, jobs: Option<usize>, out: &mut Output) -> Result<Vec<PathBuf>> {
    let data = load_data(&cfg.data)?;
    info!("sweeping {} configurations", cfg.sweep.n_configs());
    let result = eval::sweep(
        &data.table,
        &data.spec,
        &cfg.train,
        &cfg.sweep,
        &cfg.eval,
        jobs,
    )?;
    out.write("sweep.csv", &sweep_csv_bytes(&result.cells)?)?;
    out.write("optima.csv", &optima_csv_bytes(&result.optima)?)?;
    out.write_json("sweep.json", &result)?;
    Ok(data.inputs)
}

/// `param`, `group`, `within:K` with `K` a 0-based index or a group name.
pub fn parse_level(s: &str, spec: &GraphSpec) -> Result<Level> {
    if let Ok(level) = s.parse::<Level>() {
        if let Level::WithinGroup(k) = level {
            if k >= spec.n_groups() {
                return Err(Error::Config(format!("group index {k} out of range")));
            }
        }
        return Ok(level);
    }
    let name = s
        .strip_prefix("within:")
        .or_else(|| s.strip_prefix("within_group:"))
        .ok_or_else(|| Error::Config(format!("unknown attribution level '{s}'")))?;
    spec.group_index(name)
        .map(Level::WithinGroup)
        .ok_or_else(|| Error::Config(format!("unknown group '{name}'")))
}

fn component_names(level: Level, table: &DatasetTable, spec: &GraphSpec) -> Vec<String> {
    match level {
        Level::Group => spec.groups.iter().map(|g| g.name.clone()).collect(),
        _ => table.param_names().to_vec(),
    }
}

fn explain_state(
    state: &ModelState,
    table: &DatasetTable,
    level: Level,
    beta: f64,
) -> Result<AttributionReport> {
    let bank = state.component_bank(table)?;
    let aff = match level {
        Level::WithinGroup(k) => within_group_affinity(&bank, &state.spec, k, table.param_names())?,
        _ => component_affinity(
            &bank,
            &state.memory,
            level,
            &component_names(level, table, &state.spec),
        )?,
    };
    attribution(&aff, beta)
}

fn full_fit(data: &Loaded, cfg: &RunConfig) -> Result<TrainOutcome> {
    let all: Vec<usize> = (0..data.table.n_rows()).collect();
    train(&data.table, &all, &[], &data.spec, &cfg.train)
}

#[allow(clippy::too_many_arguments)]
fn cmd_explain(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    level: &str,
    beta: f64,
    aggregate: bool,
    jobs: Option<usize>,
    out: &mut Output,
) -> Result<Vec<PathBuf>> {
    let data = load_data(&cfg.data)?;
    let level = parse_level(level, &data.spec)?;
    if aggregate {
        let (evaluation, reports) = evaluate_with(
            &data.table,
            &data.spec,
            &cfg.train,
            &cfg.eval,
            EvalOptions {
                jobs,
                test_history: false,
            },
            |_, outcome| explain_state(&outcome.final_state, &data.table, level, beta),
        )?;
        let agg = aggregate_attributions(&reports)?;
        out.write("attribution_aggregate.csv", &aggregated_csv_bytes(&agg)?)?;
        out.write_json("attribution_aggregate.json", &agg)?;
        out.write("splits.csv", &records_csv_bytes(&evaluation.records)?)?;
        return Ok(data.inputs);
    }
    let state = match checkpoint {
        Some(p) => Checkpoint::load(p)?.restore(&data.table)?,
        None => full_fit(&data, cfg)?.final_state,
    };
    let report = explain_state(&state, &data.table, level, beta)?;
    out.write("attribution.csv", &attribution_csv_bytes(&report)?)?;
    out.write_json("attribution.json", &report)?;
    Ok(data.inputs)
}

fn mas_report(
    state: &ModelState,
    table: &DatasetTable,
    level: Level,
    beta: f64,
) -> Result<MasReport> {
    let bank = state.component_bank(table)?;
    let names = component_names(level, table, &state.spec);
    mas(
        &component_affinity(&bank, &state.memory, level, &names)?,
        beta,
    )
}

#[derive(Serialize)]
struct MasPair {
    initial: MasReport,
    #[serde(rename = "final")]
    last: MasReport,
}

fn cmd_mas(
    cfg: &RunConfig,
    initial: Option<&Path>,
    last: Option<&Path>,
    granularity: &str,
    beta: f64,
    out: &mut Output,
) -> Result<Vec<PathBuf>> {
    let data = load_data(&cfg.data)?;
    let level = match granularity.parse::<Level>()? {
        Level::WithinGroup(_) => {
            return Err(Error::Unsupported(
                "MAS is defined at parameter or group granularity".into(),
            ))
        }
        l => l,
    };
    let (s0, s1) = match (initial, last) {
        (Some(a), Some(b)) => (
            Checkpoint::load(a)?.restore(&data.table)?,
            Checkpoint::load(b)?.restore(&data.table)?,
        ),
        (None, None) => {
            let o = full_fit(&data, cfg)?;
            (o.initial, o.final_state)
        }
        _ => {
            return Err(Error::Config(
                "give both --initial and --final checkpoints, or neither".into(),
            ))
        }
    };
    let pair = MasPair {
        initial: mas_report(&s0, &data.table, level, beta)?,
        last: mas_report(&s1, &data.table, level, beta)?,
    };
    let mut bytes = mas_csv_bytes(&pair.initial, "initial")?;
    let tail = mas_csv_bytes(&pair.last, "final")?;
    // Drop the repeated header line of the second block.
    let body = tail.splitn(2, |&b| b == b'\n').nth(1).unwrap_or_default();
    bytes.extend_from_slice(body);
    out.write("mas.csv", &bytes)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "ma_initial", "ma_final", "ms_initial", "ms_final"])?;
    for c in 0..pair.initial.ma.len() {
        w.write_record([
            c.to_string(),
            format_float(pair.initial.ma[c]),
            format_float(pair.last.ma[c]),
            format_float(pair.initial.ms[c]),
            format_float(pair.last.ms[c]),
        ])?;
    }
    out.write("mas_summary.csv", &csv_bytes(w)?)?;
    out.write_json("mas.json", &pair)?;
    Ok(data.inputs)
}

#[derive(Serialize)]
struct PrepReport {
    target: String,
    group_column: String,
    n_rows: usize,
    n_censored: usize,
    gap_lower: f64,
    gap_upper: f64,
    log10_gap: f64,
    gap_threshold: f64,
    threshold: f64,
    n_low: usize,
    n_high: usize,
    single_class: bool,
    /// Largest finite target per group; censored entries clip to it.
    group_max: BTreeMap<String, f64>,
}

fn cmd_prep(
    raw: &Path,
    target: &str,
    group_column: &str,
    threshold: &Threshold,
    parameters: &[String],
    exclude: &[usize],
    out: &mut Output,
) -> Result<Vec<PathBuf>> {
    let parameters = if parameters.is_empty() {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(raw)
            .map_err(|e| Error::Data(format!("{}: {e}", raw.display())))?;
        rdr.headers()?
            .iter()
            .filter(|h| *h != target && *h != group_column)
            .map(str::to_string)
            .collect()
    } else {
        parameters.to_vec()
    };
    let schema = TableSchema {
        parameters,
        target: Some(target.to_string()),
        label: None,
        regimes: vec![group_column.to_string()],
    };
    let table = load_csv(raw, &schema)?;
    let table = if exclude.is_empty() {
        table
    } else {
        table.exclude_rows(exclude)?
    };
    let gap = gap_threshold(&table.finite_target_values())?;
    let t = match threshold {
        Threshold::Value(v) => *v,
        Threshold::Mode(_) => gap.threshold,
    };
    let (labelled, bin) = table.binarize(t)?;
    let clipped = table.clip_censored(group_column)?;
    let groups = clipped.regime(group_column).expect("loaded as regime");
    let tgt = clipped.target().expect("loaded with target");
    let mut group_max: BTreeMap<String, f64> = BTreeMap::new();
    for (g, (&v, &c)) in groups.iter().zip(tgt.values.iter().zip(&tgt.censored)) {
        if !c {
            let e = group_max.entry(g.clone()).or_insert(f64::NEG_INFINITY);
            *e = e.max(v);
        }
    }
    out.write("prepared.csv", &labelled.to_csv_bytes()?)?;
    out.write_json(
        "threshold.json",
        &PrepReport {
            target: target.to_string(),
            group_column: group_column.to_string(),
            n_rows: table.n_rows(),
            n_censored: tgt.censored.iter().filter(|&&c| c).count(),
            gap_lower: gap.lower,
            gap_upper: gap.upper,
            log10_gap: gap.log10_gap,
            gap_threshold: gap.threshold,
            threshold: t,
            n_low: bin.n_low,
            n_high: bin.n_high,
            single_class: bin.single_class,
            group_max,
        },
    )?;
    Ok(vec![raw.to_path_buf()])
}

fn cmd_synth(spec: &SyntheticSpec, out: &mut Output) -> Result<Vec<PathBuf>> {
    let (table, graph) = synth::two_class(spec)?;
    out.write("data.csv", &table.to_csv_bytes()?)?;
    let file = GraphSpecFile::from_spec(&graph, table.param_names());
    let text = toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))?;
    out.write("graph.toml", text.as_bytes())?;
    let mut regimes = String::new();
    if spec.n_regimes > 0 {
        regimes = format!("regimes = [\"{}\"]\n", synth::REGIME_COLUMN);
    }
    let run = format!(
        "seed = 0\n\n[data]\npath = \"data.csv\"\ngraph = \"graph.toml\"\nlabel = \"label\"\n{regimes}"
    );
    out.write("run.toml", run.as_bytes())?;
    Ok(Vec::new())
}
