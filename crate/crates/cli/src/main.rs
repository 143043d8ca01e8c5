mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::info;
use psp_hdc::eval::Protocol;
use psp_hdc::synth::SyntheticSpec;
use psp_hdc::{Error, ErrorKind, Result};

use commands::Invocation;
use config::{parse_threshold, RunConfig};
use manifest::{hash_file, Output, RunManifest, MANIFEST_FILE};

const OUTPUT_ROOT_ENV: &str = "PSPHDC_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "psphdc",
    version,
    about = "Graph-structured HDC classifier runs"
)]
struct Cli {
    /// Output directory. Defaults to $PSPHDC_OUTPUT_ROOT (or the config's
    /// output_root, or ./runs) joined with the command name.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Run config (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hypervector dimension D.
    #[arg(long)]
    dim: Option<usize>,
    /// Embedding dimension d.
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// random | fold
    #[arg(long)]
    protocol: Option<Protocol>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    fold_column: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoints and loss history.
    Train {
        #[command(flatten)]
        o: Overrides,
        /// Train on split N of the eval plan instead of all rows.
        #[arg(long)]
        split: Option<usize>,
    },
    /// Repeated random splits or group folds.
    Eval {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Grid over (d, lr, epochs).
    Sweep {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Component attribution at parameter, group or within-group level.
    Explain {
        #[command(flatten)]
        o: Overrides,
        /// Checkpoint to explain; trains on every row when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// param | group | within:K (index or group name)
        #[arg(long, default_value = "param")]
        level: String,
        #[arg(long)]
        beta: Option<f64>,
        /// Average attributions over every split of the eval plan.
        #[arg(long)]
        aggregate: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Alignment and separation scores before and after training.
    Mas {
        #[command(flatten)]
        o: Overrides,
        #[arg(long, requires = "last")]
        initial: Option<PathBuf>,
        #[arg(long = "final", requires = "initial")]
        last: Option<PathBuf>,
        /// param | group
        #[arg(long, default_value = "param")]
        granularity: String,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Threshold a raw target column into a labelled dataset.
    Prep {
        raw: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        group_column: String,
        /// auto | numeric value
        #[arg(long, default_value = "auto")]
        threshold: String,
        /// Parameter columns to keep; defaults to every other column.
        #[arg(long = "param")]
        params: Vec<String>,
        /// 0-based data rows to drop.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<usize>,
    },
    /// Write a seeded two-class dataset with its graph and run config.
    Synth {
        #[arg(long, default_value_t = 60)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        params: usize,
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 1.5)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        regimes: usize,
        #[arg(long, default_value_t = 0.0)]
        regime_shift: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay the command recorded in a manifest.
    Rerun { manifest: PathBuf },
}

fn build_config(o: &Overrides) -> Result<RunConfig> {
    let path = o
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.dim {
        cfg.train.dim = v;
    }
    if let Some(v) = o.embed_dim {
        cfg.train.embed_dim = v;
    }
    if let Some(v) = o.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = o.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = o.protocol {
        cfg.eval.protocol = v;
    }
    if let Some(v) = o.repeats {
        cfg.eval.n_repeats = v;
    }
    if let Some(v) = &o.fold_column {
        cfg.eval.fold_column = Some(v.clone());
    }
    cfg.resolve()
}

fn absolute(p: PathBuf) -> PathBuf {
    std::fs::canonicalize(&p).unwrap_or(p)
}

fn plan(command: Command) -> Result<(Invocation, Option<RunConfig>)> {
    Ok(match command {
        Command::Train { o, split } => (
            Invocation::Train { split_index: split },
            Some(build_config(&o)?),
        ),
        Command::Eval { o, jobs } => (Invocation::Eval { jobs }, Some(build_config(&o)?)),
        Command::Sweep { o, jobs } => (Invocation::Sweep { jobs }, Some(build_config(&o)?)),
        Command::Explain {
            o,
            checkpoint,
            level,
            beta,
            aggregate,
            jobs,
        } => {
            let cfg = build_config(&o)?;
            (
                Invocation::Explain {
                    checkpoint: checkpoint.map(absolute),
                    level,
                    beta: beta.unwrap_or(cfg.explain.beta),
                    aggregate,
                    jobs,
                },
                Some(cfg),
            )
        }
        Command::Mas {
            o,
            initial,
            last,
            granularity,
            beta,
        } => {
            let cfg = build_config(&o)?;
            (
                Invocation::Mas {
                    initial: initial.map(absolute),
                    last: last.map(absolute),
                    granularity,
                    beta: beta.unwrap_or(cfg.explain.beta),
                },
                Some(cfg),
            )
        }
        Command::Prep {
            raw,
            target,
            group_column,
            threshold,
            params,
            exclude,
        } => (
            Invocation::Prep {
                raw: absolute(raw),
                target,
                group_column,
                threshold: parse_threshold(&threshold)?,
                parameters: params,
                exclude,
            },
            None,
        ),
        Command::Synth {
            samples,
            params,
            groups,
            separation,
            regimes,
            regime_shift,
            seed,
        } => (
            Invocation::Synth {
                spec: SyntheticSpec {
                    n_samples: samples,
                    n_params: params,
                    n_groups: groups,
                    separation,
                    n_regimes: regimes,
                    regime_shift,
                    seed,
                },
            },
            None,
        ),
        Command::Rerun { .. } => unreachable!("handled before planning"),
    })
}

fn output_dir(out: Option<PathBuf>, cfg: Option<&RunConfig>, name: &str) -> PathBuf {
    if let Some(dir) = out {
        return dir;
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.and_then(|c| c.output_root.clone()))
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(name)
}

fn run_invocation(inv: Invocation, cfg: Option<RunConfig>, dir: &Path) -> Result<()> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let mut out = Output::create(dir)?;
    info!("{} -> {}", inv.name(), out.dir().display());
    let mut inputs = commands::execute(&inv, cfg.as_ref(), &mut out)?;
    inputs.extend(inv.extra_inputs());
    inputs.sort();
    inputs.dedup();
    let inputs = inputs
        .iter()
        .map(|p| hash_file(p))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        command: inv.name().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.as_ref().map(|c| c.seed),
        invocation: inv,
        config: cfg,
        inputs,
        artifacts: Vec::new(),
        started_unix: started,
        wall_clock_seconds: 0.0,
    };
    let manifest = RunManifest {
        artifacts: out.into_artifacts(),
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        ..manifest
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Rerun { manifest } => {
            let m = RunManifest::load(&manifest)?;
            m.check_inputs()?;
            let dir = output_dir(cli.out, m.config.as_ref(), &m.command);
            let cfg = m.config.map(RunConfig::resolve).transpose()?;
            run_invocation(m.invocation, cfg, &dir)
        }
        command => {
            let (inv, cfg) = plan(command)?;
            if inv.needs_config() && cfg.is_none() {
                return Err(Error::Config(format!("{} needs --config", inv.name())));
            }
            let dir = output_dir(cli.out, cfg.as_ref(), inv.name());
            run_invocation(inv, cfg, &dir)
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(e.kind());
            let kind = match e.kind() {
                ErrorKind::Config => "config",
                ErrorKind::Data => "data",
                ErrorKind::Numeric => "numeric",
            };
            let body = serde_json::json!({
                "error": { "kind": kind, "message": e.to_string(), "exit_code": code }
            });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
