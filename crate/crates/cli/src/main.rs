//! `wafl`: run experiments, generate poisoned models, reproduce the data
//! partition and inspect model snapshots.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use wafl_core::dataset::partition_noniid;
use wafl_core::experiment::{run_to_directory, MnistData};
use wafl_core::metrics::distance_from_poison;
use wafl_core::nn::{load_snapshot, save_snapshot};
use wafl_core::{make_poison, AttackKind, AttackSpec, ExperimentConfig, Layer, Layout, ModelParams};

#[derive(Parser)]
#[command(
    name = "wafl",
    version,
    about = "Wireless ad hoc federated learning poisoning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run { config: PathBuf },
    /// Generate a poisoned model snapshot plus a JSON sidecar describing it.
    GenPoison {
        /// rmp, ssc, sdc or cod.
        kind: AttackKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Class pair for ssc/sdc, e.g. `4,9`.
        #[arg(long, value_parser = parse_pair)]
        pair: Option<(usize, usize)>,
        /// Class whose outputs cod suppresses.
        #[arg(long)]
        target: Option<usize>,
        /// Label given to `target` samples by cod.
        #[arg(long = "override")]
        override_class: Option<usize>,
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
        #[arg(long, default_value = "poison.waflm")]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Write the Non-IID assignment and its per-node label count table.
    Partition {
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.9)]
        majority_fraction: f64,
        #[arg(long, default_value = "partition")]
        out: PathBuf,
    },
    /// Print per-layer norms of a snapshot and optionally its distance to another.
    Inspect {
        snapshot: PathBuf,
        #[arg(long)]
        against: Option<PathBuf>,
    },
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(a)?, num(b)?))
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::GenPoison {
            kind,
            seed,
            pair,
            target,
            override_class,
            data_dir,
            out,
            epochs,
            lr,
            batch,
        } => poison_spec(kind, seed, pair, target, override_class, epochs, lr, batch)
            .and_then(|spec| cmd_gen_poison(&spec, &data_dir, &out)),
        Command::Partition {
            data_dir,
            seed,
            majority_fraction,
            out,
        } => cmd_partition(&data_dir, seed, majority_fraction, &out),
        Command::Inspect { snapshot, against } => cmd_inspect(&snapshot, against.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(config: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)
        .with_context(|| format!("invalid config {}", config.display()))
        .map_err(usage)?;
    run_to_directory(&cfg).map_err(runtime)?;
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn poison_spec(
    kind: AttackKind,
    seed: u64,
    pair: Option<(usize, usize)>,
    target: Option<usize>,
    override_class: Option<usize>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
) -> Result<AttackSpec, Failure> {
    let mut spec = AttackSpec::new(kind, seed);
    match kind {
        AttackKind::Rmp => {
            if pair.is_some() || target.is_some() || override_class.is_some() {
                return Err(usage(anyhow!("rmp takes no --pair, --target or --override")));
            }
        }
        AttackKind::Ssc | AttackKind::Sdc => {
            if target.is_some() || override_class.is_some() {
                return Err(usage(anyhow!("{kind} takes --pair, not --target/--override")));
            }
            if let Some((a, b)) = pair {
                spec = spec.with_classes(a, b);
            }
        }
        AttackKind::Cod => {
            if pair.is_some() {
                return Err(usage(anyhow!("cod takes --target and --override, not --pair")));
            }
            let (t, o) = spec.classes.expect("cod has default classes");
            spec = spec.with_classes(target.unwrap_or(t), override_class.unwrap_or(o));
        }
    }
    if let Some(e) = epochs {
        spec.training.epochs = e;
    }
    if let Some(lr) = lr {
        spec.training.learning_rate = lr;
    }
    if let Some(b) = batch {
        spec.training.batch_size = b;
    }
    spec.validate().map_err(usage)?;
    Ok(spec)
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn cmd_gen_poison(spec: &AttackSpec, data_dir: &Path, out: &Path) -> Result<(), Failure> {
    let data = if spec.needs_training_data() {
        Some(MnistData::<f32>::load(data_dir).map_err(runtime)?)
    } else {
        None
    };
    let poison = make_poison(spec, Layout::MNIST, data.as_ref().map(|d| &*d.train)).map_err(runtime)?;
    save_snapshot(&poison, out).map_err(runtime)?;
    let side = sidecar_path(out);
    let text = serde_json::to_string_pretty(spec).map_err(runtime)?;
    fs::write(&side, text + "\n")
        .with_context(|| format!("writing {}", side.display()))
        .map_err(runtime)?;
    println!(
        "wrote {} ({} parameters) and {}",
        out.display(),
        poison.len(),
        side.display()
    );
    Ok(())
}

fn cmd_partition(data_dir: &Path, seed: u64, majority: f64, out: &Path) -> Result<(), Failure> {
    let data = MnistData::<f32>::load(data_dir).map_err(runtime)?;
    let plan = partition_noniid(&data.train, 10, majority, seed).map_err(usage)?;
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(runtime)?;
    plan.write_assignment_csv(&out.join("assignment.csv"))
        .map_err(runtime)?;
    let mut table = Vec::new();
    plan.write_count_table(&mut table).map_err(runtime)?;
    let counts = out.join("counts.csv");
    fs::write(&counts, &table)
        .with_context(|| format!("writing {}", counts.display()))
        .map_err(runtime)?;
    print!("{}", String::from_utf8_lossy(&table));
    Ok(())
}

fn cmd_inspect(path: &Path, against: Option<&Path>) -> Result<(), Failure> {
    let params: ModelParams<f64> = load_snapshot(path).map_err(runtime)?;
    println!("{}: {} parameters", path.display(), params.len());
    for layer in Layer::ALL {
        let (r, c) = params.layout().shape(layer);
        let norm = params.layer(layer).iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("  {:<10} {:<12} l2 {norm:.6}", layer.name(), format!("[{r} x {c}]"));
    }
    println!("  {:<10} {:<12} l2 {:.6}", "total", "", params.l2_norm());
    if let Some(other) = against {
        let other: ModelParams<f64> = load_snapshot(other).map_err(runtime)?;
        let fc1 = distance_from_poison(&params, &other, Layer::Fc1Weight.name()).map_err(usage)?;
        let full = params.sub(&other).map_err(usage)?.l2_norm();
        println!(
            "distance to {}: fc1.weight {fc1:.6}, all parameters {full:.6}",
            against.unwrap().display()
        );
    }
    Ok(())
}
