//! `cip`: generate synthetic multi-view data, train embeddings, evaluate
//! retrieval, export embeddings and sweep the CIP hyper-parameters.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error or
//! divergence.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cip_core::data::{generate, Dataset};
use cip_core::experiment::{
    embed_records, evaluate_model, map_spread, pool_objects, sweep, sweep_csv, test_map,
    ExperimentConfig,
};
use cip_core::trainer::{history_csv, Checkpoint, Trainer};
use cip_core::Error;
use clap::{Parser, Subcommand};

use config::{key_table, ConfigError, RunConfig};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "cip",
    version,
    about = "Collaborative inner-product embeddings on synthetic multi-view data",
    after_long_help = long_help()
)]
struct Cli {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set epochs=5 or --set centerline_lr=none.
    /// Repeatable; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and split the synthetic dataset into <output_dir>/dataset.csv.
    Generate,
    /// Train a model; writes checkpoint.json and history.csv.
    Train {
        /// Dataset CSV to train on instead of generating one.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes metrics.json, centerline_cosines.csv and class_stats.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Export embeddings of every view, or of every object with --pooled.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Mean-pool the views of each object.
        #[arg(long)]
        pooled: bool,
        /// Output CSV [default: <output_dir>/embeddings.csv].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per (lambda, d) pair; writes sweep.csv.
    Sweep {
        /// Comma-separated lambdas, e.g. 0.1,1,10.
        #[arg(long)]
        lambdas: String,
        /// Comma-separated offsets d.
        #[arg(long, default_value = "2")]
        ds: String,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print the default config as TOML.
    Defaults,
}

fn long_help() -> String {
    format!(
        "{}\nExit codes: 0 success, 1 configuration error, 2 runtime error or divergence.",
        key_table()
    )
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Command::Defaults = cli.command {
        print!("{}", RunConfig::default().to_toml());
        return Ok(());
    }
    let exp = cfg.experiment()?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    match cli.command {
        Command::Generate => cmd_generate(&cfg, &exp),
        Command::Train { data } => cmd_train(&cfg, &exp, data.as_deref()),
        Command::Eval { checkpoint, data } => cmd_eval(&cfg, &exp, &checkpoint, data.as_deref()),
        Command::Export {
            checkpoint,
            data,
            pooled,
            out,
        } => cmd_export(&cfg, &exp, &checkpoint, data.as_deref(), pooled, out),
        Command::Sweep { lambdas, ds, data } => cmd_sweep(&cfg, &exp, &lambdas, &ds, data.as_deref()),
        Command::Defaults => unreachable!("handled above"),
    }
}

/// Loads `path`, or generates and splits the dataset described by the config.
fn dataset(exp: &ExperimentConfig, path: Option<&Path>) -> Result<Dataset, Failure> {
    match path {
        Some(p) => Ok(Dataset::load(p)?),
        None => Ok(generate(&exp.data)?.split(exp.train_fraction, exp.data.seed)?),
    }
}

fn cmd_generate(cfg: &RunConfig, exp: &ExperimentConfig) -> CmdResult {
    let ds = dataset(exp, None)?;
    let path = cfg.output_dir.join("dataset.csv");
    ds.save(&path)?;
    println!("wrote {} views to {}", ds.records.len(), path.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, exp: &ExperimentConfig, data: Option<&Path>) -> CmdResult {
    let ds = dataset(exp, data)?;
    let trainer = Trainer::new(&ds, exp.train.clone())?;
    let options = exp.eval;
    let mut track = |state: &cip_core::trainer::TrainState| {
        if exp.track_map {
            test_map(&state.encoder, &ds, options).ok()
        } else {
            None
        }
    };
    let out = &cfg.output_dir;
    match trainer.run(&mut track) {
        Ok(ckpt) => {
            ckpt.save(out.join("checkpoint.json"))?;
            fs::write(out.join("history.csv"), history_csv(&ckpt.state.history))?;
            if let Some(last) = ckpt.state.history.last() {
                println!(
                    "trained {} epochs, final loss {:.6}, lr {}",
                    ckpt.state.epoch, last.total, last.lr
                );
            }
            Ok(())
        }
        Err(Error::Diverged {
            epoch,
            reason,
            last_good,
        }) => {
            last_good.save(out.join("checkpoint_last_good.json"))?;
            fs::write(out.join("history.csv"), history_csv(&last_good.state.history))?;
            Err(Failure::Runtime(format!(
                "training diverged at epoch {epoch}: {reason}; last good state saved to {}",
                out.join("checkpoint_last_good.json").display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn check_compatible(ckpt: &Checkpoint, ds: &Dataset) -> CmdResult {
    if ckpt.input_dim != ds.input_dim || ckpt.num_classes != ds.num_classes {
        return Err(Failure::Runtime(format!(
            "checkpoint expects {} classes of {}-d inputs, dataset has {} classes of {}-d inputs",
            ckpt.num_classes, ckpt.input_dim, ds.num_classes, ds.input_dim
        )));
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, exp: &ExperimentConfig, checkpoint: &Path, data: Option<&Path>) -> CmdResult {
    let ckpt = Checkpoint::load(checkpoint)?;
    let ds = dataset(exp, data)?;
    check_compatible(&ckpt, &ds)?;
    let report = evaluate_model(ckpt.encoder(), ckpt.centerlines(), &ds, exp.eval)?;
    let out = &cfg.output_dir;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    fs::write(out.join("metrics.json"), json)?;
    fs::write(out.join("centerline_cosines.csv"), report.geometry.cosine_matrix_csv())?;
    fs::write(out.join("class_stats.csv"), report.geometry.class_stats_csv())?;
    let m = &report.retrieval.micro;
    println!(
        "MAP {:.4}  PR-AUC {:.4}  NDCG {:.4}  F1 {:.4}  max centerline cosine {:.4}",
        m.map, m.pr_auc, m.ndcg, m.f1, report.geometry.max_centerline_cosine
    );
    Ok(())
}

fn cmd_export(
    cfg: &RunConfig,
    exp: &ExperimentConfig,
    checkpoint: &Path,
    data: Option<&Path>,
    pooled: bool,
    out: Option<PathBuf>,
) -> CmdResult {
    let ckpt = Checkpoint::load(checkpoint)?;
    let ds = dataset(exp, data)?;
    check_compatible(&ckpt, &ds)?;
    let records: Vec<_> = ds.records.iter().collect();
    let (ids, labels, rows) = if pooled {
        let p = pool_objects(ckpt.encoder(), &records)?;
        let rows = p.descriptors.into_iter().map(|d| d.components).collect();
        (p.object_ids, p.labels, rows)
    } else {
        let rows = embed_records(ckpt.encoder(), &records)?;
        (
            records.iter().map(|r| r.object_id).collect(),
            records.iter().map(|r| r.label).collect(),
            rows.into_iter().collect::<Vec<Vec<f64>>>(),
        )
    };
    let n = ckpt.encoder().embedding_dim();
    let mut text = String::from("object_id,label");
    for j in 0..n {
        text.push_str(&format!(",e{j}"));
    }
    text.push('\n');
    for ((id, label), row) in ids.iter().zip(&labels).zip(&rows) {
        // labels are 1-based on disk, as in the dataset CSV
        text.push_str(&format!("{id},{}", label + 1));
        for v in row {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    let path = out.unwrap_or_else(|| cfg.output_dir.join("embeddings.csv"));
    fs::write(&path, text)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn parse_list(name: &str, raw: &str) -> Result<Vec<f64>, Failure> {
    let values = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Failure::Config(format!("{name}: `{s}` is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(Failure::Config(format!("{name} must list at least one value")));
    }
    Ok(values)
}

fn cmd_sweep(cfg: &RunConfig, exp: &ExperimentConfig, lambdas: &str, ds: &str, data: Option<&Path>) -> CmdResult {
    let lambdas = parse_list("--lambdas", lambdas)?;
    let offsets = parse_list("--ds", ds)?;
    let dataset = dataset(exp, data)?;
    let rows = sweep(&dataset, exp, &lambdas, &offsets)?;
    fs::write(cfg.output_dir.join("sweep.csv"), sweep_csv(&rows))?;
    for r in &rows {
        match r.map {
            Some(m) => println!("lambda {} d {}: MAP {m:.4}", r.lambda, r.d),
            None => println!(
                "lambda {} d {}: not converged ({})",
                r.lambda,
                r.d,
                r.error.as_deref().unwrap_or("")
            ),
        }
    }
    for (d, spread) in map_spread(&rows) {
        println!("d {d}: MAP std {spread:.4}");
    }
    Ok(())
}
