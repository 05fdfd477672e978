use std::path::PathBuf;
use std::process::ExitCode;

use afocp::dataset::DatasetSource;
use afocp::experiment::{run_experiment, ExperimentConfig, Settings, Sweep};
use afocp::plotdata::emit_plotdata;
use afocp::{AppError, Result};
use afocp_core::calibration::Method;
use afocp_core::data::SyntheticConfig;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "afocp",
    version,
    about = "Online conformal prediction experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, calibrate online and write event logs and summaries.
    Run(RunArgs),
    /// Merge summary files into one long-format CSV on standard output.
    Plotdata {
        /// Directory searched recursively for summary JSON files.
        dir: PathBuf,
    },
    /// List the bundled dataset presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// `synthetic`, a bundled preset name, or a preset TOML file.
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// CSV file for preset datasets.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Comma-separated subset of OCP, FOCP, AOCP, AFOCP.
    #[arg(long, value_delimiter = ',', default_value = "OCP,FOCP,AOCP,AFOCP")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Window length L.
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Feature dimension D.
    #[arg(long, default_value_t = 50)]
    feature_dim: usize,
    /// Step size of the level update.
    #[arg(long, default_value_t = 0.005)]
    lambda: f64,
    #[arg(long, default_value_t = 100)]
    inversion_steps: usize,
    /// Fixed inversion step size (default: scaled by the head's norms).
    #[arg(long)]
    inversion_lr: Option<f64>,
    /// Comma-separated master seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// `<var>=<v1,v2,...>` with var in alpha, window, feature_dim, lambda,
    /// inversion_steps, inversion_lr.
    #[arg(long)]
    sweep: Option<Sweep>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write assumption diagnostics from a paired AFOCP/AOCP run.
    #[arg(long)]
    diagnostics: bool,
    /// Save model and attention checkpoints.
    #[arg(long)]
    checkpoints: bool,
    /// TOML or JSON file whose entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Config file contents; every entry is optional.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<String>,
    csv: Option<PathBuf>,
    synthetic: Option<SyntheticConfig>,
    methods: Option<Vec<Method>>,
    alpha: Option<f64>,
    window: Option<usize>,
    feature_dim: Option<usize>,
    lambda: Option<f64>,
    inversion_steps: Option<usize>,
    inversion_lr: Option<f64>,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
    sweep: Option<String>,
    jobs: Option<usize>,
    diagnostics: Option<bool>,
    checkpoints: Option<bool>,
    latent_dim: Option<usize>,
    train_epochs: Option<usize>,
    batch_size: Option<usize>,
    attention_epochs: Option<usize>,
    online_attention: Option<bool>,
    train_fraction: Option<f64>,
    max_points: Option<usize>,
}

fn read_file_config(path: &std::path::Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| AppError::Io {
        path: path.to_owned(),
        source,
    })?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(toml::from_str(&text)?)
    }
}

fn build_config(args: RunArgs) -> Result<ExperimentConfig> {
    let file = match &args.config {
        Some(p) => read_file_config(p)?,
        None => FileConfig::default(),
    };
    let d = Settings::default();
    let settings = Settings {
        alpha: file.alpha.unwrap_or(args.alpha),
        window: file.window.unwrap_or(args.window),
        feature_dim: file.feature_dim.unwrap_or(args.feature_dim),
        lambda: file.lambda.unwrap_or(args.lambda),
        inversion_steps: file.inversion_steps.unwrap_or(args.inversion_steps),
        inversion_lr: file.inversion_lr.or(args.inversion_lr),
        latent_dim: file.latent_dim.unwrap_or(d.latent_dim),
        train_epochs: file.train_epochs.unwrap_or(d.train_epochs),
        batch_size: file.batch_size.unwrap_or(d.batch_size),
        attention_epochs: file.attention_epochs.unwrap_or(d.attention_epochs),
        online_attention: file.online_attention.unwrap_or(d.online_attention),
        train_fraction: file.train_fraction.unwrap_or(d.train_fraction),
        max_points: file.max_points.unwrap_or(d.max_points),
    };
    let dataset_name = file.dataset.unwrap_or(args.dataset);
    let dataset = if dataset_name == "synthetic" {
        DatasetSource::Synthetic(file.synthetic.unwrap_or_default())
    } else {
        let path = file.csv.or(args.csv).ok_or_else(|| {
            AppError::Config(format!("dataset {dataset_name:?} needs --csv <file>"))
        })?;
        DatasetSource::Csv {
            preset: dataset_name,
            path,
        }
    };
    let sweep = match file.sweep {
        Some(s) => Some(s.parse()?),
        None => args.sweep,
    };
    Ok(ExperimentConfig {
        dataset,
        methods: file.methods.unwrap_or(args.methods),
        settings,
        seeds: file.seeds.unwrap_or(args.seeds),
        out: file.out.unwrap_or(args.out),
        sweep,
        jobs: file.jobs.or(args.jobs),
        diagnostics: file.diagnostics.unwrap_or(args.diagnostics),
        checkpoints: file.checkpoints.unwrap_or(args.checkpoints),
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = build_config(args)?;
            let outcome = run_experiment(&cfg)?;
            for row in &outcome.aggregate {
                eprintln!(
                    "[afocp] {} {}{}: coverage {:.4} ± {:.4}, length {}",
                    row.dataset,
                    row.method,
                    row.sweep_value
                        .map(|v| format!(" {}={v}", row.sweep_var.as_deref().unwrap_or("")))
                        .unwrap_or_default(),
                    row.coverage.mean,
                    row.coverage.std,
                    row.mean_length.map_or("n/a".to_owned(), |l| format!(
                        "{:.4} ± {:.4}",
                        l.mean, l.std
                    ))
                );
            }
            if !outcome.all_succeeded() {
                eprintln!(
                    "[afocp] {} cell(s) failed; see failures.json",
                    outcome.failures.len()
                );
            }
            Ok(outcome.all_succeeded())
        }
        Command::Plotdata { dir } => {
            print!("{}", emit_plotdata(&dir)?);
            Ok(true)
        }
        Command::Presets => {
            for name in afocp::dataset::Preset::builtin_names() {
                println!("{name}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("afocp: {e}");
            ExitCode::FAILURE
        }
    }
}
