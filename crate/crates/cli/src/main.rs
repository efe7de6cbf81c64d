use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use pdm_brnn::cmapss::{
    apply_normalization, fit_normalization, load_subset, EngineTrajectory, Subset, DEFAULT_HORIZON,
    DEFAULT_WINDOW,
};
use pdm_brnn::eval::{
    classify_metrics, compare, export_aligned, export_forecasts, forecasts_csv, DecisionRule,
};
use pdm_brnn::pipeline::{fit_model, forecast_config, forecast_fleet, training_windows, Mode};
use pdm_brnn::predict::{align_to_warning_window, stream_predict};
use pdm_brnn::synthetic::{write_dataset, SimConfig};
use pdm_brnn::train::{load_model, save_model, AdamConfig, SavedModel, TrainConfig};

/// Bayesian LSTM failure-window forecasting for turbofan telemetry.
#[derive(Parser)]
#[command(name = "pdm-brnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and normalize a subset; report counts and feature statistics.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        /// Normalize per operating regime instead of globally.
        #[arg(long)]
        regime_normalize: bool,
    },
    /// Train a model on the training split of a subset.
    Train(TrainArgs),
    /// MC-dropout forecast CSV for one test unit.
    Predict {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        unit: u32,
        #[command(flatten)]
        mc: McArgs,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classification metrics of the MC median on the test split, as JSON.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        rule: RuleArgs,
    },
    /// BRNN vs deterministic baseline on the test split; JSON plus plot CSVs.
    Compare {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        rule: RuleArgs,
        /// Directory for single_engine.csv, aligned_fleet.csv and baseline.csv.
        #[arg(long, default_value = ".")]
        plot_dir: PathBuf,
        /// Unit for the single-engine plot; defaults to the first forecast unit.
        #[arg(long)]
        unit: Option<u32>,
    },
    /// Read telemetry lines on stdin, write one JSON record per line on stdout.
    Stream {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Write a simulated run-to-failure dataset in the same file layout.
    Simulate {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "SIM")]
        subset: String,
        #[arg(long, default_value_t = 100)]
        units: u32,
        #[arg(long, default_value_t = 100)]
        test_units: u32,
        #[arg(long, default_value_t = 128)]
        min_life: u32,
        #[arg(long, default_value_t = 362)]
        max_life: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, env = "RUL_DATA_DIR", default_value = ".")]
    data_dir: PathBuf,
    #[arg(long, default_value = "FD001")]
    subset: String,
}

impl DataArgs {
    fn load(&self) -> Result<Subset> {
        load_subset(&self.data_dir, &self.subset)
            .with_context(|| format!("loading {} from {}", self.subset, self.data_dir.display()))
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
}

impl ModelArgs {
    fn load(&self) -> Result<SavedModel> {
        Ok(load_model(&self.model)?)
    }
}

#[derive(Args)]
struct McArgs {
    /// Monte Carlo sample count (at least 1).
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RuleArgs {
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Consecutive cycles above threshold that count as a crossing.
    #[arg(long, default_value_t = 3)]
    sustain: usize,
}

impl RuleArgs {
    fn rule(&self) -> DecisionRule {
        DecisionRule {
            threshold: self.threshold,
            sustain: self.sustain,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV; defaults to the model path with `.report.csv`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    regime_normalize: bool,
    #[arg(long, default_value_t = 30)]
    horizon: u32,
    #[arg(long, default_value_t = 50)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    hidden1: usize,
    #[arg(long, default_value_t = 50)]
    hidden2: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("{}", path.display()))
}

fn ingest(data: &DataArgs, regime: bool) -> Result<()> {
    let subset = data.load()?;
    let stats = fit_normalization(&subset.train, regime)?;
    let norm = apply_normalization(&subset.train, &stats)?;
    let windows = training_windows(&norm, DEFAULT_WINDOW, DEFAULT_HORIZON)?.len();
    let lengths = |f: &[EngineTrajectory]| f.iter().map(|t| t.len()).collect::<Vec<_>>();
    let train_lens = lengths(&subset.train);
    let test_lens = lengths(&subset.test);
    print_json(&json!({
        "subset": data.subset,
        "train_units": subset.train.len(),
        "test_units": subset.test.len(),
        "train_rows": subset.train_rows(),
        "test_rows": subset.test_rows(),
        "train_windows": windows,
        "train_min_cycles": train_lens.iter().min(),
        "train_max_cycles": train_lens.iter().max(),
        "test_min_cycles": test_lens.iter().min(),
        "test_max_cycles": test_lens.iter().max(),
        "normalization": stats,
    }))
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let subset = a.data.load()?;
    let cfg = TrainConfig {
        window_length: a.window,
        horizon: a.horizon,
        hidden1: a.hidden1,
        hidden2: a.hidden2,
        validation_fraction: a.validation_fraction,
        adam: AdamConfig {
            learning_rate: a.learning_rate,
            ..AdamConfig::default()
        },
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (model, report) = fit_model(&subset.train, &cfg, a.regime_normalize)?;
    save_model(&model, &a.out)?;
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| a.out.with_extension("report.csv"));
    write_file(&report_path, &report.to_csv())?;
    info!("model written to {}", a.out.display());
    print_json(&json!({
        "model": a.out,
        "report": report_path,
        "epochs": report.epochs.len(),
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_epoch.map(|e| report.epochs[e - 1].val_loss),
        "stop_reason": report.stop_reason,
        "train_windows": report.train_windows,
        "validation_windows": report.validation_windows,
        "validation_units": report.validation_units,
    }))
}

fn test_forecasts(
    model: &SavedModel,
    data: &DataArgs,
    mc: &McArgs,
    mode: Mode,
) -> Result<pdm_brnn::pipeline::FleetForecast> {
    let subset = data.load()?;
    let cfg = forecast_config(model, mc.samples as usize, mc.seed);
    let out = forecast_fleet(model, &subset.test, &cfg, mode)?;
    if !out.skipped.is_empty() {
        info!("units shorter than one window skipped: {:?}", out.skipped);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            data,
            regime_normalize,
        } => ingest(&data, regime_normalize),
        Command::Train(a) => train_cmd(&a),
        Command::Predict {
            model,
            data,
            unit,
            mc,
            out,
        } => {
            let m = model.load()?;
            let subset = data.load()?;
            let Some(traj) = subset.test.iter().find(|t| t.unit_id == unit) else {
                bail!("unit {unit} is not in the {} test split", data.subset);
            };
            let cfg = forecast_config(&m, mc.samples as usize, mc.seed);
            let fleet = forecast_fleet(&m, std::slice::from_ref(traj), &cfg, Mode::MonteCarlo)?;
            if fleet.forecasts.is_empty() {
                bail!(
                    "unit {unit} has {} cycles, fewer than the window length {}",
                    traj.len(),
                    cfg.window_length
                );
            }
            match out {
                Some(path) => Ok(export_forecasts(&fleet.forecasts, &path)?),
                None => {
                    Ok(std::io::stdout().write_all(forecasts_csv(&fleet.forecasts).as_bytes())?)
                }
            }
        }
        Command::Evaluate {
            model,
            data,
            mc,
            rule,
        } => {
            let m = model.load()?;
            let fleet = test_forecasts(&m, &data, &mc, Mode::MonteCarlo)?;
            let metrics = classify_metrics(&fleet.forecasts, m.config.horizon, &rule.rule())?;
            print_json(&metrics)
        }
        Command::Compare {
            model,
            data,
            mc,
            rule,
            plot_dir,
            unit,
        } => {
            let m = model.load()?;
            let brnn = test_forecasts(&m, &data, &mc, Mode::MonteCarlo)?.forecasts;
            let base = test_forecasts(&m, &data, &mc, Mode::Deterministic)?.forecasts;
            let report = compare(&brnn, &base, m.config.horizon, &rule.rule())?;
            let single = match unit {
                Some(u) => brnn.iter().find(|f| f.unit_id == u),
                None => brnn.first(),
            };
            let Some(single) = single else {
                bail!("no forecast for the requested unit");
            };
            std::fs::create_dir_all(&plot_dir)
                .with_context(|| format!("{}", plot_dir.display()))?;
            export_forecasts(
                std::slice::from_ref(single),
                &plot_dir.join("single_engine.csv"),
            )?;
            export_forecasts(&base, &plot_dir.join("baseline.csv"))?;
            let aligned = align_to_warning_window(&brnn, m.config.horizon);
            if aligned.rows.is_empty() {
                info!(
                    "no engine enters the warning window inside its record; aligned plot skipped"
                );
            } else {
                export_aligned(&aligned, &plot_dir.join("aligned_fleet.csv"))?;
            }
            print_json(&report)
        }
        Command::Stream { model, mc } => {
            let m = model.load()?;
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            let summary = stream_predict(&m, stdin, stdout, mc.samples as usize, mc.seed)?;
            info!("{summary:?}");
            Ok(())
        }
        Command::Simulate {
            out_dir,
            subset,
            units,
            test_units,
            min_life,
            max_life,
            seed,
        } => {
            if min_life > max_life {
                bail!("--min-life {min_life} exceeds --max-life {max_life}");
            }
            let train = SimConfig {
                units,
                min_life,
                max_life,
                noise: 1.0,
                seed,
            };
            let test = SimConfig {
                units: test_units,
                seed: seed.wrapping_add(1),
                ..train
            };
            std::fs::create_dir_all(&out_dir).with_context(|| format!("{}", out_dir.display()))?;
            let paths = write_dataset(&out_dir, &subset, &train, &test, 31)?;
            print_json(&json!({
                "train": paths.train,
                "test": paths.test,
                "rul": paths.rul,
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
