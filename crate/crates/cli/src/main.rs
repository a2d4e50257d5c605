//! `msr`: generate datasets, run robustness experiments and ablations, and
//! rebuild reports.

mod overrides;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use msr::data::{preset, synth_generate, GeneratorConfig};
use msr::harness::{
    self, esensi_config_grid, read_results, run_cv_experiment, sweep_dropout_ratio, write_report, write_table,
    AblationTable, ExperimentConfig, FullSensorScore, RobustnessReport, Summary,
};

#[derive(Parser)]
#[command(name = "msr", version, about = "Multi-sensor models under missing sensors")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (manifest, sensor CSVs, labels).
    Generate {
        /// Built-in generator preset.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// Generator config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a cross-validated robustness experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validate the config and dataset, then exit without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run an ablation sweep.
    Sweep {
        kind: SweepKind,
        #[arg(long)]
        config: PathBuf,
        /// Sensor-dropout ratios (dropout-ratio only).
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
        ratios: Vec<f64>,
        #[arg(long, value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild summary.json and plot data from a results.csv.
    Report {
        /// Directory holding results.csv.
        #[arg(long)]
        dir: PathBuf,
        /// Where to write the rebuilt files (defaults to --dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    DropoutRatio,
    EsensiGrid,
}

/// Errors that exit with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Generate {
            preset,
            config,
            n,
            seed,
            set,
            out,
        } => cmd_generate(preset, config, n, seed, &set, &out),
        Command::Run {
            config,
            set,
            seed,
            out,
            dry_run,
        } => cmd_run(&config, &set, seed, out, dry_run),
        Command::Sweep {
            kind,
            config,
            ratios,
            set,
            seed,
            out,
        } => cmd_sweep(kind, &config, &ratios, &set, seed, out),
        Command::Report { dir, out } => cmd_report(&dir, out),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_effective_config(config: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    let path = out.join("config.json");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_generate(
    preset_name: Option<String>,
    config: Option<PathBuf>,
    n: Option<usize>,
    seed: Option<u64>,
    set: &[String],
    out: &Path,
) -> Result<ExitCode> {
    let mut value = match (&preset_name, &config) {
        (Some(name), _) => serde_json::to_value(preset(name, 0, 0).map_err(|e| usage(e.to_string()))?)?,
        (None, Some(path)) => read_json(path)?,
        (None, None) => unreachable!("clap requires one of --preset/--config"),
    };
    if let Some(n) = n {
        value["n_samples"] = n.into();
    }
    if let Some(s) = seed {
        value["seed"] = s.into();
    }
    for a in set {
        overrides::apply(&mut value, a).map_err(|e| usage(e.to_string()))?;
    }
    let gen: GeneratorConfig = serde_json::from_value(value).map_err(|e| usage(format!("generator config: {e}")))?;
    let data = synth_generate(&gen, out)?;
    eprintln!(
        "wrote {} samples of `{}` to {}",
        data.len(),
        data.manifest.name,
        out.display()
    );
    for s in &data.manifest.sensors {
        let shape = match s.timesteps {
            Some(t) => format!("{t}x{}", s.dim),
            None => s.dim.to_string(),
        };
        eprintln!("  {:<16} {:?} {}", s.name, s.kind, shape);
    }
    Ok(ExitCode::SUCCESS)
}

/// Reads an experiment config with overrides applied; config errors are usage errors.
fn load_experiment(path: &Path, set: &[String], seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut value = read_json(path).map_err(|e| usage(format!("{e:#}")))?;
    for a in set {
        overrides::apply(&mut value, a).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(s) = seed {
        value["seed"] = s.into();
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn output_dir(cli_out: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    cli_out
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| usage("no output directory: pass --out or set out_dir"))
}

fn cmd_run(config: &Path, set: &[String], seed: Option<u64>, out: Option<PathBuf>, dry_run: bool) -> Result<ExitCode> {
    let cfg = load_experiment(config, set, seed)?;
    let out = output_dir(out, &cfg)?;
    let data = cfg.load_dataset()?;
    for m in &cfg.methods {
        harness::method_spec(m, &cfg, &data.manifest).map_err(|e| usage(e.to_string()))?;
    }
    harness::scenario_sensors(&cfg, &data.manifest).map_err(|e| usage(e.to_string()))?;
    if dry_run {
        eprintln!(
            "config ok: {} methods, {} samples, k={}",
            cfg.methods.len(),
            data.len(),
            cfg.k
        );
        return Ok(ExitCode::SUCCESS);
    }
    write_effective_config(&cfg, &out)?;
    let report = run_cv_experiment(&cfg, &data)?;
    write_report(&report, &out)?;
    print_full_sensor_table(&data.manifest.name, &report.full_sensor);
    eprintln!("report written to {}", out.display());
    if let Some(err) = &report.error {
        eprintln!("error: run incomplete: {err}");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(
    kind: SweepKind,
    config: &Path,
    ratios: &[f64],
    set: &[String],
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let cfg = load_experiment(config, set, seed)?;
    let out = output_dir(out, &cfg)?;
    let (table, name): (AblationTable, &str) = match kind {
        SweepKind::DropoutRatio => {
            if ratios.is_empty() {
                return Err(usage("empty --ratios list"));
            }
            if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                return Err(usage(format!("ratio {r} not in [0,1]")));
            }
            let data = cfg.load_dataset()?;
            write_effective_config(&cfg, &out)?;
            (sweep_dropout_ratio(&cfg, &data, ratios)?, "dropout-ratio.csv")
        }
        SweepKind::EsensiGrid => {
            let data = cfg.load_dataset()?;
            write_effective_config(&cfg, &out)?;
            (esensi_config_grid(&cfg, &data)?, "esensi-grid.csv")
        }
    };
    write_table(&table, &out.join(name))?;
    eprintln!("{:<46} {:>8} {:>8}", "configuration", "score", "std");
    for r in &table.rows {
        eprintln!("{:<46} {:>8.3} {:>8.3}", r.label, r.score_mean, r.score_std);
    }
    eprintln!("table written to {}", out.join(name).display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(dir: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let results = read_results(&dir.join("results.csv"))?;
    let previous: Option<Summary> = fs::read_to_string(dir.join("summary.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let error = previous.and_then(|s| {
        if s.complete {
            None
        } else {
            s.error.or(Some("incomplete".into()))
        }
    });
    let report = RobustnessReport::new(results, error);
    let out = out.unwrap_or_else(|| dir.to_path_buf());
    write_report(&report, &out)?;
    print_full_sensor_table("results", &report.full_sensor);
    Ok(ExitCode::SUCCESS)
}

fn display_name(method: &str) -> &str {
    match method {
        "input" => "Input",
        "itempd" => "ITempD",
        "feature" => "Feature",
        "ensemble" => "Ensemble",
        "isensd" => "ISensD",
        "isensd-nr" => "ISensD (NR)",
        "esensi" => "ESensI",
        other => other,
    }
}

/// Full-sensor scores, one column per method.
fn print_full_sensor_table(dataset: &str, scores: &[FullSensorScore]) {
    let mut header = format!("{:<20}", "dataset");
    let mut row = format!("{dataset:<20}");
    for s in scores {
        header.push_str(&format!(" | {:>15}", display_name(&s.method)));
        row.push_str(&format!(" | {:>7.3} ± {:<5.3}", s.mean, s.std));
    }
    let kind = scores.first().map_or("", |s| s.score_kind.name());
    eprintln!("full-sensor {kind}");
    eprintln!("{header}");
    eprintln!("{row}");
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn table_names_cover_methods() {
        for m in harness::METHODS {
            assert_ne!(display_name(m), m);
        }
    }
}
