//! Report assembly and persistence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::RunResult;
use crate::metrics::ScoreKind;

pub const SCHEMA_VERSION: u32 = 1;

pub const RESULTS_HEADER: [&str; 10] = [
    "method",
    "fold",
    "sensor",
    "percent",
    "score_kind",
    "score",
    "rmse_miss",
    "rmse_full",
    "prs",
    "seconds",
];

/// Fold mean and standard deviation of one (method, scenario, level) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub sensor: String,
    pub percent: f64,
    pub folds: usize,
    pub score_kind: ScoreKind,
    pub score_mean: f64,
    pub score_std: f64,
    pub prs_mean: f64,
    pub prs_std: f64,
    pub rmse_miss_mean: f64,
    pub rmse_full_mean: f64,
}

/// Full-sensor predictive score of one method (fold mean).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullSensorScore {
    pub method: String,
    pub score_kind: ScoreKind,
    pub mean: f64,
    pub std: f64,
    pub folds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub complete: bool,
    pub error: Option<String>,
    pub full_sensor: Vec<FullSensorScore>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    pub results: Vec<RunResult>,
    pub aggregates: Vec<Aggregate>,
    pub full_sensor: Vec<FullSensorScore>,
    pub complete: bool,
    pub error: Option<String>,
}

impl RobustnessReport {
    pub fn new(results: Vec<RunResult>, error: Option<String>) -> Self {
        let aggregates = aggregate(&results);
        let full_sensor = full_sensor_scores(&results);
        Self {
            results,
            aggregates,
            full_sensor,
            complete: error.is_none(),
            error,
        }
    }

    pub fn summary(&self) -> Summary {
        Summary {
            schema_version: SCHEMA_VERSION,
            complete: self.complete,
            error: self.error.clone(),
            full_sensor: self.full_sensor.clone(),
            aggregates: self.aggregates.clone(),
        }
    }

    /// Aggregates of one method and scenario, in level order.
    pub fn series(&self, method: &str, sensor: &str) -> Vec<&Aggregate> {
        self.aggregates
            .iter()
            .filter(|a| a.method == method && a.sensor == sensor)
            .collect()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups results by (method, sensor, percent) in order of first appearance.
pub fn aggregate(results: &[RunResult]) -> Vec<Aggregate> {
    let mut keys: Vec<(&str, &str, f64)> = Vec::new();
    for r in results {
        let key = (r.method.as_str(), r.sensor.as_str(), r.percent);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, sensor, percent)| {
            let cell: Vec<&RunResult> = results
                .iter()
                .filter(|r| r.method == method && r.sensor == sensor && r.percent == percent)
                .collect();
            let pick = |f: fn(&RunResult) -> f64| cell.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (score_mean, score_std) = mean_std(&pick(|r| r.score));
            let (prs_mean, prs_std) = mean_std(&pick(|r| r.prs));
            Aggregate {
                method: method.to_string(),
                sensor: sensor.to_string(),
                percent,
                folds: cell.len(),
                score_kind: cell[0].score_kind,
                score_mean,
                score_std,
                prs_mean,
                prs_std,
                rmse_miss_mean: mean_std(&pick(|r| r.rmse_miss)).0,
                rmse_full_mean: mean_std(&pick(|r| r.rmse_full)).0,
            }
        })
        .collect()
}

fn full_sensor_scores(results: &[RunResult]) -> Vec<FullSensorScore> {
    let mut methods: Vec<&str> = Vec::new();
    for r in results {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .filter_map(|method| {
            // p=0 rows repeat the same full-sensor score once per scenario
            let mut per_fold: Vec<(usize, f64, ScoreKind)> = Vec::new();
            for r in results.iter().filter(|r| r.method == method && r.percent == 0.0) {
                if !per_fold.iter().any(|(f, _, _)| *f == r.fold) {
                    per_fold.push((r.fold, r.score, r.score_kind));
                }
            }
            let kind = per_fold.first()?.2;
            let (mean, std) = mean_std(&per_fold.iter().map(|p| p.1).collect::<Vec<_>>());
            Some(FullSensorScore {
                method: method.to_string(),
                score_kind: kind,
                mean,
                std,
                folds: per_fold.len(),
            })
        })
        .collect()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    w.write_record(header).map_err(|e| Error::parse(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn plot_file_name(method: &str, sensor: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    };
    format!("{}__{}.csv", clean(method), clean(sensor))
}

/// Writes `results.csv`, `summary.json` and one `plotdata/<method>__<sensor>.csv`
/// PRS-vs-level series per method and scenario.
pub fn write_report(report: &RobustnessReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows: Vec<Vec<String>> = report
        .results
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.fold.to_string(),
                r.sensor.clone(),
                r.percent.to_string(),
                r.score_kind.name().to_string(),
                r.score.to_string(),
                r.rmse_miss.to_string(),
                r.rmse_full.to_string(),
                r.prs.to_string(),
                r.seconds.to_string(),
            ]
        })
        .collect();
    write_csv(&out_dir.join("results.csv"), &RESULTS_HEADER, &rows)?;

    let summary_path = out_dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&report.summary()).map_err(|e| Error::parse(&summary_path, e))?;
    text.push('\n');
    fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;

    let plot_dir = out_dir.join("plotdata");
    fs::create_dir_all(&plot_dir).map_err(|e| Error::io(&plot_dir, e))?;
    let mut series: Vec<(&str, &str)> = Vec::new();
    for a in &report.aggregates {
        if !series.contains(&(a.method.as_str(), a.sensor.as_str())) {
            series.push((&a.method, &a.sensor));
        }
    }
    for (method, sensor) in series {
        let rows: Vec<Vec<String>> = report
            .series(method, sensor)
            .into_iter()
            .map(|a| {
                vec![
                    a.percent.to_string(),
                    a.prs_mean.to_string(),
                    a.prs_std.to_string(),
                    a.score_mean.to_string(),
                    a.score_std.to_string(),
                ]
            })
            .collect();
        write_csv(
            &plot_dir.join(plot_file_name(method, sensor)),
            &["percent", "prs_mean", "prs_std", "score_mean", "score_std"],
            &rows,
        )?;
    }
    Ok(())
}

/// Reads back a `results.csv`.
pub fn read_results(path: &Path) -> Result<Vec<RunResult>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let header = reader.headers().map_err(|e| Error::parse(path, e))?.clone();
    if header.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(Error::parse(path, format!("unexpected header {:?}", header)));
    }
    let num = |s: &str, line: usize| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::parse(path, format!("line {line}: `{s}` is not a number")))
    };
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let line = i + 2;
        let kind =
            ScoreKind::parse(&rec[4]).ok_or_else(|| Error::parse(path, format!("line {line}: bad score kind")))?;
        out.push(RunResult {
            method: rec[0].to_string(),
            fold: rec[1]
                .parse()
                .map_err(|_| Error::parse(path, format!("line {line}: bad fold")))?,
            sensor: rec[2].to_string(),
            percent: num(&rec[3], line)?,
            score_kind: kind,
            score: num(&rec[5], line)?,
            rmse_miss: num(&rec[6], line)?,
            rmse_full: num(&rec[7], line)?,
            prs: num(&rec[8], line)?,
            seconds: num(&rec[9], line)?,
        });
    }
    Ok(out)
}
