//! Ablation sweeps over the sensor-dropout ratio and the ESensI components.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::{run_cv_experiment, ExperimentConfig, RobustnessReport};
use crate::models::{Combine, EsensiOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub sd_ratio: Option<f64>,
    pub shared_weights: bool,
    pub sensor_encoding: bool,
    pub normalization: bool,
    /// Combination of embedding and sensor encoding, where it applies.
    pub combine: Option<Combine>,
    pub score_mean: f64,
    pub score_std: f64,
    /// Fold-mean PRS per missingness level (percent), averaged over scenarios.
    pub prs: Vec<(f64, f64)>,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: String,
    pub rows: Vec<AblationRow>,
}

fn prs_by_level(report: &RobustnessReport) -> Vec<(f64, f64)> {
    let mut levels: Vec<f64> = Vec::new();
    for a in &report.aggregates {
        if !levels.contains(&a.percent) {
            levels.push(a.percent);
        }
    }
    levels
        .into_iter()
        .map(|p| {
            let cells: Vec<f64> = report
                .aggregates
                .iter()
                .filter(|a| a.percent == p)
                .map(|a| a.prs_mean)
                .collect();
            (p, cells.iter().sum::<f64>() / cells.len() as f64)
        })
        .collect()
}

fn row_from(label: String, report: &RobustnessReport) -> AblationRow {
    let (score_mean, score_std) = report
        .full_sensor
        .first()
        .map_or((f64::NAN, f64::NAN), |s| (s.mean, s.std));
    AblationRow {
        label,
        sd_ratio: None,
        shared_weights: false,
        sensor_encoding: false,
        normalization: false,
        combine: None,
        score_mean,
        score_std,
        prs: prs_by_level(report),
        complete: report.complete,
    }
}

/// Input fusion with sensor dropout at each ratio, plus the combinations
/// ("no ratio") variant as the last row.
pub fn sweep_dropout_ratio(config: &ExperimentConfig, data: &Dataset, ratios: &[f64]) -> Result<AblationTable> {
    if ratios.is_empty() {
        return Err(Error::Config("empty sensor-dropout ratio list".into()));
    }
    if let Some(bad) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!("sensor-dropout ratio {bad} not in [0,1]")));
    }
    let mut rows = Vec::new();
    for &r in ratios {
        let mut cfg = config.clone();
        cfg.methods = vec!["isensd".into()];
        cfg.sd_ratio = r;
        let report = run_cv_experiment(&cfg, data)?;
        let mut row = row_from(format!("ratio={r}"), &report);
        row.sd_ratio = Some(r);
        rows.push(row);
    }
    let mut cfg = config.clone();
    cfg.methods = vec!["isensd-nr".into()];
    let report = run_cv_experiment(&cfg, data)?;
    rows.push(row_from("no-ratio".into(), &report));
    Ok(AblationTable {
        kind: "dropout-ratio".into(),
        rows,
    })
}

/// The five ESensI component configurations, evaluated with all sensors:
/// plain ensemble, shared head, with sensor encoding, with normalization
/// (addition), and with normalization (concatenation).
pub fn esensi_config_grid(config: &ExperimentConfig, data: &Dataset) -> Result<AblationTable> {
    let grid: [(&str, Option<EsensiOptions>); 5] = [
        ("ensemble", None),
        (
            "shared",
            Some(EsensiOptions {
                use_encoding: false,
                use_normalization: false,
                combine: Combine::Addition,
            }),
        ),
        (
            "shared+encoding",
            Some(EsensiOptions {
                use_encoding: true,
                use_normalization: false,
                combine: Combine::Addition,
            }),
        ),
        (
            "shared+encoding+normalization+addition",
            Some(EsensiOptions {
                use_encoding: true,
                use_normalization: true,
                combine: Combine::Addition,
            }),
        ),
        (
            "shared+encoding+normalization+concatenation",
            Some(EsensiOptions {
                use_encoding: true,
                use_normalization: true,
                combine: Combine::Concatenation,
            }),
        ),
    ];
    let mut rows = Vec::new();
    for (label, opts) in grid {
        let mut cfg = config.clone();
        cfg.percents = vec![0.0];
        match opts {
            None => cfg.methods = vec!["ensemble".into()],
            Some(o) => {
                cfg.methods = vec!["esensi".into()];
                cfg.esensi = o;
            }
        }
        let report = run_cv_experiment(&cfg, data)?;
        let mut row = row_from(label.into(), &report);
        if let Some(o) = opts {
            row.shared_weights = true;
            row.sensor_encoding = o.use_encoding;
            row.normalization = o.use_normalization;
            if o.use_normalization {
                row.combine = Some(o.combine);
            }
        }
        rows.push(row);
    }
    Ok(AblationTable {
        kind: "esensi-grid".into(),
        rows,
    })
}

/// Writes an ablation table as CSV, one line per row.
pub fn write_table(table: &AblationTable, path: &Path) -> Result<()> {
    let levels: Vec<f64> = table
        .rows
        .first()
        .map(|r| r.prs.iter().map(|p| p.0).collect())
        .unwrap_or_default();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let mut header: Vec<String> = [
        "label",
        "sd_ratio",
        "shared_weights",
        "sensor_encoding",
        "normalization",
        "combine",
        "score_mean",
        "score_std",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(levels.iter().map(|p| format!("prs@{p}")));
    w.write_record(&header).map_err(|e| Error::parse(path, e))?;
    for r in &table.rows {
        let mut rec = vec![
            r.label.clone(),
            r.sd_ratio.map(|v| v.to_string()).unwrap_or_default(),
            r.shared_weights.to_string(),
            r.sensor_encoding.to_string(),
            r.normalization.to_string(),
            match r.combine {
                Some(Combine::Addition) => "addition".into(),
                Some(Combine::Concatenation) => "concatenation".into(),
                None => String::new(),
            },
            r.score_mean.to_string(),
            r.score_std.to_string(),
        ];
        rec.extend(r.prs.iter().map(|p| p.1.to_string()));
        w.write_record(&rec).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
