//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.json`, `labels.csv` (`sample_id,target`)
//! and one `<sensor>.csv` per sensor. Temporal sensors use
//! `sample_id,t,f0..f{D-1}` with one row per time step; static sensors use
//! `sample_id,f0..f{D-1}`. Sample order is the row order of `labels.csv`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{Dataset, DatasetManifest, SensorKind, Targets, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.csv";

pub fn load_dataset(manifest_path: &Path, data_dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::parse(manifest_path, e))?;
    manifest.validate()?;

    let entries = fs::read_dir(data_dir).map_err(|e| Error::io(data_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(data_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".csv") {
            if stem != "labels" && !manifest.sensors.iter().any(|s| s.name == stem) {
                return Err(Error::UnknownSensor(stem.to_string()));
            }
        }
    }

    let labels_path = data_dir.join(LABELS_FILE);
    let mut ids = Vec::new();
    let mut classes = Vec::new();
    let mut values = Vec::new();
    let mut reader = open_csv(&labels_path)?;
    check_header(&labels_path, &mut reader, &["sample_id", "target"])?;
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(&labels_path, e))?;
        if record.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "{}: expected 2 columns, got {}",
                labels_path.display(),
                record.len()
            )));
        }
        ids.push(record[0].to_string());
        match manifest.task {
            Task::Classification { .. } => classes.push(
                record[1]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::parse(&labels_path, format!("non-integer class `{}`", &record[1])))?,
            ),
            Task::Regression => values.push(parse_number(&labels_path, &record[1])?),
        }
    }
    if ids.len() != manifest.n_samples {
        return Err(Error::Consistency(format!(
            "manifest declares {} samples, labels list {}",
            manifest.n_samples,
            ids.len()
        )));
    }
    let position: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if position.len() != ids.len() {
        return Err(Error::Consistency("duplicate sample id in labels".into()));
    }
    let n = ids.len();

    let mut blocks = Vec::with_capacity(manifest.sensors.len());
    for spec in &manifest.sensors {
        let path = data_dir.join(format!("{}.csv", spec.name));
        let d = spec.dim;
        let (t, lead) = match spec.kind {
            SensorKind::Temporal => (spec.timesteps.unwrap_or(1), 2),
            SensorKind::Static => (1, 1),
        };
        let mut header: Vec<String> = vec!["sample_id".into()];
        if spec.kind == SensorKind::Temporal {
            header.push("t".into());
        }
        header.extend((0..d).map(|j| format!("f{j}")));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();

        let mut reader = open_csv(&path)?;
        check_header(&path, &mut reader, &header_refs)?;
        let mut data = vec![0.0; n * t * d];
        let mut filled = vec![false; n * t];
        for record in reader.records() {
            let record = record.map_err(|e| Error::parse(&path, e))?;
            if record.len() != lead + d {
                return Err(Error::ShapeMismatch(format!(
                    "{}: expected {} columns, got {}",
                    path.display(),
                    lead + d,
                    record.len()
                )));
            }
            let i = *position.get(&record[0]).ok_or_else(|| {
                Error::Consistency(format!(
                    "{}: sample `{}` missing from labels",
                    path.display(),
                    &record[0]
                ))
            })?;
            let step = if lead == 2 {
                record[1]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::parse(&path, format!("invalid time index `{}`", &record[1])))?
            } else {
                0
            };
            if step >= t {
                return Err(Error::ShapeMismatch(format!(
                    "{}: time index {step} >= {t}",
                    path.display()
                )));
            }
            let slot = i * t + step;
            if filled[slot] {
                return Err(Error::Consistency(format!(
                    "{}: duplicate row for sample `{}` step {step}",
                    path.display(),
                    &record[0]
                )));
            }
            filled[slot] = true;
            for j in 0..d {
                data[slot * d + j] = parse_number(&path, &record[lead + j])?;
            }
        }
        if let Some(missing) = filled.iter().position(|f| !f) {
            return Err(Error::Consistency(format!(
                "{}: no row for sample `{}` step {}",
                path.display(),
                ids[missing / t],
                missing % t
            )));
        }
        let mut shape = vec![n];
        shape.extend(spec.block_shape());
        blocks.push(Tensor::new(shape, data)?);
    }

    let targets = match manifest.task {
        Task::Classification { .. } => Targets::Classes(classes),
        Task::Regression => Targets::Values(values),
    };
    Dataset::new(manifest, ids, blocks, targets)
}

/// Writes `manifest.json`, `labels.csv` and one CSV per sensor into `dir`.
pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = data.manifest.clone();
    manifest.n_samples = data.len();
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), &(json + "\n"))?;

    let mut labels = String::from("sample_id,target\n");
    for (i, id) in data.ids.iter().enumerate() {
        match &data.targets {
            Targets::Classes(c) => writeln!(labels, "{id},{}", c[i]),
            Targets::Values(v) => writeln!(labels, "{id},{}", v[i]),
        }
        .expect("write to string");
    }
    write_file(&dir.join(LABELS_FILE), &labels)?;

    for (spec, block) in manifest.sensors.iter().zip(&data.blocks) {
        let d = spec.dim;
        let mut out = String::from("sample_id");
        if spec.kind == SensorKind::Temporal {
            out.push_str(",t");
        }
        for j in 0..d {
            write!(out, ",f{j}").expect("write to string");
        }
        out.push('\n');
        for (i, id) in data.ids.iter().enumerate() {
            for (step, chunk) in block.row(i).chunks(d).enumerate() {
                out.push_str(id);
                if spec.kind == SensorKind::Temporal {
                    write!(out, ",{step}").expect("write to string");
                }
                for v in chunk {
                    write!(out, ",{v}").expect("write to string");
                }
                out.push('\n');
            }
        }
        write_file(&dir.join(format!("{}.csv", spec.name)), &out)?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn check_header(path: &Path, reader: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| Error::parse(path, e))?;
    if header.len() != expected.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}: expected {} columns, got {}",
            path.display(),
            expected.len(),
            header.len()
        )));
    }
    if header.iter().zip(expected).any(|(a, b)| a.trim() != *b) {
        return Err(Error::parse(
            path,
            format!("unexpected header, want {}", expected.join(",")),
        ));
    }
    Ok(())
}

fn parse_number(path: &Path, cell: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::parse(path, format!("non-numeric cell `{cell}`")))
}
