//! JSON results and CSV sample files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::experiments::ExperimentResult;
use crate::error::{Result, RmtError};
use crate::spectral::FluctuationRecord;

pub const FLUCTUATION_HEADER: [&str; 6] = [
    "experiment_id",
    "replication",
    "spike_index",
    "eig_rank",
    "lambda",
    "xi",
];
pub const REFERENCE_HEADER: [&str; 2] = ["sample_id", "value"];

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_result(result: &ExperimentResult, path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut w, result)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_result(path: impl AsRef<Path>) -> Result<ExperimentResult> {
    let r = BufReader::new(File::open(path.as_ref())?);
    Ok(serde_json::from_reader(r)?)
}

/// One row per outlier: `experiment_id,replication,spike_index,eig_rank,lambda,xi`.
pub fn write_fluctuation_csv(experiment_id: &str, records: &[FluctuationRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path.as_ref())?);
    w.write_record(FLUCTUATION_HEADER)?;
    for rec in records {
        for s in &rec.spikes {
            for (i, (lambda, xi)) in s.eigenvalues.iter().zip(&s.xi).enumerate() {
                w.write_record([
                    experiment_id.to_string(),
                    rec.replication.to_string(),
                    s.spike_index.to_string(),
                    (s.first_rank + i).to_string(),
                    fmt(*lambda),
                    fmt(*xi),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per reference draw: `sample_id,value`.
pub fn write_reference_csv(values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path.as_ref())?);
    w.write_record(REFERENCE_HEADER)?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `value` or `xi` column of a CSV with a header, or the only column
/// of a single-column file.
pub fn read_sample_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = r.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "value")
        .or_else(|| headers.iter().position(|h| h == "xi"))
        .or(if headers.len() == 1 { Some(0) } else { None })
        .ok_or_else(|| {
            RmtError::Config(format!(
                "{}: no `value` or `xi` column in header {:?}",
                path.display(),
                headers.iter().collect::<Vec<_>>()
            ))
        })?;
    let mut out = Vec::new();
    // a headerless single-column file has a number where the header would be
    if headers.len() == 1 {
        if let Ok(v) = headers[0].trim().parse::<f64>() {
            out.push(v);
        }
    }
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("");
        let v: f64 = field.trim().parse().map_err(|_| {
            RmtError::Config(format!(
                "{}: row {}: `{field}` is not a number",
                path.display(),
                line + 2
            ))
        })?;
        out.push(v);
    }
    Ok(out)
}
