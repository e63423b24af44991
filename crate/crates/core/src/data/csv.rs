//! CSV ingestion: `timestamp,<feature...>,target` with ISO-8601 UTC stamps.

use std::path::Path;

use chrono::DateTime;

use crate::data::RawSeries;
use crate::{Error, Result};

/// Loads one task's series. The task name is the file stem.
pub fn load_csv(path: &Path) -> Result<RawSeries> {
    let task_name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("task")
        .to_string();
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 || headers.get(0) != Some("timestamp") {
        return Err(Error::data(format!(
            "{}: header must start with `timestamp`",
            path.display()
        )));
    }
    if headers.get(headers.len() - 1) != Some("target") {
        return Err(Error::data(format!(
            "{}: header must end with `target`",
            path.display()
        )));
    }
    let feature_names: Vec<String> = headers
        .iter()
        .skip(1)
        .take(headers.len() - 2)
        .map(str::to_string)
        .collect();

    let n_cols = headers.len();
    let mut timestamps = Vec::new();
    let mut features = Vec::new();
    let mut target = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header line
        let record = record.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        if record.len() != n_cols {
            return Err(Error::data(format!(
                "{} line {line}: expected {n_cols} fields, got {}",
                path.display(),
                record.len()
            )));
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| {
            Error::data(format!(
                "{} line {line}: malformed timestamp `{}`",
                path.display(),
                &record[0]
            ))
        })?;
        if let Some(&prev) = timestamps.last() {
            if ts == prev {
                return Err(Error::data(format!(
                    "{} line {line}: duplicate timestamp `{}`",
                    path.display(),
                    &record[0]
                )));
            }
            if ts < prev {
                return Err(Error::data(format!(
                    "{} line {line}: timestamps must increase, `{}` goes backward",
                    path.display(),
                    &record[0]
                )));
            }
        }
        timestamps.push(ts);
        for col in 1..n_cols {
            let v: f64 = record[col].trim().parse().map_err(|_| {
                Error::data(format!(
                    "{} line {line}: non-numeric value `{}` in column `{}`",
                    path.display(),
                    &record[col],
                    &headers[col]
                ))
            })?;
            if col == n_cols - 1 {
                target.push(v);
            } else {
                features.push(v);
            }
        }
    }
    if timestamps.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }
    Ok(RawSeries { task_name, timestamps, feature_names, features, target })
}

/// Accepts RFC 3339 (`2015-01-01T00:00:00Z`, offset forms) and the
/// minutes-only shorthand `2015-01-01T00:00Z`.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    let body = s.strip_suffix('Z')?;
    let naive = chrono::NaiveDateTime::parse_from_str(body, "%Y-%m-%dT%H:%M").ok()?;
    Some(naive.and_utc().timestamp())
}
