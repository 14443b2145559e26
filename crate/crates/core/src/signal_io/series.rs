use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Uniformly sampled scalar observable.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    dt: f64,
    label: String,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, dt: f64, label: impl Into<String>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::SeriesTooShort {
                required: 2,
                actual: samples.len(),
            });
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::PreconditionViolation(format!(
                "sampling interval must be positive, got {dt}"
            )));
        }
        if let Some(row) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row,
                column: "samples".into(),
            });
        }
        Ok(Self {
            samples,
            dt,
            label: label.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Column picked out of a CSV file, by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Name(String),
    Index(usize),
}

impl From<&str> for Column {
    fn from(s: &str) -> Self {
        Column::Name(s.to_string())
    }
}

impl From<usize> for Column {
    fn from(i: usize) -> Self {
        Column::Index(i)
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Name(n) => write!(f, "{n}"),
            Column::Index(i) => write!(f, "#{i}"),
        }
    }
}

const TIME_COLUMNS: [&str; 2] = ["t", "time"];

/// Reads one column of a headed CSV file.
///
/// If the file also carries a `t`/`time` column, the sampling interval is
/// taken from it and must be uniform; otherwise `dt` defaults to 1.
pub fn load_series(path: &Path, column: &Column) -> Result<TimeSeries> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| artifact_err(path, e))?;
    let headers = reader.headers().map_err(|e| artifact_err(path, e))?.clone();

    let value_idx = match column {
        Column::Name(name) => headers.iter().position(|h| h == name),
        Column::Index(i) => (*i < headers.len()).then_some(*i),
    }
    .ok_or_else(|| Error::MissingColumn {
        path: path.to_path_buf(),
        column: column.to_string(),
    })?;
    let column_name = headers.get(value_idx).unwrap_or_default().to_string();
    let time_idx = headers
        .iter()
        .enumerate()
        .find(|(i, h)| *i != value_idx && TIME_COLUMNS.contains(&h.to_ascii_lowercase().as_str()))
        .map(|(i, _)| i);

    let mut values = Vec::new();
    let mut times = Vec::new();
    for (k, record) in reader.records().enumerate() {
        // header is line 1
        let line = k + 2;
        let record = record.map_err(|e| artifact_err(path, e))?;
        values.push(parse_cell(record.get(value_idx), line, &column_name)?);
        if let Some(ti) = time_idx {
            times.push(parse_cell(record.get(ti), line, &headers[ti])?);
        }
    }
    if values.len() < 2 {
        return Err(Error::SeriesTooShort {
            required: 2,
            actual: values.len(),
        });
    }

    let dt = if times.is_empty() {
        1.0
    } else {
        uniform_step(&times)?
    };
    TimeSeries::new(values, dt, column_name)
}

fn parse_cell(cell: Option<&str>, row: usize, column: &str) -> Result<f64> {
    cell.and_then(|c| c.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::NonFiniteValue {
            row,
            column: column.to_string(),
        })
}

fn uniform_step(times: &[f64]) -> Result<f64> {
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::UnevenSampling {
            row: 3,
            expected: f64::NAN,
            found: dt,
        });
    }
    let tol = 1e-6 * dt;
    for (k, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > tol {
            return Err(Error::UnevenSampling {
                row: k + 3,
                expected: dt,
                found: step,
            });
        }
    }
    Ok(dt)
}

/// Writes `t,<label>` rows; floats use shortest round-trip formatting so
/// [`load_series`] reads back the identical series.
pub fn write_series(ts: &TimeSeries, path: &Path) -> Result<()> {
    let label = if ts.label.is_empty() {
        "value"
    } else {
        ts.label.as_str()
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
    w.write_record(["t", label])
        .map_err(|e| artifact_err(path, e))?;
    for (k, v) in ts.samples.iter().enumerate() {
        let t = k as f64 * ts.dt;
        w.write_record([t.to_string(), v.to_string()])
            .map_err(|e| artifact_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes several equally long series side by side under one time column.
pub fn write_series_table(series: &[&TimeSeries], path: &Path) -> Result<()> {
    let Some(first) = series.first() else {
        return Err(Error::PreconditionViolation("no series to write".into()));
    };
    if series.iter().any(|s| s.len() != first.len()) {
        return Err(Error::ShapeMismatch("series lengths differ".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend(series.iter().map(|s| s.label.clone()));
    w.write_record(&header).map_err(|e| artifact_err(path, e))?;
    for k in 0..first.len() {
        let mut row = vec![(k as f64 * first.dt).to_string()];
        row.extend(series.iter().map(|s| s.samples[k].to_string()));
        w.write_record(&row).map_err(|e| artifact_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn artifact_err(path: &Path, e: impl fmt::Display) -> Error {
    Error::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}
