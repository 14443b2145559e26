//! Delay-coordinate reconstruction of a state trajectory from one observable.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal_io::{artifact_err, TimeSeries};

/// Ordered sequence of `dim`-dimensional points, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    data: Vec<f64>,
    dim: usize,
    source: String,
}

impl Trajectory {
    pub fn from_rows(rows: &[Vec<f64>], source: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("rows of unequal length".into()));
        }
        Self::from_flat(rows.concat(), dim, source)
    }

    pub fn from_flat(data: Vec<f64>, dim: usize, source: impl Into<String>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form {dim}-dimensional points",
                data.len()
            )));
        }
        if data.len() / dim < 2 {
            return Err(Error::SeriesTooShort {
                required: 2,
                actual: data.len() / dim,
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: k / dim,
                column: format!("x{}", k % dim + 1),
            });
        }
        Ok(Self {
            data,
            dim,
            source: source.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Coordinate `j` read down the points.
    pub fn coordinate(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(self.dim).copied()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Writes one point per row under an `x1..xn` header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
        let header: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        w.write_record(&header).map_err(|e| artifact_err(path, e))?;
        for p in self.points() {
            w.write_record(p.iter().map(|v| v.to_string()))
                .map_err(|e| artifact_err(path, e))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path).map_err(|e| artifact_err(path, e))?;
        let dim = r.headers().map_err(|e| artifact_err(path, e))?.len();
        let mut data = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| artifact_err(path, e))?;
            for (j, cell) in rec.iter().enumerate() {
                let v = cell
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::NonFiniteValue {
                        row: row + 2,
                        column: format!("x{}", j + 1),
                    })?;
                data.push(v);
            }
        }
        let source = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_flat(data, dim, source)
    }
}

/// Point `k` is `(s[k], s[k+lag], ..., s[k+(dim-1)*lag])`.
pub fn delay_embed(ts: &TimeSeries, dim: usize, lag: usize) -> Result<Trajectory> {
    if dim == 0 || lag == 0 {
        return Err(Error::PreconditionViolation(
            "dim and lag must be positive".into(),
        ));
    }
    let s = ts.samples();
    let span = (dim - 1) * lag;
    let required = span + 2;
    if s.len() < required {
        return Err(Error::SeriesTooShort {
            required,
            actual: s.len(),
        });
    }
    let count = s.len() - span;
    let mut data = Vec::with_capacity(count * dim);
    for k in 0..count {
        data.extend((0..dim).map(|j| s[k + j * lag]));
    }
    Trajectory::from_flat(
        data,
        dim,
        format!("delay({}, dim={dim}, lag={lag})", ts.label()),
    )
}

/// Mean-removed, biased-normalized sample autocorrelation for lags `0..n`.
pub fn autocorrelation(s: &[f64]) -> Vec<f64> {
    let n = s.len();
    let mean = s.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = s.iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum();
    (0..n)
        .map(|k| {
            centered[..n - k]
                .iter()
                .zip(&centered[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / c0
        })
        .collect()
}

/// First lag where the autocorrelation reaches zero; failing that, the first
/// local minimum; failing that, 1.
pub fn estimate_lag(ts: &TimeSeries) -> Result<usize> {
    let s = ts.samples();
    if s.len() < 8 {
        return Err(Error::SeriesTooShort {
            required: 8,
            actual: s.len(),
        });
    }
    let first = s[0];
    if s.iter().all(|v| *v == first) {
        return Err(Error::ConstantSeries);
    }
    let ac = autocorrelation(s);
    if ac[0] == 0.0 || !ac[0].is_finite() {
        return Err(Error::ConstantSeries);
    }
    if let Some(k) = (1..ac.len()).find(|&k| ac[k] <= 0.0) {
        return Ok(k);
    }
    if let Some(k) = (1..ac.len() - 1).find(|&k| ac[k] < ac[k - 1] && ac[k] <= ac[k + 1]) {
        return Ok(k);
    }
    Ok(1)
}
