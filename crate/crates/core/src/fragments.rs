//! Marker placement, candidate fragment enumeration and arc-length resampling.

use std::path::Path;

use nalgebra::DMatrix;

use crate::embedding::Trajectory;
use crate::error::{Error, Result};
use crate::signal_io::artifact_err;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerKind {
    /// Strict local extremum of the given (0-based) coordinate.
    Extremum { coordinate: usize },
    /// Filler on a run without extrema.
    Spacing,
    /// First or last trajectory point.
    Endpoint,
}

impl MarkerKind {
    pub fn tag(&self) -> String {
        match self {
            MarkerKind::Extremum { coordinate } => format!("extremum-x{}", coordinate + 1),
            MarkerKind::Spacing => "spacing".into(),
            MarkerKind::Endpoint => "endpoint".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerList {
    indices: Vec<usize>,
    kinds: Vec<MarkerKind>,
}

impl MarkerList {
    pub fn from_indices(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::PreconditionViolation(
                "marker indices must be strictly increasing".into(),
            ));
        }
        let kinds = vec![MarkerKind::Spacing; indices.len()];
        Ok(Self { indices, kinds })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn kinds(&self) -> &[MarkerKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn write_csv(&self, traj: &Trajectory, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
        let mut header = vec!["index".to_string(), "kind".to_string()];
        header.extend((1..=traj.dim()).map(|j| format!("x{j}")));
        w.write_record(&header).map_err(|e| artifact_err(path, e))?;
        for (&i, k) in self.indices.iter().zip(&self.kinds) {
            let mut row = vec![i.to_string(), k.tag()];
            row.extend(traj.point(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| artifact_err(path, e))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Topographic prominence of a strict maximum at `i`: height above the higher
/// of the lowest points reachable on each side before meeting higher ground.
fn peak_prominence(x: &[f64], i: usize) -> f64 {
    let h = x[i];
    let mut left_min = h;
    for &v in x[..i].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[i + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Markers at strict extrema of every coordinate (filtered by prominence),
/// plus evenly spaced fillers wherever no marker lies within `spacing` points.
/// Both trajectory endpoints are always included.
pub fn place_markers(traj: &Trajectory, prominence: f64, spacing: usize) -> Result<MarkerList> {
    let n = traj.len();
    if n < 3 {
        return Err(Error::SeriesTooShort {
            required: 3,
            actual: n,
        });
    }
    if spacing < 2 || !(prominence >= 0.0) {
        return Err(Error::PreconditionViolation(
            "spacing must be >= 2 and prominence >= 0".into(),
        ));
    }

    let mut kind: Vec<Option<MarkerKind>> = vec![None; n];
    kind[0] = Some(MarkerKind::Endpoint);
    kind[n - 1] = Some(MarkerKind::Endpoint);
    let mut neg = vec![0.0; n];
    for j in 0..traj.dim() {
        let x: Vec<f64> = traj.coordinate(j).collect();
        for (v, nv) in x.iter().zip(neg.iter_mut()) {
            *nv = -v;
        }
        for i in 1..n - 1 {
            let is_max = x[i] > x[i - 1] && x[i] > x[i + 1];
            let is_min = x[i] < x[i - 1] && x[i] < x[i + 1];
            if !(is_max || is_min) || kind[i].is_some() {
                continue;
            }
            let prom = if prominence == 0.0 {
                f64::INFINITY
            } else if is_max {
                peak_prominence(&x, i)
            } else {
                peak_prominence(&neg, i)
            };
            if prom >= prominence {
                kind[i] = Some(MarkerKind::Extremum { coordinate: j });
            }
        }
    }

    let anchors: Vec<usize> = (0..n).filter(|&i| kind[i].is_some()).collect();
    for w in anchors.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut k = a + spacing;
        while k + spacing <= b {
            kind[k] = Some(MarkerKind::Spacing);
            k += spacing;
        }
    }

    let (indices, kinds) = kind
        .into_iter()
        .enumerate()
        .filter_map(|(i, k)| k.map(|k| (i, k)))
        .unzip();
    Ok(MarkerList { indices, kinds })
}

/// Inclusive range of trajectory indices between two markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FragmentSpan {
    pub start: usize,
    pub end: usize,
}

impl FragmentSpan {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::PreconditionViolation(format!(
                "fragment start {start} must precede end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    /// Number of original contour points covered.
    pub fn raw_len(&self) -> usize {
        self.end - self.start + 1
    }

    /// Inclusive interval intersection; a shared endpoint counts as overlap.
    pub fn overlaps(&self, other: &FragmentSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Inclusive bounds on a fragment's raw point count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthBounds {
    min: usize,
    max: usize,
}

impl LengthBounds {
    pub fn new(min: usize, max: usize) -> Result<Self> {
        if min > max {
            return Err(Error::PreconditionViolation(format!(
                "length bounds inverted: {min} > {max}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, len: usize) -> bool {
        (self.min..=self.max).contains(&len)
    }
}

/// All marker pairs `i < j` whose raw length fits the bounds, ordered by
/// start marker then end marker. Without bounds this yields `n(n-1)/2` spans.
pub fn enumerate_fragments(
    markers: &MarkerList,
    bounds: Option<LengthBounds>,
) -> Vec<FragmentSpan> {
    let idx = markers.indices();
    let mut out = Vec::new();
    for (a, &start) in idx.iter().enumerate() {
        for &end in &idx[a + 1..] {
            let span = FragmentSpan { start, end };
            match bounds {
                Some(b) if span.raw_len() > b.max => break,
                Some(b) if !b.contains(span.raw_len()) => continue,
                _ => out.push(span),
            }
        }
    }
    out
}

/// A span together with its resampled `m_pts x dim` point matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub span: FragmentSpan,
    pub points: DMatrix<f64>,
}

impl Fragment {
    pub fn raw_len(&self) -> usize {
        self.span.raw_len()
    }

    pub fn write_points_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(&self.points, path)
    }
}

pub(crate) fn write_matrix_csv(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
    let header: Vec<String> = (1..=m.ncols()).map(|j| format!("x{j}")).collect();
    w.write_record(&header).map_err(|e| artifact_err(path, e))?;
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))
            .map_err(|e| artifact_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Samples `m_pts` points equally spaced in arc length along a polyline.
/// The first and last output rows are the polyline's endpoints, bit for bit.
pub fn resample_polyline(rows: &[&[f64]], m_pts: usize) -> Option<DMatrix<f64>> {
    let dim = rows[0].len();
    let mut cum = Vec::with_capacity(rows.len());
    cum.push(0.0);
    for w in rows.windows(2) {
        let seg = w[0]
            .iter()
            .zip(w[1])
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        cum.push(cum.last().unwrap() + seg);
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return None;
    }
    let last = rows.len() - 1;
    let mut out = DMatrix::zeros(m_pts, dim);
    let mut seg = 0;
    for k in 0..m_pts {
        let src: Vec<f64> = if k == 0 {
            rows[0].to_vec()
        } else if k == m_pts - 1 {
            rows[last].to_vec()
        } else {
            let target = total * k as f64 / (m_pts - 1) as f64;
            while seg + 1 < last && cum[seg + 1] < target {
                seg += 1;
            }
            let len = cum[seg + 1] - cum[seg];
            let t = if len > 0.0 {
                ((target - cum[seg]) / len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            rows[seg]
                .iter()
                .zip(rows[seg + 1])
                .map(|(a, b)| a + t * (b - a))
                .collect()
        };
        for (j, v) in src.into_iter().enumerate() {
            out[(k, j)] = v;
        }
    }
    Some(out)
}

/// Resamples trajectory points `start..=end` to `m_pts` rows.
pub fn resample_fragment(
    traj: &Trajectory,
    start: usize,
    end: usize,
    m_pts: usize,
) -> Result<Fragment> {
    let span = FragmentSpan::new(start, end)?;
    if end >= traj.len() {
        return Err(Error::PreconditionViolation(format!(
            "fragment end {end} beyond trajectory of {}",
            traj.len()
        )));
    }
    if m_pts < 2 {
        return Err(Error::PreconditionViolation(
            "m_pts must be at least 2".into(),
        ));
    }
    let rows: Vec<&[f64]> = (start..=end).map(|i| traj.point(i)).collect();
    let points = resample_polyline(&rows, m_pts).ok_or(Error::ZeroLengthFragment { start, end })?;
    Ok(Fragment { span, points })
}

pub fn write_spans_csv(spans: &[FragmentSpan], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
    w.write_record(["id", "start", "end", "raw_len"])
        .map_err(|e| artifact_err(path, e))?;
    for (id, s) in spans.iter().enumerate() {
        w.write_record([
            id.to_string(),
            s.start.to_string(),
            s.end.to_string(),
            s.raw_len().to_string(),
        ])
        .map_err(|e| artifact_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spans_csv(path: &Path) -> Result<Vec<FragmentSpan>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| artifact_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| artifact_err(path, e))?;
        let field = |i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| artifact_err(path, "bad fragment record"))
        };
        out.push(FragmentSpan::new(field(1)?, field(2)?)?);
    }
    Ok(out)
}
