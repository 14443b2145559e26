//! Similarity normalization of fragments in homogeneous coordinates.
//!
//! Points are row vectors and transforms act on the right, `p' = [p 1] * M`,
//! so every matrix here keeps `(0, ..., 0, 1)` as its last column and carries
//! translations in its last row.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fragments::Fragment;
use crate::signal_io::artifact_err;

const DEGENERATE_DISTANCE: f64 = 1e-12;
const AXIS_RESIDUAL_TOL: f64 = 1e-6;
const TIE_TOL: f64 = 1e-9;

/// `(n+1) x (n+1)` homogeneous transform for `n`-dimensional row points.
#[derive(Debug, Clone, PartialEq)]
pub struct HomMatrix(DMatrix<f64>);

impl HomMatrix {
    pub fn identity(n: usize) -> Self {
        HomMatrix(DMatrix::identity(n + 1, n + 1))
    }

    /// Adds `offset` to every point.
    pub fn translation(offset: &[f64]) -> Self {
        let n = offset.len();
        let mut m = DMatrix::identity(n + 1, n + 1);
        for (i, v) in offset.iter().enumerate() {
            m[(n, i)] = *v;
        }
        HomMatrix(m)
    }

    pub fn scaling(n: usize, factor: f64) -> Self {
        let mut m = DMatrix::identity(n + 1, n + 1);
        for i in 0..n {
            m[(i, i)] = factor;
        }
        HomMatrix(m)
    }

    /// Plane rotation with `cos` at `(i,i)`, `(j,j)`, `sin` at `(i,j)` and
    /// `-sin` at `(j,i)`.
    pub fn rotation(n: usize, i: usize, j: usize, angle: f64) -> Self {
        let mut m = DMatrix::identity(n + 1, n + 1);
        let (s, c) = angle.sin_cos();
        m[(i, i)] = c;
        m[(j, j)] = c;
        m[(i, j)] = s;
        m[(j, i)] = -s;
        HomMatrix(m)
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} is not a homogeneous transform",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(HomMatrix(m))
    }

    /// Spatial dimension `n`.
    pub fn dim(&self) -> usize {
        self.0.nrows() - 1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Upper-left `n x n` block.
    pub fn linear_part(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.0.view((0, 0), (n, n)).into_owned()
    }

    /// Last row without the trailing 1.
    pub fn translation_part(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.0[(n, i)]).collect()
    }

    pub fn then(&self, next: &HomMatrix) -> HomMatrix {
        HomMatrix(&self.0 * &next.0)
    }

    pub fn inverse(&self) -> Result<HomMatrix> {
        let determinant = self.0.determinant();
        let scale = self
            .0
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        if !determinant.is_finite()
            || determinant.abs() <= 1e-12 * scale.powi(self.0.nrows() as i32)
        {
            return Err(Error::SingularTransform { determinant });
        }
        self.0
            .clone()
            .try_inverse()
            .map(HomMatrix)
            .ok_or(Error::SingularTransform { determinant })
    }

    /// Applies the transform to every row of an `m x n` point matrix.
    pub fn apply(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        assert_eq!(
            points.ncols(),
            n,
            "point dimension does not match transform"
        );
        let mut out = points * self.0.view((0, 0), (n, n));
        for r in 0..out.nrows() {
            for c in 0..n {
                out[(r, c)] += self.0[(n, c)];
            }
        }
        out
    }

    pub fn row_major(&self) -> Vec<f64> {
        self.0.transpose().iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Shift { order: usize },
    Rotation { order: usize, plane: (usize, usize) },
    Center,
    Scale,
}

/// One elementary transform applied during normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStage {
    pub kind: StageKind,
    pub matrix: HomMatrix,
}

/// Similarity-invariant image of a fragment and the transform producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub points: DMatrix<f64>,
    pub norm_transform: HomMatrix,
    /// Rows of the main axis; the first one ends up on the negative side.
    pub axis_pair: (usize, usize),
    pub stages: Vec<NormStage>,
}

impl Descriptor {
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn m_pts(&self) -> usize {
        self.points.nrows()
    }
}

fn farthest_pair(points: &DMatrix<f64>, first_coord: usize) -> ((usize, usize), f64) {
    let m = points.nrows();
    let n = points.ncols();
    let d2 = |i: usize, j: usize| -> f64 {
        (first_coord..n)
            .map(|c| (points[(j, c)] - points[(i, c)]).powi(2))
            .sum()
    };
    let max = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .map(|(i, j)| d2(i, j))
        .fold(0.0, f64::max);
    // earlier axis endpoints collapse onto one point in the residual
    // coordinates, so exact ties are common; rounding must not pick the winner
    let cut = max * (1.0 - TIE_TOL);
    for i in 0..m {
        for j in i + 1..m {
            let d = d2(i, j);
            if d >= cut {
                return ((i, j), d.sqrt());
            }
        }
    }
    ((0, 1.min(m.saturating_sub(1))), 0.0)
}

/// Pair of rows at maximal Euclidean distance; distances within a relative
/// `1e-9` of the maximum count as ties, resolved by lexicographic order.
pub fn find_axis(points: &DMatrix<f64>) -> Result<(usize, usize)> {
    if points.nrows() < 2 {
        return Err(Error::DegenerateFragment { max_distance: 0.0 });
    }
    let (pair, d) = farthest_pair(points, 0);
    if d < DEGENERATE_DISTANCE {
        return Err(Error::DegenerateFragment { max_distance: d });
    }
    Ok(pair)
}

/// Normalizes a fragment: for each order `k`, the farthest pair (measured in
/// coordinates `k..n`) is shifted to the origin and rotated onto axis `k` by
/// plane rotations; then the bounding box is centered and the main axis
/// scaled to unit length.
pub fn normalize(frag: &Fragment) -> Result<Descriptor> {
    normalize_points(&frag.points)
}

pub fn normalize_points(raw: &DMatrix<f64>) -> Result<Descriptor> {
    let n = raw.ncols();
    let axis_pair = find_axis(raw)?;
    let mut pts = raw.clone();
    let mut total = HomMatrix::identity(n);
    let mut stages = Vec::new();
    let mut push = |kind, matrix: HomMatrix, pts: &mut DMatrix<f64>, total: &mut HomMatrix| {
        *pts = matrix.apply(pts);
        *total = total.then(&matrix);
        stages.push(NormStage { kind, matrix });
    };

    let main_len = farthest_pair(raw, 0).1;
    for k in 0..n.saturating_sub(1) {
        let ((i, j), d) = if k == 0 {
            (axis_pair, main_len)
        } else {
            farthest_pair(&pts, k)
        };
        if d <= DEGENERATE_DISTANCE * main_len {
            // remaining coordinates are flat, nothing left to orient
            break;
        }
        let origin: Vec<f64> = pts.row(i).iter().map(|v| -v).collect();
        push(
            StageKind::Shift { order: k },
            HomMatrix::translation(&origin),
            &mut pts,
            &mut total,
        );

        let mut v: Vec<f64> = pts.row(j).iter().copied().collect();
        for p in (k + 1..n).rev() {
            let angle = -v[p].atan2(v[k]);
            let rot = HomMatrix::rotation(n, k, p, angle);
            let (s, c) = angle.sin_cos();
            let (vk, vp) = (v[k], v[p]);
            v[k] = vk * c - vp * s;
            v[p] = vk * s + vp * c;
            push(
                StageKind::Rotation {
                    order: k,
                    plane: (k, p),
                },
                rot,
                &mut pts,
                &mut total,
            );
        }
        let residual = (k + 1..n).map(|c| pts[(j, c)].powi(2)).sum::<f64>().sqrt();
        if residual > AXIS_RESIDUAL_TOL * d || pts[(j, k)] <= 0.0 {
            return Err(Error::RankDeficientAxis { residual });
        }
    }

    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|c| {
            pts.column(c)
                .iter()
                .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
        })
        .unzip();
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| -(a + b) / 2.0).collect();
    push(
        StageKind::Center,
        HomMatrix::translation(&center),
        &mut pts,
        &mut total,
    );

    let extent = hi[0] - lo[0];
    if !(extent > 0.0) {
        return Err(Error::DegenerateFragment {
            max_distance: extent,
        });
    }
    push(
        StageKind::Scale,
        HomMatrix::scaling(n, 1.0 / extent),
        &mut pts,
        &mut total,
    );

    let points = total.apply(raw);
    Ok(Descriptor {
        points,
        norm_transform: total,
        axis_pair,
        stages,
    })
}

/// `M_A * M_B^-1`: carries raw fragment A's points into raw fragment B's frame.
pub fn transform_between(a: &Descriptor, b: &Descriptor) -> Result<HomMatrix> {
    if a.dim() != b.dim() || a.m_pts() != b.m_pts() {
        return Err(Error::ShapeMismatch(format!(
            "descriptors {}x{} and {}x{}",
            a.m_pts(),
            a.dim(),
            b.m_pts(),
            b.dim()
        )));
    }
    Ok(a.norm_transform.then(&b.norm_transform.inverse()?))
}

/// Long-format descriptor points: `fragment,row,x1..xn`.
pub fn write_descriptors_csv(descriptors: &[Descriptor], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
    let n = descriptors.first().map(Descriptor::dim).unwrap_or(0);
    let mut header = vec!["fragment".to_string(), "row".to_string()];
    header.extend((1..=n).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(|e| artifact_err(path, e))?;
    for (id, d) in descriptors.iter().enumerate() {
        for r in 0..d.m_pts() {
            let mut row = vec![id.to_string(), r.to_string()];
            row.extend(d.points.row(r).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| artifact_err(path, e))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per fragment: id, axis rows and `M_norm` row-major.
pub fn write_transforms_csv(descriptors: &[Descriptor], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
    let n = descriptors.first().map(Descriptor::dim).unwrap_or(0);
    let mut header = vec![
        "fragment".to_string(),
        "axis_i".to_string(),
        "axis_j".to_string(),
    ];
    header.extend((0..(n + 1) * (n + 1)).map(|k| format!("m{}{}", k / (n + 1), k % (n + 1))));
    w.write_record(&header).map_err(|e| artifact_err(path, e))?;
    for (id, d) in descriptors.iter().enumerate() {
        let mut row = vec![
            id.to_string(),
            d.axis_pair.0.to_string(),
            d.axis_pair.1.to_string(),
        ];
        row.extend(d.norm_transform.row_major().iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| artifact_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}
