//! Per-coordinate Fourier signatures of descriptors and the weighted
//! spectral distance between them.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::Descriptor;
use crate::signal_io::artifact_err;

/// `coeffs[d][k] = sum_p x[d][p] * exp(-2 pi i k p / m)` for each coordinate `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSignature {
    coeffs: Vec<Vec<Complex64>>,
}

impl SpectralSignature {
    pub fn from_coeffs(coeffs: Vec<Vec<Complex64>>) -> Result<Self> {
        let m = coeffs.first().map(Vec::len).unwrap_or(0);
        if m == 0 || coeffs.iter().any(|c| c.len() != m) {
            return Err(Error::ShapeMismatch(
                "coordinate spectra must be non-empty and equally long".into(),
            ));
        }
        Ok(Self { coeffs })
    }

    pub fn m_pts(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coordinate(&self, d: usize) -> &[Complex64] {
        &self.coeffs[d]
    }

    /// Inverse transform with the `1/m` factor.
    pub fn inverse(&self) -> DMatrix<f64> {
        let m = self.m_pts();
        let tw = twiddles(m, 1.0);
        DMatrix::from_fn(m, self.dim(), |k, d| {
            let s: Complex64 = (0..m).map(|p| self.coeffs[d][p] * tw[(k * p) % m]).sum();
            s.re / m as f64
        })
    }
}

fn twiddles(m: usize, sign: f64) -> Vec<Complex64> {
    (0..m)
        .map(|r| Complex64::from_polar(1.0, sign * 2.0 * PI * r as f64 / m as f64))
        .collect()
}

/// Direct forward transform of each column of an `m x n` matrix.
pub fn dft_points(points: &DMatrix<f64>) -> SpectralSignature {
    let m = points.nrows();
    let tw = twiddles(m, -1.0);
    let coeffs = (0..points.ncols())
        .map(|d| {
            let col = points.column(d);
            (0..m)
                .map(|k| (0..m).map(|p| tw[(k * p) % m] * col[p]).sum())
                .collect()
        })
        .collect();
    SpectralSignature { coeffs }
}

pub fn dft_descriptor(d: &Descriptor) -> SpectralSignature {
    dft_points(&d.points)
}

/// Number of conjugate pairs compared and their discount factors.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceWeights {
    betas: Vec<f64>,
}

impl DistanceWeights {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::PreconditionViolation(
                "discount factors must be positive".into(),
            ));
        }
        Ok(Self { betas })
    }

    /// `q = min(10, (m-1)/2)` pairs with `beta_i = 2^-(i-1)`.
    pub fn default_for(m_pts: usize) -> Result<Self> {
        let q = 10.min(m_pts.saturating_sub(1) / 2);
        Self::new((0..q).map(|i| 0.5f64.powi(i as i32)).collect())
    }

    pub fn q(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn check(&self, m_pts: usize) -> Result<()> {
        let q_max = m_pts.saturating_sub(1) / 2;
        if self.q() > q_max {
            return Err(Error::ShapeMismatch(format!(
                "{} pairs requested, {m_pts} points allow {q_max}",
                self.q()
            )));
        }
        Ok(())
    }
}

/// `sum_i beta_i * (||dIm_i|| + ||dRe_i||)` over pairs `i = 1..q`, norms taken
/// across coordinates at bin `i`. The DC bin is skipped and only the
/// positive-frequency member of each conjugate pair is read.
pub fn distance(a: &SpectralSignature, b: &SpectralSignature, w: &DistanceWeights) -> Result<f64> {
    if a.m_pts() != b.m_pts() || a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "signatures {}x{} and {}x{}",
            a.dim(),
            a.m_pts(),
            b.dim(),
            b.m_pts()
        )));
    }
    w.check(a.m_pts())?;
    let mut total = 0.0;
    for (i, beta) in (1..=w.q()).zip(w.betas()) {
        let (mut im2, mut re2) = (0.0, 0.0);
        for d in 0..a.dim() {
            let diff = b.coeffs[d][i] - a.coeffs[d][i];
            im2 += diff.im * diff.im;
            re2 += diff.re * diff.re;
        }
        total += beta * (im2.sqrt() + re2.sqrt());
    }
    Ok(total)
}

/// Long-format spectra: `fragment,coordinate,bin,re,im`.
pub fn write_signatures_csv(sigs: &[SpectralSignature], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
    w.write_record(["fragment", "coordinate", "bin", "re", "im"])
        .map_err(|e| artifact_err(path, e))?;
    for (id, s) in sigs.iter().enumerate() {
        for d in 0..s.dim() {
            for (k, c) in s.coeffs[d].iter().enumerate() {
                w.write_record([
                    id.to_string(),
                    (d + 1).to_string(),
                    k.to_string(),
                    c.re.to_string(),
                    c.im.to_string(),
                ])
                .map_err(|e| artifact_err(path, e))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod reference {
    /// Textbook evaluation with explicit cos/sin per term.
    pub fn dft(x: &[f64]) -> Vec<(f64, f64)> {
        let m = x.len();
        (0..m)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (p, v) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * p) as f64 / m as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re, im)
            })
            .collect()
    }

    /// Distance from raw coordinate columns, sharing no code with the module.
    pub fn distance(a: &[Vec<f64>], b: &[Vec<f64>], betas: &[f64]) -> f64 {
        let sa: Vec<_> = a.iter().map(|c| dft(c)).collect();
        let sb: Vec<_> = b.iter().map(|c| dft(c)).collect();
        let mut total = 0.0;
        for (q, beta) in betas.iter().enumerate() {
            let bin = q + 1;
            let mut i2 = 0.0;
            let mut r2 = 0.0;
            for d in 0..a.len() {
                i2 += (sb[d][bin].1 - sa[d][bin].1).powi(2);
                r2 += (sb[d][bin].0 - sa[d][bin].0).powi(2);
            }
            total += (i2.sqrt() + r2.sqrt()) * beta;
        }
        total
    }
}
