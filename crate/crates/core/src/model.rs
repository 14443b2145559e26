//! Reduced discrete model `x(t+1) = A x(t) + Psi g(x(t), t)`: least-squares
//! identification, simulation and comparison against source data.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::Trajectory;
use crate::error::{Error, Result};
use crate::signal_io::artifact_err;

pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

/// Scalar regressor evaluated on a state and its 0-based time index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisFunction {
    /// `x_coord ^ power` with `power` in 1..=3.
    Monomial { coord: usize, power: u32 },
    /// `x_i * x_j`.
    Product { i: usize, j: usize },
    /// `exp(t^a) * sin(t^b)`.
    TimeExpSin { a: f64, b: f64 },
}

impl BasisFunction {
    /// Parses ids of the form `x2`, `x1^3`, `x1*x3`, `expsin(0.0001,0.4)`.
    /// Coordinates are 1-based in ids.
    pub fn parse(id: &str) -> Result<Self> {
        let bad = || Error::PreconditionViolation(format!("unrecognized basis function `{id}`"));
        let id = id.trim();
        let coord = |s: &str| -> Result<usize> {
            s.strip_prefix('x')
                .and_then(|c| c.parse::<usize>().ok())
                .filter(|&c| c >= 1)
                .map(|c| c - 1)
                .ok_or_else(bad)
        };
        if let Some(args) = id.strip_prefix("expsin(").and_then(|r| r.strip_suffix(')')) {
            let (a, b) = args.split_once(',').ok_or_else(bad)?;
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            if !(a.is_finite() && b.is_finite()) {
                return Err(bad());
            }
            return Ok(BasisFunction::TimeExpSin { a, b });
        }
        if let Some((l, r)) = id.split_once('*') {
            let (i, j) = (coord(l.trim())?, coord(r.trim())?);
            return Ok(BasisFunction::Product {
                i: i.min(j),
                j: i.max(j),
            });
        }
        if let Some((base, p)) = id.split_once('^') {
            let power: u32 = p.trim().parse().map_err(|_| bad())?;
            if !(1..=3).contains(&power) {
                return Err(bad());
            }
            return Ok(BasisFunction::Monomial {
                coord: coord(base.trim())?,
                power,
            });
        }
        Ok(BasisFunction::Monomial {
            coord: coord(id)?,
            power: 1,
        })
    }

    pub fn id(&self) -> String {
        self.to_string()
    }

    /// Largest state coordinate referenced, if any.
    fn max_coord(&self) -> Option<usize> {
        match *self {
            BasisFunction::Monomial { coord, .. } => Some(coord),
            BasisFunction::Product { j, .. } => Some(j),
            BasisFunction::TimeExpSin { .. } => None,
        }
    }

    pub fn eval(&self, x: &[f64], t: usize) -> f64 {
        match *self {
            BasisFunction::Monomial { coord, power } => x[coord].powi(power as i32),
            BasisFunction::Product { i, j } => x[i] * x[j],
            BasisFunction::TimeExpSin { a, b } => {
                let t = t as f64;
                t.powf(a).exp() * t.powf(b).sin()
            }
        }
    }
}

impl fmt::Display for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BasisFunction::Monomial { coord, power: 1 } => write!(f, "x{}", coord + 1),
            BasisFunction::Monomial { coord, power } => write!(f, "x{}^{power}", coord + 1),
            BasisFunction::Product { i, j } => write!(f, "x{}*x{}", i + 1, j + 1),
            BasisFunction::TimeExpSin { a, b } => write!(f, "expsin({a},{b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub samples: usize,
    pub ridge: f64,
    /// Per-coordinate RMS of one-step residuals.
    pub rms_residual: Vec<f64>,
    pub residual_norm: f64,
    /// Ratio of extreme singular values of the (ridge-augmented) regressor matrix.
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedModel {
    pub a: DMatrix<f64>,
    /// `n x B` nonlinearity coefficients, column `k` multiplies `basis[k]`.
    pub psi: DMatrix<f64>,
    pub c: Option<DMatrix<f64>>,
    pub basis: Vec<BasisFunction>,
    pub fit_report: FitReport,
}

impl IdentifiedModel {
    pub fn new(a: DMatrix<f64>, psi: DMatrix<f64>, basis: Vec<BasisFunction>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || psi.nrows() != n || psi.ncols() != basis.len() {
            return Err(Error::ShapeMismatch(format!(
                "A {}x{}, Psi {}x{} with {} basis functions",
                a.nrows(),
                a.ncols(),
                psi.nrows(),
                psi.ncols(),
                basis.len()
            )));
        }
        check_basis(&basis, n)?;
        let fit_report = FitReport {
            samples: 0,
            ridge: 0.0,
            rms_residual: vec![],
            residual_norm: 0.0,
            condition: 1.0,
        };
        Ok(Self {
            a,
            psi,
            c: None,
            basis,
            fit_report,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// One application of the map at time index `t`.
    pub fn step(&self, x: &[f64], t: usize) -> DVector<f64> {
        let xv = DVector::from_column_slice(x);
        let g = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|b| b.eval(x, t)));
        &self.a * xv + &self.psi * g
    }

    pub fn write_toml(&self, path: &Path) -> Result<()> {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|r| m.row(r).iter().copied().collect())
                .collect()
        };
        let file = ModelFile {
            dim: self.dim(),
            basis: self.basis.iter().map(BasisFunction::id).collect(),
            a: rows(&self.a),
            psi: rows(&self.psi),
            c: self.c.as_ref().map(rows),
            fit_report: self.fit_report.clone(),
        };
        let text = toml::to_string(&file).map_err(|e| artifact_err(path, e))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_toml(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = toml::from_str(&text).map_err(|e| artifact_err(path, e.message()))?;
        let n = file.dim;
        let basis = file
            .basis
            .iter()
            .map(|b| BasisFunction::parse(b))
            .collect::<Result<Vec<_>>>()?;
        let mat = |rows: &[Vec<f64>], cols: usize| -> Result<DMatrix<f64>> {
            if rows.iter().any(|r| r.len() != cols) {
                return Err(artifact_err(path, "ragged matrix"));
            }
            Ok(DMatrix::from_row_iterator(
                rows.len(),
                cols,
                rows.iter().flatten().copied(),
            ))
        };
        let a = mat(&file.a, n)?;
        let psi = mat(&file.psi, basis.len())?;
        let mut model = IdentifiedModel::new(a, psi, basis)?;
        model.c = file.c.as_deref().map(|c| mat(c, n)).transpose()?;
        model.fit_report = file.fit_report;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    dim: usize,
    basis: Vec<String>,
    a: Vec<Vec<f64>>,
    psi: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<Vec<Vec<f64>>>,
    fit_report: FitReport,
}

fn check_basis(basis: &[BasisFunction], n: usize) -> Result<()> {
    if let Some(c) = basis.iter().filter_map(BasisFunction::max_coord).max() {
        if c >= n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: c + 1,
            });
        }
    }
    Ok(())
}

struct LeastSquares {
    solution: DMatrix<f64>,
    condition: f64,
}

/// Minimizes `||X theta - Y||^2 + ridge ||theta||^2` through an SVD of the
/// ridge-augmented design matrix.
fn solve_least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<LeastSquares> {
    let (rows, cols) = x.shape();
    let (design, target) = if ridge > 0.0 {
        let mut d = DMatrix::zeros(rows + cols, cols);
        d.view_mut((0, 0), (rows, cols)).copy_from(x);
        d.view_mut((rows, 0), (cols, cols))
            .fill_diagonal(ridge.sqrt());
        let mut t = DMatrix::zeros(rows + cols, y.ncols());
        t.view_mut((0, 0), (rows, y.ncols())).copy_from(y);
        (d, t)
    } else {
        (x.clone(), y.clone())
    };
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    let tol = smax * f64::EPSILON * rows.max(cols) as f64;
    if !(smax > 0.0) || smin <= tol {
        return Err(Error::RankDeficient { condition });
    }
    let solution = svd
        .solve(&target, 0.0)
        .map_err(|_| Error::RankDeficient { condition })?;
    Ok(LeastSquares {
        solution,
        condition,
    })
}

/// Fits `A` and `Psi` to consecutive trajectory points.
pub fn fit_model(
    traj: &Trajectory,
    basis: &[BasisFunction],
    ridge: f64,
) -> Result<IdentifiedModel> {
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::PreconditionViolation(format!(
            "ridge must be non-negative, got {ridge}"
        )));
    }
    let n = traj.dim();
    check_basis(basis, n)?;
    let nb = basis.len();
    let required = n + nb + 1;
    if traj.len() < required {
        return Err(Error::SeriesTooShort {
            required,
            actual: traj.len(),
        });
    }
    let samples = traj.len() - 1;
    let regressors = DMatrix::from_fn(samples, n + nb, |t, k| {
        let x = traj.point(t);
        if k < n {
            x[k]
        } else {
            basis[k - n].eval(x, t)
        }
    });
    if regressors.iter().any(|v| !v.is_finite()) {
        return Err(Error::PreconditionViolation(
            "basis produced non-finite values along the trajectory".into(),
        ));
    }
    let targets = DMatrix::from_fn(samples, n, |t, j| traj.point(t + 1)[j]);
    let ls = solve_least_squares(&regressors, &targets, ridge)?;
    let theta_t = ls.solution.transpose();
    let a = theta_t.columns(0, n).into_owned();
    let psi = theta_t.columns(n, nb).into_owned();

    let residual = &regressors * &ls.solution - &targets;
    let rms_residual = (0..n)
        .map(|j| (residual.column(j).norm_squared() / samples as f64).sqrt())
        .collect();
    let fit_report = FitReport {
        samples,
        ridge,
        rms_residual,
        residual_norm: residual.norm(),
        condition: ls.condition,
    };
    Ok(IdentifiedModel {
        a,
        psi,
        c: None,
        basis: basis.to_vec(),
        fit_report,
    })
}

/// Regresses an observed series (`p` columns) on the model state, giving `C`.
pub fn fit_observation(states: &Trajectory, observed: &Trajectory) -> Result<DMatrix<f64>> {
    if states.len() != observed.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            actual: observed.len(),
        });
    }
    let x = DMatrix::from_row_slice(states.len(), states.dim(), states.as_flat());
    let y = DMatrix::from_row_slice(observed.len(), observed.dim(), observed.as_flat());
    Ok(solve_least_squares(&x, &y, 0.0)?.solution.transpose())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// `steps + 1` states starting with `x0`.
    pub states: Trajectory,
    /// `C x(t)` for each state when the model carries an observation matrix.
    pub observations: Option<Trajectory>,
}

pub fn simulate(m: &IdentifiedModel, x0: &[f64], steps: usize) -> Result<Simulation> {
    simulate_bounded(m, x0, steps, DEFAULT_DIVERGENCE_BOUND)
}

pub fn simulate_bounded(
    m: &IdentifiedModel,
    x0: &[f64],
    steps: usize,
    bound: f64,
) -> Result<Simulation> {
    let n = m.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x0.len(),
        });
    }
    if steps == 0 {
        return Err(Error::PreconditionViolation(
            "steps must be positive".into(),
        ));
    }
    let mut data = Vec::with_capacity((steps + 1) * n);
    data.extend_from_slice(x0);
    let mut x = x0.to_vec();
    for t in 0..steps {
        let next = m.step(&x, t);
        let magnitude = next.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(magnitude <= bound) {
            return Err(Error::DivergedTrajectory {
                step: t + 1,
                magnitude,
                bound,
            });
        }
        x.copy_from_slice(next.as_slice());
        data.extend_from_slice(&x);
    }
    let states = Trajectory::from_flat(data, n, "simulation")?;
    let observations = match &m.c {
        Some(c) => {
            let obs: Vec<f64> = states
                .points()
                .flat_map(|p| (c * DVector::from_column_slice(p)).data.as_vec().clone())
                .collect();
            Some(Trajectory::from_flat(obs, c.nrows(), "observation")?)
        }
        None => None,
    };
    Ok(Simulation {
        states,
        observations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMetrics {
    /// RMS of `x(t+1) - f(x(t), t)` over the original data, when a model is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub one_step_rmse: Option<f64>,
    /// RMS point distance over the first `aligned` indices.
    pub free_run_rmse: f64,
    /// Mean nearest-neighbour distance between the point clouds, averaged over both directions.
    pub cloud_distance: f64,
    pub aligned: usize,
}

fn mean_nearest(from: &Trajectory, to: &Trajectory) -> f64 {
    let total: f64 = from
        .points()
        .map(|p| {
            to.points()
                .map(|q| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / from.len() as f64
}

/// Compares a simulated trajectory with the original; a longer series is
/// truncated to the shorter one for the aligned error.
pub fn compare(
    orig: &Trajectory,
    sim: &Trajectory,
    model: Option<&IdentifiedModel>,
) -> Result<ComparisonMetrics> {
    if orig.dim() != sim.dim() {
        return Err(Error::DimensionMismatch {
            expected: orig.dim(),
            actual: sim.dim(),
        });
    }
    let aligned = orig.len().min(sim.len());
    let sq: f64 = orig
        .points()
        .zip(sim.points())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    let free_run_rmse = (sq / aligned as f64).sqrt();
    let cloud_distance = 0.5 * (mean_nearest(orig, sim) + mean_nearest(sim, orig));
    let one_step_rmse = match model {
        Some(m) => {
            if m.dim() != orig.dim() {
                return Err(Error::DimensionMismatch {
                    expected: orig.dim(),
                    actual: m.dim(),
                });
            }
            let sq: f64 = (0..orig.len() - 1)
                .map(|t| {
                    let pred = m.step(orig.point(t), t);
                    orig.point(t + 1)
                        .iter()
                        .zip(pred.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum();
            Some((sq / (orig.len() - 1) as f64).sqrt())
        }
        None => None,
    };
    Ok(ComparisonMetrics {
        one_step_rmse,
        free_run_rmse,
        cloud_distance,
        aligned,
    })
}


#[cfg(test)]
mod tests {
    use super::testkit::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basis_ids_round_trip() {
        for id in ["x1", "x3^2", "x2^3", "x1*x4", "expsin(0.0001,0.4)"] {
            assert_eq!(BasisFunction::parse(id).unwrap().id(), id);
        }
        assert_eq!(BasisFunction::parse("x3*x1").unwrap().id(), "x1*x3");
        for bad in ["", "y1", "x0", "x1^4", "expsin(1)", "sin(t)"] {
            assert!(BasisFunction::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn basis_evaluation() {
        let x = [2.0, -3.0];
        assert_eq!(BasisFunction::parse("x2^3").unwrap().eval(&x, 0), -27.0);
        assert_eq!(BasisFunction::parse("x1*x2").unwrap().eval(&x, 0), -6.0);
        let ts = BasisFunction::TimeExpSin { a: 0.0001, b: 0.4 };
        assert_eq!(ts.eval(&x, 0), 0.0);
        let t = 7.0f64;
        assert_eq!(ts.eval(&x, 7), t.powf(0.0001).exp() * t.powf(0.4).sin());
    }

    #[test]
    fn recovers_linear_map_exactly() {
        let a0 = random_stable(1, 4, 0.9);
        let runs = linear_data(&a0, 2, 1, 60);
        let m = fit_model(&runs[0], &[], 0.0).unwrap();
        assert!((&m.a - &a0).amax() < 1e-8);
        assert_eq!(m.psi.ncols(), 0);
        assert!(m.fit_report.rms_residual.iter().all(|r| *r < 1e-10));
    }

    #[test]
    fn zero_trajectory_is_rank_deficient() {
        let t = Trajectory::from_flat(vec![0.0; 40], 2, "zero").unwrap();
        assert!(matches!(
            fit_model(&t, &[], 0.0),
            Err(Error::RankDeficient { .. })
        ));
        assert!(fit_model(&t, &[], 0.1).is_ok());
    }

    #[test]
    fn too_short_for_parameter_count() {
        let t = Trajectory::from_flat(vec![1.0, 2.0, 3.0, 4.0], 2, "x").unwrap();
        assert!(matches!(
            fit_model(&t, &[], 0.0),
            Err(Error::SeriesTooShort { required: 3, .. })
        ));
    }

    #[test]
    fn basis_coordinate_out_of_range() {
        let t = Trajectory::from_flat((0..20).map(f64::from).collect(), 2, "x").unwrap();
        let b = [BasisFunction::parse("x3").unwrap()];
        assert!(matches!(
            fit_model(&t, &b, 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn recovers_nonlinear_terms() {
        let a0 = DMatrix::from_row_slice(2, 2, &[0.5, -0.3, 0.2, 0.6]);
        let basis = vec![
            BasisFunction::parse("x1*x2").unwrap(),
            BasisFunction::parse("expsin(0.0001,0.3)").unwrap(),
        ];
        let psi0 = DMatrix::from_row_slice(2, 2, &[0.1, 0.05, -0.2, 0.02]);
        let truth = IdentifiedModel::new(a0.clone(), psi0.clone(), basis.clone()).unwrap();
        let sim = simulate(&truth, &[0.4, -0.7], 120).unwrap();
        let fit = fit_model(&sim.states, &basis, 0.0).unwrap();
        assert!((&fit.a - &a0).amax() < 1e-8);
        assert!((&fit.psi - &psi0).amax() < 1e-8);
    }

    #[test]
    fn local_optimality() {
        let a0 = random_stable(5, 3, 0.8);
        let mut data = linear_data(&a0, 6, 1, 80).remove(0).as_flat().to_vec();
        for (k, v) in data.iter_mut().enumerate() {
            *v += 0.01 * ((k * 7919) % 13) as f64 / 13.0;
        }
        let t = Trajectory::from_flat(data, 3, "noisy").unwrap();
        let basis = vec![BasisFunction::parse("x1^2").unwrap()];
        let fit = fit_model(&t, &basis, 0.0).unwrap();
        let sse = |m: &IdentifiedModel| {
            (0..t.len() - 1)
                .map(|k| {
                    (DVector::from_column_slice(t.point(k + 1)) - m.step(t.point(k), k))
                        .norm_squared()
                })
                .sum::<f64>()
        };
        let base = sse(&fit);
        for r in 0..3 {
            for c in 0..4 {
                for delta in [1e-4, -1e-4] {
                    let mut m = fit.clone();
                    if c < 3 {
                        m.a[(r, c)] += delta;
                    } else {
                        m.psi[(r, 0)] += delta;
                    }
                    assert!(sse(&m) >= base);
                }
            }
        }
    }

    #[test]
    fn ridge_shrinks_parameters() {
        let a0 = random_stable(9, 3, 0.95);
        let t = linear_data(&a0, 10, 1, 50).remove(0);
        let basis = vec![BasisFunction::parse("x1*x2").unwrap()];
        let norm = |ridge| {
            let m = fit_model(&t, &basis, ridge).unwrap();
            (m.a.norm_squared() + m.psi.norm_squared()).sqrt()
        };
        let ridges = [0.0, 1e-6, 1e-3, 1e-1, 1.0, 10.0, 1e3];
        let norms: Vec<f64> = ridges.iter().map(|&r| norm(r)).collect();
        for w in norms.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{norms:?}");
        }
    }

    #[test]
    fn simulate_trivial_maps() {
        let zero =
            IdentifiedModel::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 0), vec![]).unwrap();
        let s = simulate(&zero, &[3.0, -1.0], 5).unwrap().states;
        assert_eq!(s.len(), 6);
        assert!(s.points().skip(1).all(|p| p == [0.0, 0.0]));
        let ident =
            IdentifiedModel::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 0), vec![]).unwrap();
        let s = simulate(&ident, &[3.0, -1.0], 5).unwrap().states;
        assert!(s.points().all(|p| p == [3.0, -1.0]));
    }

    #[test]
    fn contracting_map_decays_within_eigen_bound() {
        // A = V diag(0.5, -0.3) V^-1 with a non-orthogonal V
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.5]);
        let v_inv = v.clone().try_inverse().unwrap();
        let a = &v * DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.3])) * &v_inv;
        let kappa: f64 = v.norm() * v_inv.norm();
        let rho: f64 = 0.5;
        let x0 = [2.0, -1.0];
        let x0_norm = (5.0f64).sqrt();
        let steps = ((1e-6 / kappa).ln() / rho.ln()).ceil() as usize;
        let m = IdentifiedModel::new(a, DMatrix::zeros(2, 0), vec![]).unwrap();
        let s = simulate(&m, &x0, steps).unwrap().states;
        for (t, p) in s.points().enumerate() {
            let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!(norm <= x0_norm * rho.powi(t as i32) * kappa * (1.0 + 1e-12));
        }
        let last = s.point(steps);
        assert!((last[0] * last[0] + last[1] * last[1]).sqrt() < 1e-6 * x0_norm);
    }

    #[test]
    fn divergence_detected() {
        let m = IdentifiedModel::new(DMatrix::identity(1, 1) * 10.0, DMatrix::zeros(1, 0), vec![])
            .unwrap();
        assert!(matches!(
            simulate(&m, &[1.0], 10),
            Err(Error::DivergedTrajectory { step: 7, .. })
        ));
    }

    #[test]
    fn observation_series() {
        let mut m =
            IdentifiedModel::new(DMatrix::identity(2, 2) * 0.5, DMatrix::zeros(2, 0), vec![])
                .unwrap();
        m.c = Some(DMatrix::from_row_slice(1, 2, &[2.0, 1.0]));
        let sim = simulate(&m, &[1.0, 2.0], 2).unwrap();
        let y: Vec<f64> = sim.observations.unwrap().as_flat().to_vec();
        assert_eq!(y, vec![4.0, 2.0, 1.0]);
        let c = fit_observation(&sim.states, &Trajectory::from_flat(y, 1, "y").unwrap());
        // states are collinear, so C is not identifiable
        assert!(matches!(c, Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn closure_reproduces_training_data() {
        let a0 = random_stable(12, 4, 0.97);
        let t = linear_data(&a0, 13, 1, 100).remove(0);
        let m = fit_model(&t, &[], 0.0).unwrap();
        let sim = simulate(&m, t.point(0), t.len() - 1).unwrap().states;
        let cmp = compare(&t, &sim, Some(&m)).unwrap();
        assert!(cmp.free_run_rmse < 1e-6);
        assert!(cmp.one_step_rmse.unwrap() < 1e-9);
    }

    #[test]
    fn identical_trajectories_compare_to_zero() {
        let t =
            Trajectory::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![-1.0, 0.5]], "o").unwrap();
        let c = compare(&t, &t, None).unwrap();
        assert_eq!(
            (c.free_run_rmse, c.cloud_distance, c.one_step_rmse),
            (0.0, 0.0, None)
        );
    }

    #[test]
    fn constant_offset_metrics() {
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|k| vec![10.0 * k as f64, -10.0 * k as f64])
            .collect();
        let orig = Trajectory::from_rows(&rows, "o").unwrap();
        let off = [0.3, -0.4];
        let moved: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![r[0] + off[0], r[1] + off[1]])
            .collect();
        let sim = Trajectory::from_rows(&moved, "s").unwrap();
        let c = compare(&orig, &sim, None).unwrap();
        assert!((c.free_run_rmse - 0.5).abs() < 1e-12);
        assert!((c.cloud_distance - 0.5).abs() < 1e-12);
    }

    #[test]
    fn small_hand_case() {
        let orig =
            Trajectory::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], "o").unwrap();
        let sim =
            Trajectory::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0]], "s").unwrap();
        let c = compare(&orig, &sim, None).unwrap();
        assert!((c.free_run_rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((c.cloud_distance - 2.0 / 3.0).abs() < 1e-15);
        let long = Trajectory::from_rows(
            &[
                vec![0.0, 0.0],
                vec![1.0, 1.0],
                vec![0.0, 2.0],
                vec![9.0, 9.0],
            ],
            "s",
        )
        .unwrap();
        assert_eq!(compare(&orig, &long, None).unwrap().aligned, 3);
        let other = Trajectory::from_rows(&[vec![0.0], vec![1.0]], "x").unwrap();
        assert!(matches!(
            compare(&orig, &other, None),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.toml");
        let a0 = random_stable(3, 3, 0.9);
        let t = linear_data(&a0, 4, 1, 40).remove(0);
        let basis = vec![
            BasisFunction::parse("x1^2").unwrap(),
            BasisFunction::parse("expsin(0.0001,0.4)").unwrap(),
        ];
        let mut m = fit_model(&t, &basis, 1e-3).unwrap();
        m.c = Some(DMatrix::from_row_slice(1, 3, &[21037.0, -124.0, 1.0 / 3.0]));
        m.write_toml(&p).unwrap();
        assert_eq!(IdentifiedModel::read_toml(&p).unwrap(), m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn simulate_is_reproducible(seed in any::<u64>(), x in -1.0f64..1.0) {
            let a = random_stable(seed, 3, 0.9);
            let m = IdentifiedModel::new(a, DMatrix::from_element(3, 1, 0.1), vec![BasisFunction::parse("x1*x2").unwrap()]).unwrap();
            prop_assert_eq!(simulate(&m, &[x, 0.2, -0.3], 50).unwrap(), simulate(&m, &[x, 0.2, -0.3], 50).unwrap());
        }
    }
}
