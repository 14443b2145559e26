use serde::{Deserialize, Serialize};

use super::series::TimeSeries;
use crate::error::{Error, Result};

/// Rössler system `x1' = -(x2 + x3)`, `x2' = x1 + a x2`, `x3' = b + x3 (x1 - c)`
/// sampled by a fixed-step classical Runge-Kutta scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosslerParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub x0: [f64; 3],
    pub dt: f64,
    pub n: usize,
    /// Per-coordinate magnitude beyond which integration is abandoned.
    pub divergence_bound: f64,
}

impl Default for RosslerParams {
    fn default() -> Self {
        Self {
            a: 0.2,
            b: 0.2,
            c: 2.6,
            x0: [1.0, 1.0, 1.0],
            dt: 0.4,
            n: 300,
            divergence_bound: 1e6,
        }
    }
}

impl RosslerParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::PreconditionViolation(format!(
                "n must be at least 2, got {}",
                self.n
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::PreconditionViolation(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        let finite = [self.a, self.b, self.c, self.divergence_bound]
            .iter()
            .chain(&self.x0)
            .all(|v| v.is_finite());
        if !finite || self.divergence_bound <= 0.0 {
            return Err(Error::PreconditionViolation(
                "parameters must be finite, bound positive".into(),
            ));
        }
        Ok(())
    }

    pub fn rhs(&self, x: &[f64; 3]) -> [f64; 3] {
        [
            -(x[1] + x[2]),
            x[0] + self.a * x[1],
            self.b + x[2] * (x[0] - self.c),
        ]
    }
}

pub(crate) fn rk4_step(f: impl Fn(&[f64; 3]) -> [f64; 3], x: &[f64; 3], dt: f64) -> [f64; 3] {
    let axpy =
        |x: &[f64; 3], k: &[f64; 3], h: f64| [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2]];
    let k1 = f(x);
    let k2 = f(&axpy(x, &k1, dt / 2.0));
    let k3 = f(&axpy(x, &k2, dt / 2.0));
    let k4 = f(&axpy(x, &k3, dt));
    std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Integrates the system and returns the coordinate series `x1, x2, x3`.
pub fn generate_rossler(p: &RosslerParams) -> Result<[TimeSeries; 3]> {
    p.validate()?;
    let mut cols: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(p.n));
    let mut x = p.x0;
    for step in 0..p.n {
        if step > 0 {
            x = rk4_step(|s| p.rhs(s), &x, p.dt);
        }
        let magnitude = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(magnitude <= p.divergence_bound) {
            return Err(Error::DivergedTrajectory {
                step,
                magnitude,
                bound: p.divergence_bound,
            });
        }
        for (col, v) in cols.iter_mut().zip(x) {
            col.push(v);
        }
    }
    let [c1, c2, c3] = cols;
    Ok([
        TimeSeries::new(c1, p.dt, "x1")?,
        TimeSeries::new(c2, p.dt, "x2")?,
        TimeSeries::new(c3, p.dt, "x3")?,
    ])
}
