use std::io::Write;

use serde::Serialize;

use super::grid::GridSpec;
use super::policy::Policy;
use super::solver::SolveReport;
use crate::error::{Error, Result};

/// Nodal values on a log grid with derivative accessors.
///
/// Derivatives are taken in `y = ln x` (centered in the interior,
/// second-order one-sided at the ends) and converted to `x`.
#[derive(Debug, Clone, Serialize)]
pub struct ValueFunction {
    pub grid: GridSpec,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    /// Consumption bound `L`; infinite for the unbounded problem.
    pub bound: f64,
    /// Present for solver output, absent for injected candidates.
    pub report: Option<SolveReport>,
}

impl ValueFunction {
    pub(crate) fn solved(grid: GridSpec, values: Vec<f64>, bound: f64, report: SolveReport) -> Self {
        Self {
            x: grid.nodes(),
            grid,
            values,
            bound,
            report: Some(report),
        }
    }

    /// Wraps externally supplied nodal values.
    pub fn from_values(grid: GridSpec, values: Vec<f64>, bound: f64) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.n_nodes {
            return Err(Error::Grid(format!(
                "{} values supplied for {} nodes",
                values.len(),
                grid.n_nodes
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("candidate values must be finite"));
        }
        Ok(Self {
            x: grid.nodes(),
            grid,
            values,
            bound,
            report: None,
        })
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: GridSpec, bound: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().into_iter().map(f).collect();
        Self::from_values(grid, values, bound)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `v_y` at node `i`.
    pub fn dv_log(&self, i: usize) -> f64 {
        let v = &self.values;
        let h = self.grid.step();
        let n = v.len();
        if i == 0 {
            (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
        } else {
            (v[i + 1] - v[i - 1]) / (2.0 * h)
        }
    }

    /// `v_yy` at node `i`.
    pub fn d2v_log(&self, i: usize) -> f64 {
        let v = &self.values;
        let h2 = self.grid.step().powi(2);
        let n = v.len();
        if i == 0 {
            (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
        } else if i == n - 1 {
            (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / h2
        } else {
            (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2
        }
    }

    /// `v'(x_i)`.
    pub fn dv(&self, i: usize) -> f64 {
        self.dv_log(i) / self.x[i]
    }

    /// `v''(x_i) = (v_yy − v_y)/x²`.
    pub fn d2v(&self, i: usize) -> f64 {
        (self.d2v_log(i) - self.dv_log(i)) / (self.x[i] * self.x[i])
    }

    /// Cubic Lagrange interpolation in `ln x`.
    pub fn value_at(&self, x: f64) -> Result<f64> {
        let n = self.len();
        if !(x >= self.x[0] && x <= self.x[n - 1]) {
            return Err(Error::domain(format!(
                "x = {x} lies outside the grid [{}, {}]",
                self.x[0],
                self.x[n - 1]
            )));
        }
        let h = self.grid.step();
        let t = (x / self.x[0]).ln() / h;
        let k = (t.floor() as usize).clamp(1, n - 3) - 1;
        let s = t - k as f64;
        let v = &self.values[k..k + 4];
        let l0 = -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0;
        let l1 = s * (s - 2.0) * (s - 3.0) / 2.0;
        let l2 = -s * (s - 1.0) * (s - 3.0) / 2.0;
        let l3 = s * (s - 1.0) * (s - 2.0) / 6.0;
        Ok(l0 * v[0] + l1 * v[1] + l2 * v[2] + l3 * v[3])
    }

    /// Writes `x,v,dv,d2v,c` rows.
    pub fn write_csv<W: Write>(&self, policy: &Policy, out: W) -> Result<()> {
        if policy.x.len() != self.len() {
            return Err(Error::Grid("policy and value function grids differ".into()));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "v", "dv", "d2v", "c"])?;
        for i in 0..self.len() {
            w.write_record(&[
                fmt(self.x[i]),
                fmt(self.values[i]),
                fmt(self.dv(i)),
                fmt(self.d2v(i)),
                fmt(policy.c[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip representation.
pub(crate) fn fmt(v: f64) -> String {
    format!("{v:e}")
}
