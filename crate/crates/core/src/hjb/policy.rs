use std::io::Read;
use std::path::Path;

use serde::Serialize;

use super::value::ValueFunction;
use crate::error::{Error, Result};
use crate::model::Utility;

/// A feedback consumption rule `x ↦ c(x)`.
pub trait ConsumptionPolicy: Send + Sync {
    fn rate(&self, x: f64) -> f64;

    /// The rate if it does not depend on `x`.
    fn constant_rate(&self) -> Option<f64> {
        None
    }
}

/// `c(x) ≡ c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantPolicy(pub f64);

impl ConsumptionPolicy for ConstantPolicy {
    fn rate(&self, _x: f64) -> f64 {
        self.0
    }

    fn constant_rate(&self) -> Option<f64> {
        Some(self.0)
    }
}

/// Policy given by a closure.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(f64) -> f64 + Send + Sync> ConsumptionPolicy for FnPolicy<F> {
    fn rate(&self, x: f64) -> f64 {
        (self.0)(x)
    }
}

/// Power-law tail `c(x) = c_end (x/x_end)^exponent` beyond a grid end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extrapolation {
    pub exponent: f64,
}

/// Tabulated rates with log-log interpolation between nodes.
#[derive(Debug, Clone, Serialize)]
pub struct Policy {
    pub x: Vec<f64>,
    pub c: Vec<f64>,
    pub bound: f64,
    pub left: Extrapolation,
    pub right: Extrapolation,
    #[serde(skip)]
    log_x: Vec<f64>,
    /// `ln c` at the nodes (`−∞` where `c = 0`).
    #[serde(skip)]
    log_c: Vec<f64>,
    /// `(ln x_0, 1/h)` when the nodes are uniform in `ln x`.
    #[serde(skip)]
    uniform: Option<(f64, f64)>,
}

impl Policy {
    pub fn new(x: Vec<f64>, c: Vec<f64>, bound: f64, left: Extrapolation, right: Extrapolation) -> Result<Self> {
        if x.len() < 2 || x.len() != c.len() {
            return Err(Error::domain("policy needs at least two (x, c) pairs of equal length"));
        }
        if x[0] <= 0.0 || x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("policy nodes must be positive and strictly increasing"));
        }
        if let Some(k) = c.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Policy {
                x: x[k],
                reason: format!("rate {} is not a finite nonnegative number", c[k]),
            });
        }
        if let Some(k) = c.iter().position(|v| *v > bound) {
            return Err(Error::Policy {
                x: x[k],
                reason: format!("rate {} exceeds the bound {bound}", c[k]),
            });
        }
        let log_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let log_c: Vec<f64> = c.iter().map(|v| v.ln()).collect();
        let n = x.len();
        let h = (log_x[n - 1] - log_x[0]) / (n - 1) as f64;
        let uniform = log_x
            .iter()
            .enumerate()
            .all(|(i, ly)| (ly - (log_x[0] + i as f64 * h)).abs() <= 1e-9 * (1.0 + ly.abs()))
            .then_some((log_x[0], 1.0 / h));
        Ok(Self {
            x,
            c,
            bound,
            left,
            right,
            log_x,
            log_c,
            uniform,
        })
    }

    /// Reads a CSV with `x` and `c` columns (extra columns are ignored).
    /// Tails are extrapolated with exponents fitted to the end nodes.
    pub fn from_csv_reader<R: Read>(reader: R, bound: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::domain(format!("policy CSV lacks a `{name}` column")))
        };
        let (ix, ic) = (col("x")?, col("c")?);
        let mut x = Vec::new();
        let mut c = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::domain(format!("bad number in policy CSV row {rec:?}")))
            };
            x.push(parse(ix)?);
            c.push(parse(ic)?);
        }
        let left = Extrapolation {
            exponent: fitted_exponent(&x, &c, 0, 1),
        };
        let right = if x.len() >= 2 {
            Extrapolation {
                exponent: fitted_exponent(&x, &c, x.len() - 2, x.len() - 1),
            }
        } else {
            Extrapolation { exponent: 0.0 }
        };
        Self::new(x, c, bound, left, right)
    }

    pub fn from_csv_path(path: &Path, bound: f64) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?, bound)
    }

    fn tail(&self, x: f64, k: usize, e: f64) -> f64 {
        let c = self.c[k] * (x / self.x[k]).powf(e);
        if c >= self.bound {
            self.bound
        } else {
            c
        }
    }

    fn segment(&self, x: f64, lx: f64) -> usize {
        let n = self.x.len();
        match self.uniform {
            Some((y0, inv_h)) => {
                let k = ((lx - y0) * inv_h) as usize;
                let k = k.min(n - 2);
                // guard rounding at node boundaries
                if x < self.x[k] && k > 0 {
                    k - 1
                } else if x > self.x[k + 1] && k + 2 < n {
                    k + 1
                } else {
                    k
                }
            }
            None => self.x.partition_point(|&v| v <= x).clamp(1, n - 1) - 1,
        }
    }
}

impl ConsumptionPolicy for Policy {
    fn rate(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x <= self.x[0] {
            return self.tail(x, 0, self.left.exponent);
        }
        if x >= self.x[n - 1] {
            return self.tail(x, n - 1, self.right.exponent);
        }
        let lx = x.ln();
        let k = self.segment(x, lx);
        let (c0, c1) = (self.c[k], self.c[k + 1]);
        let t = (lx - self.log_x[k]) / (self.log_x[k + 1] - self.log_x[k]);
        if c0 == c1 {
            c0
        } else if c0 > 0.0 && c1 > 0.0 {
            (self.log_c[k] + t * (self.log_c[k + 1] - self.log_c[k])).exp()
        } else {
            c0 + t * (c1 - c0)
        }
    }

    fn constant_rate(&self) -> Option<f64> {
        let c0 = self.c[0];
        let flat = self.c.iter().all(|&c| c == c0)
            && (self.left.exponent == 0.0 || c0 == self.bound)
            && (self.right.exponent == 0.0 || c0 == self.bound);
        flat.then_some(c0)
    }
}

fn fitted_exponent(x: &[f64], c: &[f64], a: usize, b: usize) -> f64 {
    if c.len() <= b || !(c[a] > 0.0 && c[b] > 0.0) {
        return 0.0;
    }
    (c[b] / c[a]).ln() / (x[b] / x[a]).ln()
}

/// Feedback rates `ĉ(x) = min{(U')⁻¹(v'(x))/x, L}` at the nodes of `vf`.
///
/// For power utility the tails follow the known asymptotics: `c ∝ x^{α/γ−1}`
/// near the origin and a constant at infinity. Other utilities extrapolate
/// with exponents fitted to the end nodes.
pub fn extract_policy<U: Utility + ?Sized>(
    vf: &ValueFunction,
    utility: &U,
    alpha: f64,
) -> Result<Policy> {
    let bound = vf.bound;
    let n = vf.len();
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let p = vf.dv(i);
        if !(p > 0.0) {
            return Err(Error::Policy {
                x: vf.x[i],
                reason: format!("discrete gradient {p:e} is not positive"),
            });
        }
        let ci = utility.inverse_marginal(p) / vf.x[i];
        c.push(if ci >= bound { bound } else { ci });
    }
    let (left, right) = match utility.power_gamma() {
        Some(gamma) => {
            let le = if c[0] >= bound { 0.0 } else { alpha / gamma - 1.0 };
            (Extrapolation { exponent: le }, Extrapolation { exponent: 0.0 })
        }
        None => (
            Extrapolation {
                exponent: fitted_exponent(&vf.x, &c, 0, 1),
            },
            Extrapolation {
                exponent: fitted_exponent(&vf.x, &c, n - 2, n - 1),
            },
        ),
    };
    Policy::new(vf.x.clone(), c, bound, left, right)
}
