//! Howard policy iteration on a monotone finite-difference scheme in `y = ln x`.
//!
//! In log coordinates the stationary equation reads
//!
//! ```text
//! βv = D v_yy + (x^{α−1} − μ − D) v_y − c v_y + U(cx),   D = σ²/2.
//! ```
//!
//! The fixed drift `b = x^{α−1} − μ − D` is centered where the cell Péclet
//! number allows it and upwinded elsewhere. The consumption drift `−c` is
//! centered while `c ≤ c_crit = 2h·up` and taken backward above it; policy
//! improvement maximizes over both branches.
//!
//! Node 0 uses the closure `v_yy = (1−α) v_y`, which is exact for the
//! `V(0+) + a x^{1−α}` profile at the origin, and an outward-only stencil.
//! The last node uses a ghost-node Neumann condition with the known
//! large-capital slope for power utility, and a zero-curvature closure
//! otherwise.

use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::tridiag::{solve_monotone, Row};
use super::value::ValueFunction;
use crate::closedform::{bounded_slope_limit, slope_limit};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Utility};

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Residual tolerance is `tol_res_rel · (1 + max|v|)`.
    pub tol_res_rel: f64,
    /// Largest relative change of any nodal rate at a stationary policy,
    /// raised node by node to the level rounding of `v` can produce.
    pub policy_tol: f64,
    pub max_iter: usize,
    /// Floor applied to discrete gradients before inverting `U'`.
    pub p_min: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_res_rel: 1e-8,
            policy_tol: 1e-10,
            max_iter: 200,
            p_min: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_res_rel > 0.0 && self.policy_tol > 0.0 && self.p_min > 0.0) {
            return Err(Error::domain("solver tolerances must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::domain("max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RightClosure {
    AsymptoticNeumann,
    ZeroCurvature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDiagnostics {
    /// `D(1−α) + b(x_min) − c(x_min)`, the inward drift margin at node 0.
    pub left_drift_margin: f64,
    pub right_closure: RightClosure,
    /// Imposed `v_y` at `x_max` (Neumann closure only).
    pub right_slope: Option<f64>,
    /// Nodes where the fixed drift is upwinded instead of centered.
    pub upwind_nodes: usize,
    /// Nodes whose consumption term ended on the backward branch.
    pub backward_consumption_nodes: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// Discrete HJB residual of the returned values.
    pub final_residual: f64,
    pub tol_res: f64,
    pub residuals: Vec<f64>,
    pub policy_changes: Vec<f64>,
    /// Whether the value iterates were nondecreasing sweep to sweep.
    pub monotone_iterates: bool,
    pub boundary: BoundaryDiagnostics,
}

/// Precomputed per-node coefficients of the scheme.
pub(crate) struct Scheme<'a, U: Utility + ?Sized> {
    utility: &'a U,
    x: Vec<f64>,
    h: f64,
    beta: f64,
    bound: f64,
    p_min: f64,
    /// `D/h²`.
    diff: f64,
    /// Fixed-drift weights per node.
    lo_f: Vec<f64>,
    up_f: Vec<f64>,
    upwind_nodes: usize,
    /// Node 0: `D(1−α) + b(x_0)` and the exponential-fit factor.
    left_coef: f64,
    left_fit: f64,
    right: RightNode,
}

enum RightNode {
    Neumann { slope: f64, coef: f64, c: f64 },
    ZeroCurvature { drift: f64 },
}

/// A nodal control together with its stencil branch.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Choice {
    c: f64,
    backward: bool,
}

impl<'a, U: Utility + ?Sized> Scheme<'a, U> {
    pub(crate) fn new(
        params: &ModelParams,
        utility: &'a U,
        bound: f64,
        grid: &GridSpec,
        p_min: f64,
    ) -> Result<Self> {
        grid.validate()?;
        if !(bound > 0.0) {
            return Err(Error::domain(format!("bound L = {bound} must be positive or inf")));
        }
        let x = grid.nodes();
        let n = x.len();
        let h = grid.step();
        let d = 0.5 * params.sigma * params.sigma;
        let drift = |xi: f64| xi.powf(params.alpha - 1.0) - params.mu - d;

        let mut lo_f = vec![0.0; n];
        let mut up_f = vec![0.0; n];
        let mut upwind_nodes = 0;
        let diff = d / (h * h);
        for i in 1..n - 1 {
            let b = drift(x[i]);
            if b.abs() * h <= 2.0 * d {
                lo_f[i] = diff - b / (2.0 * h);
                up_f[i] = diff + b / (2.0 * h);
            } else {
                upwind_nodes += 1;
                lo_f[i] = diff + (-b).max(0.0) / h;
                up_f[i] = diff + b.max(0.0) / h;
            }
        }

        let k = 1.0 - params.alpha;
        let left_coef = d * k + drift(x[0]);
        let left_fit = if k * h > 0.0 { k * h / (k * h).exp_m1() } else { 1.0 };

        let xn = x[n - 1];
        let right = match utility.power_gamma() {
            Some(gamma) => {
                let slope_k = if bound.is_finite() {
                    bounded_slope_limit(params, gamma, bound)
                } else {
                    slope_limit(params, gamma)
                };
                let slope = slope_k * xn.powf(1.0 - gamma);
                let c = clamp_rate(utility.inverse_marginal(slope / xn) / xn, 0.0, bound);
                RightNode::Neumann {
                    slope,
                    coef: 2.0 * d / h + drift(xn) - c,
                    c,
                }
            }
            None => RightNode::ZeroCurvature {
                drift: xn.powf(params.alpha - 1.0) - params.mu,
            },
        };

        Ok(Self {
            utility,
            x,
            h,
            beta: params.beta,
            bound,
            p_min,
            diff,
            lo_f,
            up_f,
            upwind_nodes,
            left_coef,
            left_fit,
            right,
        })
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    fn c_crit(&self, i: usize) -> f64 {
        2.0 * self.h * self.up_f[i]
    }

    fn maximizer(&self, i: usize, slope_y: f64, lo: f64, hi: f64) -> f64 {
        let p = (slope_y / self.x[i]).max(self.p_min);
        clamp_rate(self.utility.inverse_marginal(p) / self.x[i], lo, hi)
    }

    /// `−c·g + U(cx)` at node `i`.
    fn gain(&self, i: usize, c: f64, g: f64) -> f64 {
        -c * g + self.utility.value(c * self.x[i])
    }

    fn left_slope(&self, v: &[f64]) -> f64 {
        self.left_fit * (v[1] - v[0]) / self.h
    }

    fn left_cap(&self) -> f64 {
        self.left_coef.max(0.0)
    }

    /// Maximizing control at every node for the values `v`.
    fn improve(&self, v: &[f64]) -> Vec<Choice> {
        let n = self.n();
        let mut out = Vec::with_capacity(n);
        let g = self.left_slope(v);
        out.push(Choice {
            c: self.maximizer(0, g, 0.0, self.bound.min(self.left_cap())),
            backward: false,
        });
        for i in 1..n - 1 {
            out.push(self.improve_interior(i, v));
        }
        out.push(Choice {
            c: match self.right {
                RightNode::Neumann { c, .. } => c,
                RightNode::ZeroCurvature { .. } => {
                    let g = (v[n - 1] - v[n - 2]) / self.h;
                    self.maximizer(n - 1, g, 0.0, self.bound)
                }
            },
            backward: true,
        });
        out
    }

    fn improve_interior(&self, i: usize, v: &[f64]) -> Choice {
        let h = self.h;
        let crit = self.c_crit(i);
        let g0 = (v[i + 1] - v[i - 1]) / (2.0 * h);
        let c0 = self.maximizer(i, g0, 0.0, self.bound.min(crit));
        let centered = Choice {
            c: c0,
            backward: false,
        };
        if self.bound <= crit {
            return centered;
        }
        let gm = (v[i] - v[i - 1]) / h;
        let c1 = self.maximizer(i, gm, crit, self.bound);
        if self.gain(i, c1, gm) > self.gain(i, c0, g0) {
            Choice {
                c: c1,
                backward: true,
            }
        } else {
            centered
        }
    }

    fn row(&self, i: usize, ch: Choice) -> Row {
        let n = self.n();
        let h = self.h;
        let u = self.utility.value(ch.c * self.x[i]);
        if i == 0 {
            let w = self.left_fit * (self.left_coef - ch.c) / h;
            return Row {
                lo: 0.0,
                up: w,
                rhs: u,
            };
        }
        if i == n - 1 {
            return match self.right {
                RightNode::Neumann { slope, coef, .. } => Row {
                    lo: 2.0 * self.diff,
                    up: 0.0,
                    rhs: coef * slope + u,
                },
                RightNode::ZeroCurvature { drift } => Row {
                    lo: (ch.c - drift) / h,
                    up: 0.0,
                    rhs: u,
                },
            };
        }
        if ch.backward {
            Row {
                lo: self.lo_f[i] + ch.c / h,
                up: self.up_f[i],
                rhs: u,
            }
        } else {
            Row {
                lo: self.lo_f[i] + ch.c / (2.0 * h),
                up: self.up_f[i] - ch.c / (2.0 * h),
                rhs: u,
            }
        }
    }

    fn evaluate(&self, policy: &[Choice]) -> Result<Vec<f64>> {
        let rows: Vec<Row> = policy
            .iter()
            .enumerate()
            .map(|(i, &ch)| self.row(i, ch))
            .collect();
        solve_monotone(self.beta, &rows, &self.x)
    }

    /// Pointwise discrete residual `βv − sup_c (L_c v + U(cx))`.
    fn residual_with(&self, v: &[f64], policy: &[Choice]) -> Vec<f64> {
        policy
            .iter()
            .enumerate()
            .map(|(i, &ch)| {
                let r = self.row(i, ch);
                let mut s = self.beta * v[i] - r.rhs;
                if i > 0 {
                    s -= r.lo * (v[i - 1] - v[i]);
                }
                if i + 1 < v.len() {
                    s -= r.up * (v[i + 1] - v[i]);
                }
                s
            })
            .collect()
    }

    pub(crate) fn residual(&self, v: &[f64]) -> Vec<f64> {
        let policy = self.improve(v);
        self.residual_with(v, &policy)
    }
}

#[inline]
fn clamp_rate(c: f64, lo: f64, hi: f64) -> f64 {
    // Ties at the upper end resolve to the corner.
    if c >= hi {
        hi
    } else if c <= lo {
        lo
    } else {
        c
    }
}

fn relative_change(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

/// Relative perturbation of the rate at node `i` that rounding of `v` alone
/// can cause, through the difference quotient it is computed from.
fn roundoff_floor(v: &[f64], i: usize) -> f64 {
    let n = v.len();
    let (a, b) = match i {
        0 => (0, 1),
        i if i == n - 1 => (n - 2, n - 1),
        i => (i - 1, i + 1),
    };
    let scale = v[a].abs().max(v[b].abs());
    let diff = (v[b] - v[a]).abs();
    if diff == 0.0 {
        f64::INFINITY
    } else {
        64.0 * f64::EPSILON * scale / diff
    }
}

fn max_abs(v: &[f64]) -> (f64, usize) {
    v.iter()
        .enumerate()
        .fold((0.0, 0), |(m, k), (i, &r)| if r.abs() > m { (r.abs(), i) } else { (m, k) })
}

fn initial_values(params: &ModelParams, utility: &(impl Utility + ?Sized), x: &[f64]) -> Vec<f64> {
    let gamma = utility.power_gamma().unwrap_or(0.5);
    let k = slope_limit(params, gamma);
    x.iter()
        .map(|&xi| k / (1.0 - gamma) * xi.powf(1.0 - gamma) + k / params.beta)
        .collect()
}

/// Solves the stationary HJB equation with consumption bounded by `bound`
/// (`f64::INFINITY` for the unbounded problem).
///
/// Returns the best iterate with `report.converged = false` when the
/// tolerances are not met within `max_iter` sweeps.
pub fn solve<U: Utility + ?Sized>(
    params: &ModelParams,
    utility: &U,
    bound: f64,
    grid: &GridSpec,
    config: &SolverConfig,
) -> Result<ValueFunction> {
    config.validate()?;
    let scheme = Scheme::new(params, utility, bound, grid, config.p_min)?;
    let n = scheme.n();

    let mut warnings = Vec::new();
    let right_closure = match scheme.right {
        RightNode::Neumann { .. } => RightClosure::AsymptoticNeumann,
        RightNode::ZeroCurvature { .. } => {
            warnings.push(
                "non-power utility: right boundary uses a zero-curvature closure".to_string(),
            );
            RightClosure::ZeroCurvature
        }
    };
    if let Some(gamma) = utility.power_gamma() {
        let ratio = grid.x_max.powf(params.alpha - 1.0) / params.mu;
        if ratio > 0.01 && (gamma - params.alpha).abs() > 1e-12 {
            warnings.push(format!(
                "x_max^(α−1)/μ = {ratio:.3e} > 0.01: right boundary slope is only asymptotic"
            ));
        }
    }

    let v0 = initial_values(params, utility, &scheme.x);
    let mut policy = scheme.improve(&v0);

    let mut residuals = Vec::new();
    let mut changes = Vec::new();
    let mut monotone = true;
    let mut prev: Option<Vec<f64>> = None;
    let mut best: Option<(f64, Vec<f64>, Vec<Choice>)> = None;
    let mut converged = false;
    let mut tol_res = 0.0;

    for _ in 0..config.max_iter {
        let v = scheme.evaluate(&policy)?;
        let next = scheme.improve(&v);
        let res = max_abs(&scheme.residual_with(&v, &next)).0;
        let vmax = max_abs(&v).0;
        tol_res = config.tol_res_rel * (1.0 + vmax);
        let change = policy
            .iter()
            .zip(&next)
            .map(|(a, b)| relative_change(a.c, b.c))
            .fold(0.0, f64::max);
        let stationary = (0..n).all(|i| {
            relative_change(policy[i].c, next[i].c) <= config.policy_tol.max(roundoff_floor(&v, i))
        });
        if let Some(p) = &prev {
            let slack = 1e-12 * (1.0 + vmax);
            if v.iter().zip(p).any(|(a, b)| *a < *b - slack) {
                monotone = false;
            }
        }
        residuals.push(res);
        changes.push(change);
        if best.as_ref().map_or(true, |(r, _, _)| res < *r) {
            best = Some((res, v.clone(), policy.clone()));
        }
        if res <= tol_res && stationary {
            converged = true;
            best = Some((res, v, policy));
            break;
        }
        prev = Some(v);
        policy = next;
    }

    let (final_residual, values, used) = best.expect("at least one sweep");
    let c0 = used[0].c;
    let left_drift_margin = scheme.left_coef - c0;
    if !(scheme.left_coef > 0.0) || (converged && c0 >= scheme.left_cap() && scheme.left_cap() < bound) {
        return Err(Error::Monotonicity {
            node: 0,
            x: scheme.x[0],
            diagnosis: format!(
                "drift at x_min is not inward under the optimal policy \
                 (margin {left_drift_margin:.3e}); lower x_min"
            ),
        });
    }

    let report = SolveReport {
        iterations: residuals.len(),
        converged,
        final_residual,
        tol_res,
        residuals,
        policy_changes: changes,
        monotone_iterates: monotone,
        boundary: BoundaryDiagnostics {
            left_drift_margin,
            right_closure,
            right_slope: match scheme.right {
                RightNode::Neumann { slope, .. } => Some(slope),
                RightNode::ZeroCurvature { .. } => None,
            },
            upwind_nodes: scheme.upwind_nodes,
            backward_consumption_nodes: used[1..n - 1].iter().filter(|c| c.backward).count(),
            warnings,
        },
    };
    Ok(ValueFunction::solved(*grid, values, bound, report))
}

/// Recomputes the discrete residual the solver uses for its stopping test.
pub fn scheme_residual<U: Utility + ?Sized>(
    vf: &ValueFunction,
    params: &ModelParams,
    utility: &U,
    config: &SolverConfig,
) -> Result<(f64, usize)> {
    let scheme = Scheme::new(params, utility, vf.bound, &vf.grid, config.p_min)?;
    Ok(max_abs(&scheme.residual(&vf.values)))
}
