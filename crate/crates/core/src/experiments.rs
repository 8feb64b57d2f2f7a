//! Bounded-versus-unbounded comparisons and the Monte Carlo cross-check of
//! solved policies.

use rayon::prelude::*;
use serde::Serialize;

use crate::closedform::{bounded_constant_solution, corner_threshold};
use crate::error::{Error, Result};
use crate::hjb::{extract_policy, solve, ConstantPolicy, ConsumptionPolicy, GridSpec, SolverConfig, ValueFunction};
use crate::model::{ModelParams, PowerUtility, Utility};
use crate::sde::{discretization_allowance, mc_value, SimConfig};

/// Saturation threshold on `max(V − V_L)`, in units of the solver tolerance.
pub const SATURATION_FACTOR: f64 = 3.0;
/// Slack allowed on node-wise order checks, in units of the solver tolerance.
pub const ORDER_FACTOR: f64 = 2.0;
/// Clip verdict threshold, in units of the combined relative tolerance.
pub const CLIP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GapVerdict {
    Saturated,
    Strict,
    /// The bounded solve failed or did not converge.
    Failed,
}

/// One bounded solve, compared with the unbounded one.
#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub bound: f64,
    /// `V_L` at the sample points (NaN when the solve failed).
    pub values: Vec<f64>,
    /// `V − V_L` at the sample points.
    pub gaps: Vec<f64>,
    pub tol_res: f64,
    pub converged: bool,
    pub error: Option<String>,
    /// Extremes of `V − V_L` over all grid nodes.
    pub min_node_gap: f64,
    pub max_node_gap: f64,
    pub verdict: GapVerdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub xs: Vec<f64>,
    pub bounds: Vec<f64>,
    /// Unbounded `V` at the sample points.
    pub unbounded: Vec<f64>,
    pub unbounded_tol_res: f64,
    pub rows: Vec<BoundRow>,
    /// `max(V_{L_k} − V_{L_{k+1}})` over grid nodes, per consecutive pair.
    pub order_violations: Vec<f64>,
    /// Node-wise `V_{L₁} ≤ V_{L₂} ≤ V` within `ORDER_FACTOR` tolerances.
    pub ordered: bool,
}

impl ComparisonTable {
    pub fn verdicts(&self) -> Vec<GapVerdict> {
        self.rows.iter().map(|r| r.verdict).collect()
    }
}

fn tol_of(vf: &ValueFunction) -> (f64, bool) {
    vf.report.as_ref().map_or((0.0, true), |r| (r.tol_res, r.converged))
}

fn check_increasing(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain(format!("{name} must be nonempty and strictly increasing")));
    }
    Ok(())
}

/// Solves the unbounded problem and the problem bounded by each `L`, all on
/// the same grid and with the same solver settings.
pub fn compare_bounded<U: Utility + ?Sized>(
    params: &ModelParams,
    utility: &U,
    bounds: &[f64],
    xs: &[f64],
    grid: &GridSpec,
    config: &SolverConfig,
) -> Result<ComparisonTable> {
    check_increasing("bounds", bounds)?;
    check_increasing("sample points", xs)?;
    if bounds.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::domain("bounds must be positive"));
    }
    let mut all: Vec<f64> = vec![f64::INFINITY];
    all.extend_from_slice(bounds);
    let solved: Vec<Result<ValueFunction>> = all
        .par_iter()
        .map(|&l| solve(params, utility, l, grid, config))
        .collect();
    let mut solved = solved.into_iter();
    let full = solved.next().expect("unbounded solve")?;
    let (full_tol, full_conv) = tol_of(&full);
    if !full_conv {
        return Err(Error::Numerical("unbounded solve did not converge".into()));
    }
    let unbounded = xs.iter().map(|&x| full.value_at(x)).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(bounds.len());
    let mut fields: Vec<Option<ValueFunction>> = Vec::with_capacity(bounds.len());
    for (&bound, res) in bounds.iter().zip(solved) {
        let row = match res {
            Ok(vf) => {
                let (tol_res, converged) = tol_of(&vf);
                let values = xs.iter().map(|&x| vf.value_at(x)).collect::<Result<Vec<_>>>()?;
                let gaps: Vec<f64> = unbounded.iter().zip(&values).map(|(v, w)| v - w).collect();
                let node_gaps = full.values.iter().zip(&vf.values).map(|(v, w)| v - w);
                let (min_node_gap, max_node_gap) = node_gaps
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), g| (a.min(g), b.max(g)));
                let tol = tol_res.max(full_tol);
                let verdict = if !converged {
                    GapVerdict::Failed
                } else if max_node_gap <= SATURATION_FACTOR * tol {
                    GapVerdict::Saturated
                } else {
                    GapVerdict::Strict
                };
                let row = BoundRow {
                    bound,
                    values,
                    gaps,
                    tol_res,
                    converged,
                    error: None,
                    min_node_gap,
                    max_node_gap,
                    verdict,
                };
                fields.push(Some(vf));
                row
            }
            Err(e) => {
                fields.push(None);
                BoundRow {
                    bound,
                    values: vec![f64::NAN; xs.len()],
                    gaps: vec![f64::NAN; xs.len()],
                    tol_res: f64::NAN,
                    converged: false,
                    error: Some(e.to_string()),
                    min_node_gap: f64::NAN,
                    max_node_gap: f64::NAN,
                    verdict: GapVerdict::Failed,
                }
            }
        };
        rows.push(row);
    }

    let mut order_violations = Vec::new();
    let mut ordered = rows.iter().all(|r| {
        r.verdict != GapVerdict::Failed && r.min_node_gap >= -ORDER_FACTOR * r.tol_res.max(full_tol)
    });
    for k in 0..fields.len().saturating_sub(1) {
        match (&fields[k], &fields[k + 1]) {
            (Some(a), Some(b)) => {
                let worst = a.values.iter().zip(&b.values).map(|(u, v)| u - v).fold(f64::NEG_INFINITY, f64::max);
                let tol = rows[k].tol_res.max(rows[k + 1].tol_res);
                ordered &= worst <= ORDER_FACTOR * tol;
                order_violations.push(worst);
            }
            _ => {
                ordered = false;
                order_violations.push(f64::NAN);
            }
        }
    }
    Ok(ComparisonTable {
        xs: xs.to_vec(),
        bounds: bounds.to_vec(),
        unbounded,
        unbounded_tol_res: full_tol,
        rows,
        order_violations,
        ordered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipVerdict {
    ClipDiffers,
    ClipEqualWithinTolerance,
}

/// Raw corner quantities for `γ = α`.
#[derive(Debug, Clone, Serialize)]
pub struct CornerNote {
    /// `ζ_L^{−1/α}`.
    pub interior_candidate: f64,
    pub bound: f64,
    pub l_star: f64,
    pub corner_active: bool,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClipReport {
    pub bound: f64,
    pub x: Vec<f64>,
    /// `ĉ^L` from the bounded solve.
    pub bounded: Vec<f64>,
    /// `min(ĉ, L)` from the unbounded solve.
    pub clipped: Vec<f64>,
    /// `max |ĉ^L − ĉ∧L| / (ĉ∧L)` over the nodes.
    pub max_deviation: f64,
    pub argmax_x: f64,
    /// Relative tolerance the deviation is compared against.
    pub threshold: f64,
    pub verdict: ClipVerdict,
    pub note: Option<CornerNote>,
}

/// Compares the optimal bounded policy with the clipped unbounded one on
/// the nodes of `grid`.
pub fn policy_clip_check<U: Utility + ?Sized>(
    params: &ModelParams,
    utility: &U,
    bound: f64,
    grid: &GridSpec,
    config: &SolverConfig,
) -> Result<ClipReport> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::domain(format!("bound L = {bound} must be positive and finite")));
    }
    let (full, bounded) = rayon::join(
        || solve(params, utility, f64::INFINITY, grid, config),
        || solve(params, utility, bound, grid, config),
    );
    let (full, bounded) = (full?, bounded?);
    for (name, vf) in [("unbounded", &full), ("bounded", &bounded)] {
        if !tol_of(vf).1 {
            return Err(Error::Numerical(format!("{name} solve did not converge")));
        }
    }
    let c_full = extract_policy(&full, utility, params.alpha)?;
    let c_bounded = extract_policy(&bounded, utility, params.alpha)?;
    let clipped: Vec<f64> = c_full.c.iter().map(|&c| c.min(bound)).collect();
    let (mut max_deviation, mut arg) = (0.0, 0);
    for (i, (a, b)) in c_bounded.c.iter().zip(&clipped).enumerate() {
        let d = (a - b).abs() / b.max(f64::MIN_POSITIVE);
        if d > max_deviation {
            max_deviation = d;
            arg = i;
        }
    }
    let rel = |vf: &ValueFunction| {
        let top = vf.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        tol_of(vf).0 / (1.0 + top)
    };
    let threshold = CLIP_FACTOR * (rel(&full) + rel(&bounded));
    let verdict = if max_deviation > threshold {
        ClipVerdict::ClipDiffers
    } else {
        ClipVerdict::ClipEqualWithinTolerance
    };
    let note = match utility.power_gamma() {
        Some(g) if (g - params.alpha).abs() <= 1e-12 => {
            let pu = PowerUtility::new(g)?;
            let corner = bounded_constant_solution(params, &pu, bound)?;
            let l_star = corner_threshold(params, &pu)?;
            let message = if corner.corner_active {
                format!(
                    "gamma = alpha and L = {bound} <= L* = {l_star:.6}: zeta_L^(-1/alpha) = {:.6} >= L, so the \
                     corner c = L is optimal at every x and the bounded policy equals min(c_hat, L) identically; \
                     no x with c_hat^L(x) != min(c_hat(x), L) exists for L <= L*",
                    corner.interior_candidate
                )
            } else {
                format!(
                    "gamma = alpha and L = {bound} > L* = {l_star:.6}: the bound never binds and both policies \
                     equal c_hat = L*"
                )
            };
            Some(CornerNote {
                interior_candidate: corner.interior_candidate,
                bound,
                l_star,
                corner_active: corner.corner_active,
                message,
            })
        }
        _ => None,
    };
    Ok(ClipReport {
        bound,
        x: full.x.clone(),
        bounded: c_bounded.c,
        clipped,
        max_deviation,
        argmax_x: full.x[arg],
        threshold,
        verdict,
        note,
    })
}

/// Monte Carlo settings for the cross-check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossCheckConfig {
    pub sim: SimConfig,
    /// Paths used to measure the discretization allowance.
    pub allowance_paths: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuboptimalRow {
    pub rate: f64,
    pub mean: f64,
    pub stderr: f64,
    /// `mean < v(x0) − 3·stderr`.
    pub below: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheckRow {
    pub x0: f64,
    pub pde: f64,
    pub mc: f64,
    pub stderr: f64,
    pub tail_bound: f64,
    pub allowance: f64,
    /// `3·stderr + tail_bound + allowance`.
    pub tolerance: f64,
    pub matches: bool,
    pub suboptimal: Vec<SuboptimalRow>,
}

impl CrossCheckRow {
    pub fn passed(&self) -> bool {
        self.matches && self.suboptimal.iter().all(|s| s.below)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheckReport {
    #[serde(serialize_with = "crate::config::bound::serialize")]
    pub bound: f64,
    pub rows: Vec<CrossCheckRow>,
    pub passed: bool,
}

/// Simulates the feedback policy extracted from `vf` and compares its
/// discounted utility with `v(x0)`; also checks that `c ≡ 2ĉ(x0)` and
/// `c ≡ 0` do strictly worse.
pub fn mc_cross_check<U: Utility + ?Sized>(
    params: &ModelParams,
    utility: &U,
    vf: &ValueFunction,
    x0s: &[f64],
    cfg: &CrossCheckConfig,
) -> Result<CrossCheckReport> {
    if cfg.allowance_paths < 2 {
        return Err(Error::domain("allowance_paths must be at least 2"));
    }
    let policy = extract_policy(vf, utility, params.alpha)?;
    let allowance_cfg = SimConfig {
        n_paths: cfg.allowance_paths,
        seed: cfg.sim.seed ^ 0xA11_0A4CE,
        ..cfg.sim
    };
    let mut rows = Vec::with_capacity(x0s.len());
    for &x0 in x0s {
        let pde = vf.value_at(x0)?;
        let est = mc_value(params, utility, &policy, x0, &cfg.sim)?;
        let allowance = discretization_allowance(params, utility, &policy, x0, &allowance_cfg)?.allowance;
        let tolerance = 3.0 * est.stderr + est.tail_bound + allowance;
        let mut suboptimal = Vec::new();
        for rate in [2.0 * policy.rate(x0), 0.0] {
            let e = mc_value(params, utility, &ConstantPolicy(rate) as &dyn ConsumptionPolicy, x0, &cfg.sim)?;
            suboptimal.push(SuboptimalRow {
                rate,
                mean: e.mean,
                stderr: e.stderr,
                below: e.mean < pde - 3.0 * e.stderr,
            });
        }
        rows.push(CrossCheckRow {
            x0,
            pde,
            mc: est.mean,
            stderr: est.stderr,
            tail_bound: est.tail_bound,
            allowance,
            tolerance,
            matches: (est.mean - pde).abs() <= tolerance,
            suboptimal,
        });
    }
    let passed = rows.iter().all(|r| r.passed());
    Ok(CrossCheckReport {
        bound: vf.bound,
        rows,
        passed,
    })
}
