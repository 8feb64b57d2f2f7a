//! Checks applied to a value function after (or instead of) a solve.

use serde::Serialize;

use super::value::ValueFunction;
use crate::closedform::{bounded_slope_limit, slope_limit};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Utility};

/// Nodes per decade required by the left-asymptote report.
pub const MIN_NODES_PER_DECADE: f64 = 16.0;
/// Largest relative spread of `x^α v'` accepted as a plateau.
pub const PLATEAU_SPREAD: f64 = 0.05;

const P_FLOOR: f64 = 1e-12;

/// Largest absolute residual of the HJB equation at interior nodes, using
/// centered differences:
///
/// `βv − ½σ²x²v″ − (x^α − μx)v′ − Ũ_L(x, v′)`.
///
/// Returns the value and the node where it occurs.
pub fn residual<U: Utility + ?Sized>(
    vf: &ValueFunction,
    params: &ModelParams,
    utility: &U,
) -> (f64, usize) {
    let n = vf.len();
    let d = 0.5 * params.sigma * params.sigma;
    let mut worst = (0.0, 1);
    for i in 1..n - 1 {
        let x = vf.x[i];
        let vy = vf.dv_log(i);
        let vyy = vf.d2v_log(i);
        let p = (vy / x).max(P_FLOOR);
        let ham = if vf.bound.is_finite() {
            let c = crate::model::bounded_maximizer(utility, x, p, vf.bound);
            utility.value(c * x) - c * x * p
        } else {
            utility.conjugate(p)
        };
        let r = params.beta * vf.values[i]
            - d * (vyy - vy)
            - (x.powf(params.alpha - 1.0) - params.mu) * vy
            - ham;
        let r = if r.is_finite() { r.abs() } else { f64::INFINITY };
        if r > worst.0 {
            worst = (r, i);
        }
    }
    worst
}

/// Indices of the nodes in the lowest decade, excluding node 0.
fn bottom_decade(vf: &ValueFunction) -> Vec<usize> {
    let top = 10.0 * vf.x[0] * (1.0 + 1e-12);
    (1..vf.len() - 1).take_while(|&i| vf.x[i] <= top).collect()
}

fn top_decade(vf: &ValueFunction) -> Vec<usize> {
    let n = vf.len();
    let bottom = vf.x[n - 1] / 10.0 * (1.0 - 1e-12);
    (1..n).filter(|&i| vf.x[i] >= bottom).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LeftAsymptoteReport {
    pub x: Vec<f64>,
    /// `x^α v′(x)`; expected to level off at `βV(0+)`.
    pub scaled_slope: Vec<f64>,
    /// `(U′)⁻¹(v′(x))/x^α`; expected to decrease to 0 as `x ↓ 0`.
    pub consumption_ratio: Vec<f64>,
    /// Estimate of `βV(0+)`: `x^α v′` at the node closest to the origin.
    pub plateau: f64,
    /// `(max − min)/plateau` of `x^α v′` over the decade.
    pub plateau_spread: f64,
    pub plateau_ok: bool,
    /// Whether the consumption ratio is nondecreasing in `x`.
    pub ratio_decays: bool,
}

impl LeftAsymptoteReport {
    pub fn passed(&self) -> bool {
        self.plateau_ok && self.ratio_decays
    }
}

pub fn left_asymptote<U: Utility + ?Sized>(
    vf: &ValueFunction,
    params: &ModelParams,
    utility: &U,
) -> Result<LeftAsymptoteReport> {
    let per_decade = vf.grid.nodes_per_decade();
    if per_decade < MIN_NODES_PER_DECADE {
        return Err(Error::Grid(format!(
            "{per_decade:.1} nodes per decade near x_min; at least {MIN_NODES_PER_DECADE} required"
        )));
    }
    if vf.grid.x_max < 10.0 * vf.grid.x_min {
        return Err(Error::Grid("grid spans less than one decade".into()));
    }
    let idx = bottom_decade(vf);
    let mut x = Vec::with_capacity(idx.len());
    let mut scaled = Vec::with_capacity(idx.len());
    let mut ratio = Vec::with_capacity(idx.len());
    for &i in &idx {
        let xi = vf.x[i];
        let p = vf.dv(i);
        let xa = xi.powf(params.alpha);
        x.push(xi);
        scaled.push(xa * p);
        ratio.push(if p > 0.0 { utility.inverse_marginal(p) / xa } else { f64::INFINITY });
    }
    let plateau = scaled[0];
    let (lo, hi) = scaled
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let plateau_spread = (hi - lo) / plateau.abs();
    let ratio_decays = ratio.windows(2).all(|w| w[1] >= w[0]) && ratio[ratio.len() - 1] > ratio[0];
    Ok(LeftAsymptoteReport {
        x,
        scaled_slope: scaled,
        consumption_ratio: ratio,
        plateau,
        plateau_spread,
        plateau_ok: lo > 0.0 && plateau_spread <= PLATEAU_SPREAD,
        ratio_decays,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RightAsymptoteReport {
    pub x: Vec<f64>,
    /// `x^γ v′(x)` on the top decade.
    pub scaled_slope: Vec<f64>,
    /// `lim x^γ V′(x)`, with the bound taken into account.
    pub target: f64,
    pub max_rel_deviation: f64,
    pub warning: Option<String>,
}

pub fn right_asymptote(vf: &ValueFunction, params: &ModelParams, gamma: f64) -> RightAsymptoteReport {
    let target = if vf.bound.is_finite() {
        bounded_slope_limit(params, gamma, vf.bound)
    } else {
        slope_limit(params, gamma)
    };
    let idx = top_decade(vf);
    let x: Vec<f64> = idx.iter().map(|&i| vf.x[i]).collect();
    let scaled: Vec<f64> = idx.iter().map(|&i| vf.x[i].powf(gamma) * vf.dv(i)).collect();
    let max_rel_deviation = scaled
        .iter()
        .map(|s| (s / target - 1.0).abs())
        .fold(0.0, f64::max);
    let ratio = vf.grid.x_max.powf(params.alpha - 1.0) / params.mu;
    let warning = (ratio > 0.01).then(|| {
        format!("x_max^(α−1)/μ = {ratio:.3e} > 0.01: asymptotic regime not yet reached")
    });
    RightAsymptoteReport {
        x,
        scaled_slope: scaled,
        target,
        max_rel_deviation,
        warning,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateReport {
    pub strictly_increasing: bool,
    pub concave: bool,
    /// Log-log slope of `v` over the top decade.
    pub growth_slope: f64,
    /// `max v/(1 + x)` over the grid.
    pub growth_constant: f64,
    pub linear_growth: bool,
    /// `(U′)⁻¹(v′)/x^α` decreases toward the left edge.
    pub left_decay: bool,
}

impl CandidateReport {
    pub fn passed(&self) -> bool {
        self.strictly_increasing && self.concave && self.linear_growth && self.left_decay
    }
}

/// Membership tests for the class of strictly increasing concave functions
/// with linear growth whose feedback ratio vanishes at the origin.
pub fn validate_candidate<U: Utility + ?Sized>(
    vf: &ValueFunction,
    params: &ModelParams,
    utility: &U,
) -> CandidateReport {
    let v = &vf.values;
    let x = &vf.x;
    let n = v.len();
    let strictly_increasing = v.windows(2).all(|w| w[1] > w[0]);

    let slopes: Vec<f64> = (0..n - 1).map(|i| (v[i + 1] - v[i]) / (x[i + 1] - x[i])).collect();
    let concave = slopes
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(w[1].abs()).max(1.0));

    let top = top_decade(vf);
    let j = top[0];
    let growth_slope = if v[j] > 0.0 && v[n - 1] > 0.0 {
        (v[n - 1] / v[j]).ln() / (x[n - 1] / x[j]).ln()
    } else {
        f64::INFINITY
    };
    let growth_constant = v
        .iter()
        .zip(x)
        .map(|(vi, xi)| vi / (1.0 + xi))
        .fold(f64::NEG_INFINITY, f64::max);

    let idx = bottom_decade(vf);
    let ratio: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let p = vf.dv(i);
            if p > 0.0 {
                utility.inverse_marginal(p) / x[i].powf(params.alpha)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let left_decay = ratio.len() >= 2
        && ratio.iter().all(|r| r.is_finite())
        && ratio.windows(2).all(|w| w[1] >= w[0])
        && ratio[ratio.len() - 1] > ratio[0];

    CandidateReport {
        strictly_increasing,
        concave,
        growth_slope,
        growth_constant,
        linear_growth: growth_slope <= 1.0 + 1e-6,
        left_decay,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::{scaled_profile, slope_limit};
    use crate::hjb::grid::GridSpec;
    use crate::model::PowerUtility;

    fn bench() -> (ModelParams, PowerUtility) {
        (
            ModelParams::new(0.5, 0.1, 0.04, 0.2, 0.05).unwrap(),
            PowerUtility::new(0.5).unwrap(),
        )
    }

    fn exact(n: usize) -> ValueFunction {
        let (p, _) = bench();
        let zeta = slope_limit(&p, 0.5);
        ValueFunction::from_fn(GridSpec::new(1e-3, 1e3, n).unwrap(), f64::INFINITY, |x| {
            scaled_profile(&p, zeta, x)
        })
        .unwrap()
    }

    #[test]
    fn residual_of_exact_solution_is_small_and_sensitive() {
        let (p, u) = bench();
        let vf = exact(1025);
        let (r, _) = residual(&vf, &p, &u);
        assert!(r < 1e-3, "residual {r}");
        let mut bumped = vf.clone();
        bumped.values[500] += 1e-3;
        assert!(residual(&bumped, &p, &u).0 > r);
    }

    #[test]
    fn asymptotes_of_exact_solution() {
        let (p, u) = bench();
        let vf = exact(2048);
        let left = left_asymptote(&vf, &p, &u).unwrap();
        assert!(left.passed());
        assert!((left.plateau - slope_limit(&p, 0.5)).abs() < 1e-4);
        let right = right_asymptote(&vf, &p, 0.5);
        assert!(right.max_rel_deviation < 1e-4);
        assert!(right.warning.is_some());
        let coarse = exact(40);
        assert!(left_asymptote(&coarse, &p, &u).is_err());
    }

    #[test]
    fn candidate_membership() {
        let (p, u) = bench();
        assert!(validate_candidate(&exact(512), &p, &u).passed());

        let g = GridSpec::new(1e-3, 1e3, 512).unwrap();
        let lin = ValueFunction::from_fn(g, f64::INFINITY, |x| x).unwrap();
        let r = validate_candidate(&lin, &p, &u);
        assert!(r.strictly_increasing && r.concave && r.linear_growth);
        assert!(!r.left_decay);
        assert!(residual(&lin, &p, &u).0 > 1.0);

        let sq = ValueFunction::from_fn(g, f64::INFINITY, |x| x * x).unwrap();
        let r = validate_candidate(&sq, &p, &u);
        assert!(!r.concave && !r.linear_growth);
    }
}
