//! Closed-form quantities for power utility.
//!
//! When `γ = α` the value function is `ζ(x^{1−α}/(1−α) + 1/β)` and the optimal
//! consumption rate is the constant `ζ^{−1/α}`. For general `γ` only the
//! asymptotic constants are explicit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{drift_peak, phi0_bound, ModelParams, PowerUtility};

const GAMMA_EQ_ALPHA_TOL: f64 = 1e-12;

/// `β/γ + (1−γ)(μ/γ + σ²/2)`: the large-capital consumption rate for risk
/// aversion `γ`. With `γ = α` it is both the constant optimal rate and the
/// corner threshold `L*`.
pub fn consumption_limit(params: &ModelParams, gamma: f64) -> f64 {
    params.beta / gamma + (1.0 - gamma) * (params.mu / gamma + 0.5 * params.sigma * params.sigma)
}

/// `lim_{x→∞} x^γ V'(x) = (γ/(β + μ(1−γ) + σ²γ(1−γ)/2))^γ`.
pub fn slope_limit(params: &ModelParams, gamma: f64) -> f64 {
    let denom = params.beta
        + params.mu * (1.0 - gamma)
        + 0.5 * params.sigma * params.sigma * gamma * (1.0 - gamma);
    (gamma / denom).powf(gamma)
}

/// Large-capital limit of `x^γ V_L'(x)` for the problem with consumption
/// bounded by `L`.
///
/// When `L` is below the unconstrained limiting rate the constraint binds at
/// infinity and the limit is `L^{1−γ}/(β + (1−γ)(μ + L + γσ²/2))`; otherwise it
/// coincides with [`slope_limit`].
pub fn bounded_slope_limit(params: &ModelParams, gamma: f64, bound: f64) -> f64 {
    if bound.is_finite() && bound < consumption_limit(params, gamma) {
        bound_scale(params, gamma, bound)
    } else {
        slope_limit(params, gamma)
    }
}

fn bound_scale(params: &ModelParams, gamma: f64, bound: f64) -> f64 {
    bound.powf(1.0 - gamma)
        / (params.beta
            + (1.0 - gamma) * (params.mu + bound + 0.5 * gamma * params.sigma * params.sigma))
}

/// Exact solution data for `γ = α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaEqAlphaSolution {
    pub zeta: f64,
    pub c_hat: f64,
    pub l_star: f64,
}

fn require_gamma_eq_alpha(params: &ModelParams, utility: &PowerUtility) -> Result<()> {
    if (utility.gamma() - params.alpha).abs() > GAMMA_EQ_ALPHA_TOL {
        return Err(Error::domain(format!(
            "closed form requires gamma = alpha (got gamma = {}, alpha = {})",
            utility.gamma(),
            params.alpha
        )));
    }
    Ok(())
}

pub fn gamma_eq_alpha(params: &ModelParams, utility: &PowerUtility) -> Result<GammaEqAlphaSolution> {
    require_gamma_eq_alpha(params, utility)?;
    Ok(GammaEqAlphaSolution {
        zeta: slope_limit(params, params.alpha),
        c_hat: consumption_limit(params, params.alpha),
        l_star: corner_threshold(params, utility)?,
    })
}

/// `V(x) = ζ(x^{1−α}/(1−α) + 1/β)`.
pub fn value_gamma_eq_alpha(params: &ModelParams, utility: &PowerUtility, x: f64) -> Result<f64> {
    require_gamma_eq_alpha(params, utility)?;
    if !(x > 0.0) {
        return Err(Error::domain(format!("x = {x} must be positive")));
    }
    Ok(scaled_profile(params, slope_limit(params, params.alpha), x))
}

/// `ζ(x^{1−α}/(1−α) + 1/β)` for an arbitrary scale `ζ`.
pub fn scaled_profile(params: &ModelParams, scale: f64, x: f64) -> f64 {
    let k = 1.0 - params.alpha;
    scale * (x.powf(k) / k + 1.0 / params.beta)
}

/// Derivative of [`scaled_profile`]: `ζ x^{−α}`.
pub fn scaled_profile_slope(params: &ModelParams, scale: f64, x: f64) -> f64 {
    scale * x.powf(-params.alpha)
}

/// Constant-consumption solution of the problem bounded by `L` when `γ = α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundedConstant {
    pub bound: f64,
    pub zeta_l: f64,
    /// `ζ_L^{−1/α}`, the unconstrained maximizer implied by `V_L`.
    pub interior_candidate: f64,
    /// Whether the corner `c = L` is the maximizer at every `x`.
    pub corner_active: bool,
}

pub fn bounded_constant_solution(
    params: &ModelParams,
    utility: &PowerUtility,
    bound: f64,
) -> Result<BoundedConstant> {
    require_gamma_eq_alpha(params, utility)?;
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(Error::domain(format!("bound L = {bound} must be positive and finite")));
    }
    let zeta_l = bound_scale(params, params.alpha, bound);
    let interior_candidate = zeta_l.powf(-1.0 / params.alpha);
    Ok(BoundedConstant {
        bound,
        zeta_l,
        interior_candidate,
        corner_active: interior_candidate >= bound,
    })
}

/// `L* = β/α + (1−α)(μ/α + σ²/2)`.
pub fn corner_threshold(params: &ModelParams, utility: &PowerUtility) -> Result<f64> {
    require_gamma_eq_alpha(params, utility)?;
    Ok(consumption_limit(params, params.alpha))
}

/// Behaviour of the optimal rate `ĉ(x)` as `x ↓ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OriginLimit {
    Zero,
    /// Finite positive limit `(βV(0+))^{−1/γ}`, known when `V(0+)` is supplied.
    FinitePositive { value: Option<f64> },
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CHatLimits {
    pub at_infinity: f64,
    pub at_origin: OriginLimit,
}

pub fn c_hat_limits(params: &ModelParams, gamma: f64, v0plus: Option<f64>) -> Result<CHatLimits> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain(format!("gamma = {gamma} must lie in (0, 1)")));
    }
    let at_origin = if (gamma - params.alpha).abs() <= GAMMA_EQ_ALPHA_TOL {
        OriginLimit::FinitePositive {
            value: v0plus.map(|v| (params.beta * v).powf(-1.0 / gamma)),
        }
    } else if gamma < params.alpha {
        OriginLimit::Zero
    } else {
        OriginLimit::Infinite
    };
    Ok(CHatLimits {
        at_infinity: consumption_limit(params, gamma),
        at_origin,
    })
}

/// Every constant the model admits in closed form, for the `oracle` command.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub params: ModelParams,
    pub gamma: f64,
    pub eta: f64,
    pub x_star: f64,
    pub drift_peak: f64,
    pub phi0: f64,
    pub slope_limit: f64,
    pub c_hat_limits: CHatLimits,
    pub gamma_eq_alpha: Option<GammaEqAlphaOracle>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaEqAlphaOracle {
    pub zeta: f64,
    pub c_hat: f64,
    pub l_star: f64,
    pub v0plus: f64,
    pub value_at_1: f64,
}

pub fn oracle(params: &ModelParams, utility: &PowerUtility) -> Result<OracleReport> {
    let gamma = utility.gamma();
    let peak = drift_peak(params);
    let exact = gamma_eq_alpha(params, utility).ok().map(|s| GammaEqAlphaOracle {
        zeta: s.zeta,
        c_hat: s.c_hat,
        l_star: s.l_star,
        v0plus: s.zeta / params.beta,
        value_at_1: scaled_profile(params, s.zeta, 1.0),
    });
    let v0plus = exact.as_ref().map(|e| e.v0plus);
    Ok(OracleReport {
        params: *params,
        gamma,
        eta: params.eta(),
        x_star: peak.x_star,
        drift_peak: peak.peak,
        phi0: phi0_bound(params, utility)?,
        slope_limit: slope_limit(params, gamma),
        c_hat_limits: c_hat_limits(params, gamma, v0plus)?,
        gamma_eq_alpha: exact,
    })
}
