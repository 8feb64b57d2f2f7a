//! Model parameters, utility functions and the pointwise Hamiltonians.
//!
//! The state is capital per capita `X`, driven by
//!
//! ```text
//! dX = (X^α − μX − cX) dt − σX dW,   μ = λ + n − σ²,
//! ```
//!
//! and the agent maximizes `E ∫ e^{−βt} U(c_t X_t) dt`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Safety margin applied to the linear-bound constant `φ₀`.
pub const PHI0_MARGIN: f64 = 1e-3;

/// Economic and diffusion constants of the growth model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub lambda: f64,
    pub n: f64,
    pub sigma: f64,
    pub beta: f64,
    pub mu: f64,
}

impl ModelParams {
    /// Validates the raw constants and derives `μ = λ + n − σ²`.
    pub fn new(alpha: f64, lambda: f64, n: f64, sigma: f64, beta: f64) -> Result<Self> {
        let finite = [alpha, lambda, n, sigma, beta].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("model parameters must be finite"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::domain(format!("lambda = {lambda} must be nonnegative")));
        }
        if !(sigma > 0.0) {
            return Err(Error::domain(format!("sigma = {sigma} must be positive")));
        }
        if !(beta > 0.0) {
            return Err(Error::domain(format!("beta = {beta} must be positive")));
        }
        let mu = lambda + n - sigma * sigma;
        if !(mu > 0.0) {
            return Err(Error::domain(format!(
                "mu = λ+n−σ² must be positive (got {mu:e})"
            )));
        }
        Ok(Self {
            alpha,
            lambda,
            n,
            sigma,
            beta,
            mu,
        })
    }

    /// Builds parameters from the drift constant directly.
    ///
    /// Only `μ` enters the reduced problem, so the decomposition is fixed to
    /// `n = 0`, `λ = μ + σ²`. The stored `mu` is recomputed from that pair and
    /// may differ from the argument in the last bit.
    pub fn from_mu(alpha: f64, mu: f64, sigma: f64, beta: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::domain(format!(
                "mu = λ+n−σ² must be positive (got {mu:e})"
            )));
        }
        Self::new(alpha, mu + sigma * sigma, 0.0, sigma, beta)
    }

    /// `η = 1/(1−α)`, the moment exponent.
    pub fn eta(&self) -> f64 {
        1.0 / (1.0 - self.alpha)
    }

    /// Net production drift `x^α − μx`.
    pub fn production_drift(&self, x: f64) -> f64 {
        x.powf(self.alpha) - self.mu * x
    }
}

/// Maximizer and maximum of `x ↦ x^α − μx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftPeak {
    pub x_star: f64,
    pub peak: f64,
}

pub fn drift_peak(params: &ModelParams) -> DriftPeak {
    let x_star = (params.alpha / params.mu).powf(1.0 / (1.0 - params.alpha));
    DriftPeak {
        x_star,
        peak: params.production_drift(x_star),
    }
}

/// Utility of consumption.
///
/// Implementors must be strictly increasing and strictly concave with
/// `U(0) = 0`, `U'(0+) = ∞`, `U'(∞) = 0` and `U(∞) = ∞`.
pub trait Utility: Send + Sync {
    fn value(&self, y: f64) -> f64;

    fn marginal(&self, y: f64) -> f64;

    /// `(U')⁻¹(p)` for `p > 0`.
    fn inverse_marginal(&self, p: f64) -> f64;

    /// `Ũ(p) = sup_{y≥0} {U(y) − yp}` without argument checks.
    fn conjugate(&self, p: f64) -> f64 {
        let y = self.inverse_marginal(p);
        self.value(y) - y * p
    }

    /// `sup_y {U(y) − y}`, located by golden-section search over `ln y`.
    fn excess_sup(&self) -> Result<f64> {
        golden_max_log(|y| self.value(y) - y, -60.0, 60.0)
    }

    /// Risk-aversion exponent when the utility is the power family
    /// `y^{1−γ}/(1−γ)`; enables closed-form shortcuts.
    fn power_gamma(&self) -> Option<f64> {
        None
    }
}

/// Isoelastic utility `U(y) = y^{1−γ}/(1−γ)`, `0 < γ < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerUtility {
    gamma: f64,
}

impl PowerUtility {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::domain(format!("gamma = {gamma} must lie in (0, 1)")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Utility for PowerUtility {
    #[inline]
    fn value(&self, y: f64) -> f64 {
        let k = 1.0 - self.gamma;
        y.powf(k) / k
    }

    #[inline]
    fn marginal(&self, y: f64) -> f64 {
        y.powf(-self.gamma)
    }

    #[inline]
    fn inverse_marginal(&self, p: f64) -> f64 {
        p.powf(-1.0 / self.gamma)
    }

    #[inline]
    fn conjugate(&self, p: f64) -> f64 {
        let g = self.gamma;
        g / (1.0 - g) * p.powf((g - 1.0) / g)
    }

    fn excess_sup(&self) -> Result<f64> {
        Ok(self.gamma / (1.0 - self.gamma))
    }

    fn power_gamma(&self) -> Option<f64> {
        Some(self.gamma)
    }
}

type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// A utility supplied through evaluation hooks.
pub struct FnUtility {
    value: ScalarFn,
    marginal: ScalarFn,
    inverse_marginal: ScalarFn,
}

impl FnUtility {
    pub fn new(value: ScalarFn, marginal: ScalarFn, inverse_marginal: ScalarFn) -> Self {
        Self {
            value,
            marginal,
            inverse_marginal,
        }
    }
}

impl Utility for FnUtility {
    fn value(&self, y: f64) -> f64 {
        (self.value)(y)
    }

    fn marginal(&self, y: f64) -> f64 {
        (self.marginal)(y)
    }

    fn inverse_marginal(&self, p: f64) -> f64 {
        (self.inverse_marginal)(p)
    }
}

/// `Ũ(p) = sup_{y≥0} {U(y) − yp}`.
pub fn u_tilde<U: Utility + ?Sized>(utility: &U, p: f64) -> Result<f64> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::domain(format!(
            "u_tilde requires a positive finite p (got {p}); Ũ(0+) = ∞"
        )));
    }
    Ok(utility.conjugate(p))
}

/// Optimal consumption rate for the bounded Hamiltonian: `min{(U')⁻¹(p)/x, L}`.
#[inline]
pub fn bounded_maximizer<U: Utility + ?Sized>(utility: &U, x: f64, p: f64, bound: f64) -> f64 {
    let c = utility.inverse_marginal(p) / x;
    if c >= bound {
        bound
    } else {
        c
    }
}

/// `Ũ_L(x, p) = sup_{0≤c≤L} {U(cx) − cxp}`.
pub fn u_tilde_bounded<U: Utility + ?Sized>(utility: &U, x: f64, p: f64, bound: f64) -> Result<f64> {
    if !(x > 0.0 && p > 0.0 && bound > 0.0) || !(x.is_finite() && p.is_finite()) {
        return Err(Error::domain(format!(
            "u_tilde_bounded requires x, p, L > 0 (got x = {x}, p = {p}, L = {bound})"
        )));
    }
    if bound.is_infinite() {
        return Ok(utility.conjugate(p));
    }
    let c = bounded_maximizer(utility, x, p, bound);
    Ok(utility.value(c * x) - c * x * p)
}

/// The linear-bound constant `φ₀` with `V_L(x) ≤ x + φ₀` for all `x` and `L`.
///
/// Returns `(1 + δ)(A + S)/β` where `A` is the drift peak and
/// `S = sup_y {U(y) − y}`, which makes `−βφ₀ + A + S < 0`.
pub fn phi0_bound<U: Utility + ?Sized>(params: &ModelParams, utility: &U) -> Result<f64> {
    let peak = drift_peak(params).peak;
    let excess = utility.excess_sup()?;
    Ok((1.0 + PHI0_MARGIN) * (peak + excess) / params.beta)
}

/// Golden-section maximization of a function unimodal in `ln y`.
fn golden_max_log<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> Result<f64> {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    while b - a > 1e-12 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d.exp());
        }
    }
    let t = 0.5 * (a + b);
    if t - lo < 1e-6 || hi - t < 1e-6 {
        return Err(Error::Numerical(format!(
            "sup_y {{U(y) − y}} could not be bracketed in y ∈ [e^{lo}, e^{hi}]"
        )));
    }
    let best = f(t.exp());
    if !best.is_finite() {
        return Err(Error::Numerical("sup_y {U(y) − y} is not finite".into()));
    }
    Ok(best)
}

/// Flat JSON form of the model: `alpha, lambda, n, sigma, beta, gamma`, or
/// `mu` in place of `lambda`/`n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    pub sigma: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ModelConfig {
    /// The α = γ = 0.5, β = 0.05, μ = 0.1, σ = 0.2 benchmark.
    pub fn benchmark() -> Self {
        Self {
            alpha: 0.5,
            lambda: Some(0.1),
            n: Some(0.04),
            mu: None,
            sigma: 0.2,
            beta: 0.05,
            gamma: 0.5,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        match (self.mu, self.lambda, self.n) {
            (Some(mu), None, None) => ModelParams::from_mu(self.alpha, mu, self.sigma, self.beta),
            (Some(_), _, _) => Err(Error::domain(
                "give either mu or the pair (lambda, n), not both",
            )),
            (None, Some(lambda), Some(n)) => {
                ModelParams::new(self.alpha, lambda, n, self.sigma, self.beta)
            }
            (None, _, _) => Err(Error::domain("lambda and n (or mu) are required")),
        }
    }

    pub fn utility(&self) -> Result<PowerUtility> {
        PowerUtility::new(self.gamma)
    }
}
