//! Feller's test for the controlled capital process
//! `dX = (X^α − μX − c(X)X)dt − σX dW`.
//!
//! With `b(y) = y^α − μy − c(y)y`, the scale density relative to a reference
//! point `ℓ` is
//!
//! ```text
//! p′(r) = exp(2 ∫_r^ℓ b(y)/(σ²y²) dy).
//! ```
//!
//! `∫_ℓ^∞ p′ = ∞` rules out explosion and `∫_0^ℓ p′ = ∞` rules out hitting
//! the origin. Both integrals are evaluated in `s = ln r`, where
//! `ln p′(e^s) = −∫_{ln ℓ}^s H` with `H(t) = 2(e^{(α−1)t} − μ − c(e^t))/σ²`,
//! and partial sums are carried as logarithms.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hjb::policy::ConsumptionPolicy;
use crate::model::ModelParams;

/// Relative tolerance of the inner (drift) integral.
pub const INNER_RTOL: f64 = 1e-9;
/// Relative Gauss/Kronrod disagreement accepted on an outer panel.
const OUTER_RTOL: f64 = 1e-9;
/// Per-decade growth factor read as divergence.
pub const DIVERGENCE_FACTOR: f64 = 2.0;
/// Per-decade growth factor below which the partial sums are read as settled.
pub const CONVERGENCE_FACTOR: f64 = 1.0 + 1e-3;
/// Number of trailing ratios that must agree on a verdict.
pub const SUSTAINED: usize = 3;
/// Reference points used for the invariance check.
pub const REFERENCES: [f64; 3] = [0.5, 1.0, 2.0];

const MAX_DEPTH: u32 = 60;
const MAX_PANEL: f64 = 0.1;
/// Log-distance below the running sum at which a panel is dropped.
const NEGLIGIBLE: f64 = 60.0;
const DELTA_SAMPLES: usize = 65;

// 15-point Kronrod abscissae on [0, 1] (positive half, descending) with the
// embedded 7-point Gauss rule on the odd entries.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// The 15 Kronrod nodes of `[a, b]` with their Kronrod and Gauss weights
/// (Gauss weight 0 off the Gauss nodes).
fn gk_nodes(a: f64, b: f64) -> [(f64, f64, f64); 15] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(0.0, 0.0, 0.0); 15];
    for j in 0..7 {
        let wg = if j % 2 == 1 { WG[j / 2] } else { 0.0 };
        out[2 * j] = (c - h * XGK[j], h * WGK[j], h * wg);
        out[2 * j + 1] = (c + h * XGK[j], h * WGK[j], h * wg);
    }
    out[14] = (c, h * WGK[7], h * WG[3]);
    out
}

/// Adaptive G7K15 quadrature of `f` over `[a, b]` (either orientation).
fn integrate<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64, rtol: f64) -> Result<f64> {
    fn rec<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64, rtol: f64, depth: u32) -> Result<f64> {
        let (mut k, mut g, mut scale) = (0.0, 0.0, 0.0);
        for (x, wk, wg) in gk_nodes(a, b) {
            let v = f(x)?;
            k += wk * v;
            g += wg * v;
            scale += (wk * v).abs();
        }
        let tol = rtol * k.abs().max(1e-3 * scale).max(f64::MIN_POSITIVE);
        if (k - g).abs() <= tol {
            return Ok(k);
        }
        if depth >= MAX_DEPTH {
            return Err(Error::Numerical(format!(
                "inner quadrature did not reach rtol {rtol:e} on [{a:e}, {b:e}]"
            )));
        }
        let m = 0.5 * (a + b);
        Ok(rec(f, a, m, rtol, depth + 1)? + rec(f, m, b, rtol, depth + 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    rec(f, a, b, rtol, 0)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log of the scale density for one policy and reference point.
pub struct ScaleIntegrand<'a> {
    params: ModelParams,
    policy: &'a dyn ConsumptionPolicy,
    log_ell: f64,
    k: f64,
}

impl<'a> ScaleIntegrand<'a> {
    pub fn new(params: &ModelParams, policy: &'a dyn ConsumptionPolicy, ell: f64) -> Result<Self> {
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(Error::domain(format!("reference point must be positive, got {ell}")));
        }
        Ok(Self {
            params: *params,
            policy,
            log_ell: ell.ln(),
            k: 2.0 / (params.sigma * params.sigma),
        })
    }

    /// `H(t)`, the derivative of `−ln p′` in `t = ln y`.
    fn h(&self, t: f64) -> Result<f64> {
        let y = t.exp();
        let c = self.policy.rate(y);
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Policy {
                x: y,
                reason: format!("consumption rate {c} is not a finite nonnegative number"),
            });
        }
        Ok(self.k * (((self.params.alpha - 1.0) * t).exp() - self.params.mu - c))
    }

    /// `∫_{s0}^{s1} H`.
    fn drift_integral(&self, s0: f64, s1: f64) -> Result<f64> {
        integrate(&mut |t| self.h(t), s0, s1, INNER_RTOL)
    }

    /// `ln p′(r) = 2 ∫_r^ℓ b(y)/(σ²y²) dy`.
    pub fn log_density(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::domain(format!("scale density needs r > 0, got {r}")));
        }
        Ok(-self.drift_integral(self.log_ell, r.ln())?)
    }

    pub fn reference(&self) -> f64 {
        self.log_ell.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Origin,
    Infinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Diverges,
    Converges,
    Inconclusive,
    InconclusiveByPrecondition,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Diverges => "diverges",
            Verdict::Converges => "converges",
            Verdict::Inconclusive => "inconclusive",
            Verdict::InconclusiveByPrecondition => "inconclusive-by-precondition",
        }
    }
}

/// `c(y)·y < ½y^α` on the decade `[lo, hi]` next to the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaCondition {
    pub lo: f64,
    pub hi: f64,
    /// `max c(y)y / (½y^α)` over the sampled points.
    pub max_ratio: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryVerdict {
    pub side: Side,
    pub reference: f64,
    pub cutoffs: Vec<f64>,
    /// `log10 ∫ p′` between the reference point and each cutoff.
    pub log10_partials: Vec<f64>,
    /// `log10` of the ratio of consecutive partial integrals; the first
    /// entry compares with the zero-length integral and is `+∞`.
    pub log10_ratios: Vec<f64>,
    pub delta_condition: Option<DeltaCondition>,
    pub verdict: Verdict,
}

impl BoundaryVerdict {
    /// CSV with header `cutoff,log10_partial,ratio`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cutoff", "log10_partial", "ratio"])?;
        for ((c, p), r) in self.cutoffs.iter().zip(&self.log10_partials).zip(&self.log10_ratios) {
            w.write_record(&[
                crate::hjb::value::fmt(*c),
                crate::hjb::value::fmt(*p),
                crate::hjb::value::fmt(10f64.powf(*r)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `10, 10², …, 10⁶` at infinity and `10⁻¹, …, 10⁻⁶` at the origin.
pub fn default_levels(side: Side) -> Vec<f64> {
    match side {
        Side::Infinity => (1..=6).map(|k| 10f64.powi(k)).collect(),
        Side::Origin => (1..=6).map(|k| 10f64.powi(-k)).collect(),
    }
}

pub fn delta_condition(params: &ModelParams, policy: &dyn ConsumptionPolicy, lo: f64) -> Result<DeltaCondition> {
    let hi = 10.0 * lo;
    let mut max_ratio: f64 = 0.0;
    for i in 0..DELTA_SAMPLES {
        let y = lo * 10f64.powf(i as f64 / (DELTA_SAMPLES - 1) as f64);
        let c = policy.rate(y);
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Policy {
                x: y,
                reason: format!("consumption rate {c} is not a finite nonnegative number"),
            });
        }
        max_ratio = max_ratio.max(c * y / (0.5 * y.powf(params.alpha)));
    }
    Ok(DeltaCondition {
        lo,
        hi,
        max_ratio,
        satisfied: max_ratio < 1.0,
    })
}

/// Integrates `p′` from the reference point outward over one panel
/// `[s0, s1]` (in log space), given `φ0 = ln p′(e^{s0})`. Returns
/// `(ln ∫ p′, ln p′(e^{s1}))`. Panels are bisected until the Gauss and
/// Kronrod estimates agree.
fn panel(f: &ScaleIntegrand, s0: f64, s1: f64, phi0: f64, depth: u32) -> Result<(f64, f64)> {
    let nodes = gk_nodes(s0.min(s1), s0.max(s1));
    let mut lk = f64::NEG_INFINITY;
    let mut lg = f64::NEG_INFINITY;
    for (t, wk, wg) in nodes {
        let phi = phi0 - f.drift_integral(s0, t)?;
        let e = phi + t;
        lk = log_sum_exp(lk, wk.ln() + e);
        if wg > 0.0 {
            lg = log_sum_exp(lg, wg.ln() + e);
        }
    }
    let disagreement = (lg - lk).exp_m1().abs();
    if disagreement > OUTER_RTOL && depth < MAX_DEPTH {
        let m = 0.5 * (s0 + s1);
        let (la, phim) = panel(f, s0, m, phi0, depth + 1)?;
        let (lb, phi1) = panel(f, m, s1, phim, depth + 1)?;
        return Ok((log_sum_exp(la, lb), phi1));
    }
    if !disagreement.is_finite() || disagreement > OUTER_RTOL {
        return Err(Error::Numerical(format!(
            "outer quadrature did not settle on [{:e}, {:e}]",
            s0.exp(),
            s1.exp()
        )));
    }
    let phi1 = phi0 - f.drift_integral(s0, s1)?;
    Ok((lk, phi1))
}

/// Partial integrals `∫ p′` between `ℓ` and each cutoff, as natural logs.
fn log_partials(f: &ScaleIntegrand, cutoffs: &[f64]) -> Result<Vec<f64>> {
    let mut s = f.log_ell;
    let mut phi = 0.0;
    let mut total = f64::NEG_INFINITY;
    let mut out = Vec::with_capacity(cutoffs.len());
    for &c in cutoffs {
        let target = c.ln();
        let dir = (target - s).signum();
        while (target - s) * dir > 0.0 {
            let coarse = if (target - s).abs() <= MAX_PANEL { target } else { s + dir * MAX_PANEL };
            if phi + s < total - NEGLIGIBLE {
                // skip panels whose integrand stays below e^{−NEGLIGIBLE} of the sum
                let phi1 = phi - f.drift_integral(s, coarse)?;
                if phi1 + coarse < total - NEGLIGIBLE && dir * (1.0 - f.h(coarse)?) <= 0.0 {
                    s = coarse;
                    phi = phi1;
                    continue;
                }
            }
            // keep |φ′|·width near 1 so that one panel rarely needs splitting
            let slope = f.h(s)?.abs() + 1.0;
            let width = (1.0 / slope).min(MAX_PANEL);
            let next = if (target - s).abs() <= width { target } else { s + dir * width };
            let (piece, phi1) = panel(f, s, next, phi, 0)?;
            total = log_sum_exp(total, piece);
            s = next;
            phi = phi1;
        }
        out.push(total);
    }
    Ok(out)
}

fn check_levels(side: Side, ell: f64, levels: &[f64]) -> Result<()> {
    if levels.len() < SUSTAINED + 1 {
        return Err(Error::domain(format!(
            "at least {} levels are needed, got {}",
            SUSTAINED + 1,
            levels.len()
        )));
    }
    let ok = match side {
        Side::Infinity => levels[0] > ell && levels.windows(2).all(|w| w[1] > w[0]),
        Side::Origin => levels[0] < ell && levels[0] > 0.0 && levels.windows(2).all(|w| w[1] < w[0]),
    };
    if !ok || levels.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!(
            "levels must move monotonically away from the reference point {ell} toward the {side:?} boundary"
        )));
    }
    Ok(())
}

/// Partial scale integrals toward one boundary and the verdict drawn from
/// their growth over the last three levels.
pub fn classify_boundary(
    params: &ModelParams,
    policy: &dyn ConsumptionPolicy,
    side: Side,
    levels: &[f64],
    ell: f64,
) -> Result<BoundaryVerdict> {
    let f = ScaleIntegrand::new(params, policy, ell)?;
    check_levels(side, ell, levels)?;
    let logs = log_partials(&f, levels)?;
    let log10_partials: Vec<f64> = logs.iter().map(|l| l / std::f64::consts::LN_10).collect();
    let mut log10_ratios = Vec::with_capacity(levels.len());
    log10_ratios.push(f64::INFINITY);
    for (k, w) in log10_partials.windows(2).enumerate() {
        // decades between consecutive levels
        let decades = (levels[k + 1] / levels[k]).log10().abs();
        log10_ratios.push((w[1] - w[0]) / decades.max(f64::MIN_POSITIVE));
    }
    let tail = &log10_ratios[log10_ratios.len() - SUSTAINED..];
    let mut verdict = if tail.iter().all(|r| *r >= DIVERGENCE_FACTOR.log10()) {
        Verdict::Diverges
    } else if tail.iter().all(|r| *r < CONVERGENCE_FACTOR.log10()) {
        Verdict::Converges
    } else {
        Verdict::Inconclusive
    };
    let delta = match side {
        Side::Origin => {
            let d = delta_condition(params, policy, levels[levels.len() - 1])?;
            if !d.satisfied {
                verdict = Verdict::InconclusiveByPrecondition;
            }
            Some(d)
        }
        Side::Infinity => None,
    };
    Ok(BoundaryVerdict {
        side,
        reference: ell,
        cutoffs: levels.to_vec(),
        log10_partials,
        log10_ratios,
        delta_condition: delta,
        verdict,
    })
}

/// Verdicts for both boundaries at every reference point in `refs`.
#[derive(Debug, Clone, Serialize)]
pub struct FellerReport {
    pub infinity: Vec<BoundaryVerdict>,
    pub origin: Vec<BoundaryVerdict>,
    /// Whether each side's verdict is the same for all reference points.
    pub reference_invariant: bool,
}

impl FellerReport {
    pub fn verdict(&self, side: Side) -> Verdict {
        match side {
            Side::Infinity => self.infinity[0].verdict,
            Side::Origin => self.origin[0].verdict,
        }
    }
}

pub fn feller_report(params: &ModelParams, policy: &dyn ConsumptionPolicy, refs: &[f64]) -> Result<FellerReport> {
    if refs.is_empty() {
        return Err(Error::domain("at least one reference point is needed"));
    }
    let mut infinity = Vec::new();
    let mut origin = Vec::new();
    for &ell in refs {
        infinity.push(classify_boundary(params, policy, Side::Infinity, &default_levels(Side::Infinity), ell)?);
        origin.push(classify_boundary(params, policy, Side::Origin, &default_levels(Side::Origin), ell)?);
    }
    let same = |v: &[BoundaryVerdict]| v.iter().all(|b| b.verdict == v[0].verdict);
    let reference_invariant = same(&infinity) && same(&origin);
    Ok(FellerReport {
        infinity,
        origin,
        reference_invariant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::policy::{ConstantPolicy, FnPolicy};

    fn bench() -> ModelParams {
        ModelParams::new(0.5, 0.1, 0.04, 0.2, 0.05).unwrap()
    }

    /// Antiderivative route: `ln p′(r) = −(2/σ²)[(r^{α−1} − ℓ^{α−1})/(α−1) − (μ+c) ln(r/ℓ)]`.
    fn analytic_log_density(p: &ModelParams, c: f64, ell: f64, r: f64) -> f64 {
        let a = p.alpha;
        -2.0 / (p.sigma * p.sigma)
            * ((r.powf(a - 1.0) - ell.powf(a - 1.0)) / (a - 1.0) - (p.mu + c) * (r / ell).ln())
    }

    #[test]
    fn gauss_kronrod_is_exact_on_polynomials() {
        let v = integrate(&mut |x| Ok(x.powi(20) - 3.0 * x), 0.0, 1.0, 1e-14).unwrap();
        assert!((v - (1.0 / 21.0 - 1.5)).abs() < 1e-14);
        let w = integrate(&mut |x: f64| Ok(x.exp()), 1.0, 0.0, 1e-12).unwrap();
        assert!((w + (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_consumption_density_matches_antiderivative() {
        let p = bench();
        let zero = ConstantPolicy(0.0);
        let f = ScaleIntegrand::new(&p, &zero, 1.0).unwrap();
        assert_eq!(f.log_density(1.0).unwrap(), 0.0);
        for r in [2.0, 1e-3, 1e3, 0.37] {
            let want = analytic_log_density(&p, 0.0, 1.0, r);
            assert!((f.log_density(r).unwrap() - want).abs() < 1e-8 * want.abs().max(1.0), "r = {r}");
        }
    }

    #[test]
    fn partial_integrals_match_direct_quadrature() {
        // composite Simpson on exp(φ(s) + s) with the analytic φ
        let p = bench();
        let c = 0.21;
        let pol = ConstantPolicy(c);
        let f = ScaleIntegrand::new(&p, &pol, 1.0).unwrap();
        let logs = log_partials(&f, &[10.0, 100.0]).unwrap();
        let simpson = |b: f64| {
            let n = 200_000;
            let h = b.ln() / n as f64;
            let g = |s: f64| (analytic_log_density(&p, c, 1.0, s.exp()) + s).exp();
            let mut acc = g(0.0) + g(b.ln());
            for i in 1..n {
                acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        for (l, b) in logs.iter().zip([10.0, 100.0]) {
            assert!((l - simpson(b).ln()).abs() < 1e-8, "{l} vs {}", simpson(b).ln());
        }
    }

    #[test]
    fn benchmark_policy_diverges_at_both_ends() {
        let p = bench();
        let pol = ConstantPolicy(0.21);
        let rep = feller_report(&p, &pol, &REFERENCES).unwrap();
        assert!(rep.reference_invariant);
        assert_eq!(rep.verdict(Side::Infinity), Verdict::Diverges);
        assert_eq!(rep.verdict(Side::Origin), Verdict::Diverges);
        for b in rep.infinity.iter().chain(&rep.origin) {
            assert!(b.log10_partials.windows(2).all(|w| w[1] >= w[0]));
            assert!(b.log10_partials.iter().all(|v| v.is_finite()));
        }
        // r^{2(μ+c)/σ²} growth once past the dip of p′ near y ≈ 10
        let tail = &rep.infinity[1].log10_ratios[6 - SUSTAINED..];
        assert!(tail.iter().all(|r| *r >= 5.0), "{tail:?}");
        assert!(rep.origin[1].delta_condition.unwrap().satisfied);
    }

    #[test]
    fn no_overflow_with_steep_scale() {
        // 2μ/σ² = 50
        let p = ModelParams::from_mu(0.5, 1.0, 0.2, 0.05).unwrap();
        let pol = ConstantPolicy(0.0);
        let b = classify_boundary(&p, &pol, Side::Infinity, &default_levels(Side::Infinity), 1.0).unwrap();
        assert!(b.log10_partials.iter().all(|v| v.is_finite()));
        assert_eq!(b.verdict, Verdict::Diverges);
    }

    #[test]
    fn delta_violation_is_flagged() {
        let p = bench();
        let pol = FnPolicy(|y: f64| 1.0 / y);
        let b = classify_boundary(&p, &pol, Side::Origin, &default_levels(Side::Origin), 1.0).unwrap();
        assert_eq!(b.verdict, Verdict::InconclusiveByPrecondition);
        assert!(!b.delta_condition.unwrap().satisfied);
    }

    #[test]
    fn converging_scale_is_recognized() {
        // strong inward push at the origin: c(y)·y ≈ y^{0.2} dominates y^α
        let p = bench();
        let pol = FnPolicy(|y: f64| y.powf(-0.8));
        let b = classify_boundary(&p, &pol, Side::Origin, &default_levels(Side::Origin), 1.0).unwrap();
        assert_eq!(b.verdict, Verdict::InconclusiveByPrecondition);
        assert!(b.log10_ratios[3..].iter().all(|r| *r < CONVERGENCE_FACTOR.log10()));
    }

    #[test]
    fn rejects_bad_levels_and_policies() {
        let p = bench();
        let pol = ConstantPolicy(0.21);
        assert!(classify_boundary(&p, &pol, Side::Infinity, &[10.0, 100.0], 1.0).is_err());
        assert!(classify_boundary(&p, &pol, Side::Origin, &default_levels(Side::Infinity), 1.0).is_err());
        let bad = FnPolicy(|_y: f64| f64::NAN);
        assert!(matches!(
            classify_boundary(&p, &bad, Side::Infinity, &default_levels(Side::Infinity), 1.0),
            Err(Error::Policy { .. })
        ));
    }

    #[test]
    fn csv_has_one_row_per_cutoff() {
        let p = bench();
        let b = classify_boundary(&p, &ConstantPolicy(0.21), Side::Infinity, &default_levels(Side::Infinity), 1.0)
            .unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("cutoff,log10_partial,ratio\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
