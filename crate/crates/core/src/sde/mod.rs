//! Monte Carlo simulation of capital per capita through the transform
//! `Z = X^{1−α}`.
//!
//! With consumption frozen over a step, `Z` solves a linear SDE and
//!
//! ```text
//! Z_{k+1} = (Z_k + (1−α)∫_0^{dt} G_s ds) / G_dt,
//! G_s = exp((1−α)(μ + c + σ²/2)s + (1−α)σW_s).
//! ```
//!
//! `G_dt` is exact; the integral uses the trapezoid rule. `Z` stays
//! positive, so `X = Z^{1/(1−α)}` does too.

pub mod export;
mod kernel;
pub mod rng;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hjb::policy::ConsumptionPolicy;
use crate::model::{phi0_bound, ModelParams, Utility};
use rng::PathRng;

pub const SCHEME: &str = "exact-G-transform/trapezoid/frozen-left";

/// Time discretization and sampling settings shared by all simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Record every `record_every`-th step (the last step is always kept).
    pub record_every: usize,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            horizon,
            dt,
            n_paths,
            seed,
            record_every: 1,
        }
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    /// Number of steps; the horizon must be a whole number of steps.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Grid(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Grid(format!("T = {} must be positive", self.horizon)));
        }
        if self.n_paths == 0 {
            return Err(Error::Grid("n_paths must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Grid("record_every must be positive".into()));
        }
        let n = (self.horizon / self.dt).round();
        if n < 1.0 || (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::Grid(format!(
                "T = {} is not a whole multiple of dt = {}",
                self.horizon, self.dt
            )));
        }
        Ok(n as usize)
    }

    fn recorded_steps(&self, n: usize) -> Vec<usize> {
        let mut ks: Vec<usize> = (0..=n).step_by(self.record_every).collect();
        if *ks.last().unwrap() != n {
            ks.push(n);
        }
        ks
    }
}

/// Consumption rate as a function of time.
pub enum ConsumptionSchedule {
    Constant(f64),
    /// `rates[i]` applies on `[breaks[i], breaks[i+1])`; `breaks[0] = 0`.
    Steps {
        breaks: Vec<f64>,
        rates: Vec<f64>,
    },
    Function(Box<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ConsumptionSchedule {
    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Steps { breaks, rates } => {
                let k = breaks.partition_point(|&b| b <= t).max(1) - 1;
                rates[k]
            }
            Self::Function(f) => f(t),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Self::Steps { breaks, rates } = self {
            if breaks.is_empty() || breaks.len() != rates.len() || breaks[0] != 0.0 {
                return Err(Error::domain(
                    "step schedule needs matching breaks/rates with breaks[0] = 0",
                ));
            }
            if breaks.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::domain("step schedule breaks must increase"));
            }
        }
        Ok(())
    }
}

/// Which solution a batch represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Started from `x0 > 0`.
    Regular,
    /// The entrance solution leaving 0 immediately.
    Nontrivial,
    /// The solution that stays at 0.
    Trivial,
}

/// Recorded trajectories, row-major by path.
#[derive(Debug, Clone, Serialize)]
pub struct PathBatch {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub consumptions: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    pub x0: f64,
    pub scheme: String,
    pub branch: Branch,
}

impl PathBatch {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn states_of(&self, path: usize) -> &[f64] {
        let m = self.n_times();
        &self.states[path * m..(path + 1) * m]
    }

    pub fn consumptions_of(&self, path: usize) -> &[f64] {
        let m = self.n_times();
        &self.consumptions[path * m..(path + 1) * m]
    }

    /// `X` at time index `k` across all paths.
    pub fn column(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        let m = self.n_times();
        (0..self.n_paths).map(move |p| self.states[p * m + k])
    }

    /// Smallest state over all paths at time indices `from..`.
    pub fn min_state_from(&self, from: usize) -> f64 {
        let m = self.n_times();
        (0..self.n_paths)
            .flat_map(|p| self.states[p * m + from..(p + 1) * m].iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-step constants of the transform for a fixed step size.
#[derive(Debug, Clone, Copy)]
struct Stepper {
    eta: f64,
    /// `(1−α)(μ + σ²/2) dt`.
    base: f64,
    /// `(1−α) dt`.
    per_c: f64,
    /// `(1−α) σ √dt`.
    vol: f64,
    /// `(1−α) dt / 2`.
    inc: f64,
}

impl Stepper {
    fn new(params: &ModelParams, dt: f64) -> Self {
        let k = 1.0 - params.alpha;
        Self {
            eta: params.eta(),
            base: k * (params.mu + 0.5 * params.sigma * params.sigma) * dt,
            per_c: k * dt,
            vol: k * params.sigma * dt.sqrt(),
            inc: 0.5 * k * dt,
        }
    }

    /// `1/G_dt` for rate `c` and standard normal `xi`.
    #[inline(always)]
    fn ginv(&self, c: f64, xi: f64) -> f64 {
        (-(self.base + self.per_c * c) - self.vol * xi).exp()
    }

    #[inline(always)]
    fn advance(&self, z: f64, ginv: f64) -> f64 {
        z * ginv + self.inc * (ginv + 1.0)
    }

    #[inline(always)]
    fn state(&self, z: f64) -> f64 {
        if self.eta == 2.0 {
            z * z
        } else {
            z.powf(self.eta)
        }
    }
}

fn check_rate(c: f64, x: f64) -> Result<f64> {
    if c >= 0.0 && c.is_finite() {
        Ok(c)
    } else {
        Err(Error::Policy {
            x,
            reason: format!("consumption sample {c} is not a finite nonnegative number"),
        })
    }
}

enum Control<'a> {
    Schedule(&'a ConsumptionSchedule),
    Feedback(&'a dyn ConsumptionPolicy),
}

impl Control<'_> {
    #[inline]
    fn rate(&self, t: f64, x: f64) -> f64 {
        match self {
            Control::Schedule(s) => s.rate_at(t),
            Control::Feedback(p) => p.rate(x),
        }
    }
}

fn simulate(
    params: &ModelParams,
    control: Control<'_>,
    x0: f64,
    cfg: &SimConfig,
    branch: Branch,
) -> Result<PathBatch> {
    let n = cfg.n_steps()?;
    let ks = cfg.recorded_steps(n);
    let m = ks.len();
    let st = Stepper::new(params, cfg.dt);
    let z0 = x0.powf(1.0 - params.alpha);

    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut rng = PathRng::new(cfg.seed, path as u64);
            let mut xs = Vec::with_capacity(m);
            let mut cs = Vec::with_capacity(m);
            let (mut z, mut x) = (z0, x0);
            let mut next = 0;
            for k in 0..=n {
                let c = check_rate(control.rate(k as f64 * cfg.dt, x), x)?;
                if ks[next] == k {
                    xs.push(x);
                    cs.push(c);
                    next += 1;
                }
                if k < n {
                    z = st.advance(z, st.ginv(c, rng.normal()));
                    x = st.state(z);
                }
            }
            Ok((xs, cs))
        })
        .collect::<Result<_>>()?;

    let mut states = Vec::with_capacity(cfg.n_paths * m);
    let mut consumptions = Vec::with_capacity(cfg.n_paths * m);
    for (xs, cs) in rows {
        states.extend(xs);
        consumptions.extend(cs);
    }
    Ok(PathBatch {
        times: ks.iter().map(|&k| k as f64 * cfg.dt).collect(),
        states,
        consumptions,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        dt: cfg.dt,
        x0,
        scheme: SCHEME.to_string(),
        branch,
    })
}

fn check_x0(x0: f64) -> Result<()> {
    if x0 > 0.0 && x0.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("x0 = {x0} must be positive")))
    }
}

/// Paths under a time-dependent consumption rate, sampled at step starts.
pub fn simulate_given_consumption(
    params: &ModelParams,
    consumption: &ConsumptionSchedule,
    x0: f64,
    cfg: &SimConfig,
) -> Result<PathBatch> {
    check_x0(x0)?;
    consumption.validate()?;
    simulate(params, Control::Schedule(consumption), x0, cfg, Branch::Regular)
}

/// Paths under a feedback rule frozen at each step's left endpoint.
pub fn simulate_feedback(
    params: &ModelParams,
    policy: &dyn ConsumptionPolicy,
    x0: f64,
    cfg: &SimConfig,
) -> Result<PathBatch> {
    check_x0(x0)?;
    simulate(params, Control::Feedback(policy), x0, cfg, Branch::Regular)
}

/// The nontrivial solution started at 0 with constant consumption `c`.
pub fn simulate_entrance(params: &ModelParams, c: f64, cfg: &SimConfig) -> Result<PathBatch> {
    check_rate(c, 0.0)?;
    let schedule = ConsumptionSchedule::Constant(c);
    simulate(params, Control::Schedule(&schedule), 0.0, cfg, Branch::Nontrivial)
}

/// The solution `X ≡ 0` on the same time grid.
pub fn trivial_entrance(c: f64, cfg: &SimConfig) -> Result<PathBatch> {
    check_rate(c, 0.0)?;
    let n = cfg.n_steps()?;
    let ks = cfg.recorded_steps(n);
    let m = ks.len();
    Ok(PathBatch {
        times: ks.iter().map(|&k| k as f64 * cfg.dt).collect(),
        states: vec![0.0; m * cfg.n_paths],
        consumptions: vec![c; m * cfg.n_paths],
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        dt: cfg.dt,
        x0: 0.0,
        scheme: "trivial".to_string(),
        branch: Branch::Trivial,
    })
}

/// Discounted-utility estimate for one policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Bound on the discounted utility beyond the horizon.
    pub tail_bound: f64,
}

/// `e^{−βT}(2^{η−1}(x + T^η) + φ₀)`.
pub fn tail_bound<U: Utility + ?Sized>(
    params: &ModelParams,
    utility: &U,
    x0: f64,
    horizon: f64,
) -> Result<f64> {
    let eta = params.eta();
    let phi0 = phi0_bound(params, utility)?;
    Ok((-params.beta * horizon).exp() * (2f64.powf(eta - 1.0) * (x0 + horizon.powf(eta)) + phi0))
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Trapezoid weights `dt·e^{−βt_k}`, halved at both ends.
fn discount_weights(beta: f64, dt: f64, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..=n).map(|k| dt * (-beta * k as f64 * dt).exp()).collect();
    w[0] *= 0.5;
    w[n] *= 0.5;
    w
}

/// Utility of consumption `c·x`, written in terms of `z = x^{1−α}` where
/// that avoids a power.
#[derive(Clone, Copy)]
enum Payoff {
    /// Power utility with `γ = α`: `U(cx) = c^{1−γ} z/(1−γ)`.
    Linear { gamma: f64 },
    Power { gamma: f64 },
    General,
}

impl Payoff {
    fn new<U: Utility + ?Sized>(params: &ModelParams, utility: &U) -> Self {
        match utility.power_gamma() {
            Some(g) if g == params.alpha => Payoff::Linear { gamma: g },
            Some(g) => Payoff::Power { gamma: g },
            None => Payoff::General,
        }
    }

    #[inline]
    fn eval<U: Utility + ?Sized>(&self, utility: &U, c: f64, z: f64, x: f64) -> f64 {
        if c == 0.0 {
            return 0.0;
        }
        match *self {
            Payoff::Linear { gamma } => pow_one_minus(c, gamma) * z / (1.0 - gamma),
            Payoff::Power { gamma } => pow_one_minus(c * x, gamma) / (1.0 - gamma),
            Payoff::General => utility.value(c * x),
        }
    }
}

#[inline(always)]
fn pow_one_minus(y: f64, gamma: f64) -> f64 {
    if gamma == 0.5 {
        y.sqrt()
    } else {
        y.powf(1.0 - gamma)
    }
}

/// For a constant rate `c` and `γ = α`: `(c, c^{1−γ}/(1−γ))`, so that the
/// running payoff is the coefficient times `Z`.
fn linear_coefficient(
    payoff: Payoff,
    policy: &dyn ConsumptionPolicy,
    x0: f64,
) -> Result<Option<(f64, f64)>> {
    match (policy.constant_rate(), payoff) {
        (Some(c), Payoff::Linear { gamma }) => {
            let c = check_rate(c, x0)?;
            let coef = if c == 0.0 { 0.0 } else { c.powf(1.0 - gamma) / (1.0 - gamma) };
            Ok(Some((c, coef)))
        }
        _ => Ok(None),
    }
}

/// `∫_0^T e^{−βt} U(c_t X_t) dt` along one path.
#[allow(clippy::too_many_arguments)]
fn path_value<U: Utility + ?Sized>(
    utility: &U,
    payoff: Payoff,
    policy: &dyn ConsumptionPolicy,
    st: &Stepper,
    weights: &[f64],
    x0: f64,
    z0: f64,
    rng: &mut PathRng,
) -> Result<f64> {
    let n = weights.len() - 1;
    let (mut z, mut x) = (z0, x0);
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        let c = check_rate(policy.rate(x), x)?;
        acc += w * payoff.eval(utility, c, z, x);
        if k < n {
            z = st.advance(z, st.ginv(c, rng.normal()));
            x = st.state(z);
        }
    }
    Ok(acc)
}

/// Estimates `E ∫_0^T e^{−βt} U(c(X_t) X_t) dt` from `x0`.
pub fn mc_value<U: Utility + ?Sized>(
    params: &ModelParams,
    utility: &U,
    policy: &dyn ConsumptionPolicy,
    x0: f64,
    cfg: &SimConfig,
) -> Result<MCEstimate> {
    check_x0(x0)?;
    let n = cfg.n_steps()?;
    let st = Stepper::new(params, cfg.dt);
    let weights = discount_weights(params.beta, cfg.dt, n);
    let payoff = Payoff::new(params, utility);
    let z0 = x0.powf(1.0 - params.alpha);
    let values: Vec<f64> = match linear_coefficient(payoff, policy, x0)? {
        Some((_, 0.0)) => vec![0.0; cfg.n_paths],
        Some((c, coef)) => {
            let k = kernel::Linear {
                drift: -(st.base + st.per_c * c),
                vol: st.vol,
                inc: st.inc,
                z0,
            };
            let batches = cfg.n_paths.div_ceil(kernel::LANES);
            (0..batches)
                .into_par_iter()
                .flat_map_iter(|b| {
                    let first = b * kernel::LANES;
                    let sums = kernel::linear_batch(&k, &weights, cfg.seed, first);
                    let keep = kernel::LANES.min(cfg.n_paths - first);
                    sums.into_iter().take(keep).map(move |s| coef * s)
                })
                .collect()
        }
        None => (0..cfg.n_paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = PathRng::new(cfg.seed, p as u64);
                path_value(utility, payoff, policy, &st, &weights, x0, z0, &mut rng)
            })
            .collect::<Result<_>>()?,
    };
    let (mean, stderr) = mean_stderr(&values);
    Ok(MCEstimate {
        mean,
        stderr,
        n_paths: cfg.n_paths,
        horizon: cfg.horizon,
        dt: cfg.dt,
        tail_bound: tail_bound(params, utility, x0, cfg.horizon)?,
    })
}

/// Estimates at step sizes `dt, 2dt, 4dt, …` driven by the same Brownian
/// paths.
#[derive(Debug, Clone, Serialize)]
pub struct StepHalving {
    pub dts: Vec<f64>,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// `mean(J_{2dt} − J_{dt})` between consecutive levels, finest first.
    pub diffs: Vec<f64>,
    pub diff_stderrs: Vec<f64>,
    pub n_paths: usize,
}

/// Coupled estimates on `levels` nested step sizes, the finest being
/// `cfg.dt`. Coarse increments are sums of fine ones.
pub fn step_halving<U: Utility + ?Sized>(
    params: &ModelParams,
    utility: &U,
    policy: &dyn ConsumptionPolicy,
    x0: f64,
    cfg: &SimConfig,
    levels: usize,
) -> Result<StepHalving> {
    check_x0(x0)?;
    if !(1..=16).contains(&levels) {
        return Err(Error::domain("levels must lie in 1..=16"));
    }
    let n_fine = cfg.n_steps()?;
    let block = 1usize << (levels - 1);
    if n_fine % block != 0 {
        return Err(Error::Grid(format!(
            "T/dt = {n_fine} is not divisible by 2^(levels−1) = {block}"
        )));
    }
    let payoff = Payoff::new(params, utility);
    let linear = linear_coefficient(payoff, policy, x0)?;
    let z0 = x0.powf(1.0 - params.alpha);
    let specs: Vec<(Stepper, Vec<f64>, usize)> = (0..levels)
        .map(|l| {
            let m = 1usize << l;
            let dt = cfg.dt * m as f64;
            let n = n_fine / m;
            (Stepper::new(params, dt), discount_weights(params.beta, dt, n), m)
        })
        .collect();

    let per_path: Vec<Vec<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let mut rng = PathRng::new(cfg.seed, p as u64);
            let mut z = vec![z0; levels];
            let mut x = vec![x0; levels];
            let mut acc = vec![0.0; levels];
            let mut c = vec![0.0; levels];
            let mut xi = vec![0.0; block];
            for l in 0..levels {
                c[l] = check_rate(policy.rate(x0), x0)?;
                acc[l] = specs[l].1[0] * payoff.eval(utility, c[l], z0, x0);
            }
            for b in 0..n_fine / block {
                for v in xi.iter_mut() {
                    *v = rng.normal();
                }
                for (l, (st, w, m)) in specs.iter().enumerate() {
                    let scale = 1.0 / (*m as f64).sqrt();
                    let sub = block / m;
                    if let Some((_, coef)) = linear {
                        for s in 0..sub {
                            let sum: f64 = xi[s * m..(s + 1) * m].iter().sum();
                            z[l] = st.advance(z[l], st.ginv(c[l], sum * scale));
                            acc[l] += w[b * sub + s + 1] * coef * z[l];
                        }
                        continue;
                    }
                    for s in 0..sub {
                        let sum: f64 = xi[s * m..(s + 1) * m].iter().sum();
                        z[l] = st.advance(z[l], st.ginv(c[l], sum * scale));
                        x[l] = st.state(z[l]);
                        c[l] = check_rate(policy.rate(x[l]), x[l])?;
                        let k = b * sub + s + 1;
                        acc[l] += w[k] * payoff.eval(utility, c[l], z[l], x[l]);
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut means = Vec::with_capacity(levels);
    let mut stderrs = Vec::with_capacity(levels);
    for l in 0..levels {
        let col: Vec<f64> = per_path.iter().map(|v| v[l]).collect();
        let (m, s) = mean_stderr(&col);
        means.push(m);
        stderrs.push(s);
    }
    let mut diffs = Vec::new();
    let mut diff_stderrs = Vec::new();
    for l in 0..levels.saturating_sub(1) {
        let col: Vec<f64> = per_path.iter().map(|v| v[l + 1] - v[l]).collect();
        let (m, s) = mean_stderr(&col);
        diffs.push(m);
        diff_stderrs.push(s);
    }
    Ok(StepHalving {
        dts: (0..levels).map(|l| cfg.dt * (1u64 << l) as f64).collect(),
        means,
        stderrs,
        diffs,
        diff_stderrs,
        n_paths: cfg.n_paths,
    })
}

/// Discretization allowance for estimates at step `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Allowance {
    pub dt: f64,
    /// `mean(J_dt − J_{dt/2})` on coupled paths.
    pub delta: f64,
    pub delta_stderr: f64,
    /// `2(|delta| + 3·delta_stderr)`: the first-order Richardson estimate of
    /// the bias at `dt`, padded by the noise in `delta`.
    pub allowance: f64,
    pub n_paths: usize,
}

pub fn discretization_allowance<U: Utility + ?Sized>(
    params: &ModelParams,
    utility: &U,
    policy: &dyn ConsumptionPolicy,
    x0: f64,
    cfg: &SimConfig,
) -> Result<Allowance> {
    let fine = SimConfig {
        dt: 0.5 * cfg.dt,
        ..*cfg
    };
    let study = step_halving(params, utility, policy, x0, &fine, 2)?;
    let (delta, delta_stderr) = (study.diffs[0], study.diff_stderrs[0]);
    Ok(Allowance {
        dt: cfg.dt,
        delta,
        delta_stderr,
        allowance: 2.0 * (delta.abs() + 3.0 * delta_stderr),
        n_paths: cfg.n_paths,
    })
}

/// `2^{η−1}(x + t^η)`.
pub fn first_moment_bound(params: &ModelParams, x: f64, t: f64) -> f64 {
    let eta = params.eta();
    2f64.powf(eta - 1.0) * (x + t.powf(eta))
}

/// `2^{2η−1} e^{σ²t}(x² + t^{2η−1}/σ²)`.
pub fn second_moment_bound(params: &ModelParams, x: f64, t: f64) -> f64 {
    let eta = params.eta();
    let s2 = params.sigma * params.sigma;
    2f64.powf(2.0 * eta - 1.0) * (s2 * t).exp() * (x * x + t.powf(2.0 * eta - 1.0) / s2)
}

/// `C_ε = 2^{η²}((η−1)/ε)^{η−1}`.
pub fn continuity_constant(params: &ModelParams, eps: f64) -> f64 {
    let eta = params.eta();
    2f64.powf(eta * eta) * ((eta - 1.0) / eps).powf(eta - 1.0)
}

/// `C_ε|x − y| + ε(x + y + t^η)`.
pub fn continuity_bound(params: &ModelParams, x: f64, y: f64, t: f64, eps: f64) -> f64 {
    continuity_constant(params, eps) * (x - y).abs() + eps * (x + y + t.powf(params.eta()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRow {
    pub t: f64,
    pub mean: f64,
    pub mean_stderr: f64,
    pub first_bound: f64,
    /// `bound − (mean + 3·stderr)`.
    pub first_margin: f64,
    pub mean_sq: f64,
    pub mean_sq_stderr: f64,
    pub second_bound: f64,
    pub second_margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    /// Every recorded state after the start is positive.
    pub all_positive: bool,
    pub passed: bool,
}

pub fn check_moment_bounds(batch: &PathBatch, params: &ModelParams) -> MomentReport {
    let x0 = batch.x0;
    let rows: Vec<MomentRow> = batch
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let xs: Vec<f64> = batch.column(k).collect();
            let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
            let (mean, se) = mean_stderr(&xs);
            let (mean_sq, se_sq) = mean_stderr(&sq);
            let first_bound = first_moment_bound(params, x0, t);
            let second_bound = second_moment_bound(params, x0, t);
            MomentRow {
                t,
                mean,
                mean_stderr: se,
                first_bound,
                first_margin: first_bound - (mean + 3.0 * se),
                mean_sq,
                mean_sq_stderr: se_sq,
                second_bound,
                second_margin: second_bound - (mean_sq + 3.0 * se_sq),
            }
        })
        .collect();
    let all_positive = batch.n_times() < 2 || batch.min_state_from(1) > 0.0;
    let margins_ok = rows.iter().all(|r| r.first_margin >= 0.0 && r.second_margin >= 0.0);
    MomentReport {
        passed: all_positive && margins_ok,
        rows,
        all_positive,
    }
}

/// Mean and standard error of `|X_T^x − X_T^y|` under common noise.
pub fn coupled_gap(
    params: &ModelParams,
    consumption: &ConsumptionSchedule,
    x: f64,
    y: f64,
    cfg: &SimConfig,
) -> Result<(f64, f64)> {
    let n = cfg.n_steps()?;
    let last = SimConfig {
        record_every: n,
        ..*cfg
    };
    let a = simulate_given_consumption(params, consumption, x, &last)?;
    let b = simulate_given_consumption(params, consumption, y, &last)?;
    let k = a.n_times() - 1;
    let gaps: Vec<f64> = a.column(k).zip(b.column(k)).map(|(p, q)| (p - q).abs()).collect();
    Ok(mean_stderr(&gaps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::policy::ConstantPolicy;
    use crate::model::PowerUtility;

    fn bench() -> ModelParams {
        ModelParams::new(0.5, 0.1, 0.04, 0.2, 0.05).unwrap()
    }

    #[test]
    fn grid_validation() {
        let p = bench();
        let c = ConsumptionSchedule::Constant(0.1);
        for cfg in [
            SimConfig::new(1.0, 0.0, 10, 1),
            SimConfig::new(0.0, 0.1, 10, 1),
            SimConfig::new(1.0, 0.1, 0, 1),
            SimConfig::new(1.0, 0.3, 10, 1),
        ] {
            assert!(matches!(
                simulate_given_consumption(&p, &c, 1.0, &cfg),
                Err(Error::Grid(_))
            ));
        }
        let neg = ConsumptionSchedule::Constant(-0.1);
        let cfg = SimConfig::new(1.0, 0.1, 2, 1);
        assert!(matches!(
            simulate_given_consumption(&p, &neg, 1.0, &cfg),
            Err(Error::Policy { .. })
        ));
    }

    #[test]
    fn initial_row_is_exact_and_paths_positive() {
        let p = bench();
        let cfg = SimConfig::new(2.0, 1e-2, 50, 9);
        let b = simulate_given_consumption(&p, &ConsumptionSchedule::Constant(1.0), 1.0, &cfg).unwrap();
        assert_eq!(b.n_times(), 201);
        for path in 0..b.n_paths {
            assert_eq!(b.states_of(path)[0], 1.0);
        }
        assert!(b.min_state_from(0) > 0.0);
    }

    #[test]
    fn zero_volatility_limit_matches_ode() {
        // With σ → 0 and c = 0, Z solves z' = (1−α) − (1−α)μ z exactly.
        let p = ModelParams::new(0.5, 1e-12 + 0.1, 0.0, 1e-6, 0.05).unwrap();
        let cfg = SimConfig::new(5.0, 1e-3, 1, 3).record_every(5000);
        let b = simulate_given_consumption(&p, &ConsumptionSchedule::Constant(0.0), 4.0, &cfg).unwrap();
        let mu = p.mu;
        let z = 1.0 / mu + (2.0 - 1.0 / mu) * (-0.5 * mu * 5.0f64).exp();
        assert!((b.states_of(0)[1] / (z * z) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn step_schedule_sampling() {
        let s = ConsumptionSchedule::Steps {
            breaks: vec![0.0, 1.0, 2.0],
            rates: vec![0.1, 0.2, 0.3],
        };
        assert_eq!(s.rate_at(0.0), 0.1);
        assert_eq!(s.rate_at(0.99), 0.1);
        assert_eq!(s.rate_at(1.0), 0.2);
        assert_eq!(s.rate_at(5.0), 0.3);
    }

    #[test]
    fn feedback_constant_equals_given_constant() {
        let p = bench();
        let cfg = SimConfig::new(1.0, 1e-2, 20, 5);
        let a = simulate_given_consumption(&p, &ConsumptionSchedule::Constant(0.21), 1.0, &cfg).unwrap();
        let b = simulate_feedback(&p, &ConstantPolicy(0.21), 1.0, &cfg).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn entrance_solution() {
        let p = bench();
        let cfg = SimConfig::new(1.0, 1e-2, 100, 11);
        let e0 = simulate_entrance(&p, 0.0, &cfg).unwrap();
        let e1 = simulate_entrance(&p, 1.0, &cfg).unwrap();
        assert_eq!(e0.branch, Branch::Nontrivial);
        for path in 0..cfg.n_paths {
            assert_eq!(e0.states_of(path)[0], 0.0);
        }
        assert!(e0.min_state_from(1) > 0.0);
        assert!(e0.states.iter().zip(&e1.states).all(|(a, b)| a >= b));
        let t = trivial_entrance(0.0, &cfg).unwrap();
        assert!(t.states.iter().all(|&x| x == 0.0));
        assert_eq!(t.branch, Branch::Trivial);
    }

    #[test]
    fn moment_bound_arithmetic() {
        let p = bench();
        assert!((first_moment_bound(&p, 1.0, 1.0) - 4.0).abs() < 1e-14);
        let want = 8.0 * 0.04f64.exp() * 26.0;
        assert!((second_moment_bound(&p, 1.0, 1.0) / want - 1.0).abs() < 1e-14);
        assert!((first_moment_bound(&p, 1.5, 0.0) - 3.0).abs() < 1e-14);
        assert!((second_moment_bound(&p, 1.5, 0.0) - 8.0 * 2.25).abs() < 1e-12);
        // η = 2, ε = 0.1: 2^4 · (1/0.1)^1
        assert!((continuity_constant(&p, 0.1) - 160.0).abs() < 1e-10);
    }

    #[test]
    fn zero_policy_has_zero_value() {
        let p = bench();
        let u = PowerUtility::new(0.5).unwrap();
        let cfg = SimConfig::new(10.0, 1e-2, 10, 1);
        let e = mc_value(&p, &u, &ConstantPolicy(0.0), 1.0, &cfg).unwrap();
        assert_eq!(e.mean, 0.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn fast_and_general_payoffs_agree() {
        let p = bench();
        let u = PowerUtility::new(0.5).unwrap();
        let cfg = SimConfig::new(5.0, 1e-2, 64, 2);
        let fast = mc_value(&p, &u, &ConstantPolicy(0.3), 1.0, &cfg).unwrap();
        let generic = crate::hjb::policy::FnPolicy(|_x: f64| 0.3);
        let slow = mc_value(&p, &u, &generic, 1.0, &cfg).unwrap();
        assert!((fast.mean / slow.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tail_bound_formula() {
        let p = bench();
        let u = PowerUtility::new(0.5).unwrap();
        let phi0 = phi0_bound(&p, &u).unwrap();
        let t = tail_bound(&p, &u, 1.0, 400.0).unwrap();
        let want = (-20.0f64).exp() * (2.0 * (1.0 + 160000.0) + phi0);
        assert!((t / want - 1.0).abs() < 1e-14);
    }

    #[test]
    fn coupled_levels_share_noise() {
        let p = bench();
        let u = PowerUtility::new(0.5).unwrap();
        let cfg = SimConfig::new(4.0, 1e-2, 200, 3);
        let s = step_halving(&p, &u, &ConstantPolicy(0.21), 1.0, &cfg, 3).unwrap();
        assert_eq!(s.dts.len(), 3);
        // coupling makes the level differences far less noisy than the levels
        for l in 0..2 {
            assert!(s.diff_stderrs[l] < 0.05 * s.stderrs[l]);
        }
        let bad = SimConfig::new(4.0, 0.04, 10, 3);
        assert!(step_halving(&p, &u, &ConstantPolicy(0.21), 1.0, &bad, 4).is_err());
    }
}
