//! Command-line front end: `ramsey <command> [--config file.json] [flags]`.
//!
//! Every command writes its artifacts into `output.dir`, each JSON artifact
//! carrying the resolved configuration and its hash. Exit codes: 0 success,
//! 1 numerical or verdict failure, 2 validation error. Errors are printed to
//! stderr as a JSON object.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::closedform::oracle;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::{compare_bounded, mc_cross_check, policy_clip_check, CrossCheckConfig, GapVerdict};
use crate::feller::{feller_report, Side, Verdict};
use crate::hjb::{
    extract_policy, left_asymptote, right_asymptote, solve, ConstantPolicy, ConsumptionPolicy, Policy,
    ValueFunction,
};
use crate::model::{ModelParams, PowerUtility};
use crate::sde::{discretization_allowance, export, mc_value, simulate_feedback, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "ramsey", version, about = "Stochastic Ramsey model: HJB solver, Monte Carlo and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the HJB equation; writes solve.csv and solve.json.
    Solve,
    /// Monte Carlo value of a policy plus a path export.
    Simulate,
    /// Closed-form constants; writes oracle.json.
    Oracle,
    /// Boundary classification of the policy; writes feller.json and CSVs.
    Feller,
    /// Bounded versus unbounded value functions and the clip check.
    Compare,
    /// Monte Carlo versus PDE at each `experiments.x0s`.
    Crosscheck,
}

/// Flags that override keys of the configuration file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores); outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Consumption bound, a number or "inf".
    #[arg(long, global = true, value_parser = crate::config::bound::parse)]
    pub bound: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Sets mu directly, bypassing lambda and n.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub n: Option<f64>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub x_min: Option<f64>,
    #[arg(long, global = true)]
    pub x_max: Option<f64>,
    #[arg(long, global = true)]
    pub nodes: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true, visible_alias = "T")]
    pub horizon: Option<f64>,
    #[arg(long, global = true)]
    pub x0: Option<f64>,
    /// `constant:<c>`, `file:<csv>` or `solved`.
    #[arg(long, global = true)]
    pub policy: Option<String>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let m = &mut c.model;
        if let Some(v) = self.alpha {
            m.alpha = v;
        }
        if let Some(v) = self.mu {
            m.mu = Some(v);
            m.lambda = None;
            m.n = None;
        }
        if self.lambda.is_some() || self.n.is_some() {
            m.mu = None;
            m.lambda = self.lambda.or(m.lambda);
            m.n = self.n.or(m.n);
        }
        if let Some(v) = self.sigma {
            m.sigma = v;
        }
        if let Some(v) = self.beta {
            m.beta = v;
        }
        if let Some(v) = self.gamma {
            m.gamma = v;
        }
        if let Some(v) = self.bound {
            c.bound = v;
        }
        if let Some(v) = self.x_min {
            c.grid.x_min = v;
        }
        if let Some(v) = self.x_max {
            c.grid.x_max = v;
        }
        if let Some(v) = self.nodes {
            c.grid.n_nodes = v;
        }
        if let Some(v) = self.seed {
            c.mc.seed = v;
        }
        if let Some(v) = self.paths {
            c.mc.paths = v;
        }
        if let Some(v) = self.dt {
            c.mc.dt = v;
        }
        if let Some(v) = self.horizon {
            c.mc.horizon = v;
        }
        if let Some(v) = self.x0 {
            c.mc.x0 = v;
        }
        if let Some(v) = &self.policy {
            c.mc.policy = v.clone();
        }
        if let Some(v) = &self.out {
            c.output.dir = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// False when a verdict or convergence check failed (exit code 1).
    pub ok: bool,
}

struct Ctx {
    cfg: RunConfig,
    params: ModelParams,
    utility: PowerUtility,
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Ctx {
    fn new(cfg: RunConfig) -> Result<Self> {
        let params = cfg.model.params()?;
        let utility = cfg.model.utility()?;
        let dir = cfg.output.dir.clone();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            cfg,
            params,
            utility,
            dir,
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    /// Writes `{command, config_hash, config, result}`.
    fn write_json<T: Serialize>(&mut self, command: &str, result: &T) -> Result<()> {
        let doc = json!({
            "command": command,
            "config_hash": self.cfg.hash(),
            "config": self.cfg,
            "result": result,
        });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        let path = self.path(&format!("{command}.json"));
        fs::write(path, text)?;
        Ok(())
    }

    fn solve(&self, bound: f64) -> Result<ValueFunction> {
        solve(&self.params, &self.utility, bound, &self.cfg.grid, &self.cfg.solver)
    }

    fn policy(&self) -> Result<Box<dyn ConsumptionPolicy>> {
        let spec = self.cfg.mc.policy.trim();
        let bound = self.cfg.bound;
        if let Some(rest) = spec.strip_prefix("constant:") {
            let c: f64 = rest
                .trim()
                .parse()
                .map_err(|_| Error::domain(format!("bad constant policy `{spec}`")))?;
            if !(c >= 0.0 && c <= bound) {
                return Err(Error::domain(format!("constant rate {c} must lie in [0, {bound}]")));
            }
            return Ok(Box::new(ConstantPolicy(c)));
        }
        if let Some(rest) = spec.strip_prefix("file:") {
            return Ok(Box::new(Policy::from_csv_path(Path::new(rest.trim()), bound)?));
        }
        if spec == "solved" {
            let vf = self.solve(bound)?;
            converged(&vf)?;
            return Ok(Box::new(extract_policy(&vf, &self.utility, self.params.alpha)?));
        }
        Err(Error::domain(format!(
            "policy must be constant:<c>, file:<csv> or solved, got `{spec}`"
        )))
    }
}

fn converged(vf: &ValueFunction) -> Result<()> {
    match &vf.report {
        Some(r) if !r.converged => Err(Error::Numerical(format!(
            "solver stopped after {} sweeps with residual {:e} > {:e}",
            r.iterations, r.final_residual, r.tol_res
        ))),
        _ => Ok(()),
    }
}

fn cmd_solve(ctx: &mut Ctx) -> Result<bool> {
    let vf = ctx.solve(ctx.cfg.bound)?;
    let policy = extract_policy(&vf, &ctx.utility, ctx.params.alpha)?;
    let csv = ctx.create("solve.csv")?;
    vf.write_csv(&policy, csv)?;
    let report = vf.report.clone().expect("solver attaches a report");
    let left = left_asymptote(&vf, &ctx.params, &ctx.utility).ok();
    let right = right_asymptote(&vf, &ctx.params, ctx.utility.gamma());
    let ok = report.converged;
    ctx.write_json(
        "solve",
        &json!({
            "report": report,
            "left_asymptote": left,
            "right_asymptote": right,
            "value_at_1": vf.value_at(1.0).ok(),
        }),
    )?;
    Ok(ok)
}

fn cmd_simulate(ctx: &mut Ctx) -> Result<bool> {
    let policy = ctx.policy()?;
    let x0 = ctx.cfg.mc.x0;
    let sim = ctx.cfg.mc.sim();
    let est = mc_value(&ctx.params, &ctx.utility, policy.as_ref(), x0, &sim)?;
    let allowance = if ctx.cfg.mc.allowance_paths >= 2 {
        let a = SimConfig {
            n_paths: ctx.cfg.mc.allowance_paths,
            ..sim
        };
        Some(discretization_allowance(&ctx.params, &ctx.utility, policy.as_ref(), x0, &a)?)
    } else {
        None
    };
    if ctx.cfg.mc.export_paths > 0 {
        let cfg = SimConfig {
            n_paths: ctx.cfg.mc.export_paths,
            ..sim
        };
        let batch = simulate_feedback(&ctx.params, policy.as_ref(), x0, &cfg)?;
        if ctx.cfg.output.paths_format == "binary" {
            export::write_binary(&batch, ctx.create("simulate_paths.bin")?)?;
        } else {
            export::write_csv(&batch, ctx.create("simulate_paths.csv")?)?;
        }
    }
    ctx.write_json(
        "simulate",
        &json!({ "x0": x0, "policy": ctx.cfg.mc.policy, "estimate": est, "allowance": allowance }),
    )?;
    Ok(true)
}

fn cmd_oracle(ctx: &mut Ctx) -> Result<bool> {
    let rep = oracle(&ctx.params, &ctx.utility)?;
    ctx.write_json("oracle", &rep)?;
    Ok(true)
}

fn cmd_feller(ctx: &mut Ctx) -> Result<bool> {
    let policy = ctx.policy()?;
    let rep = feller_report(&ctx.params, policy.as_ref(), &ctx.cfg.experiments.references)?;
    for b in rep.infinity.iter().chain(&rep.origin) {
        let side = match b.side {
            Side::Infinity => "infinity",
            Side::Origin => "origin",
        };
        let name = format!("feller_{side}_ell{}.csv", b.reference);
        b.write_csv(ctx.create(&name)?)?;
    }
    let ok = rep.reference_invariant
        && rep.verdict(Side::Infinity) == Verdict::Diverges
        && rep.verdict(Side::Origin) == Verdict::Diverges;
    ctx.write_json("feller", &rep)?;
    Ok(ok)
}

fn cmd_compare(ctx: &mut Ctx) -> Result<bool> {
    let e = ctx.cfg.experiments.clone();
    let table = compare_bounded(&ctx.params, &ctx.utility, &e.bounds, &e.xs, &ctx.cfg.grid, &ctx.cfg.solver)?;
    let mut w = csv::Writer::from_writer(ctx.create("compare.csv")?);
    w.write_record(["bound", "x", "v_bound", "v", "gap", "tol_res", "verdict"])?;
    for row in &table.rows {
        for (j, x) in table.xs.iter().enumerate() {
            w.write_record(&[
                fmt(row.bound),
                fmt(*x),
                fmt(row.values[j]),
                fmt(table.unbounded[j]),
                fmt(row.gaps[j]),
                fmt(row.tol_res),
                serde_json::to_value(row.verdict)?.as_str().unwrap_or("").to_string(),
            ])?;
        }
    }
    w.flush()?;
    let clip = match e.clip_bound {
        Some(l) => Some(policy_clip_check(&ctx.params, &ctx.utility, l, &ctx.cfg.grid, &ctx.cfg.solver)?),
        None => None,
    };
    let ok = table.ordered && table.rows.iter().all(|r| r.verdict != GapVerdict::Failed);
    ctx.write_json("compare", &json!({ "table": table, "clip": clip }))?;
    Ok(ok)
}

fn cmd_crosscheck(ctx: &mut Ctx) -> Result<bool> {
    let vf = ctx.solve(ctx.cfg.bound)?;
    converged(&vf)?;
    let cfg = CrossCheckConfig {
        sim: ctx.cfg.mc.sim(),
        allowance_paths: ctx.cfg.mc.allowance_paths,
    };
    let rep = mc_cross_check(&ctx.params, &ctx.utility, &vf, &ctx.cfg.experiments.x0s, &cfg)?;
    let ok = rep.passed;
    ctx.write_json("crosscheck", &rep)?;
    Ok(ok)
}

fn fmt(v: f64) -> String {
    crate::hjb::value::fmt(v)
}

/// Runs a parsed command with a resolved configuration.
pub fn execute(command: &Command, cfg: RunConfig) -> Result<Outcome> {
    let mut ctx = Ctx::new(cfg)?;
    let ok = match command {
        Command::Solve => cmd_solve(&mut ctx)?,
        Command::Simulate => cmd_simulate(&mut ctx)?,
        Command::Oracle => cmd_oracle(&mut ctx)?,
        Command::Feller => cmd_feller(&mut ctx)?,
        Command::Compare => cmd_compare(&mut ctx)?,
        Command::Crosscheck => cmd_crosscheck(&mut ctx)?,
    };
    Ok(Outcome { files: ctx.files, ok })
}

fn report_error(e: &Error) -> i32 {
    let doc = json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{doc}");
    if e.is_validation() {
        2
    } else {
        1
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match cli.overrides.resolve() {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    let job = || execute(&cli.command, cfg);
    let result = match cli.overrides.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(job),
            Err(e) => Err(Error::domain(format!("cannot start {n} threads: {e}"))),
        },
        None => job(),
    };
    match result {
        Ok(out) => {
            for f in &out.files {
                println!("{}", f.display());
            }
            if out.ok {
                0
            } else {
                1
            }
        }
        Err(e) => report_error(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_over_defaults() {
        let cli = Cli::try_parse_from(["ramsey", "solve", "--mu", "0.2", "--bound", "inf", "--nodes", "64"]).unwrap();
        let c = cli.overrides.resolve().unwrap();
        assert_eq!(c.model.mu, Some(0.2));
        assert_eq!(c.model.lambda, None);
        assert!(c.bound.is_infinite());
        assert_eq!(c.grid.n_nodes, 64);
        let cli = Cli::try_parse_from(["ramsey", "oracle", "--bound", "0.3", "--lambda", "0.2"]).unwrap();
        let c = cli.overrides.resolve().unwrap();
        assert_eq!(c.bound, 0.3);
        assert_eq!((c.model.lambda, c.model.n, c.model.mu), (Some(0.2), Some(0.04), None));
    }

    #[test]
    fn invalid_model_is_a_validation_error() {
        let cli = Cli::try_parse_from(["ramsey", "solve", "--mu", "-0.1"]).unwrap();
        assert!(cli.overrides.resolve().unwrap_err().is_validation());
    }
}
