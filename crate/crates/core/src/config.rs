//! The JSON run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hjb::{GridSpec, SolverConfig};
use crate::model::ModelConfig;
use crate::sde::SimConfig;

/// Consumption bound; `"inf"` (or an absent key) means unbounded.
pub mod bound {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => parse(&t).map_err(serde::de::Error::custom),
        }
    }

    pub fn parse(text: &str) -> std::result::Result<f64, String> {
        match text.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
            t => t.parse::<f64>().map_err(|_| format!("bad bound `{text}`: expected a number or \"inf\"")),
        }
    }
}

fn infinite() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    /// Starting capital for `simulate`.
    pub x0: f64,
    /// `constant:<c>`, `file:<csv>` (columns `x` and `c`) or `solved`.
    pub policy: String,
    /// Paths written to the path export; 0 disables it.
    pub export_paths: usize,
    pub record_every: usize,
    /// Paths used to measure the discretization allowance.
    pub allowance_paths: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            horizon: 400.0,
            dt: 1e-2,
            paths: 200_000,
            seed: 1,
            x0: 1.0,
            policy: "solved".into(),
            export_paths: 16,
            record_every: 100,
            allowance_paths: 1000,
        }
    }
}

impl McSection {
    pub fn sim(&self) -> SimConfig {
        SimConfig::new(self.horizon, self.dt, self.paths, self.seed).record_every(self.record_every)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentsSection {
    /// Bounds for `compare`, increasing.
    pub bounds: Vec<f64>,
    /// Sample points for `compare`.
    pub xs: Vec<f64>,
    /// Starting points for `crosscheck`.
    pub x0s: Vec<f64>,
    /// Bound used by the clip check in `compare`; none skips it.
    pub clip_bound: Option<f64>,
    /// Reference points for `feller`.
    pub references: Vec<f64>,
}

impl Default for ExperimentsSection {
    fn default() -> Self {
        Self {
            bounds: vec![0.21, 0.5, 1.0],
            xs: vec![0.5, 1.0, 2.0],
            x0s: vec![0.25, 1.0, 4.0],
            clip_bound: Some(0.1),
            references: crate::feller::REFERENCES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Path export format: `csv` or `binary`.
    pub paths_format: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            paths_format: "csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "ModelConfig::benchmark")]
    pub model: ModelConfig,
    #[serde(default = "infinite", with = "bound")]
    pub bound: f64,
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub experiments: ExperimentsSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_grid() -> GridSpec {
    GridSpec {
        x_min: 1e-3,
        x_max: 1e3,
        n_nodes: 2048,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::benchmark(),
            bound: f64::INFINITY,
            grid: default_grid(),
            solver: SolverConfig::default(),
            mc: McSection::default(),
            experiments: ExperimentsSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    /// Checks every section that does not need a solve.
    pub fn validate(&self) -> Result<()> {
        self.model.params()?;
        self.model.utility()?;
        self.grid.validate()?;
        self.solver.validate()?;
        if !(self.bound > 0.0) {
            return Err(Error::domain(format!("bound must be positive or \"inf\", got {}", self.bound)));
        }
        if self.mc.paths == 0 || self.mc.record_every == 0 {
            return Err(Error::domain("mc.paths and mc.record_every must be positive"));
        }
        self.mc.sim().n_steps()?;
        if !(self.mc.x0 >= 0.0) {
            return Err(Error::domain("mc.x0 must be nonnegative"));
        }
        if !matches!(self.output.paths_format.as_str(), "csv" | "binary") {
            return Err(Error::domain(format!(
                "output.paths_format must be \"csv\" or \"binary\", got {:?}",
                self.output.paths_format
            )));
        }
        Ok(())
    }
}
