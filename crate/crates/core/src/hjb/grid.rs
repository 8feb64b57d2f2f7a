use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible number of nodes.
pub const MIN_NODES: usize = 16;

/// Grid uniform in `y = ln x` on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_nodes: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, n_nodes: usize) -> Result<Self> {
        let g = Self {
            x_min,
            x_max,
            n_nodes,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min > 0.0) || !self.x_min.is_finite() {
            return Err(Error::Grid(format!("x_min = {} must be positive", self.x_min)));
        }
        if !(self.x_max > self.x_min) || !self.x_max.is_finite() {
            return Err(Error::Grid(format!(
                "x_max = {} must exceed x_min = {}",
                self.x_max, self.x_min
            )));
        }
        if self.n_nodes < MIN_NODES {
            return Err(Error::Grid(format!(
                "n_nodes = {} is below the minimum {MIN_NODES}",
                self.n_nodes
            )));
        }
        Ok(())
    }

    /// Spacing in `ln x`.
    pub fn step(&self) -> f64 {
        (self.x_max / self.x_min).ln() / (self.n_nodes - 1) as f64
    }

    pub fn nodes_per_decade(&self) -> f64 {
        std::f64::consts::LN_10 / self.step()
    }

    pub fn nodes(&self) -> Vec<f64> {
        let y0 = self.x_min.ln();
        let h = self.step();
        let last = self.n_nodes - 1;
        (0..self.n_nodes)
            .map(|i| match i {
                0 => self.x_min,
                i if i == last => self.x_max,
                i => (y0 + i as f64 * h).exp(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_hit_endpoints_and_increase() {
        let g = GridSpec::new(1e-3, 1e3, 2048).unwrap();
        let x = g.nodes();
        assert_eq!(x.len(), 2048);
        assert_eq!(x[0], 1e-3);
        assert_eq!(x[2047], 1e3);
        assert!(x.windows(2).all(|w| w[1] > w[0]));
        let h = g.step();
        for w in x.windows(2).take(100) {
            assert!(((w[1] / w[0]).ln() - h).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(0.0, 1.0, 100).is_err());
        assert!(GridSpec::new(1.0, 1.0, 100).is_err());
        assert!(GridSpec::new(1e-3, 1e3, 15).is_err());
        assert!(GridSpec::new(1e-3, f64::INFINITY, 100).is_err());
    }
}
