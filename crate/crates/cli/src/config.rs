//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use usot::geometry::MapSpec;
use usot::grid::GridSpec;
use usot::solvers::SolveConfig;

use crate::failure::Failure;

pub const SCHEMA: &str = "usot/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must equal [`SCHEMA`].
    pub schema: String,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolveConfig,
    pub marginals: MarginalsConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub m: usize,
    /// Ignored in 1D.
    #[serde(default = "one")]
    pub n: usize,
    pub q: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalsConfig {
    pub mu: DensitySpec,
    pub nu: DensitySpec,
}

/// A density on the spatial centered grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    /// Sampled Gaussian rescaled to the given total mass.
    Gaussian {
        center: [f64; 2],
        sigma: f64,
        #[serde(default = "unit")]
        mass: f64,
    },
    /// Uniform density of the given total mass.
    Constant {
        #[serde(default = "unit")]
        mass: f64,
    },
    /// Point masses on single cells, given as `(cell, mass)`.
    Atoms { atoms: Vec<(usize, f64)> },
    /// Raw density values in flat cell order.
    Values { values: Vec<f64> },
    /// Density container file (see [`crate::formats`]).
    File { path: PathBuf },
}

fn unit() -> f64 {
    1.0
}

/// Secondary geometry: a map `T`, or a Markov kernel file for the Kantorovich form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub map: MapSpec,
    /// Replaces `map` by a distance-lift of a seeded two-Gaussian field.
    pub lift: Option<LiftConfig>,
    pub kernel: Option<PathBuf>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            map: MapSpec::Identity,
            lift: None,
            kernel: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftConfig {
    pub threshold: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub emit_frames: bool,
    /// Write HK dual potentials next to the value.
    pub write_duals: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("usot-out"),
            emit_frames: false,
            write_duals: false,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub emit_frames: bool,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Failure::config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.schema != SCHEMA {
            return Err(Failure::config(format!(
                "unsupported schema {:?}, expected {SCHEMA:?}",
                self.schema
            )));
        }
        self.grid_spec()?;
        self.solver.validate().map_err(Failure::from)?;
        let g = &self.geometry;
        if g.lift.is_some() && g.map != MapSpec::Identity {
            return Err(Failure::config("geometry.lift and geometry.map are exclusive"));
        }
        if g.kernel.is_some() && (g.lift.is_some() || g.map != MapSpec::Identity) {
            return Err(Failure::config("geometry.kernel excludes map and lift"));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec, Failure> {
        let g = self.grid;
        GridSpec::new(g.dim, g.m, if g.dim == 1 { 1 } else { g.n }, g.q).map_err(Failure::from)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.out {
            self.output.dir = dir.clone();
        }
        if o.emit_frames {
            self.output.emit_frames = true;
        }
        if let Some(seed) = o.seed {
            self.solver.seed = seed;
        }
        if self.grid.dim == 1 {
            self.grid.n = 1;
        }
    }

    /// Makes relative data paths relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in [&mut self.marginals.mu, &mut self.marginals.nu] {
            if let DensitySpec::File { path } = d {
                fix(path);
            }
        }
        if let Some(k) = &mut self.geometry.kernel {
            fix(k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{
        "schema": "usot/1",
        "grid": {"dim": 1, "m": 16, "q": 8},
        "marginals": {
            "mu": {"kind": "gaussian", "center": [0.3, 0.0], "sigma": 0.05},
            "nu": {"kind": "constant"}
        }
    }"#;

    #[test]
    fn defaults_are_filled_and_round_trip() {
        let cfg = ExperimentConfig::parse(MIN).unwrap();
        assert_eq!(cfg.solver, SolveConfig::default());
        assert_eq!(cfg.output, OutputConfig::default());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MIN.replace("\"q\": 8", "\"q\": 8, \"extra\": 1");
        assert_eq!(ExperimentConfig::parse(&bad).unwrap_err().code, 2);
        let bad = MIN.replace("\"sigma\": 0.05", "\"sigma\": 0.05, \"width\": 1");
        assert_eq!(ExperimentConfig::parse(&bad).unwrap_err().code, 2);
    }

    #[test]
    fn wrong_schema_and_bad_grid_are_config_errors() {
        let bad = MIN.replace("usot/1", "usot/0");
        assert_eq!(ExperimentConfig::parse(&bad).unwrap_err().code, 2);
        let bad = MIN.replace("\"m\": 16", "\"m\": 1");
        assert_eq!(ExperimentConfig::parse(&bad).unwrap_err().code, 2);
    }
}
