//! The JSON run configuration.

use glevy_core::compensator::StepFieldSpec;
use glevy_core::cylinder::{CylinderFunctional, LatticeConfig};
use glevy_core::pide::{Grid, SpaceGrid};
use glevy_core::{LevyMeasure, McParams, Payoff, UncertaintySet, VolatilityMatrix};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub model: ModelSpec,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<PayoffSpec>,
    #[serde(default)]
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub checks: CheckSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Location {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Location {
    fn to_vec(&self) -> Vec<f64> {
        match self {
            Location::Scalar(z) => vec![*z],
            Location::Vector(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub z: Location,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VolSpec {
    Scalar(f64),
    /// Rows of `Q`.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "one")]
    pub dim: usize,
    /// Each measure is a list of atoms; an empty list means jump-free.
    #[serde(default)]
    pub measures: Vec<Vec<AtomSpec>>,
    pub vols: Vec<VolSpec>,
    pub sigma_lower_sq: f64,
    pub lambda_max: f64,
}

fn one() -> usize {
    1
}

impl ModelSpec {
    pub fn build(&self) -> Result<UncertaintySet, CliError> {
        let measures = self
            .measures
            .iter()
            .map(|atoms| {
                LevyMeasure::new(
                    atoms
                        .iter()
                        .map(|a| glevy_core::model::Atom::new(a.z.to_vec(), a.w))
                        .collect(),
                )
            })
            .collect();
        let vols = self
            .vols
            .iter()
            .map(|v| match v {
                VolSpec::Scalar(s) => Ok(VolatilityMatrix::scalar(*s)),
                VolSpec::Matrix(rows) => {
                    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                    VolatilityMatrix::from_row_major(rows.len(), &flat)
                }
            })
            .collect::<glevy_core::Result<Vec<_>>>()
            .map_err(CliError::input)?;
        UncertaintySet::new(
            self.dim,
            measures,
            vols,
            self.sigma_lower_sq,
            self.lambda_max,
        )
        .map_err(CliError::input)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    /// Time steps; chosen by the CFL condition when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nt: Option<usize>,
    /// `scheme_tol` is measured over `|x| <= report_radius`.
    #[serde(default)]
    pub report_radius: f64,
    /// Extra domain width required beyond twice the largest jump.
    #[serde(default)]
    pub margin: f64,
}

impl GridSpec {
    pub fn space(&self) -> Result<SpaceGrid, CliError> {
        SpaceGrid::new(self.x_min, self.x_max, self.nx).map_err(CliError::input)
    }

    pub fn grid(&self, set: &UncertaintySet, horizon: f64) -> Result<Grid, CliError> {
        let space = self.space()?;
        let build = || {
            let grid = match self.nt {
                Some(nt) => {
                    let g = Grid::new(space, horizon, nt)?;
                    g.check_cfl(set)?;
                    g
                }
                None => Grid::with_cfl(space, horizon, set)?,
            };
            grid.check_domain(set, self.margin)?;
            Ok(grid)
        };
        build().map_err(CliError::input)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSpec {
    pub times: Vec<f64>,
    pub expr: Payoff,
    /// Overrides the structural smoothness tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth: Option<bool>,
}

impl PayoffSpec {
    pub fn functional(&self) -> Result<CylinderFunctional, CliError> {
        CylinderFunctional::new(self.times.clone(), self.expr.clone(), self.smooth)
            .map_err(CliError::input)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    #[serde(default = "default_lattice_nx")]
    pub nx: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

fn default_lattice_nx() -> usize {
    41
}

fn default_n_max() -> usize {
    3
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            nx: default_lattice_nx(),
            n_max: default_n_max(),
        }
    }
}

/// Options of the check commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    /// Exponent of the embedding check.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Perturbation added to the payoff in the stability check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Payoff>,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "default_greedy_gap_tol")]
    pub greedy_gap_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_field: Option<StepFieldSpec>,
    /// Ellipticity trials of `validate`.
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_p() -> f64 {
    4.0
}

fn default_residual_tol() -> f64 {
    2e-2
}

fn default_greedy_gap_tol() -> f64 {
    0.05
}

fn default_trials() -> usize {
    200
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            p: default_p(),
            perturbation: None,
            residual_tol: default_residual_tol(),
            greedy_gap_tol: default_greedy_gap_tol(),
            step_field: None,
            trials: default_trials(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn payoff(&self) -> Result<&PayoffSpec, CliError> {
        self.payoff
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a payoff section".into()))
    }

    /// MC parameters; the seed is mandatory for every MC command.
    pub fn mc(&self) -> Result<McParams, CliError> {
        self.mc
            .ok_or_else(|| CliError::Config("this command needs an mc section with a seed".into()))
    }

    pub fn lattice(&self) -> Result<LatticeConfig, CliError> {
        let mut cfg = LatticeConfig::new(self.grid.space()?, self.lattice.nx);
        cfg.n_max = self.lattice.n_max;
        Ok(cfg)
    }
}
