use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("the Levy measure family is empty")]
    EmptyFamily,
    #[error("measure {measure} has an atom at the origin")]
    AtomAtOrigin { measure: usize },
    #[error("measure {measure} has a non-positive or non-finite weight {weight}")]
    NonPositiveWeight { measure: usize, weight: f64 },
    #[error("measure {measure} carries two atoms at the same location")]
    DuplicateAtom { measure: usize },
    #[error(
        "measure {measure} has no atom at reference location {location:?}; density ratio is zero"
    )]
    DegenerateDensityRatio { measure: usize, location: Vec<f64> },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("the volatility family is empty")]
    EmptyVolatilityFamily,
    #[error("total mass {mass} of measure {measure} exceeds lambda_max {lambda_max}")]
    MassExceedsBound {
        measure: usize,
        mass: f64,
        lambda_max: f64,
    },
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("probe has no sample at point {0:?}")]
    MissingProbePoint(Vec<f64>),
    #[error("CFL condition violated: dt * (max sigma^2/dx^2 + max mass) = {ratio} > 1")]
    CflViolation { ratio: f64 },
    #[error("domain width {width} is smaller than the required {required}")]
    DomainTooSmall { width: f64, required: f64 },
    #[error("non-finite value at time layer {layer}, grid index {index}")]
    NonFiniteValue { layer: usize, index: usize },
    #[error("the grid solver supports dimension 1 only, got {0}")]
    UnsupportedDimension(usize),
    #[error("partition of length {len} exceeds the configured maximum {max}")]
    PartitionTooLong { len: usize, max: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("observation {value} on axis {axis} is outside the lattice range [{lo}, {hi}]")]
    OutOfLatticeRange {
        axis: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),
    #[error(
        "density ratio bounds must satisfy 0 < c_lower <= c_upper, got ({c_lower}, {c_upper})"
    )]
    NonPositiveDensityRatio { c_lower: f64, c_upper: f64 },
    #[error("embedding exponent must exceed 2, got {0}")]
    InvalidExponent(f64),
    #[error("invalid step random field: {0}")]
    InvalidField(String),
    #[error("path has no mesh point at time {0}")]
    PathMissingTime(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
