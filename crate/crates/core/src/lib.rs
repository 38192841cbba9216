//! Sublinear expectations driven by finite-activity G-Levy processes.
//!
//! The crate solves the nonlinear integro-PDE that defines the sublinear
//! expectation, iterates it over cylinder functionals, simulates the
//! controlled Ito-Levy integrals of the dual representation, and extracts
//! the martingale decomposition together with its a-priori estimates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compensator;
pub mod cylinder;
pub mod decomposition;
pub mod error;
pub mod model;
pub mod operator;
pub mod payoff;
pub mod pide;
pub mod sim;

pub use cylinder::{CylinderFunctional, LatticeConfig, MartingaleLattice};
pub use error::{Error, Result};
pub use model::{LevyMeasure, UncertaintySet, VolatilityMatrix};
pub use operator::ControlChoice;
pub use payoff::Payoff;
pub use pide::{Grid, GridSolution, SpaceGrid, TerminalFunction};
pub use sim::{ControlPolicy, McEstimate, McParams, Mesh, PathSample, Policy};
