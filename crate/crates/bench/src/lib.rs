//! Models and inputs shared by the benchmarks.

use glevy_core::cylinder::{CylinderFunctional, LatticeConfig};
use glevy_core::pide::SpaceGrid;
use glevy_core::{Payoff, UncertaintySet};

/// No jumps, volatilities {0.5, 1}.
pub fn quadratic_set() -> UncertaintySet {
    UncertaintySet::scalar(&[], &[0.5, 1.0], 0.1, 1.0).expect("valid model")
}

/// Two measures on two atoms and two volatilities.
pub fn mixed_set() -> UncertaintySet {
    UncertaintySet::scalar(
        &[&[(1.0, 1.0), (-0.5, 0.5)], &[(1.0, 0.4), (-0.5, 1.5)]],
        &[0.4, 1.0],
        0.16,
        4.0,
    )
    .expect("valid model")
}

pub fn quadratic_payoff() -> Payoff {
    Payoff::clip(Payoff::square(Payoff::arg(0)), 0.0, 100.0)
}

pub fn space(nx: usize) -> SpaceGrid {
    SpaceGrid::new(-6.0, 6.0, nx).expect("valid grid")
}

/// `clip(x1 + x2, -2, 2)` on the times {0.1, 0.3}.
pub fn two_time_functional() -> CylinderFunctional {
    let sum = Payoff::sum([(1.0, Payoff::arg(0)), (1.0, Payoff::arg(1))]);
    CylinderFunctional::new(vec![0.1, 0.3], Payoff::clip(sum, -2.0, 2.0), None)
        .expect("valid functional")
}

pub fn lattice(nx: usize, lattice_nx: usize) -> LatticeConfig {
    LatticeConfig::new(space(nx), lattice_nx)
}
