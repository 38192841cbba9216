//! Closed-form oracles on the two reference models.
//!
//! Quadratic: no jumps, volatilities {0.5, 1}, payoff clip(x^2, 0, 100), T = 0.5.
//! Then u(t, x) = x^2 + (T - t) on the region that matters, so u(0, 0) = 0.5.
//!
//! Jump: no diffusion, one measure with an atom of mass 2 at z = 1, payoff
//! clip(x, -50, 50), T = 0.25. The payoff is linear where the paths live, so
//! u(t, x) = x + 2 (T - t) and u(0, 0) = 0.5.

use glevy_core::cylinder::{expect, CylinderFunctional, LatticeConfig};
use glevy_core::decomposition::{analyze_controls, apriori_check, decompose, embedding_check};
use glevy_core::operator::ControlChoice;
use glevy_core::pide::{solve_backward, Grid, SpaceGrid, TerminalFunction};
use glevy_core::sim::{constant_policies, duality_gap, mc_expect, ControlPolicy, McParams, Mesh};
use glevy_core::{Payoff, UncertaintySet};

fn quadratic() -> (UncertaintySet, Payoff, SpaceGrid, f64) {
    let set = UncertaintySet::scalar(&[], &[0.5, 1.0], 0.1, 1.0).unwrap();
    let payoff = Payoff::clip(Payoff::square(Payoff::arg(0)), 0.0, 100.0);
    (set, payoff, SpaceGrid::new(-6.0, 6.0, 801).unwrap(), 0.5)
}

fn jump() -> (UncertaintySet, Payoff, SpaceGrid, f64) {
    let set = UncertaintySet::scalar(&[&[(1.0, 2.0)]], &[0.0], 0.0, 4.0).unwrap();
    let payoff = Payoff::clip(Payoff::arg(0), -50.0, 50.0);
    (set, payoff, SpaceGrid::new(-10.0, 10.0, 201).unwrap(), 0.25)
}

fn solve(model: (UncertaintySet, Payoff, SpaceGrid, f64)) -> f64 {
    let (set, payoff, space, horizon) = model;
    let grid = Grid::with_cfl(space, horizon, &set).unwrap();
    let phi = TerminalFunction::from_payoff(&payoff, None).unwrap();
    solve_backward(&set, &phi, &grid).unwrap().u00()
}

#[test]
fn quadratic_pde_value() {
    let u = solve(quadratic());
    assert!((u - 0.5).abs() <= 1e-2, "u(0,0) = {u}");
}

#[test]
fn quadratic_solution_profile() {
    let (set, payoff, space, horizon) = quadratic();
    let xi = CylinderFunctional::new(vec![horizon], payoff, None).unwrap();
    let lattice =
        glevy_core::cylinder::martingale_lattice(&set, &xi, &LatticeConfig::new(space, 41))
            .unwrap();
    let (grid, profile) = lattice.initial_profile();
    for (i, u) in profile.iter().enumerate() {
        let x = grid.x(i);
        if x.abs() <= 3.0 {
            assert!((u - (x * x + horizon)).abs() <= 1e-2, "x = {x}: {u}");
        }
    }
}

#[test]
fn jump_pde_value() {
    let u = solve(jump());
    assert!((u - 0.5).abs() <= 2e-2, "u(0,0) = {u}");
}

#[test]
fn single_element_family_is_linear_expectation() {
    // With one measure and one volatility the sublinear expectation is an
    // ordinary one; compare with the Poisson-Gaussian mixture computed directly.
    let set = UncertaintySet::scalar(&[&[(0.5, 1.5)]], &[0.4], 0.16, 4.0).unwrap();
    let horizon: f64 = 0.3;
    let space = SpaceGrid::new(-6.0, 6.0, 601).unwrap();
    let grid = Grid::with_cfl(space, horizon, &set).unwrap();
    let phi = TerminalFunction::new(
        |x: f64| (x.cos() * 0.5).tanh(),
        0.5,
        1.0,
        glevy_core::pide::Smoothness::Smooth,
    );
    let u = solve_backward(&set, &phi, &grid).unwrap().u00();

    let lambda_t = 1.5 * horizon;
    let sd = 0.4 * horizon.sqrt();
    let mut oracle = 0.0;
    let mut p_k = (-lambda_t).exp();
    for k in 0..30 {
        // Trapezoid rule in the Gaussian variable, k jumps of size 0.5.
        let m = 4000;
        let mut g = 0.0;
        for i in 0..=m {
            let y = -8.0 + 16.0 * i as f64 / m as f64;
            let w = if i == 0 || i == m { 0.5 } else { 1.0 };
            let density = (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt();
            g += w * density * (((0.5 * k as f64 + sd * y).cos()) * 0.5).tanh();
        }
        oracle += p_k * g * 16.0 / m as f64;
        p_k *= lambda_t / (k + 1) as f64;
    }
    assert!((u - oracle).abs() <= 2e-3, "{u} vs {oracle}");
}

#[test]
fn mc_examples() {
    let (set, payoff, _, horizon) = quadratic();
    let mesh = Mesh::uniform(horizon, 0.05).unwrap();
    let high = ControlPolicy::Constant(ControlChoice::new(None, 1));
    let est = mc_expect(&set, &high, |x| payoff.eval(&[x]), 40_000, &mesh, 17).unwrap();
    assert!((est.mean - 0.5).abs() <= 3.0 * est.se, "{est:?}");

    let (set, payoff, _, horizon) = jump();
    let mesh = Mesh::uniform(horizon, 0.05).unwrap();
    let only = ControlPolicy::Constant(ControlChoice::new(Some(0), 0));
    let est = mc_expect(&set, &only, |x| payoff.eval(&[x]), 40_000, &mesh, 17).unwrap();
    assert!((est.mean - 0.5).abs() <= 3.0 * est.se, "{est:?}");
}

#[test]
fn duality_on_quadratic_benchmark() {
    let (set, payoff, _, horizon) = quadratic();
    let grid = Grid::with_cfl(SpaceGrid::new(-6.0, 6.0, 241).unwrap(), horizon, &set).unwrap();
    let phi = TerminalFunction::from_payoff(&payoff, None).unwrap();
    let mc = McParams {
        n_paths: 20_000,
        mesh_dt: 0.01,
        seed: 5,
    };
    let report = duality_gap(&set, &phi, &grid, &constant_policies(&set), &mc).unwrap();
    assert!(report.max_violation() <= 0.0, "{report:?}");
    assert!(report.greedy_relative_gap <= 0.05, "{report:?}");
    let low = &report.policies[0].mc;
    assert!((low.mean - 0.125).abs() <= 3.0 * low.se, "{low:?}");
}

#[test]
fn decomposition_on_both_benchmarks() {
    for (model, dt) in [(quadratic(), 1e-3), (jump(), 1e-3)] {
        let (set, payoff, _, horizon) = model.clone();
        let space = if set.is_jump_free() {
            SpaceGrid::new(-6.0, 6.0, 241).unwrap()
        } else {
            model.2
        };
        let xi = CylinderFunctional::new(vec![horizon], payoff, None).unwrap();
        let triple = decompose(&set, &xi, &LatticeConfig::new(space, 41)).unwrap();
        let mc = McParams {
            n_paths: 2000,
            mesh_dt: dt,
            seed: 3,
        };
        let controls = analyze_controls(&triple, &mc).unwrap();
        for c in &controls {
            assert!(c.residual_rms <= 5e-2, "{c:?}");
            assert!(c.kc_min_increment >= -1e-10, "{c:?}");
        }
        let report = apriori_check(&triple, &controls).unwrap();
        assert!(report.passed && report.margin > 0.0, "{report:?}");
        if !set.is_jump_free() {
            let f = triple.fields(1, &[], 0.1, 0.0);
            assert!((f.kd[0] - 1.0).abs() < 1e-9, "{f:?}");
            assert!(f.h.abs() < 1.0 + 1e-9);
            assert!(report.kd_norm2.mean > report.h_norm2.mean);
        }
    }
}

#[test]
fn embedding_on_quadratic_benchmark() {
    let (set, payoff, _, horizon) = quadratic();
    let xi = CylinderFunctional::new(vec![horizon], payoff, None).unwrap();
    let cfg = LatticeConfig::new(SpaceGrid::new(-6.0, 6.0, 241).unwrap(), 41);
    let mc = McParams {
        n_paths: 4000,
        mesh_dt: 0.005,
        seed: 13,
    };
    let report = embedding_check(&set, &xi, 4.0, &cfg, &mc).unwrap();
    assert_eq!(report.cp2, 3.0);
    assert!(report.passed, "{report:?}");
}

#[test]
fn cylinder_expectation_of_constant_and_quadratic() {
    let (set, _, _, _) = quadratic();
    let cfg = LatticeConfig::new(SpaceGrid::new(-6.0, 6.0, 241).unwrap(), 81);
    let c = CylinderFunctional::new(vec![0.1, 0.3], Payoff::constant(-0.75), None).unwrap();
    assert_eq!(expect(&set, &c, &cfg).unwrap(), -0.75);
    // (X_{t1} + (X_{t2} - X_{t1}))^2 = X_{t2}^2, worth t2 under the top volatility.
    let sum = Payoff::sum([(1.0, Payoff::arg(0)), (1.0, Payoff::arg(1))]);
    let xi = CylinderFunctional::new(
        vec![0.1, 0.3],
        Payoff::clip(Payoff::square(sum), 0.0, 30.0),
        None,
    )
    .unwrap();
    let lattice = glevy_core::cylinder::martingale_lattice(&set, &xi, &cfg).unwrap();
    let v = lattice.value();
    assert!((v - 0.3).abs() <= 2e-2, "{v}");
    let tol =
        glevy_core::cylinder::scheme_tol(&set, &xi, &cfg).unwrap() + lattice.interpolation_tol();
    assert!((v - 0.3).abs() <= tol, "{v} outside {tol}");
    assert_eq!(expect(&set, &xi, &cfg).unwrap(), v);
}
