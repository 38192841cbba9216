//! Monotone explicit scheme for the backward integro-PDE
//! `du/dt + G^c(D^2 u) + G^d[u](x) = 0`, `u(T, .) = phi`, in one dimension.
//!
//! Each step is a pointwise maximum over the finite families of linear maps
//! whose coefficients are nonnegative under the CFL bound, so the scheme is
//! monotone, constant preserving and positively homogeneous. Off-grid jump
//! targets are linearly interpolated; outside the domain the current layer is
//! extended by its boundary value, which is also the ghost value used for the
//! second difference at the edges.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::UncertaintySet;
use crate::operator::{gc_scalar, gd_from_diffs, ControlChoice};
use crate::payoff::Payoff;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, nx: usize) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() || nx < 3 {
            return Err(Error::InvalidParameter(format!(
                "space grid needs x_min < x_max and nx >= 3, got [{x_min}, {x_max}] x {nx}"
            )));
        }
        Ok(Self { x_min, x_max, nx })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    /// Same domain with roughly half the resolution.
    pub fn coarsened(&self) -> Self {
        let nx = if self.nx % 2 == 1 {
            (self.nx - 1) / 2 + 1
        } else {
            self.nx / 2
        };
        Self {
            nx: nx.max(3),
            ..*self
        }
    }

    /// Linear interpolation of `values` at `x`, constant beyond the ends.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let (i, frac) = self.locate(x);
        if frac == 0.0 {
            values[i]
        } else {
            values[i] + frac * (values[i + 1] - values[i])
        }
    }

    /// Cell index and fractional offset of `x`, clamped to the domain.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        if x <= self.x_min {
            return (0, 0.0);
        }
        if x >= self.x_max {
            return (self.nx - 1, 0.0);
        }
        let s = (x - self.x_min) / self.dx();
        let i = (s.floor() as usize).min(self.nx - 2);
        let mut frac = s - i as f64;
        if frac < 1e-12 {
            frac = 0.0;
        } else if frac > 1.0 - 1e-12 {
            return (i + 1, 0.0);
        }
        (i, frac)
    }

    pub fn nearest(&self, x: f64) -> usize {
        let s = ((x - self.x_min) / self.dx()).round();
        s.clamp(0.0, (self.nx - 1) as f64) as usize
    }
}

/// Space grid plus a uniform time discretization of `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub space: SpaceGrid,
    pub horizon: f64,
    pub nt: usize,
}

impl Grid {
    pub fn new(space: SpaceGrid, horizon: f64, nt: usize) -> Result<Self> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("horizon {horizon}")));
        }
        if horizon > 0.0 && nt == 0 {
            return Err(Error::InvalidParameter(
                "positive horizon needs nt >= 1".into(),
            ));
        }
        Ok(Self { space, horizon, nt })
    }

    /// Smallest number of steps satisfying the CFL bound for `set`.
    pub fn with_cfl(space: SpaceGrid, horizon: f64, set: &UncertaintySet) -> Result<Self> {
        let rate = Self::rate(&space, set);
        let mut nt = if horizon == 0.0 {
            0
        } else {
            ((horizon * rate).ceil() as usize).max(1)
        };
        let mut grid = Self::new(space, horizon, nt)?;
        while grid.cfl_ratio(set) > 1.0 {
            nt += 1;
            grid.nt = nt;
        }
        Ok(grid)
    }

    fn rate(space: &SpaceGrid, set: &UncertaintySet) -> f64 {
        let dx = space.dx();
        set.max_trace() / (dx * dx) + set.max_mass()
    }

    pub fn dt(&self) -> f64 {
        if self.nt == 0 {
            0.0
        } else {
            self.horizon / self.nt as f64
        }
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// `dt * (max sigma^2 / dx^2 + max mass)`; the scheme is monotone iff this is at most one.
    pub fn cfl_ratio(&self, set: &UncertaintySet) -> f64 {
        self.dt() * Self::rate(&self.space, set)
    }

    pub fn check_cfl(&self, set: &UncertaintySet) -> Result<()> {
        let ratio = self.cfl_ratio(set);
        if ratio > 1.0 + 1e-12 {
            return Err(Error::CflViolation { ratio });
        }
        Ok(())
    }

    /// The domain must be at least twice the largest jump plus `margin` wide.
    pub fn check_domain(&self, set: &UncertaintySet, margin: f64) -> Result<()> {
        let width = self.space.x_max - self.space.x_min;
        let required = 2.0 * set.max_jump_norm() + margin;
        if width < required {
            return Err(Error::DomainTooSmall { width, required });
        }
        Ok(())
    }

    /// Time layer whose interval `[t_k, t_{k+1})` contains `t`, clamped to `nt - 1`.
    pub fn step_index(&self, t: f64) -> usize {
        if self.nt == 0 {
            return 0;
        }
        let k = (t / self.dt() + 1e-9).floor();
        (k.max(0.0) as usize).min(self.nt - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    /// `C^2_b` data, used as is.
    Smooth,
    /// Bounded Lipschitz data, mollified before solving.
    Lipschitz,
}

/// Bounded Lipschitz terminal data `phi` with its declared constants.
#[derive(Clone)]
pub struct TerminalFunction {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    lipschitz: f64,
    bound: f64,
    smoothness: Smoothness,
}

impl fmt::Debug for TerminalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalFunction")
            .field("lipschitz", &self.lipschitz)
            .field("bound", &self.bound)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl TerminalFunction {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        bound: f64,
        smoothness: Smoothness,
    ) -> Self {
        Self {
            f: Arc::new(f),
            lipschitz,
            bound,
            smoothness,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, 0.0, c.abs(), Smoothness::Smooth)
    }

    /// A one-argument payoff; `smooth` overrides the structural smoothness tag.
    pub fn from_payoff(payoff: &Payoff, smooth: Option<bool>) -> Result<Self> {
        let a = payoff.analyze(1)?;
        if !a.is_bounded_lipschitz() {
            return Err(Error::InvalidPayoff(
                "terminal payoff must be bounded and Lipschitz".into(),
            ));
        }
        let smoothness = if smooth.unwrap_or_else(|| payoff.is_smooth()) {
            Smoothness::Smooth
        } else {
            Smoothness::Lipschitz
        };
        let p = payoff.clone();
        Ok(Self::new(
            move |x| p.eval(&[x]),
            a.lipschitz_total(),
            a.bound(),
            smoothness,
        ))
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// Spot-checks the declared bound and Lipschitz constant on the grid points.
    pub fn spot_check(&self, space: &SpaceGrid) -> Result<()> {
        let values: Vec<f64> = space.points().into_iter().map(|x| self.eval(x)).collect();
        let slack = 1e-9 * (1.0 + self.bound);
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || v.abs() > self.bound + slack {
                return Err(Error::InvalidPayoff(format!(
                    "|phi(x_{i})| = {} exceeds declared bound {}",
                    v.abs(),
                    self.bound
                )));
            }
        }
        let dx = space.dx();
        for w in values.windows(2) {
            if (w[1] - w[0]).abs() > self.lipschitz * dx * (1.0 + 1e-9) + slack {
                return Err(Error::InvalidPayoff(format!(
                    "grid slope {} exceeds declared Lipschitz constant {}",
                    (w[1] - w[0]).abs() / dx,
                    self.lipschitz
                )));
            }
        }
        Ok(())
    }
}

const MOLLIFIER_NODES: usize = 64;

fn bump(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

/// Midpoint nodes on `(-1, 1)` with normalized bump weights.
fn mollifier_rule() -> Vec<(f64, f64)> {
    let h = 2.0 / MOLLIFIER_NODES as f64;
    let raw: Vec<(f64, f64)> = (0..MOLLIFIER_NODES)
        .map(|k| {
            let y = -1.0 + (k as f64 + 0.5) * h;
            (y, bump(y))
        })
        .collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    raw.into_iter().map(|(y, w)| (y, w / total)).collect()
}

/// `phi * psi_eps` for the standard bump `psi` scaled to support `[-eps, eps]`
/// and normalized to unit mass.
///
/// Evaluated as `phi(x) + sum_k w_k [phi(x - eps y_k) - phi(x)]`, so constants
/// are reproduced exactly.
pub fn mollify(phi: &TerminalFunction, eps: f64) -> TerminalFunction {
    assert!(eps > 0.0, "mollification width must be positive");
    let rule = mollifier_rule();
    let inner = phi.f.clone();
    TerminalFunction {
        f: Arc::new(move |x| {
            let base = inner(x);
            base + rule
                .iter()
                .map(|(y, w)| w * (inner(x - eps * y) - base))
                .sum::<f64>()
        }),
        lipschitz: phi.lipschitz,
        bound: phi.bound,
        smoothness: Smoothness::Smooth,
    }
}

/// Terminal data as actually fed to the scheme: Lipschitz-only data is
/// mollified with width `2 dx`.
pub fn prepare_terminal(phi: &TerminalFunction, space: &SpaceGrid) -> TerminalFunction {
    match phi.smoothness {
        Smoothness::Smooth => phi.clone(),
        Smoothness::Lipschitz => mollify(phi, 2.0 * space.dx()),
    }
}

/// Precomputed jump targets `x_i + z_j` as (cell, fraction) pairs.
struct JumpStencil {
    targets: Vec<Vec<(usize, f64)>>,
}

impl JumpStencil {
    fn new(space: &SpaceGrid, jumps: &[f64]) -> Self {
        let targets = jumps
            .iter()
            .map(|z| {
                (0..space.nx)
                    .map(|i| space.locate(space.x(i) + z))
                    .collect()
            })
            .collect();
        Self { targets }
    }
}

#[inline]
fn lerp(u: &[f64], (i, frac): (usize, f64)) -> f64 {
    if frac == 0.0 {
        u[i]
    } else {
        u[i] + frac * (u[i + 1] - u[i])
    }
}

/// Second difference with constant extension beyond the ends.
#[inline]
fn scheme_d2(u: &[f64], i: usize, inv_dx2: f64) -> f64 {
    let n = u.len();
    let left = if i == 0 { u[0] } else { u[i - 1] };
    let right = if i + 1 == n { u[n - 1] } else { u[i + 1] };
    (right - 2.0 * u[i] + left) * inv_dx2
}

struct Stepper<'a> {
    variances: Vec<f64>,
    weights: &'a [Vec<f64>],
    stencil: JumpStencil,
    inv_dx2: f64,
    dt: f64,
}

impl<'a> Stepper<'a> {
    fn new(set: &'a UncertaintySet, grid: &Grid) -> Self {
        let dx = grid.space.dx();
        Self {
            variances: set.variances(),
            weights: set.weights(),
            stencil: JumpStencil::new(&grid.space, &set.jump_locations()),
            inv_dx2: 1.0 / (dx * dx),
            dt: grid.dt(),
        }
    }

    /// Hamiltonian `G^c + G^d` at node `i` of layer `u`, with its maximizer.
    #[inline]
    fn hamiltonian(&self, u: &[f64], i: usize, diffs: &mut Vec<f64>) -> (f64, ControlChoice) {
        let (gc, vol) = gc_scalar(scheme_d2(u, i, self.inv_dx2), &self.variances);
        if self.weights.is_empty() {
            return (gc, ControlChoice::new(None, vol));
        }
        diffs.clear();
        diffs.extend(self.stencil.targets.iter().map(|t| lerp(u, t[i]) - u[i]));
        let (gd, m) = gd_from_diffs(diffs, self.weights);
        (gc + gd, ControlChoice::new(m, vol))
    }

    fn step(&self, next: &[f64], out: &mut [f64]) {
        const CHUNK: usize = 128;
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let mut diffs = Vec::with_capacity(self.stencil.targets.len());
                for (off, slot) in chunk.iter_mut().enumerate() {
                    let i = c * CHUNK + off;
                    let (h, _) = self.hamiltonian(next, i, &mut diffs);
                    *slot = next[i] + self.dt * h;
                }
            });
    }
}

fn check_layer(layer: &[f64], k: usize) -> Result<()> {
    match layer.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteValue { layer: k, index }),
        None => Ok(()),
    }
}

fn terminal_layer(set: &UncertaintySet, phi: &TerminalFunction, grid: &Grid) -> Result<Vec<f64>> {
    if set.dim() != 1 {
        return Err(Error::UnsupportedDimension(set.dim()));
    }
    grid.check_cfl(set)?;
    grid.check_domain(set, 0.0)?;
    let phi = prepare_terminal(phi, &grid.space);
    let layer: Vec<f64> = grid
        .space
        .points()
        .into_iter()
        .map(|x| phi.eval(x))
        .collect();
    check_layer(&layer, grid.nt)?;
    Ok(layer)
}

/// The solution `u[k][i] ~ u(t_k, x_i)` on every time layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    grid: Grid,
    layers: Vec<Vec<f64>>,
}

impl GridSolution {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &[f64] {
        &self.layers[k]
    }

    /// `u(t_k, x)` by linear interpolation in space.
    pub fn value(&self, k: usize, x: f64) -> f64 {
        self.grid.space.interpolate(&self.layers[k], x)
    }

    /// `u(0, 0)`.
    pub fn u00(&self) -> f64 {
        self.value(0, 0.0)
    }

    /// First derivative at node `i` of layer `k`: central inside, one-sided at the ends.
    pub fn du_node(&self, k: usize, i: usize) -> f64 {
        let u = &self.layers[k];
        let dx = self.grid.space.dx();
        let n = u.len();
        if i == 0 {
            (u[1] - u[0]) / dx
        } else if i + 1 == n {
            (u[n - 1] - u[n - 2]) / dx
        } else {
            (u[i + 1] - u[i - 1]) / (2.0 * dx)
        }
    }

    /// Second derivative at node `i` of layer `k`: central inside, one-sided at the ends.
    pub fn d2u_node(&self, k: usize, i: usize) -> f64 {
        let u = &self.layers[k];
        let dx = self.grid.space.dx();
        let n = u.len();
        let c = if i == 0 {
            1
        } else if i + 1 == n {
            n - 2
        } else {
            i
        };
        (u[c + 1] - 2.0 * u[c] + u[c - 1]) / (dx * dx)
    }

    fn interp_field(&self, x: f64, node: impl Fn(usize) -> f64) -> f64 {
        let (i, frac) = self.grid.space.locate(x);
        let a = node(i);
        if frac == 0.0 {
            a
        } else {
            a + frac * (node(i + 1) - a)
        }
    }

    /// `Du(t_k, x)` interpolated linearly between nodes.
    pub fn du(&self, k: usize, x: f64) -> f64 {
        self.interp_field(x, |i| self.du_node(k, i))
    }

    /// `D^2u(t_k, x)` interpolated linearly between nodes.
    pub fn d2u(&self, k: usize, x: f64) -> f64 {
        self.interp_field(x, |i| self.d2u_node(k, i))
    }
}

/// Derivative fields of a solution, indexed like its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub du: Vec<Vec<f64>>,
    pub d2u: Vec<Vec<f64>>,
}

pub fn derivatives(sol: &GridSolution) -> Derivatives {
    let nx = sol.grid.space.nx;
    let du = (0..sol.layers.len())
        .map(|k| (0..nx).map(|i| sol.du_node(k, i)).collect())
        .collect();
    let d2u = (0..sol.layers.len())
        .map(|k| (0..nx).map(|i| sol.d2u_node(k, i)).collect())
        .collect();
    Derivatives { du, d2u }
}

/// Solves backward from `u(T) = phi` and keeps every layer.
pub fn solve_backward(
    set: &UncertaintySet,
    phi: &TerminalFunction,
    grid: &Grid,
) -> Result<GridSolution> {
    let terminal = terminal_layer(set, phi, grid)?;
    let stepper = Stepper::new(set, grid);
    let mut layers = vec![Vec::new(); grid.nt + 1];
    layers[grid.nt] = terminal;
    for k in (0..grid.nt).rev() {
        let mut out = vec![0.0; grid.space.nx];
        stepper.step(&layers[k + 1], &mut out);
        check_layer(&out, k)?;
        layers[k] = out;
    }
    Ok(GridSolution {
        grid: *grid,
        layers,
    })
}

/// Same scheme as [`solve_backward`], returning only the time-zero layer.
pub fn solve_initial_layer(
    set: &UncertaintySet,
    phi: &TerminalFunction,
    grid: &Grid,
) -> Result<Vec<f64>> {
    let mut cur = terminal_layer(set, phi, grid)?;
    let stepper = Stepper::new(set, grid);
    let mut out = vec![0.0; grid.space.nx];
    for k in (0..grid.nt).rev() {
        stepper.step(&cur, &mut out);
        check_layer(&out, k)?;
        std::mem::swap(&mut cur, &mut out);
    }
    Ok(cur)
}

/// A-posteriori scheme error: the largest change of `u(0, x)` over `|x| <= radius`
/// when the space step is doubled (time step rescaled per CFL), plus a rounding floor.
pub fn scheme_tol(
    set: &UncertaintySet,
    phi: &TerminalFunction,
    grid: &Grid,
    radius: f64,
) -> Result<f64> {
    const FLOOR: f64 = 1e-10;
    let fine = solve_initial_layer(set, phi, grid)?;
    let coarse_grid = Grid::with_cfl(grid.space.coarsened(), grid.horizon, set)?;
    let coarse = solve_initial_layer(set, phi, &coarse_grid)?;
    let mut worst = 0.0_f64;
    for (i, u) in fine.iter().enumerate() {
        let x = grid.space.x(i);
        if x.abs() <= radius + 1e-12 {
            worst = worst.max((u - coarse_grid.space.interpolate(&coarse, x)).abs());
        }
    }
    Ok(worst + FLOOR)
}

/// Maximizing control of the discrete Hamiltonian at each `(t_k, x_i)`,
/// evaluated on layer `k + 1`, i.e. the control active on `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTable {
    grid: Grid,
    measures: Vec<u16>,
    vols: Vec<u16>,
}

const NO_MEASURE: u16 = u16::MAX;

impl GreedyTable {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn choice_at_node(&self, k: usize, i: usize) -> ControlChoice {
        let idx = k * self.grid.space.nx + i;
        let m = self.measures[idx];
        ControlChoice::new(
            (m != NO_MEASURE).then_some(m as usize),
            self.vols[idx] as usize,
        )
    }

    /// Control for time `t` and state `x` (nearest node, clamped).
    pub fn choice(&self, t: f64, x: f64) -> ControlChoice {
        self.choice_at_node(self.grid.step_index(t), self.grid.space.nearest(x))
    }
}

pub fn greedy_policy(sol: &GridSolution, set: &UncertaintySet) -> GreedyTable {
    let grid = sol.grid;
    let nx = grid.space.nx;
    let stepper = Stepper::new(set, &grid);
    let choices: Vec<ControlChoice> = (0..grid.nt)
        .into_par_iter()
        .flat_map_iter(|k| {
            let next = &sol.layers[k + 1];
            let mut diffs = Vec::new();
            (0..nx)
                .map(|i| stepper.hamiltonian(next, i, &mut diffs).1)
                .collect::<Vec<_>>()
        })
        .collect();
    GreedyTable {
        grid,
        measures: choices
            .iter()
            .map(|c| c.measure.map_or(NO_MEASURE, |m| m as u16))
            .collect(),
        vols: choices.iter().map(|c| c.vol as u16).collect(),
    }
}

/// Headline numbers of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveSummary {
    pub u00: f64,
    pub scheme_tol: f64,
    pub cfl: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_set() -> UncertaintySet {
        UncertaintySet::scalar(&[], &[0.5, 1.0], 0.1, 1.0).unwrap()
    }

    #[test]
    fn cfl_grid_is_minimal_and_valid() {
        let set = quad_set();
        let space = SpaceGrid::new(-6.0, 6.0, 801).unwrap();
        let g = Grid::with_cfl(space, 0.5, &set).unwrap();
        assert!(g.cfl_ratio(&set) <= 1.0);
        let shorter = Grid::new(space, 0.5, g.nt - 1).unwrap();
        assert!(matches!(
            shorter.check_cfl(&set),
            Err(Error::CflViolation { .. })
        ));
    }

    #[test]
    fn constants_are_preserved_exactly() {
        let set = UncertaintySet::scalar(
            &[&[(1.0, 1.0), (-0.7, 0.5)], &[(1.0, 0.5), (-0.7, 1.0)]],
            &[0.5, 1.0],
            0.1,
            4.0,
        )
        .unwrap();
        let space = SpaceGrid::new(-5.0, 5.0, 101).unwrap();
        let grid = Grid::with_cfl(space, 0.3, &set).unwrap();
        let sol = solve_backward(&set, &TerminalFunction::constant(2.5), &grid).unwrap();
        assert!(sol.layers().iter().flatten().all(|&v| v == 2.5));
    }

    #[test]
    fn violating_cfl_is_an_error() {
        let set = quad_set();
        let space = SpaceGrid::new(-6.0, 6.0, 101).unwrap();
        let grid = Grid::new(space, 0.5, 2).unwrap();
        let err = solve_backward(&set, &TerminalFunction::constant(1.0), &grid).unwrap_err();
        assert!(matches!(err, Error::CflViolation { .. }));
    }

    #[test]
    fn quadratic_derivatives_are_exact_inside() {
        let set = quad_set();
        let space = SpaceGrid::new(-2.0, 2.0, 41).unwrap();
        let grid = Grid::new(space, 0.0, 0).unwrap();
        let phi = TerminalFunction::new(|x| x * x, 4.0, 4.0, Smoothness::Smooth);
        let sol = solve_backward(&set, &phi, &grid).unwrap();
        let d = derivatives(&sol);
        for i in 1..40 {
            let x = space.x(i);
            assert!((d.du[0][i] - 2.0 * x).abs() < 1e-12);
            assert!((d.d2u[0][i] - 2.0).abs() < 1e-9);
        }
        let c = solve_backward(&set, &TerminalFunction::constant(3.0), &grid).unwrap();
        let d = derivatives(&c);
        assert!(d.du[0].iter().chain(&d.d2u[0]).all(|&v| v == 0.0));
    }

    #[test]
    fn sine_gradient_is_second_order() {
        let set = quad_set();
        let space = SpaceGrid::new(-3.0, 3.0, 601).unwrap();
        let grid = Grid::new(space, 0.0, 0).unwrap();
        let phi = TerminalFunction::new(f64::sin, 1.0, 1.0, Smoothness::Smooth);
        let d = derivatives(&solve_backward(&set, &phi, &grid).unwrap());
        for i in 1..600 {
            assert!((d.du[0][i] - space.x(i).cos()).abs() < 1e-4);
        }
    }

    #[test]
    fn mollifier_reproduces_constants_and_is_close() {
        let c = mollify(&TerminalFunction::constant(-1.25), 0.3);
        for x in [-2.0, 0.0, 0.7] {
            assert_eq!(c.eval(x), -1.25);
        }
        let phi = TerminalFunction::new(|x| (3.0 * x).sin() / 3.0, 1.0, 1.0, Smoothness::Lipschitz);
        let m = mollify(&phi, 0.01);
        for k in 0..200 {
            let x = -2.0 + 0.02 * k as f64;
            assert!((m.eval(x) - phi.eval(x)).abs() <= 0.01);
        }
        assert_eq!(m.smoothness(), Smoothness::Smooth);
    }

    #[test]
    fn mollified_abs_at_origin_matches_quadrature() {
        // Independent oracle: fine trapezoid rule of |y| psi_eps(y) / int psi_eps.
        let eps = 0.1;
        let n = 200_000;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..=n {
            let y = -1.0 + 2.0 * k as f64 / n as f64;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 } * bump(y);
            num += w * (eps * y).abs();
            den += w;
        }
        let oracle = num / den;
        let phi = TerminalFunction::new(f64::abs, 1.0, 10.0, Smoothness::Lipschitz);
        let v = mollify(&phi, eps).eval(0.0);
        assert!(v > 0.0 && v < eps);
        assert!((v - oracle).abs() < 1e-3, "{v} vs {oracle}");
    }

    #[test]
    fn locate_handles_edges() {
        let s = SpaceGrid::new(0.0, 1.0, 11).unwrap();
        assert_eq!(s.locate(-1.0), (0, 0.0));
        assert_eq!(s.locate(2.0), (10, 0.0));
        assert_eq!(s.locate(0.3), (3, 0.0));
        let (i, f) = s.locate(0.35);
        assert_eq!(i, 3);
        assert!((f - 0.5).abs() < 1e-9);
        let v: Vec<f64> = s.points().iter().map(|x| 2.0 * x).collect();
        assert!((s.interpolate(&v, 0.35) - 0.7).abs() < 1e-12);
        assert_eq!(s.interpolate(&v, 5.0), 2.0);
    }

    #[test]
    fn greedy_policy_for_single_element_families() {
        let set = UncertaintySet::scalar(&[&[(1.0, 1.0)]], &[1.0], 0.5, 2.0).unwrap();
        let space = SpaceGrid::new(-4.0, 4.0, 81).unwrap();
        let grid = Grid::with_cfl(space, 0.2, &set).unwrap();
        let phi = TerminalFunction::new(|x| x.sin(), 1.0, 1.0, Smoothness::Smooth);
        let sol = solve_backward(&set, &phi, &grid).unwrap();
        let table = greedy_policy(&sol, &set);
        for k in 0..grid.nt {
            for i in 0..81 {
                assert_eq!(table.choice_at_node(k, i), ControlChoice::new(Some(0), 0));
            }
        }
    }
}
