//! Sublinear and conditional expectations of cylinder functionals
//! `xi = phi(X_{t_1}, X_{t_2} - X_{t_1}, ..., X_{t_n} - X_{t_{n-1}})`.
//!
//! The expectation is computed backwards one increment at a time: for every
//! node of a tensor lattice over the already observed increments, the last
//! remaining increment is integrated out by a PDE solve. Intermediate layers
//! are kept and define the conditional expectations `E[xi | F_{t_i}]`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::UncertaintySet;
use crate::payoff::{Analysis, Payoff};
use crate::pide::{
    mollify, solve_backward, solve_initial_layer, Grid, GridSolution, Smoothness, SpaceGrid,
    TerminalFunction,
};

/// Values on a tensor lattice with the same axis in every dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    axis: SpaceGrid,
    dims: usize,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(axis: SpaceGrid, dims: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), axis.nx.pow(dims as u32));
        Self { axis, dims, values }
    }

    pub fn axis(&self) -> &SpaceGrid {
        &self.axis
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Lattice coordinates of flat node `idx`, most significant axis first.
    pub fn node(&self, idx: usize) -> Vec<f64> {
        node_coords(&self.axis, self.dims, idx)
    }

    /// Multilinear interpolation, constant beyond the lattice.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dims);
        let n = self.axis.nx;
        let cells: Vec<(usize, f64)> = x.iter().map(|&v| self.axis.locate(v)).collect();
        let mut total = 0.0;
        for corner in 0..(1usize << self.dims) {
            let mut weight = 1.0;
            let mut flat = 0;
            for (d, &(i, frac)) in cells.iter().enumerate() {
                let upper = corner >> (self.dims - 1 - d) & 1 == 1;
                let (idx, w) = if upper {
                    (i + 1, frac)
                } else {
                    (i, 1.0 - frac)
                };
                if w == 0.0 {
                    weight = 0.0;
                    break;
                }
                weight *= w;
                flat = flat * n + idx;
            }
            if weight != 0.0 {
                total += weight * self.values[flat];
            }
        }
        total
    }

    /// Largest absolute second difference along any axis.
    pub fn max_second_difference(&self) -> f64 {
        let n = self.axis.nx;
        let mut worst = 0.0_f64;
        for d in 0..self.dims {
            let stride = n.pow((self.dims - 1 - d) as u32);
            for idx in 0..self.values.len() {
                let pos = idx / stride % n;
                if pos == 0 || pos + 1 == n {
                    continue;
                }
                let v =
                    self.values[idx + stride] - 2.0 * self.values[idx] + self.values[idx - stride];
                worst = worst.max(v.abs());
            }
        }
        worst
    }
}

fn node_coords(axis: &SpaceGrid, dims: usize, mut idx: usize) -> Vec<f64> {
    let mut out = vec![0.0; dims];
    for d in (0..dims).rev() {
        out[d] = axis.x(idx % axis.nx);
        idx /= axis.nx;
    }
    out
}

/// The payoff function of a cylinder functional.
#[derive(Debug, Clone, PartialEq)]
pub enum CylinderPayoff {
    Expr(Payoff),
    /// A lattice table, multilinearly interpolated; Lipschitz-only.
    Table(Tensor),
}

impl CylinderPayoff {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            CylinderPayoff::Expr(p) => p.eval(x),
            CylinderPayoff::Table(t) => t.interpolate(x),
        }
    }

    fn analyze(&self, n: usize) -> Result<Analysis> {
        match self {
            CylinderPayoff::Expr(p) => p.analyze(n),
            CylinderPayoff::Table(t) => {
                if t.dims != n {
                    return Err(Error::InvalidPayoff(format!(
                        "table has {} dimensions, partition has {n} increments",
                        t.dims
                    )));
                }
                let lo = t.values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = t.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok(Analysis {
                    lo,
                    hi,
                    lipschitz: (0..n).map(|d| table_slope(t, d)).collect(),
                })
            }
        }
    }
}

fn table_slope(t: &Tensor, d: usize) -> f64 {
    let n = t.axis.nx;
    let stride = n.pow((t.dims - 1 - d) as u32);
    let dx = t.axis.dx();
    (0..t.values.len())
        .filter(|idx| idx / stride % n + 1 < n)
        .map(|idx| (t.values[idx + stride] - t.values[idx]).abs() / dx)
        .fold(0.0, f64::max)
}

/// `phi(X_{t_1}, X_{t_2} - X_{t_1}, ...)` on a strictly increasing partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderFunctional {
    times: Vec<f64>,
    payoff: CylinderPayoff,
    analysis: Analysis,
    smooth: bool,
}

impl CylinderFunctional {
    /// `smooth` overrides the structural smoothness tag of the payoff.
    pub fn new(times: Vec<f64>, payoff: Payoff, smooth: Option<bool>) -> Result<Self> {
        let smooth = smooth.unwrap_or_else(|| payoff.is_smooth());
        Self::build(times, CylinderPayoff::Expr(payoff), smooth)
    }

    pub fn from_table(times: Vec<f64>, table: Tensor) -> Result<Self> {
        Self::build(times, CylinderPayoff::Table(table), false)
    }

    fn build(times: Vec<f64>, payoff: CylinderPayoff, smooth: bool) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidPartition(
                "at least one time is required".into(),
            ));
        }
        if !(times[0] >= 0.0) {
            return Err(Error::InvalidPartition(format!(
                "first time {} < 0",
                times[0]
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPartition(
                "times must be strictly increasing".into(),
            ));
        }
        let analysis = payoff.analyze(times.len())?;
        if !analysis.is_bounded_lipschitz() {
            return Err(Error::InvalidPayoff(
                "cylinder payoff must be bounded and Lipschitz".into(),
            ));
        }
        Ok(Self {
            times,
            payoff,
            analysis,
            smooth,
        })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Length of the `k`-th interval `]t_{k-1}, t_k]`, `k = 1..=n`, with `t_0 = 0`.
    pub fn interval(&self, k: usize) -> f64 {
        let start = if k == 1 { 0.0 } else { self.times[k - 2] };
        self.times[k - 1] - start
    }

    pub fn payoff(&self) -> &CylinderPayoff {
        &self.payoff
    }

    pub fn bound(&self) -> f64 {
        self.analysis.bound()
    }

    pub fn lipschitz(&self) -> &[f64] {
        &self.analysis.lipschitz
    }

    pub fn is_smooth(&self) -> bool {
        self.smooth
    }

    /// `xi` at the observed increments.
    pub fn eval(&self, increments: &[f64]) -> f64 {
        self.payoff.eval(increments)
    }

    /// Terminal data for the last increment with the first `prefix.len()` fixed.
    fn last_terminal(&self, prefix: &[f64]) -> TerminalFunction {
        let p = self.payoff.clone();
        let mut args = prefix.to_vec();
        args.push(0.0);
        let last = args.len() - 1;
        let smoothness = if self.smooth {
            Smoothness::Smooth
        } else {
            Smoothness::Lipschitz
        };
        TerminalFunction::new(
            move |y| {
                let mut a = args.clone();
                a[last] = y;
                p.eval(&a)
            },
            self.analysis.lipschitz[last],
            self.analysis.bound(),
            smoothness,
        )
    }
}

/// Discretization of the backward recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeConfig {
    /// Space grid of every per-increment PDE solve.
    pub space: SpaceGrid,
    /// Points per axis of the increment lattice (over the same range as `space`).
    pub lattice_nx: usize,
    /// Largest partition length accepted.
    pub n_max: usize,
}

impl LatticeConfig {
    pub fn new(space: SpaceGrid, lattice_nx: usize) -> Self {
        Self {
            space,
            lattice_nx,
            n_max: 3,
        }
    }

    pub fn axis(&self) -> SpaceGrid {
        SpaceGrid {
            nx: self.lattice_nx,
            ..self.space
        }
    }
}

/// All layers `phi_{n-i}`, `i = 0..n`, of the recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleLattice {
    functional: CylinderFunctional,
    /// `tables[i]` holds `E[xi | F_{t_i}]` as a function of the first `i` increments.
    tables: Vec<Tensor>,
    /// `u(0, x)` of the first-interval solve on the space grid.
    initial_profile: Vec<f64>,
    space: SpaceGrid,
    interpolation_tol: f64,
}

impl MartingaleLattice {
    pub fn functional(&self) -> &CylinderFunctional {
        &self.functional
    }

    pub fn n(&self) -> usize {
        self.functional.n()
    }

    /// `E[xi]`.
    pub fn value(&self) -> f64 {
        self.tables[0].values[0]
    }

    /// Layer for `i` observed increments, `i < n`.
    pub fn table(&self, i: usize) -> &Tensor {
        &self.tables[i]
    }

    /// The first-interval solution at time zero as a function of the starting point.
    pub fn initial_profile(&self) -> (&SpaceGrid, &[f64]) {
        (&self.space, &self.initial_profile)
    }

    /// Estimated error from interpolating and mollifying lattice layers:
    /// a quarter of the largest second difference over all layers.
    pub fn interpolation_tol(&self) -> f64 {
        self.interpolation_tol
    }

    pub fn layer_bound(&self, i: usize) -> f64 {
        if i == self.n() {
            self.functional.bound()
        } else {
            self.tables[i]
                .values
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()))
        }
    }

    /// `E[xi | F_{t_i}]` at the observed first `i` increments.
    pub fn conditional_expect(&self, i: usize, observed: &[f64]) -> Result<f64> {
        let n = self.n();
        if i > n || observed.len() < i {
            return Err(Error::InvalidParameter(format!(
                "conditioning index {i} needs {i} observations, got {}",
                observed.len()
            )));
        }
        if i == n {
            return Ok(self.functional.eval(&observed[..n]));
        }
        let table = &self.tables[i];
        let axis = table.axis;
        for (d, &v) in observed[..i].iter().enumerate() {
            if v < axis.x_min - 1e-12 || v > axis.x_max + 1e-12 {
                return Err(Error::OutOfLatticeRange {
                    axis: d,
                    value: v,
                    lo: axis.x_min,
                    hi: axis.x_max,
                });
            }
        }
        Ok(table.interpolate(&observed[..i]))
    }

    /// `E[xi | F_{t_i}]` as a cylinder functional on the first `i` times.
    pub fn conditional_functional(&self, i: usize) -> Result<CylinderFunctional> {
        if i == 0 || i >= self.n() {
            return Err(Error::InvalidParameter(format!(
                "conditional functional needs 0 < i < n, got {i}"
            )));
        }
        CylinderFunctional::from_table(self.functional.times[..i].to_vec(), self.tables[i].clone())
    }
}

/// Per-node PDE solutions of one interval, kept for the decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSolutions {
    /// Interval index `k` in `1..=n`.
    pub interval: usize,
    pub start: f64,
    /// Lattice over the `k - 1` increments observed before the interval.
    pub axis: SpaceGrid,
    pub prefix_dims: usize,
    pub nodes: Vec<GridSolution>,
}

fn check_partition(xi: &CylinderFunctional, cfg: &LatticeConfig) -> Result<()> {
    if xi.n() > cfg.n_max {
        return Err(Error::PartitionTooLong {
            len: xi.n(),
            max: cfg.n_max,
        });
    }
    if cfg.lattice_nx < 3 {
        return Err(Error::InvalidParameter(
            "lattice needs at least 3 points per axis".into(),
        ));
    }
    Ok(())
}

/// Terminal data for interval `k` at prefix node `prefix`.
fn stage_terminal(
    xi: &CylinderFunctional,
    k: usize,
    prefix: &[f64],
    next_table: Option<&Tensor>,
) -> TerminalFunction {
    match next_table {
        None => xi.last_terminal(prefix),
        Some(table) => {
            // Slice along the last axis of the table for this prefix.
            let axis = table.axis;
            let n = axis.nx;
            let dims = table.dims;
            debug_assert_eq!(dims, k);
            let mut base = 0;
            for &p in prefix {
                base = base * n + axis.nearest(p);
            }
            let line: Vec<f64> = (0..n).map(|j| table.values[base * n + j]).collect();
            let lip = line
                .windows(2)
                .map(|w| (w[1] - w[0]).abs() / axis.dx())
                .fold(0.0, f64::max);
            let bound = line.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let interp = TerminalFunction::new(
                move |y| axis.interpolate(&line, y),
                lip,
                bound,
                Smoothness::Lipschitz,
            );
            mollify(&interp, axis.dx())
        }
    }
}

fn recursion(
    set: &UncertaintySet,
    xi: &CylinderFunctional,
    cfg: &LatticeConfig,
    keep: bool,
) -> Result<(MartingaleLattice, Vec<IntervalSolutions>)> {
    check_partition(xi, cfg)?;
    let n = xi.n();
    let axis = cfg.axis();
    let mut tables: Vec<Option<Tensor>> = vec![None; n];
    let mut kept = Vec::new();
    let mut initial_profile = Vec::new();

    for k in (1..=n).rev() {
        let grid = Grid::with_cfl(cfg.space, xi.interval(k), set)?;
        let dims = k - 1;
        let count = axis.nx.pow(dims as u32);
        let next = if k == n { None } else { tables[k].as_ref() };
        let origin = grid.space.locate(0.0);

        let results: Vec<(f64, Option<GridSolution>, Option<Vec<f64>>)> = (0..count)
            .into_par_iter()
            .map(|idx| {
                let prefix = node_coords(&axis, dims, idx);
                let phi = stage_terminal(xi, k, &prefix, next);
                if keep || k == 1 {
                    let sol = solve_backward(set, &phi, &grid)?;
                    let v = interp_at(sol.layer(0), &grid.space, origin);
                    let profile = (k == 1).then(|| sol.layer(0).to_vec());
                    Ok((v, keep.then_some(sol), profile))
                } else {
                    let layer = solve_initial_layer(set, &phi, &grid)?;
                    Ok((interp_at(&layer, &grid.space, origin), None, None))
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let mut values = Vec::with_capacity(count);
        let mut nodes = Vec::new();
        for (v, sol, profile) in results {
            values.push(v);
            if let Some(s) = sol {
                nodes.push(s);
            }
            if let Some(p) = profile {
                initial_profile = p;
            }
        }
        tables[dims] = Some(Tensor::new(axis, dims, values));
        if keep {
            kept.push(IntervalSolutions {
                interval: k,
                start: xi.times.get(k.wrapping_sub(2)).copied().unwrap_or(0.0),
                axis,
                prefix_dims: dims,
                nodes,
            });
        }
    }
    kept.reverse();

    let tables: Vec<Tensor> = tables.into_iter().map(Option::unwrap).collect();
    let interpolation_tol = tables
        .iter()
        .map(Tensor::max_second_difference)
        .fold(0.0, f64::max)
        / 4.0;
    Ok((
        MartingaleLattice {
            functional: xi.clone(),
            tables,
            initial_profile,
            space: cfg.space,
            interpolation_tol,
        },
        kept,
    ))
}

fn interp_at(layer: &[f64], _space: &SpaceGrid, (i, frac): (usize, f64)) -> f64 {
    if frac == 0.0 {
        layer[i]
    } else {
        layer[i] + frac * (layer[i + 1] - layer[i])
    }
}

/// `E[xi]` by the backward recursion.
pub fn expect(set: &UncertaintySet, xi: &CylinderFunctional, cfg: &LatticeConfig) -> Result<f64> {
    Ok(martingale_lattice(set, xi, cfg)?.value())
}

/// Runs the recursion and keeps every intermediate layer.
pub fn martingale_lattice(
    set: &UncertaintySet,
    xi: &CylinderFunctional,
    cfg: &LatticeConfig,
) -> Result<MartingaleLattice> {
    Ok(recursion(set, xi, cfg, false)?.0)
}

/// Runs the recursion and also keeps the full per-node PDE solutions.
pub fn lattice_with_solutions(
    set: &UncertaintySet,
    xi: &CylinderFunctional,
    cfg: &LatticeConfig,
) -> Result<(MartingaleLattice, Vec<IntervalSolutions>)> {
    recursion(set, xi, cfg, true)
}

/// A-posteriori scheme error of [`expect`]: the change of the value when the
/// space step of every PDE solve is doubled, plus a rounding floor.
pub fn scheme_tol(
    set: &UncertaintySet,
    xi: &CylinderFunctional,
    cfg: &LatticeConfig,
) -> Result<f64> {
    let fine = expect(set, xi, cfg)?;
    let coarse_cfg = LatticeConfig {
        space: cfg.space.coarsened(),
        ..*cfg
    };
    let coarse = expect(set, xi, &coarse_cfg)?;
    Ok((fine - coarse).abs() + 1e-10)
}

/// `E[xi | F_{t_i}]` at `observed`; see [`MartingaleLattice::conditional_expect`].
pub fn conditional_expect(lattice: &MartingaleLattice, i: usize, observed: &[f64]) -> Result<f64> {
    lattice.conditional_expect(i, observed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pide::solve_backward;

    fn set() -> UncertaintySet {
        UncertaintySet::scalar(
            &[&[(0.5, 1.0), (-0.5, 0.5)], &[(0.5, 0.5), (-0.5, 1.0)]],
            &[0.5, 1.0],
            0.1,
            4.0,
        )
        .unwrap()
    }

    fn cfg() -> LatticeConfig {
        LatticeConfig::new(SpaceGrid::new(-4.0, 4.0, 81).unwrap(), 17)
    }

    #[test]
    fn tensor_interpolation_is_exact_for_multilinear_data() {
        let axis = SpaceGrid::new(-1.0, 1.0, 5).unwrap();
        let mut values = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                let (x, y) = (axis.x(i), axis.x(j));
                values.push(1.0 + 2.0 * x - y + 0.5 * x * y);
            }
        }
        let t = Tensor::new(axis, 2, values);
        let (x, y) = (0.13, -0.77);
        assert!((t.interpolate(&[x, y]) - (1.0 + 2.0 * x - y + 0.5 * x * y)).abs() < 1e-12);
        assert_eq!(t.node(7), vec![-0.5, 0.0]);
    }

    #[test]
    fn single_increment_matches_direct_solve() {
        let s = set();
        let payoff = Payoff::clip(Payoff::square(Payoff::arg(0)), 0.0, 4.0);
        let xi = CylinderFunctional::new(vec![0.3], payoff.clone(), None).unwrap();
        let via_recursion = expect(&s, &xi, &cfg()).unwrap();
        let grid = Grid::with_cfl(cfg().space, 0.3, &s).unwrap();
        let phi = TerminalFunction::from_payoff(&payoff, None).unwrap();
        let direct = solve_backward(&s, &phi, &grid).unwrap().u00();
        assert!((via_recursion - direct).abs() <= 1e-12);
    }

    #[test]
    fn constants_stay_constant() {
        let xi = CylinderFunctional::new(vec![0.1, 0.2], Payoff::constant(1.5), None).unwrap();
        let lat = martingale_lattice(&set(), &xi, &cfg()).unwrap();
        assert_eq!(lat.value(), 1.5);
        assert!(lat.table(1).values().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn ignored_first_increment_is_stationary() {
        let s = set();
        let psi = Payoff::clip(Payoff::arg(1), -1.0, 2.0);
        let xi = CylinderFunctional::new(vec![0.1, 0.3], psi, None).unwrap();
        let shifted =
            CylinderFunctional::new(vec![0.2], Payoff::clip(Payoff::arg(0), -1.0, 2.0), None)
                .unwrap();
        let a = expect(&s, &xi, &cfg()).unwrap();
        let b = expect(&s, &shifted, &cfg()).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn conditional_expect_endpoints_and_range() {
        let s = set();
        let payoff = Payoff::clip(
            Payoff::sum([(1.0, Payoff::arg(0)), (1.0, Payoff::arg(1))]),
            -1.0,
            1.0,
        );
        let xi = CylinderFunctional::new(vec![0.1, 0.2], payoff.clone(), None).unwrap();
        let lat = martingale_lattice(&s, &xi, &cfg()).unwrap();
        assert_eq!(
            lat.conditional_expect(2, &[0.3, 0.4]).unwrap(),
            payoff.eval(&[0.3, 0.4])
        );
        assert_eq!(lat.conditional_expect(0, &[0.3]).unwrap(), lat.value());
        assert!(matches!(
            lat.conditional_expect(1, &[9.0]),
            Err(Error::OutOfLatticeRange { axis: 0, .. })
        ));
        for i in 0..=2 {
            assert!(lat.layer_bound(i) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn partition_checks() {
        let p = Payoff::constant(0.0);
        assert!(CylinderFunctional::new(vec![], p.clone(), None).is_err());
        assert!(CylinderFunctional::new(vec![0.2, 0.1], p.clone(), None).is_err());
        let xi = CylinderFunctional::new(vec![0.1, 0.2, 0.3, 0.4], p, None).unwrap();
        assert!(matches!(
            expect(&set(), &xi, &cfg()),
            Err(Error::PartitionTooLong { len: 4, max: 3 })
        ));
    }
}
