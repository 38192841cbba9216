//! The martingale decomposition `M_t = M_0 + int H dB - K^c_t + int K^d dL~`
//! of a cylinder functional, its pathwise verification and its a-priori
//! estimates.
//!
//! On each interval of the partition the triple is read off the PDE solution
//! `u` of that interval: `H = Du`, `K^c` grows at rate
//! `G^c(D^2u) - 1/2 sigma^2 D^2u` for the active `sigma`, and
//! `K^d(s, x, z) = u(s, x + z) - u(s, x)`. Across the lattice of observed
//! increments the fields are interpolated multilinearly.

use serde::Serialize;

use crate::cylinder::{
    lattice_with_solutions, CylinderFunctional, IntervalSolutions, LatticeConfig, MartingaleLattice,
};
use crate::error::{Error, Result};
use crate::model::UncertaintySet;
use crate::operator::{gc_scalar, gd_from_diffs, ControlChoice};
use crate::payoff::Payoff;
use crate::sim::{constant_policies, simulate_map, McEstimate, McParams, Mesh, PathSample, Policy};

/// The constants of the a-priori estimate for horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AprioriConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl AprioriConstants {
    pub fn total(&self) -> f64 {
        self.c1 + self.c2 + self.c3
    }
}

/// `C_1 = 10 [1 + 8 c_up^2 (17T + 5)(3T + 1) / c_lo^2]`, then `C_3` and `C_2`
/// from the `K^d` and `H` estimates with `delta = c_lo / (2 c_up)` and
/// `epsilon = c_lo / (20 c_up (3T + 1))`.
pub fn apriori_constants(c_lower: f64, c_upper: f64, horizon: f64) -> Result<AprioriConstants> {
    if !(c_lower > 0.0) || !(c_upper >= c_lower) || !c_upper.is_finite() {
        return Err(Error::NonPositiveDensityRatio { c_lower, c_upper });
    }
    if !(horizon >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be nonnegative, got {horizon}"
        )));
    }
    let t = horizon;
    let ratio = c_upper / c_lower;
    let c1 = 10.0 * (1.0 + 8.0 * ratio * ratio * (17.0 * t + 5.0) * (3.0 * t + 1.0));
    let delta = c_lower / (2.0 * c_upper);
    let epsilon = c_lower / (20.0 * c_upper * (3.0 * t + 1.0));
    let c3 = 1.0 + 1.0 / epsilon + 4.0 * t / delta + epsilon * c1;
    let c2 = c3 / (c_lower - delta * c_upper);
    Ok(AprioriConstants {
        c1,
        c2,
        c3,
        delta,
        epsilon,
    })
}

/// Density bounds used for the constants; `(1, 1)` for jump-free families.
pub fn density_bounds(set: &UncertaintySet) -> (f64, f64) {
    if set.is_jump_free() {
        (1.0, 1.0)
    } else {
        (set.c_lower(), set.c_upper())
    }
}

/// Decomposition fields at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFields {
    pub u: f64,
    pub h: f64,
    pub d2u: f64,
    pub kc_rate: f64,
    /// `K^d` at every reference atom.
    pub kd: Vec<f64>,
    /// `sup_v int K^d dv`.
    pub gd: f64,
    pub argmax: ControlChoice,
}

/// `(H, K^c, K^d)` of a cylinder functional on its lattice.
#[derive(Debug, Clone)]
pub struct DecompositionTriple {
    set: UncertaintySet,
    lattice: MartingaleLattice,
    intervals: Vec<IntervalSolutions>,
    jumps: Vec<f64>,
    variances: Vec<f64>,
    pi: Vec<f64>,
}

/// Builds the triple from per-interval PDE solutions.
pub fn decompose(
    set: &UncertaintySet,
    xi: &CylinderFunctional,
    cfg: &LatticeConfig,
) -> Result<DecompositionTriple> {
    if set.dim() != 1 {
        return Err(Error::UnsupportedDimension(set.dim()));
    }
    let (lattice, intervals) = lattice_with_solutions(set, xi, cfg)?;
    Ok(DecompositionTriple {
        jumps: set.jump_locations(),
        variances: set.variances(),
        pi: set.reference().atoms().iter().map(|a| a.weight).collect(),
        set: set.clone(),
        lattice,
        intervals,
    })
}

impl DecompositionTriple {
    pub fn set(&self) -> &UncertaintySet {
        &self.set
    }

    pub fn functional(&self) -> &CylinderFunctional {
        self.lattice.functional()
    }

    pub fn lattice(&self) -> &MartingaleLattice {
        &self.lattice
    }

    /// `E[xi] = M_0`.
    pub fn value(&self) -> f64 {
        self.lattice.value()
    }

    /// Solutions of interval `k`, `1 <= k <= n`.
    pub fn interval(&self, k: usize) -> &IntervalSolutions {
        &self.intervals[k - 1]
    }

    fn corners(&self, k: usize, prefix: &[f64]) -> Vec<(usize, f64)> {
        let iv = &self.intervals[k - 1];
        let n = iv.axis.nx;
        let mut out = vec![(0usize, 1.0)];
        for &p in &prefix[..iv.prefix_dims] {
            let (i, frac) = iv.axis.locate(p);
            let mut next = Vec::with_capacity(out.len() * 2);
            for &(idx, w) in &out {
                next.push((idx * n + i, w * (1.0 - frac)));
                if frac > 0.0 {
                    next.push((idx * n + i + 1, w * frac));
                }
            }
            out = next;
        }
        out
    }

    /// Fields on interval `k` at time `tau` after its start and running
    /// increment `y`, for the observed `prefix` of earlier increments.
    pub fn fields(&self, k: usize, prefix: &[f64], tau: f64, y: f64) -> LocalFields {
        let iv = &self.intervals[k - 1];
        let mut u = 0.0;
        let mut h = 0.0;
        let mut d2u = 0.0;
        let mut kd = vec![0.0; self.jumps.len()];
        for (node, w) in self.corners(k, prefix) {
            let sol = &iv.nodes[node];
            let j = sol.grid().step_index(tau);
            let base = sol.value(j, y);
            u += w * base;
            h += w * sol.du(j, y);
            d2u += w * sol.d2u(j, y);
            for (acc, z) in kd.iter_mut().zip(&self.jumps) {
                *acc += w * (sol.value(j, y + z) - base);
            }
        }
        let (kc_rate, vol) = gc_scalar(d2u, &self.variances);
        let (gd, measure) = if self.set.is_jump_free() {
            (0.0, None)
        } else {
            gd_from_diffs(&kd, self.set.weights())
        };
        LocalFields {
            u,
            h,
            d2u,
            kc_rate,
            kd,
            gd,
            argmax: ControlChoice::new(measure, vol),
        }
    }

    /// Interval `k` (1-based) with `t_{k-1} <= t < t_k`, and `t_{k-1}`.
    fn interval_at(&self, t: f64) -> (usize, f64) {
        let times = self.functional().times();
        let k = times.partition_point(|&s| s <= t + 1e-12);
        let k = (k + 1).min(times.len());
        let start = if k == 1 { 0.0 } else { times[k - 2] };
        (k, start)
    }

    /// A mesh whose break points include the partition.
    pub fn mesh(&self, dt: f64) -> Result<Mesh> {
        Mesh::with_breaks(self.functional().times(), dt)
    }

    /// All decomposition quantities along one simulated path.
    pub fn evaluate_path(&self, path: &PathSample) -> Result<PathDecomposition> {
        let xi_fn = self.functional();
        let times = xi_fn.times();
        let steps = path.db.len();
        let mut m_sup2 = self.value().powi(2);
        let mut ito = 0.0;
        let mut kc = 0.0;
        let mut kc_min_increment = f64::INFINITY;
        let mut comp = 0.0;
        let mut h2 = 0.0;
        let mut kd2 = 0.0;
        let mut jump_sum = 0.0;
        let mut jumps = path.jumps.iter().peekable();
        let mut current: Option<(usize, f64, f64, Vec<f64>)> = None;
        for i in 0..steps {
            let s = path.times[i];
            let ds = path.times[i + 1] - s;
            let (k, start) = self.interval_at(s);
            if current.as_ref().is_none_or(|c| c.0 != k) {
                let prefix = path.increments(&times[..k - 1])?;
                current = Some((k, start, path.state_at(start)?, prefix));
            }
            let (_, start, x0, prefix) = current.as_ref().expect("set above");
            let tau = s - start;
            let f = self.fields(k, prefix, tau, path.states[i] - x0);
            if i > 0 {
                m_sup2 = m_sup2.max(f.u * f.u);
            }
            let var = path.variance[i];
            ito += f.h * path.db[i];
            h2 += f.h * f.h * var * ds;
            let dkc = (f.kc_rate - 0.5 * var * f.d2u) * ds;
            kc += dkc;
            kc_min_increment = kc_min_increment.min(dkc);
            comp += f.gd * ds;
            kd2 +=
                f.kd.iter()
                    .zip(&self.pi)
                    .map(|(d, p)| d * d * p)
                    .sum::<f64>()
                    * ds;
            while let Some(jump) = jumps.next_if(|j| j.step == i) {
                let sol_y = jump.pre_state - x0;
                let g = self.fields(k, prefix, tau, sol_y);
                jump_sum += g.kd[jump.mark];
            }
        }
        let xi = xi_fn.eval(&path.increments(times)?);
        m_sup2 = m_sup2.max(xi * xi);
        let residual = xi - self.value() - ito + kc - jump_sum + comp;
        Ok(PathDecomposition {
            xi,
            m_sup2,
            ito,
            kc,
            kc_min_increment,
            jump_sum,
            compensator: comp,
            h2,
            kd2,
            residual,
        })
    }
}

/// Decomposition terms of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathDecomposition {
    pub xi: f64,
    /// `sup_t M_t^2` over mesh times.
    pub m_sup2: f64,
    pub ito: f64,
    /// `K^c_T`.
    pub kc: f64,
    pub kc_min_increment: f64,
    pub jump_sum: f64,
    /// `J_T(K^d)`.
    pub compensator: f64,
    /// `int H^2 d<B>`.
    pub h2: f64,
    /// `int sum_j |K^d(s, z_j)|^2 pi_j ds`.
    pub kd2: f64,
    /// `xi - E[xi] - int H dB + K^c_T - sum K^d + J_T(K^d)`.
    pub residual: f64,
}

/// Control that maximizes the Hamiltonian of the triple at the current state.
pub struct TripleGreedyPolicy<'a> {
    triple: &'a DecompositionTriple,
}

impl<'a> TripleGreedyPolicy<'a> {
    pub fn new(triple: &'a DecompositionTriple) -> Self {
        Self { triple }
    }
}

impl Policy for TripleGreedyPolicy<'_> {
    fn choose(&self, times: &[f64], states: &[f64]) -> ControlChoice {
        let t = times[states.len() - 1];
        let (k, start) = self.triple.interval_at(t);
        let part = self.triple.functional().times();
        let at = |s: f64| {
            states[times
                .partition_point(|&u| u < s - 1e-12)
                .min(states.len() - 1)]
        };
        let mut prefix = Vec::with_capacity(k - 1);
        let mut prev = 0.0;
        for &s in &part[..k - 1] {
            let x = at(s);
            prefix.push(x - prev);
            prev = x;
        }
        let y = states[states.len() - 1] - at(start);
        let mut c = self.triple.fields(k, &prefix, t - start, y).argmax;
        if c.measure.is_none() && !self.triple.set.is_jump_free() {
            c.measure = Some(0);
        }
        c
    }
}

/// Norm estimates and residual statistics under one control.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSummary {
    pub name: String,
    /// `E[sup_t M_t^2]`.
    pub m: McEstimate,
    /// `E[int H^2 d<B>]`.
    pub h: McEstimate,
    /// `E[(K^c_T)^2]`.
    pub kc: McEstimate,
    /// `E[int |K^d|^2 pi ds]`.
    pub kd: McEstimate,
    pub residual_rms: f64,
    pub residual_max: f64,
    pub kc_min_increment: f64,
}

fn summarize(name: String, rows: &[PathDecomposition], seed: u64) -> ControlSummary {
    let col = |f: fn(&PathDecomposition) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    let n = rows.len().max(1) as f64;
    ControlSummary {
        name,
        m: McEstimate::from_samples(&col(|r| r.m_sup2), seed),
        h: McEstimate::from_samples(&col(|r| r.h2), seed),
        kc: McEstimate::from_samples(&col(|r| r.kc * r.kc), seed),
        kd: McEstimate::from_samples(&col(|r| r.kd2), seed),
        residual_rms: (rows.iter().map(|r| r.residual * r.residual).sum::<f64>() / n).sqrt(),
        residual_max: rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max),
        kc_min_increment: rows
            .iter()
            .map(|r| r.kc_min_increment)
            .fold(f64::INFINITY, f64::min),
    }
}

/// Simulates paths under every constant control and the greedy control of
/// the triple, and summarizes the decomposition along them.
pub fn analyze_controls(
    triple: &DecompositionTriple,
    mc: &McParams,
) -> Result<Vec<ControlSummary>> {
    let mesh = triple.mesh(mc.mesh_dt)?;
    let greedy = TripleGreedyPolicy::new(triple);
    let mut policies: Vec<(String, &dyn Policy)> = Vec::new();
    let constants = constant_policies(&triple.set);
    for (name, p) in &constants {
        policies.push((name.clone(), p));
    }
    policies.push(("greedy".into(), &greedy));
    policies
        .into_iter()
        .map(|(name, policy)| {
            let rows = simulate_map(&triple.set, policy, mc.n_paths, &mesh, mc.seed, |p| {
                triple.evaluate_path(p)
            })?
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            Ok(summarize(name, &rows, mc.seed))
        })
        .collect()
}

/// Largest mean over controls of a summary column.
fn max_over<'a>(
    rows: impl IntoIterator<Item = &'a ControlSummary>,
    f: fn(&ControlSummary) -> McEstimate,
) -> McEstimate {
    rows.into_iter()
        .map(f)
        .reduce(|a, b| if b.mean > a.mean { b } else { a })
        .expect("at least one control")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    pub constants: AprioriConstants,
    pub c: f64,
    pub m_norm2: McEstimate,
    pub h_norm2: McEstimate,
    pub kc_norm2: McEstimate,
    pub kd_norm2: McEstimate,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub margin: f64,
    pub passed: bool,
}

/// `|H|^2 + |K^c|^2 + |K^d|^2 <= C |M|^2_{S^2}`, each norm the largest MC
/// estimate over the control family.
pub fn apriori_check(
    triple: &DecompositionTriple,
    controls: &[ControlSummary],
) -> Result<AprioriReport> {
    let (lo, hi) = density_bounds(&triple.set);
    let constants = apriori_constants(lo, hi, triple.functional().horizon())?;
    let c = constants.total();
    let m = max_over(controls, |s| s.m);
    let h = max_over(controls, |s| s.h);
    let kc = max_over(controls, |s| s.kc);
    let kd = max_over(controls, |s| s.kd);
    let lhs = h.mean + kc.mean + kd.mean;
    let rhs = c * m.mean;
    Ok(AprioriReport {
        constants,
        c,
        m_norm2: m,
        h_norm2: h,
        kc_norm2: kc,
        kd_norm2: kd,
        lhs,
        rhs,
        margin: rhs - lhs,
        passed: lhs <= rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub controls: Vec<ResidualRow>,
    pub max_rms: f64,
    pub min_kc_increment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub name: String,
    pub rms: f64,
    pub max_abs: f64,
    pub kc_min_increment: f64,
}

pub fn residual(controls: &[ControlSummary]) -> ResidualReport {
    let rows: Vec<ResidualRow> = controls
        .iter()
        .map(|c| ResidualRow {
            name: c.name.clone(),
            rms: c.residual_rms,
            max_abs: c.residual_max,
            kc_min_increment: c.kc_min_increment,
        })
        .collect();
    ResidualReport {
        max_rms: rows.iter().map(|r| r.rms).fold(0.0, f64::max),
        min_kc_increment: rows
            .iter()
            .map(|r| r.kc_min_increment)
            .fold(f64::INFINITY, f64::min),
        controls: rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub c: f64,
    pub m_diff_norm2: McEstimate,
    pub m1_norm2: McEstimate,
    pub m2_norm2: McEstimate,
    pub h_diff_norm2: McEstimate,
    pub kc_diff_norm2: McEstimate,
    pub kd_diff_norm2: McEstimate,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
struct DiffRow {
    m_diff: f64,
    m1: f64,
    m2: f64,
    h: f64,
    kc: f64,
    kd: f64,
}

fn diff_path(
    a: &DecompositionTriple,
    b: &DecompositionTriple,
    path: &PathSample,
) -> Result<DiffRow> {
    let times = a.functional().times();
    let mut row = DiffRow {
        m_diff: (a.value() - b.value()).powi(2),
        m1: a.value().powi(2),
        m2: b.value().powi(2),
        h: 0.0,
        kc: 0.0,
        kd: 0.0,
    };
    let mut kc = 0.0;
    let mut current: Option<(usize, f64, f64, Vec<f64>)> = None;
    for i in 0..path.db.len() {
        let s = path.times[i];
        let ds = path.times[i + 1] - s;
        let (k, start) = a.interval_at(s);
        if current.as_ref().is_none_or(|c| c.0 != k) {
            current = Some((
                k,
                start,
                path.state_at(start)?,
                path.increments(&times[..k - 1])?,
            ));
        }
        let (_, start, x0, prefix) = current.as_ref().expect("set above");
        let y = path.states[i] - x0;
        let fa = a.fields(k, prefix, s - start, y);
        let fb = b.fields(k, prefix, s - start, y);
        if i > 0 {
            row.m_diff = row.m_diff.max((fa.u - fb.u).powi(2));
            row.m1 = row.m1.max(fa.u * fa.u);
            row.m2 = row.m2.max(fb.u * fb.u);
        }
        let var = path.variance[i];
        row.h += (fa.h - fb.h).powi(2) * var * ds;
        kc += ((fa.kc_rate - 0.5 * var * fa.d2u) - (fb.kc_rate - 0.5 * var * fb.d2u)) * ds;
        row.kd += fa
            .kd
            .iter()
            .zip(&fb.kd)
            .zip(&a.pi)
            .map(|((x, y), p)| (x - y).powi(2) * p)
            .sum::<f64>()
            * ds;
    }
    let inc = path.increments(times)?;
    let (x1, x2) = (a.functional().eval(&inc), b.functional().eval(&inc));
    row.m_diff = row.m_diff.max((x1 - x2).powi(2));
    row.m1 = row.m1.max(x1 * x1);
    row.m2 = row.m2.max(x2 * x2);
    row.kc = kc * kc;
    Ok(row)
}

/// Stability of the triple in the terminal value: with bars for differences,
/// `|H^|^2 + |K^c^|^2 + |K^d^|^2 <= C [|M^|^2 + |M^| (|M^1| + |M^2|)]`.
pub fn stability_check(
    a: &DecompositionTriple,
    b: &DecompositionTriple,
    mc: &McParams,
) -> Result<StabilityReport> {
    if a.functional().times() != b.functional().times() {
        return Err(Error::InvalidParameter(
            "stability needs both functionals on the same partition".into(),
        ));
    }
    let (lo, hi) = density_bounds(&a.set);
    let c = apriori_constants(lo, hi, a.functional().horizon())?.total();
    let mesh = a.mesh(mc.mesh_dt)?;
    let greedy = TripleGreedyPolicy::new(a);
    let constants = constant_policies(&a.set);
    let mut policies: Vec<&dyn Policy> = constants.iter().map(|(_, p)| p as &dyn Policy).collect();
    policies.push(&greedy);

    let mut per_control = Vec::new();
    for policy in policies {
        let rows = simulate_map(&a.set, policy, mc.n_paths, &mesh, mc.seed, |p| {
            diff_path(a, b, p)
        })?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let est = |f: fn(&DiffRow) -> f64| {
            McEstimate::from_samples(&rows.iter().map(f).collect::<Vec<_>>(), mc.seed)
        };
        per_control.push([
            est(|r| r.m_diff),
            est(|r| r.m1),
            est(|r| r.m2),
            est(|r| r.h),
            est(|r| r.kc),
            est(|r| r.kd),
        ]);
    }
    let best = |i: usize| {
        per_control
            .iter()
            .map(|r| r[i])
            .reduce(|x, y| if y.mean > x.mean { y } else { x })
            .expect("at least one control")
    };
    let (m_diff, m1, m2, h, kc, kd) = (best(0), best(1), best(2), best(3), best(4), best(5));
    let lhs = h.mean + kc.mean + kd.mean;
    let md = m_diff.mean.sqrt();
    let rhs = c * (m_diff.mean + md * (m1.mean.sqrt() + m2.mean.sqrt()));
    Ok(StabilityReport {
        c,
        m_diff_norm2: m_diff,
        m1_norm2: m1,
        m2_norm2: m2,
        h_diff_norm2: h,
        kc_diff_norm2: kc,
        kd_diff_norm2: kd,
        lhs,
        rhs,
        margin: rhs - lhs,
        passed: lhs <= rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingReport {
    pub p: f64,
    /// `C_p^2 = 1 + 4 / (p - 2)`.
    pub cp2: f64,
    /// `max_P E[sup_t E[|xi| | F_t]^2]`.
    pub lhs: McEstimate,
    /// `(max_P E|xi|^p)^{2/p}`, with its SE by the delta method.
    pub rhs: McEstimate,
    /// `cp2 * rhs + 3 (lhs.se + cp2 * rhs.se) - lhs`.
    pub margin: f64,
    pub passed: bool,
}

pub fn embedding_constant(p: f64) -> Result<f64> {
    if !(p > 2.0) || !p.is_finite() {
        return Err(Error::InvalidExponent(p));
    }
    Ok(1.0 + 4.0 / (p - 2.0))
}

/// The conditional expectations of `|xi|`, sampled at every mesh time, in
/// `S^2` against `|xi|` in `L^p`.
pub fn embedding_check(
    set: &UncertaintySet,
    xi: &CylinderFunctional,
    p: f64,
    cfg: &LatticeConfig,
    mc: &McParams,
) -> Result<EmbeddingReport> {
    let cp2 = embedding_constant(p)?;
    let abs_xi = match xi.payoff() {
        crate::cylinder::CylinderPayoff::Expr(e) => CylinderFunctional::new(
            xi.times().to_vec(),
            Payoff::abs(e.clone()),
            Some(xi.is_smooth() && e.analyze(xi.n())?.lo >= 0.0),
        )?,
        crate::cylinder::CylinderPayoff::Table(t) => {
            let values = t.values().iter().map(|v| v.abs()).collect();
            CylinderFunctional::from_table(
                xi.times().to_vec(),
                crate::cylinder::Tensor::new(*t.axis(), t.dims(), values),
            )?
        }
    };
    let triple = decompose(set, &abs_xi, cfg)?;
    let mesh = triple.mesh(mc.mesh_dt)?;
    let greedy = TripleGreedyPolicy::new(&triple);
    let constants = constant_policies(set);
    let mut policies: Vec<&dyn Policy> = constants.iter().map(|(_, p)| p as &dyn Policy).collect();
    policies.push(&greedy);

    let mut lhs: Option<McEstimate> = None;
    let mut moment: Option<McEstimate> = None;
    for policy in policies {
        let rows = simulate_map(set, policy, mc.n_paths, &mesh, mc.seed, |path| {
            triple
                .evaluate_path(path)
                .map(|r| (r.m_sup2, r.xi.abs().powf(p)))
        })?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let a = McEstimate::from_samples(&rows.iter().map(|r| r.0).collect::<Vec<_>>(), mc.seed);
        let b = McEstimate::from_samples(&rows.iter().map(|r| r.1).collect::<Vec<_>>(), mc.seed);
        if lhs.is_none_or(|l| a.mean > l.mean) {
            lhs = Some(a);
        }
        if moment.is_none_or(|m| b.mean > m.mean) {
            moment = Some(b);
        }
    }
    let lhs = lhs.expect("at least one control");
    let moment = moment.expect("at least one control");
    let rhs_mean = moment.mean.powf(2.0 / p);
    let rhs_se = if moment.mean > 0.0 {
        2.0 / p * moment.mean.powf(2.0 / p - 1.0) * moment.se
    } else {
        0.0
    };
    let rhs = McEstimate {
        mean: rhs_mean,
        se: rhs_se,
        ..moment
    };
    let margin = cp2 * rhs.mean + 3.0 * (lhs.se + cp2 * rhs.se) - lhs.mean;
    Ok(EmbeddingReport {
        p,
        cp2,
        lhs,
        rhs,
        margin,
        passed: margin >= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pide::SpaceGrid;
    use crate::sim::ControlPolicy;

    fn quad_set() -> UncertaintySet {
        UncertaintySet::scalar(&[], &[0.5, 1.0], 0.1, 1.0).unwrap()
    }

    fn quad_xi() -> CylinderFunctional {
        CylinderFunctional::new(
            vec![0.5],
            Payoff::clip(Payoff::square(Payoff::arg(0)), 0.0, 100.0),
            None,
        )
        .unwrap()
    }

    fn quad_cfg() -> LatticeConfig {
        LatticeConfig::new(SpaceGrid::new(-6.0, 6.0, 241).unwrap(), 41)
    }

    #[test]
    fn constants_at_reference_points() {
        assert_eq!(apriori_constants(1.0, 1.0, 1.0).unwrap().c1, 7050.0);
        assert_eq!(apriori_constants(1.0, 1.0, 0.0).unwrap().c1, 410.0);
        let c = apriori_constants(1.0, 1.0, 1.0).unwrap();
        assert_eq!((c.delta, c.epsilon), (0.5, 1.0 / 80.0));
        assert!((c.c3 - (1.0 + 80.0 + 8.0 + 7050.0 / 80.0)).abs() < 1e-12);
        assert!((c.c2 - 2.0 * c.c3).abs() < 1e-12);
        assert!(matches!(
            apriori_constants(0.0, 1.0, 1.0),
            Err(Error::NonPositiveDensityRatio { .. })
        ));
        assert_eq!(embedding_constant(4.0).unwrap(), 3.0);
        assert!(matches!(
            embedding_constant(2.0),
            Err(Error::InvalidExponent(_))
        ));
    }

    #[test]
    fn quadratic_fields_match_closed_form() {
        let triple = decompose(&quad_set(), &quad_xi(), &quad_cfg()).unwrap();
        for &(tau, y) in &[(0.0, 0.3), (0.2, -1.1), (0.4, 2.0)] {
            let f = triple.fields(1, &[], tau, y);
            assert!((f.h - 2.0 * y).abs() < 1e-2, "{f:?}");
            assert!((f.kc_rate - 1.0).abs() < 1e-2, "{f:?}");
            assert!(f.kd.is_empty());
            assert_eq!(f.argmax.vol, 1);
        }
    }

    #[test]
    fn constant_functional_has_zero_triple_and_residual() {
        let set =
            UncertaintySet::scalar(&[&[(1.0, 1.0)], &[(1.0, 2.0)]], &[0.5, 1.0], 0.1, 4.0).unwrap();
        let xi = CylinderFunctional::new(vec![0.2], Payoff::constant(2.0), None).unwrap();
        let cfg = LatticeConfig::new(SpaceGrid::new(-4.0, 4.0, 81).unwrap(), 9);
        let triple = decompose(&set, &xi, &cfg).unwrap();
        let f = triple.fields(1, &[], 0.1, 0.5);
        assert_eq!((f.h, f.d2u, f.kc_rate, f.gd), (0.0, 0.0, 0.0, 0.0));
        assert!(f.kd.iter().all(|&d| d == 0.0));
        let mc = McParams {
            n_paths: 200,
            mesh_dt: 0.01,
            seed: 4,
        };
        for s in analyze_controls(&triple, &mc).unwrap() {
            assert_eq!(s.residual_max, 0.0);
            assert_eq!((s.h.mean, s.kc.mean, s.kd.mean), (0.0, 0.0, 0.0));
            assert_eq!(s.m.mean, 4.0);
        }
    }

    #[test]
    fn greedy_control_leaves_kc_flat() {
        let triple = decompose(&quad_set(), &quad_xi(), &quad_cfg()).unwrap();
        let mesh = triple.mesh(0.01).unwrap();
        let greedy = TripleGreedyPolicy::new(&triple);
        let rows = simulate_map(triple.set(), &greedy, 200, &mesh, 8, |p| {
            triple.evaluate_path(p).unwrap()
        })
        .unwrap();
        assert!(rows.iter().all(|r| r.kc.abs() < 1e-9));
        let low = ControlPolicy::Constant(ControlChoice::new(None, 0));
        let rows = simulate_map(triple.set(), &low, 200, &mesh, 8, |p| {
            triple.evaluate_path(p).unwrap()
        })
        .unwrap();
        assert!(rows
            .iter()
            .all(|r| r.kc_min_increment >= -1e-10 && r.kc > 0.0));
    }

    #[test]
    fn identical_functionals_are_exactly_stable() {
        let triple = decompose(&quad_set(), &quad_xi(), &quad_cfg()).unwrap();
        let twin = decompose(&quad_set(), &quad_xi(), &quad_cfg()).unwrap();
        let mc = McParams {
            n_paths: 200,
            mesh_dt: 0.01,
            seed: 1,
        };
        let r = stability_check(&triple, &twin, &mc).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.passed);
    }
}
