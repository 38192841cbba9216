//! Monte Carlo simulation of controlled Ito-Levy integrals.
//!
//! Every admissible control gives an ordinary expectation that is a lower
//! bound for the sublinear one; the greedy table of a PDE solve nearly
//! attains it. Paths are independent, each drawing from its own ChaCha
//! stream `(seed, path_index)`, and results are reduced in path order, so
//! estimates do not depend on the number of worker threads.
//!
//! Jumps are generated by thinning: proposals arrive at the rate of the
//! dominating measure `c_upper * pi`, and a proposal with mark `z_j` is kept
//! with probability `v({z_j}) / (c_upper pi({z_j}))`. All controls share the
//! same Gaussian and proposal draws, so estimates for different controls are
//! coupled.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::UncertaintySet;
use crate::operator::ControlChoice;
use crate::pide::{greedy_policy, scheme_tol, solve_backward, GreedyTable, Grid, TerminalFunction};

/// Monte Carlo parameters of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    pub n_paths: usize,
    pub mesh_dt: f64,
    pub seed: u64,
}

/// Simulation time points: uniform steps of at most `dt` inside every
/// interval between consecutive break points, so break points are mesh points.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    times: Arc<[f64]>,
}

impl Mesh {
    pub fn uniform(horizon: f64, dt: f64) -> Result<Self> {
        Self::with_breaks(&[horizon], dt)
    }

    /// `breaks` must be strictly increasing and positive; the last one is the horizon.
    pub fn with_breaks(breaks: &[f64], dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mesh step must be positive, got {dt}"
            )));
        }
        let mut times = vec![0.0];
        let mut start = 0.0;
        for &b in breaks {
            if !(b >= start) || !b.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "mesh break points must be nondecreasing from 0, got {b}"
                )));
            }
            if b == start {
                continue;
            }
            let steps = ((b - start) / dt - 1e-9).ceil().max(1.0) as usize;
            let h = (b - start) / steps as f64;
            times.extend((1..steps).map(|i| start + i as f64 * h));
            times.push(b);
            start = b;
        }
        Ok(Self {
            times: times.into(),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn dt(&self, step: usize) -> f64 {
        self.times[step + 1] - self.times[step]
    }

    /// Index of the mesh point equal to `t` (within rounding).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&s| s < t - 1e-12);
        (i < self.times.len() && (self.times[i] - t).abs() <= 1e-12).then_some(i)
    }
}

/// Chooses the control active on the next mesh step.
pub trait Policy: Sync {
    /// `states` holds `X` at the mesh times `times[..states.len()]`; the
    /// control is for the step starting at the last of them.
    fn choose(&self, times: &[f64], states: &[f64]) -> ControlChoice;
}

/// The policies of the duality check.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlPolicy {
    Constant(ControlChoice),
    Grid(GreedyTable),
}

impl ControlPolicy {
    pub fn validate(&self, set: &UncertaintySet) -> Result<()> {
        match self {
            ControlPolicy::Constant(c) => check_choice(c, set),
            ControlPolicy::Grid(_) => Ok(()),
        }
    }
}

pub(crate) fn check_choice(c: &ControlChoice, set: &UncertaintySet) -> Result<()> {
    if c.vol >= set.vols().len() {
        return Err(Error::InvalidParameter(format!(
            "volatility index {} out of range",
            c.vol
        )));
    }
    match c.measure {
        Some(m) if m >= set.measures().len() => Err(Error::InvalidParameter(format!(
            "measure index {m} out of range"
        ))),
        None if !set.is_jump_free() => Err(Error::InvalidParameter(
            "a jump measure must be selected when the family is not jump-free".into(),
        )),
        _ => Ok(()),
    }
}

impl Policy for ControlPolicy {
    fn choose(&self, times: &[f64], states: &[f64]) -> ControlChoice {
        match self {
            ControlPolicy::Constant(c) => *c,
            ControlPolicy::Grid(table) => {
                let k = states.len() - 1;
                table.choice(times[k], states[k])
            }
        }
    }
}

/// One accepted jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    /// Mesh step containing the jump.
    pub step: usize,
    pub time: f64,
    /// Index into the reference atoms.
    pub mark: usize,
    pub size: f64,
    /// State just before the jump.
    pub pre_state: f64,
}

/// A simulated path on a mesh. Within a step the Gaussian increment is
/// applied first, then the jumps in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub times: Arc<[f64]>,
    /// `X` at every mesh time.
    pub states: Vec<f64>,
    /// Diffusion increment `Q sqrt(dt) xi` of every step.
    pub db: Vec<f64>,
    /// `QQ^T` of the control active on every step, so `d<B> = variance * dt`.
    pub variance: Vec<f64>,
    pub controls: Vec<ControlChoice>,
    pub jumps: Vec<JumpEvent>,
    pub seed: u64,
    pub index: u64,
}

impl PathSample {
    pub fn terminal(&self) -> f64 {
        self.states[self.states.len() - 1]
    }

    /// `X` at mesh time `t`.
    pub fn state_at(&self, t: f64) -> Result<f64> {
        let i = self.times.partition_point(|&s| s < t - 1e-12);
        if i < self.times.len() && (self.times[i] - t).abs() <= 1e-12 {
            Ok(self.states[i])
        } else {
            Err(Error::PathMissingTime(t))
        }
    }

    /// `(X_{t_1}, X_{t_2} - X_{t_1}, ...)` for partition times on the mesh.
    pub fn increments(&self, partition: &[f64]) -> Result<Vec<f64>> {
        let mut prev = 0.0;
        partition
            .iter()
            .map(|&t| {
                let x = self.state_at(t)?;
                let inc = x - prev;
                prev = x;
                Ok(inc)
            })
            .collect()
    }
}

/// Proposal-and-thinning jump generator of a family.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    rate: f64,
    marks: Option<WeightedIndex<f64>>,
    locations: Vec<f64>,
    /// `accept[m][j] = v_m({z_j}) / (c_upper pi({z_j}))`.
    accept: Vec<Vec<f64>>,
}

impl JumpSampler {
    pub fn new(set: &UncertaintySet) -> Self {
        let reference = set.reference();
        let c = set.c_upper();
        let pi: Vec<f64> = reference.atoms().iter().map(|a| a.weight).collect();
        let marks = (!pi.is_empty()).then(|| WeightedIndex::new(&pi).expect("positive weights"));
        let accept = set
            .weights()
            .iter()
            .map(|w| {
                w.iter()
                    .zip(&pi)
                    .map(|(v, p)| (v / (c * p)).min(1.0))
                    .collect()
            })
            .collect();
        Self {
            rate: c * reference.mass(),
            marks,
            locations: set.jump_locations(),
            accept,
        }
    }

    /// Proposal rate `mass(c_upper pi)`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Proposals on an interval of length `dt`: sorted `(fraction of dt, mark, uniform)`,
    /// the uniform deciding acceptance for whichever measure is active.
    pub fn propose<R: Rng>(&self, rng: &mut R, dt: f64) -> Vec<(f64, usize, f64)> {
        let Some(marks) = &self.marks else {
            return Vec::new();
        };
        let mean = self.rate * dt;
        if mean <= 0.0 {
            return Vec::new();
        }
        let count: f64 = Poisson::new(mean).expect("positive mean").sample(rng);
        let mut out: Vec<(f64, usize, f64)> = (0..count as usize)
            .map(|_| (rng.random::<f64>(), marks.sample(rng), rng.random::<f64>()))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    pub fn accepts(&self, measure: usize, mark: usize, uniform: f64) -> bool {
        uniform < self.accept[measure][mark]
    }

    pub fn location(&self, mark: usize) -> f64 {
        self.locations[mark]
    }
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn simulate_one<P: Policy + ?Sized>(
    set: &UncertaintySet,
    sampler: &JumpSampler,
    variances: &[f64],
    policy: &P,
    mesh: &Mesh,
    seed: u64,
    index: u64,
) -> PathSample {
    let mut rng = path_rng(seed, index);
    let steps = mesh.steps();
    let times = mesh.times.clone();
    let mut states = Vec::with_capacity(steps + 1);
    let mut db = Vec::with_capacity(steps);
    let mut variance = Vec::with_capacity(steps);
    let mut controls = Vec::with_capacity(steps);
    let mut jumps = Vec::new();
    states.push(0.0);
    let has_jumps = !set.is_jump_free();
    for k in 0..steps {
        let control = policy.choose(&times, &states);
        let dt = mesh.dt(k);
        let xi: f64 = rng.sample(StandardNormal);
        let var = variances[control.vol];
        let dbk = var.sqrt() * dt.sqrt() * xi;
        let mut x = states[k] + dbk;
        if has_jumps {
            for (frac, mark, u) in sampler.propose(&mut rng, dt) {
                let m = control.measure.expect("jump measure selected");
                if sampler.accepts(m, mark, u) {
                    let size = sampler.location(mark);
                    jumps.push(JumpEvent {
                        step: k,
                        time: times[k] + frac * dt,
                        mark,
                        size,
                        pre_state: x,
                    });
                    x += size;
                }
            }
        }
        states.push(x);
        db.push(dbk);
        variance.push(var);
        controls.push(control);
    }
    PathSample {
        times,
        states,
        db,
        variance,
        controls,
        jumps,
        seed,
        index,
    }
}

/// Simulates `n_paths` paths in parallel and maps each one through `f`,
/// returning the results in path order. Paths are not retained.
pub fn simulate_map<P, T, F>(
    set: &UncertaintySet,
    policy: &P,
    n_paths: usize,
    mesh: &Mesh,
    seed: u64,
    f: F,
) -> Result<Vec<T>>
where
    P: Policy + ?Sized,
    T: Send,
    F: Fn(&PathSample) -> T + Sync,
{
    if set.dim() != 1 {
        return Err(Error::UnsupportedDimension(set.dim()));
    }
    let sampler = JumpSampler::new(set);
    let variances = set.variances();
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            f(&simulate_one(
                set, &sampler, &variances, policy, mesh, seed, i,
            ))
        })
        .collect())
}

pub fn sample_paths<P: Policy + ?Sized>(
    set: &UncertaintySet,
    policy: &P,
    n_paths: usize,
    mesh: &Mesh,
    seed: u64,
) -> Result<Vec<PathSample>> {
    simulate_map(set, policy, n_paths, mesh, seed, PathSample::clone)
}

/// Sample mean with its standard error `sample_std / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl McEstimate {
    /// Sums in slice order, so the result is independent of how the samples were produced.
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                n_paths: 0,
                seed,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            se,
            n_paths: n,
            seed,
        }
    }
}

/// Ordinary expectation of `phi(X_T)` under `policy`.
pub fn mc_expect<P: Policy + ?Sized>(
    set: &UncertaintySet,
    policy: &P,
    phi: impl Fn(f64) -> f64 + Sync,
    n_paths: usize,
    mesh: &Mesh,
    seed: u64,
) -> Result<McEstimate> {
    let values = simulate_map(set, policy, n_paths, mesh, seed, |p| phi(p.terminal()))?;
    Ok(McEstimate::from_samples(&values, seed))
}

/// One row of a duality report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEntry {
    pub name: String,
    pub mc: McEstimate,
    /// `mc_mean - pde_value - 3 se - scheme_tol`; nonpositive when the lower bound holds.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub pde_value: f64,
    pub scheme_tol: f64,
    pub policies: Vec<PolicyEntry>,
    /// `(pde_value - greedy mean) / max(1, |pde_value|)`.
    pub greedy_relative_gap: f64,
}

impl DualityReport {
    pub fn max_violation(&self) -> f64 {
        self.policies
            .iter()
            .map(|p| p.violation)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Compares MC means of the given policies and of the greedy policy of the
/// PDE solution with the PDE value `u(0, 0)`.
pub fn duality_gap(
    set: &UncertaintySet,
    phi: &TerminalFunction,
    grid: &Grid,
    policies: &[(String, ControlPolicy)],
    mc: &McParams,
) -> Result<DualityReport> {
    for (_, p) in policies {
        p.validate(set)?;
    }
    let sol = solve_backward(set, phi, grid)?;
    let pde_value = sol.u00();
    let tol = scheme_tol(set, phi, grid, 0.0)?;
    let mesh = Mesh::uniform(grid.horizon, mc.mesh_dt)?;
    let greedy = ControlPolicy::Grid(greedy_policy(&sol, set));

    let mut entries = Vec::with_capacity(policies.len() + 1);
    let all = policies
        .iter()
        .map(|(n, p)| (n.as_str(), p))
        .chain(std::iter::once(("greedy", &greedy)));
    for (name, policy) in all {
        let est = mc_expect(set, policy, |x| phi.eval(x), mc.n_paths, &mesh, mc.seed)?;
        entries.push(PolicyEntry {
            name: name.to_string(),
            mc: est,
            violation: est.mean - pde_value - 3.0 * est.se - tol,
        });
    }
    let greedy_mean = entries[entries.len() - 1].mc.mean;
    Ok(DualityReport {
        pde_value,
        scheme_tol: tol,
        greedy_relative_gap: (pde_value - greedy_mean) / pde_value.abs().max(1.0),
        policies: entries,
    })
}

/// Named constant policies for every control of the family, as `"v{m}_q{q}"`
/// (`"q{q}"` when jump-free).
pub fn constant_policies(set: &UncertaintySet) -> Vec<(String, ControlPolicy)> {
    crate::operator::constant_controls(set)
        .into_iter()
        .map(|c| (control_name(&c), ControlPolicy::Constant(c)))
        .collect()
}

pub fn control_name(c: &ControlChoice) -> String {
    match c.measure {
        Some(m) => format!("v{m}_q{}", c.vol),
        None => format!("q{}", c.vol),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(m: Option<usize>, q: usize) -> ControlPolicy {
        ControlPolicy::Constant(ControlChoice::new(m, q))
    }

    #[test]
    fn mesh_contains_break_points() {
        let mesh = Mesh::with_breaks(&[0.25, 0.6], 0.1).unwrap();
        assert_eq!(mesh.index_of(0.25), Some(3));
        assert_eq!(mesh.horizon(), 0.6);
        assert!((0..mesh.steps()).all(|k| mesh.dt(k) <= 0.1 + 1e-12));
        assert_eq!(Mesh::uniform(1.0, 0.25).unwrap().steps(), 4);
        assert!(Mesh::uniform(1.0, 0.0).is_err());
    }

    #[test]
    fn zero_policy_stays_at_origin() {
        let set = UncertaintySet::scalar(&[], &[0.0], 0.0, 1.0).unwrap();
        let mesh = Mesh::uniform(1.0, 0.1).unwrap();
        let paths = sample_paths(&set, &constant(None, 0), 20, &mesh, 7).unwrap();
        assert!(paths.iter().all(|p| p.states.iter().all(|&x| x == 0.0)));
        let est = mc_expect(&set, &constant(None, 0), |x| 3.0 + x, 50, &mesh, 7).unwrap();
        assert_eq!((est.mean, est.se), (3.0, 0.0));
    }

    #[test]
    fn brownian_variance() {
        let set = UncertaintySet::scalar(&[], &[1.0], 0.5, 1.0).unwrap();
        let mesh = Mesh::uniform(1.0, 0.05).unwrap();
        let n = 20_000;
        let xs = simulate_map(&set, &constant(None, 0), n, &mesh, 11, |p| p.terminal()).unwrap();
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let est = McEstimate::from_samples(&sq, 11);
        assert!((est.mean - 1.0).abs() <= 3.0 * est.se, "{est:?}");
    }

    #[test]
    fn poisson_jump_count() {
        let set = UncertaintySet::scalar(&[&[(1.0, 2.0)]], &[0.0], 0.0, 4.0).unwrap();
        let mesh = Mesh::uniform(1.0, 0.1).unwrap();
        let counts = simulate_map(&set, &constant(Some(0), 0), 20_000, &mesh, 3, |p| {
            p.jumps.len() as f64
        })
        .unwrap();
        let est = McEstimate::from_samples(&counts, 3);
        assert!((est.mean - 2.0).abs() <= 3.0 * est.se, "{est:?}");
    }

    #[test]
    fn estimates_do_not_depend_on_thread_count() {
        let set = UncertaintySet::scalar(
            &[&[(1.0, 1.0), (-0.5, 2.0)], &[(1.0, 2.0), (-0.5, 0.5)]],
            &[0.5, 1.0],
            0.1,
            4.0,
        )
        .unwrap();
        let mesh = Mesh::uniform(0.5, 0.01).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    mc_expect(&set, &constant(Some(1), 1), |x| x.sin(), 3000, &mesh, 42).unwrap()
                })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
    }

    #[test]
    fn standard_error_formula() {
        let est = McEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0], 0);
        assert_eq!(est.mean, 2.5);
        assert!((est.se - (5.0_f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn policy_indices_are_checked() {
        let set = UncertaintySet::scalar(&[&[(1.0, 1.0)]], &[1.0], 0.5, 4.0).unwrap();
        assert!(constant(Some(1), 0).validate(&set).is_err());
        assert!(constant(Some(0), 1).validate(&set).is_err());
        assert!(constant(None, 0).validate(&set).is_err());
        assert!(constant(Some(0), 0).validate(&set).is_ok());
    }
}
