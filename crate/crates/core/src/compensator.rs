//! Compensated pure-jump integrals of elementary random fields.
//!
//! For a step field `K(s, z) = sum_l F_{k,l} psi_l(z)` on `]t_k, t_{k+1}]`
//! the compensator `J_t(K)` integrates `sup_v int K(s, z) v(dz)` in time.
//! With atomic measures that integral is a finite sum, so `J` is exact and
//! only the path means carry Monte Carlo error.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LevyMeasure, UncertaintySet, VolatilityMatrix};
use crate::operator::{argmax_first, ControlChoice};
use crate::payoff::Payoff;
use crate::sim::{simulate_map, McEstimate, McParams, Mesh, PathSample, Policy};

/// Serialized form of a [`StepRandomField`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFieldSpec {
    pub times: Vec<f64>,
    pub marks: Vec<Payoff>,
    /// `coefs[k][l]`, a payoff of the increments observed up to `times[k]`.
    pub coefs: Vec<Vec<Payoff>>,
    /// Optional `d<B>` coefficients `H_k`, one per interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vol_coefs: Option<Vec<Payoff>>,
}

/// `K(s, z) = sum_l F_{k,l}(X) psi_l(z)` for `s` in `]t_k, t_{k+1}]`.
///
/// The coefficients on interval `k` see the increments
/// `(X_{t_0}, X_{t_1} - X_{t_0}, ..., X_{t_k} - X_{t_{k-1}})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepFieldSpec", into = "StepFieldSpec")]
pub struct StepRandomField {
    spec: StepFieldSpec,
}

impl TryFrom<StepFieldSpec> for StepRandomField {
    type Error = Error;

    fn try_from(spec: StepFieldSpec) -> Result<Self> {
        let m = spec.times.len();
        if m < 2 {
            return Err(Error::InvalidField(
                "a step field needs at least two times".into(),
            ));
        }
        if spec.times[0] < 0.0 || spec.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidField(
                "times must be increasing from 0".into(),
            ));
        }
        if spec.coefs.len() != m - 1 {
            return Err(Error::InvalidField(format!(
                "{} intervals need {} coefficient rows, got {}",
                m - 1,
                m - 1,
                spec.coefs.len()
            )));
        }
        for (k, row) in spec.coefs.iter().enumerate() {
            if row.len() != spec.marks.len() {
                return Err(Error::InvalidField(format!(
                    "row {k} has {} coefficients for {} marks",
                    row.len(),
                    spec.marks.len()
                )));
            }
            for f in row {
                let a = f.analyze(k + 1)?;
                if !a.is_bounded_lipschitz() {
                    return Err(Error::InvalidField(format!(
                        "coefficient on interval {k} must be bounded and Lipschitz"
                    )));
                }
            }
        }
        if let Some(h) = &spec.vol_coefs {
            if h.len() != m - 1 {
                return Err(Error::InvalidField(
                    "one volatility coefficient per interval".into(),
                ));
            }
            for (k, f) in h.iter().enumerate() {
                if !f.analyze(k + 1)?.is_bounded_lipschitz() {
                    return Err(Error::InvalidField(format!(
                        "volatility coefficient on interval {k} must be bounded and Lipschitz"
                    )));
                }
            }
        }
        for (l, psi) in spec.marks.iter().enumerate() {
            if psi.arity() > 1 {
                return Err(Error::InvalidField(format!(
                    "mark function {l} takes one argument"
                )));
            }
            if psi.eval(&[0.0]) != 0.0 {
                return Err(Error::InvalidField(format!(
                    "mark function {l} is nonzero at 0"
                )));
            }
        }
        Ok(Self { spec })
    }
}

impl From<StepRandomField> for StepFieldSpec {
    fn from(f: StepRandomField) -> Self {
        f.spec
    }
}

impl StepRandomField {
    pub fn new(
        times: Vec<f64>,
        marks: Vec<Payoff>,
        coefs: Vec<Vec<Payoff>>,
        vol_coefs: Option<Vec<Payoff>>,
    ) -> Result<Self> {
        StepFieldSpec {
            times,
            marks,
            coefs,
            vol_coefs,
        }
        .try_into()
    }

    /// The zero field on the given times.
    pub fn zero(times: Vec<f64>) -> Result<Self> {
        let rows = times.len().saturating_sub(1);
        Self::new(times, Vec::new(), vec![Vec::new(); rows], None)
    }

    pub fn times(&self) -> &[f64] {
        &self.spec.times
    }

    pub fn marks(&self) -> &[Payoff] {
        &self.spec.marks
    }

    pub fn intervals(&self) -> usize {
        self.spec.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.spec.times[self.spec.times.len() - 1]
    }

    pub fn has_vol_coefs(&self) -> bool {
        self.spec.vol_coefs.is_some()
    }

    /// Increments that the coefficients of interval `k` depend on.
    pub fn observed(&self, path: &PathSample, k: usize) -> Result<Vec<f64>> {
        path.increments(&self.spec.times[..=k])
    }

    /// `F_{k,l}` at the observed increments.
    pub fn coefs_at(&self, k: usize, observed: &[f64]) -> Vec<f64> {
        self.spec.coefs[k]
            .iter()
            .map(|f| f.eval(observed))
            .collect()
    }

    /// `H_k` at the observed increments, zero without volatility coefficients.
    pub fn vol_coef_at(&self, k: usize, observed: &[f64]) -> f64 {
        self.spec
            .vol_coefs
            .as_ref()
            .map_or(0.0, |h| h[k].eval(observed))
    }

    /// Checks that no two marks are nonzero on the same atom of the family.
    pub fn check_supports(&self, set: &UncertaintySet) -> Result<()> {
        for atom in set.reference().atoms() {
            let active = self
                .spec
                .marks
                .iter()
                .filter(|psi| psi.eval(&atom.location) != 0.0)
                .count();
            if active > 1 {
                return Err(Error::InvalidField(format!(
                    "mark functions overlap at {:?}",
                    atom.location
                )));
            }
        }
        Ok(())
    }

    /// Interval index `k` with `t_k < t <= t_{k+1}`.
    fn interval_of(&self, t: f64) -> Option<usize> {
        let times = &self.spec.times;
        if t <= times[0] || t > times[times.len() - 1] {
            return None;
        }
        Some(times.partition_point(|&s| s < t) - 1)
    }

    /// `K(s, z)` given the increments observed by the interval containing `s`.
    pub fn value(&self, k: usize, observed: &[f64], z: f64) -> f64 {
        self.spec.coefs[k]
            .iter()
            .zip(&self.spec.marks)
            .map(|(f, psi)| {
                let p = psi.eval(&[z]);
                if p == 0.0 {
                    0.0
                } else {
                    f.eval(observed) * p
                }
            })
            .sum()
    }
}

/// `int psi dv` over the atoms of `v`.
pub fn measure_integral(v: &LevyMeasure, psi: &Payoff) -> f64 {
    v.atoms()
        .iter()
        .map(|a| psi.eval(&a.location) * a.weight)
        .sum()
}

/// Table `mark_integrals[m][l] = int psi_l dv_m`.
pub fn mark_integrals(measures: &[LevyMeasure], marks: &[Payoff]) -> Vec<Vec<f64>> {
    measures
        .iter()
        .map(|v| marks.iter().map(|psi| measure_integral(v, psi)).collect())
        .collect()
}

/// `max_m sum_l coefs[l] * integrals[m][l]` and the first maximizer.
pub fn compensator_rate(integrals: &[Vec<f64>], coefs: &[f64]) -> (f64, Option<usize>) {
    match argmax_first(
        integrals
            .iter()
            .map(|row| row.iter().zip(coefs).map(|(a, c)| a * c).sum()),
    ) {
        Some((m, v)) => (v, Some(m)),
        None => (0.0, None),
    }
}

/// Lipschitz constant of `J` in the coefficients of interval `k`:
/// `sum_l max_v int |psi_l| dv * (t_{k+1} - t_k)`.
pub fn lipschitz_constant(set: &UncertaintySet, field: &StepRandomField, k: usize) -> f64 {
    let dt = field.spec.times[k + 1] - field.spec.times[k];
    field
        .spec
        .marks
        .iter()
        .map(|psi| {
            let abs = Payoff::abs(psi.clone());
            set.measures()
                .iter()
                .map(|v| measure_integral(v, &abs))
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        * dt
}

/// Evaluates `J_t(K)` along paths; the mark integrals are tabulated once.
#[derive(Debug, Clone)]
pub struct Compensator<'a> {
    set: &'a UncertaintySet,
    field: &'a StepRandomField,
    integrals: Vec<Vec<f64>>,
}

impl<'a> Compensator<'a> {
    pub fn new(set: &'a UncertaintySet, field: &'a StepRandomField) -> Result<Self> {
        if set.dim() != 1 {
            return Err(Error::UnsupportedDimension(set.dim()));
        }
        field.check_supports(set)?;
        Ok(Self {
            set,
            field,
            integrals: mark_integrals(set.measures(), field.marks()),
        })
    }

    /// `sup_v int K(s, z) v(dz)` on interval `k` and its maximizing measure.
    pub fn rate(&self, k: usize, observed: &[f64]) -> (f64, Option<usize>) {
        compensator_rate(&self.integrals, &self.field.coefs_at(k, observed))
    }

    /// `J_t(K)`.
    pub fn value(&self, t: f64, path: &PathSample) -> Result<f64> {
        let times = self.field.times();
        let mut total = 0.0;
        for k in 0..self.field.intervals() {
            let len = t.min(times[k + 1]) - t.min(times[k]);
            if len > 0.0 {
                total += len * self.rate(k, &self.field.observed(path, k)?).0;
            }
        }
        Ok(total)
    }

    /// `sum_{u <= t} K(u, Delta X_u)`.
    pub fn jump_sum(&self, t: f64, path: &PathSample) -> Result<f64> {
        let mut total = 0.0;
        let mut cache: Option<(usize, Vec<f64>)> = None;
        for jump in path.jumps.iter().filter(|j| j.time <= t) {
            let Some(k) = self.field.interval_of(jump.time) else {
                continue;
            };
            if cache.as_ref().is_none_or(|(c, _)| *c != k) {
                cache = Some((k, self.field.observed(path, k)?));
            }
            let observed = &cache.as_ref().expect("filled above").1;
            total += self.field.value(k, observed, jump.size);
        }
        Ok(total)
    }

    /// `M_t = sum_{u <= t} K(u, Delta X_u) - J_t(K)`.
    pub fn integral(&self, t: f64, path: &PathSample) -> Result<f64> {
        Ok(self.jump_sum(t, path)? - self.value(t, path)?)
    }

    /// `N_t = sum_k [1/2 H_k (<B>_{t_{k+1}} - <B>_{t_k}) - G^c(H_k) (t_{k+1} - t_k)]`,
    /// truncated at `t`; a non-increasing G-martingale.
    pub fn vol_part(&self, t: f64, path: &PathSample) -> Result<f64> {
        if !self.field.has_vol_coefs() {
            return Ok(0.0);
        }
        let variances = self.set.variances();
        let times = self.field.times();
        let mut total = 0.0;
        for k in 0..self.field.intervals() {
            let (a, b) = (t.min(times[k]), t.min(times[k + 1]));
            if b <= a {
                continue;
            }
            let h = self.field.vol_coef_at(k, &self.field.observed(path, k)?);
            let gc = variances
                .iter()
                .map(|s| 0.5 * h * s)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut bracket = 0.0;
            for step in 0..path.db.len() {
                let (s0, s1) = (path.times[step], path.times[step + 1]);
                if s0 >= a - 1e-12 && s1 <= b + 1e-12 {
                    bracket += path.variance[step] * (s1 - s0);
                }
            }
            total += 0.5 * h * bracket - gc * (b - a);
        }
        Ok(total)
    }
}

/// `J_t(K)` along `path`.
pub fn compensator_value(
    set: &UncertaintySet,
    field: &StepRandomField,
    t: f64,
    path: &PathSample,
) -> Result<f64> {
    Compensator::new(set, field)?.value(t, path)
}

/// `sum_{u <= t} K(u, Delta X_u) - J_t(K)` along `path`.
pub fn compensated_integral(
    set: &UncertaintySet,
    field: &StepRandomField,
    path: &PathSample,
    t: f64,
) -> Result<f64> {
    Compensator::new(set, field)?.integral(t, path)
}

/// Control that attains the supremum in `J` on every interval, together
/// with the maximizing volatility for the `H` coefficients.
pub struct FieldGreedyPolicy<'a> {
    comp: &'a Compensator<'a>,
    variances: Vec<f64>,
}

impl<'a> FieldGreedyPolicy<'a> {
    pub fn new(comp: &'a Compensator<'a>) -> Self {
        Self {
            variances: comp.set.variances(),
            comp,
        }
    }
}

impl Policy for FieldGreedyPolicy<'_> {
    fn choose(&self, times: &[f64], states: &[f64]) -> ControlChoice {
        let field = self.comp.field;
        let now = times[states.len() - 1];
        let default_measure = (!self.comp.set.is_jump_free()).then_some(0);
        let ft = field.times();
        if now < ft[0] || now >= ft[ft.len() - 1] {
            return ControlChoice::new(default_measure, 0);
        }
        let k = ft.partition_point(|&s| s <= now) - 1;
        let mut observed = Vec::with_capacity(k + 1);
        let mut prev = 0.0;
        for &s in &ft[..=k] {
            let i = times.partition_point(|&u| u < s - 1e-12);
            let x = states[i];
            observed.push(x - prev);
            prev = x;
        }
        let measure = if default_measure.is_some() {
            self.comp.rate(k, &observed).1.or(default_measure)
        } else {
            None
        };
        let h = field.vol_coef_at(k, &observed);
        let vol = argmax_first(self.variances.iter().map(|s| 0.5 * h * s)).map_or(0, |(i, _)| i);
        ControlChoice::new(measure, vol)
    }
}

/// Per-interval increment means of `M` (plus `N` with volatility
/// coefficients) under one control.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlIncrements {
    pub name: String,
    pub increments: Vec<McEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub controls: Vec<ControlIncrements>,
    /// Per interval: largest `mean - 3 se` excess over zero across controls (`<= 0` passes).
    pub supermartingale_margin: Vec<f64>,
    /// Per interval: mean and SE of the control with the largest mean.
    pub max_mean: Vec<McEstimate>,
    pub passed: bool,
}

/// MC check that the compensated integral is a G-martingale: a
/// supermartingale under every constant control, with the supremum of the
/// increment means attained (zero) by the field-greedy control.
pub fn verify_martingale_mc(
    set: &UncertaintySet,
    field: &StepRandomField,
    mc: &McParams,
) -> Result<MartingaleReport> {
    let comp = Compensator::new(set, field)?;
    let mesh = Mesh::with_breaks(field.times(), mc.mesh_dt)?;
    let greedy = FieldGreedyPolicy::new(&comp);
    let mut controls = Vec::new();
    for (name, policy) in crate::sim::constant_policies(set) {
        controls.push(increments_under(&comp, &policy, name, &mesh, mc)?);
    }
    controls.push(increments_under(
        &comp,
        &greedy,
        "field_greedy".into(),
        &mesh,
        mc,
    )?);

    let n = field.intervals();
    let mut supermartingale_margin = Vec::with_capacity(n);
    let mut max_mean = Vec::with_capacity(n);
    let mut passed = true;
    for k in 0..n {
        let margin = controls
            .iter()
            .map(|c| c.increments[k].mean - 3.0 * c.increments[k].se)
            .fold(f64::NEG_INFINITY, f64::max);
        let best = controls
            .iter()
            .map(|c| c.increments[k])
            .reduce(|a, b| if b.mean > a.mean { b } else { a })
            .expect("at least one control");
        passed &= margin <= 0.0 && best.mean.abs() <= 3.0 * best.se;
        supermartingale_margin.push(margin);
        max_mean.push(best);
    }
    Ok(MartingaleReport {
        controls,
        supermartingale_margin,
        max_mean,
        passed,
    })
}

fn increments_under<P: Policy + ?Sized>(
    comp: &Compensator<'_>,
    policy: &P,
    name: String,
    mesh: &Mesh,
    mc: &McParams,
) -> Result<ControlIncrements> {
    let times = comp.field.times().to_vec();
    let per_path = simulate_map(comp.set, policy, mc.n_paths, mesh, mc.seed, |path| {
        let values = times
            .iter()
            .map(|&t| Ok(comp.integral(t, path)? + comp.vol_part(t, path)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(values.windows(2).map(|w| w[1] - w[0]).collect::<Vec<f64>>())
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let increments = (0..times.len() - 1)
        .map(|k| {
            let samples: Vec<f64> = per_path.iter().map(|p| p[k]).collect();
            McEstimate::from_samples(&samples, mc.seed)
        })
        .collect();
    Ok(ControlIncrements { name, increments })
}

/// A family of joint `(v, Q)` pairs that is not a product set.
///
/// Only [`verify_ab_identity`] accepts it.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSet {
    pairs: Vec<(LevyMeasure, VolatilityMatrix)>,
}

impl CoupledSet {
    pub fn new(pairs: Vec<(LevyMeasure, VolatilityMatrix)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyFamily);
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(LevyMeasure, VolatilityMatrix)] {
        &self.pairs
    }
}

/// The families that can be fed to [`verify_ab_identity`].
pub enum AbModel<'a> {
    Product(&'a UncertaintySet),
    Coupled(&'a CoupledSet),
}

impl AbModel<'_> {
    fn measures(&self) -> Vec<&LevyMeasure> {
        match self {
            AbModel::Product(s) => s.measures().iter().collect(),
            AbModel::Coupled(c) => c.pairs.iter().map(|(v, _)| v).collect(),
        }
    }

    fn vols(&self) -> Vec<&VolatilityMatrix> {
        match self {
            AbModel::Product(s) => s.vols().iter().collect(),
            AbModel::Coupled(c) => c.pairs.iter().map(|(_, q)| q).collect(),
        }
    }

    fn pairs(&self) -> Vec<(&LevyMeasure, &VolatilityMatrix)> {
        match self {
            AbModel::Product(s) => {
                let vols = s.vols();
                let measures: Vec<Option<&LevyMeasure>> = if s.measures().is_empty() {
                    vec![None]
                } else {
                    s.measures().iter().map(Some).collect()
                };
                measures
                    .into_iter()
                    .flat_map(|v| vols.iter().map(move |q| (v, q)))
                    .filter_map(|(v, q)| v.map(|v| (v, q)))
                    .collect()
            }
            AbModel::Coupled(c) => c.pairs.iter().map(|(v, q)| (v, q)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbResult {
    pub a: f64,
    pub b: f64,
    pub gap: f64,
}

/// Joint supremum `A` against the separated suprema `B` on interval `k` at
/// the observed increments `x`, with `1/2 tr(H QQ^T)` as the volatility term.
pub fn verify_ab_identity(
    model: &AbModel<'_>,
    field: &StepRandomField,
    h: &DMatrix<f64>,
    k: usize,
    x: &[f64],
) -> Result<AbResult> {
    if k >= field.intervals() {
        return Err(Error::InvalidField(format!("interval {k} out of range")));
    }
    let dt = field.times()[k + 1] - field.times()[k];
    let coefs = field.coefs_at(k, x);
    let jump_term = |v: &LevyMeasure| -> f64 {
        field
            .marks()
            .iter()
            .zip(&coefs)
            .map(|(psi, c)| c * measure_integral(v, psi))
            .sum()
    };
    let vol_term = |q: &VolatilityMatrix| 0.5 * (h * q.gram()).trace();

    let measures = model.measures();
    let jump_sup = if measures.is_empty() {
        0.0
    } else {
        measures
            .iter()
            .map(|v| jump_term(v))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let vol_sup = model
        .vols()
        .iter()
        .map(|q| vol_term(q))
        .fold(f64::NEG_INFINITY, f64::max);
    let b = (jump_sup + vol_sup) * dt;
    let pairs = model.pairs();
    let a = if pairs.is_empty() {
        vol_sup
    } else {
        pairs
            .iter()
            .map(|(v, q)| jump_term(v) + vol_term(q))
            .fold(f64::NEG_INFINITY, f64::max)
    } * dt;
    Ok(AbResult { a, b, gap: b - a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{sample_paths, ControlPolicy};

    fn two_masses() -> UncertaintySet {
        UncertaintySet::scalar(&[&[(1.0, 1.0)], &[(1.0, 2.0)]], &[0.0], 0.0, 4.0).unwrap()
    }

    fn identity_field(times: Vec<f64>, coef: f64) -> StepRandomField {
        let rows = times.len() - 1;
        StepRandomField::new(
            times,
            vec![Payoff::arg(0)],
            vec![vec![Payoff::constant(coef)]; rows],
            None,
        )
        .unwrap()
    }

    fn quiet_path(set: &UncertaintySet, horizon: f64) -> PathSample {
        let mesh = Mesh::uniform(horizon, 0.5).unwrap();
        let mut p = sample_paths(
            set,
            &ControlPolicy::Constant(ControlChoice::new(Some(0), 0)),
            1,
            &mesh,
            1,
        )
        .unwrap()
        .remove(0);
        p.jumps.clear();
        p.states.iter_mut().for_each(|x| *x = 0.0);
        p
    }

    #[test]
    fn compensator_examples() {
        let set = two_masses();
        let path = quiet_path(&set, 1.0);
        let field = identity_field(vec![0.0, 1.0], 1.0);
        assert_eq!(compensator_value(&set, &field, 1.0, &path).unwrap(), 2.0);
        let zero = StepRandomField::zero(vec![0.0, 1.0]).unwrap();
        assert_eq!(compensator_value(&set, &zero, 1.0, &path).unwrap(), 0.0);
        let neg = identity_field(vec![0.0, 0.5], -1.0);
        assert_eq!(compensator_value(&set, &neg, 1.0, &path).unwrap(), -0.5);
    }

    #[test]
    fn jump_free_path_drains() {
        let set = two_masses();
        let path = quiet_path(&set, 1.0);
        let field = identity_field(vec![0.0, 1.0], 1.0);
        assert!(compensated_integral(&set, &field, &path, 1.0).unwrap() < 0.0);
        let zero = StepRandomField::zero(vec![0.0, 1.0]).unwrap();
        assert_eq!(compensated_integral(&set, &zero, &path, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn single_measure_compensation_is_exact_in_mean() {
        let set = UncertaintySet::scalar(&[&[(1.0, 2.0)]], &[0.0], 0.0, 4.0).unwrap();
        let field = identity_field(vec![0.0, 1.0], 1.0);
        let comp = Compensator::new(&set, &field).unwrap();
        let mesh = Mesh::uniform(1.0, 0.1).unwrap();
        let policy = ControlPolicy::Constant(ControlChoice::new(Some(0), 0));
        let m = simulate_map(&set, &policy, 20_000, &mesh, 5, |p| {
            comp.integral(1.0, p).unwrap()
        })
        .unwrap();
        let est = McEstimate::from_samples(&m, 5);
        assert!(est.mean.abs() <= 3.0 * est.se, "{est:?}");
    }

    #[test]
    fn ab_examples() {
        let field = identity_field(vec![0.0, 0.1], 1.0);
        let coupled = CoupledSet::new(vec![
            (
                LevyMeasure::from_scalar(&[(1.0, 1.0)]),
                VolatilityMatrix::scalar(1.0),
            ),
            (
                LevyMeasure::from_scalar(&[(1.0, 2.0)]),
                VolatilityMatrix::scalar(0.5),
            ),
        ])
        .unwrap();
        let h = DMatrix::from_element(1, 1, 1.0);
        let r = verify_ab_identity(&AbModel::Coupled(&coupled), &field, &h, 0, &[0.0]).unwrap();
        assert!((r.a - 2.125 * 0.1).abs() < 1e-15);
        assert!((r.b - 2.5 * 0.1).abs() < 1e-15);
        assert!((r.gap - 0.375 * 0.1).abs() < 1e-15);

        let product =
            UncertaintySet::scalar(&[&[(1.0, 1.0)], &[(1.0, 2.0)]], &[0.5, 1.0], 0.1, 4.0).unwrap();
        let r = verify_ab_identity(&AbModel::Product(&product), &field, &h, 0, &[0.0]).unwrap();
        assert!(r.gap.abs() <= 1e-12);

        let zero = StepRandomField::zero(vec![0.0, 0.1]).unwrap();
        let h0 = DMatrix::zeros(1, 1);
        let r = verify_ab_identity(&AbModel::Product(&product), &zero, &h0, 0, &[0.0]).unwrap();
        assert_eq!((r.a, r.b), (0.0, 0.0));
    }

    #[test]
    fn field_validation() {
        assert!(StepRandomField::new(
            vec![0.0, 1.0],
            vec![Payoff::sum([
                (1.0, Payoff::arg(0)),
                (1.0, Payoff::constant(1.0))
            ])],
            vec![vec![Payoff::constant(1.0)]],
            None
        )
        .is_err());
        assert!(StepRandomField::new(
            vec![0.0, 1.0],
            vec![Payoff::arg(0)],
            vec![vec![Payoff::arg(0)]],
            None
        )
        .is_err());
        let overlapping = StepRandomField::new(
            vec![0.0, 1.0],
            vec![Payoff::arg(0), Payoff::square(Payoff::arg(0))],
            vec![vec![Payoff::constant(1.0), Payoff::constant(1.0)]],
            None,
        )
        .unwrap();
        assert!(overlapping.check_supports(&two_masses()).is_err());
    }

    #[test]
    fn smaller_mass_control_drifts_down() {
        let set = two_masses();
        let field = identity_field(vec![0.0, 0.5], 1.0);
        let mc = McParams {
            n_paths: 20_000,
            mesh_dt: 0.05,
            seed: 9,
        };
        let report = verify_martingale_mc(&set, &field, &mc).unwrap();
        let low = &report.controls[0].increments[0];
        assert!(
            (low.mean - (1.0 - 2.0) * 0.5).abs() <= 3.0 * low.se,
            "{low:?}"
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn zero_field_has_zero_increments() {
        let field = StepRandomField::zero(vec![0.0, 0.2, 0.4]).unwrap();
        let mc = McParams {
            n_paths: 100,
            mesh_dt: 0.1,
            seed: 2,
        };
        let report = verify_martingale_mc(&two_masses(), &field, &mc).unwrap();
        for c in &report.controls {
            assert!(c.increments.iter().all(|e| e.mean == 0.0 && e.se == 0.0));
        }
        assert!(report.passed);
    }
}
