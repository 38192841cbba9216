//! The nonlinear generators `G^c`, `G^d` and `G_X` and their maximizers.
//!
//! Under the product form `V x {0} x Q` the joint supremum in `G_X`
//! separates into a jump supremum and a diffusion supremum, which is what
//! [`eval_gx`] computes. Ties in every maximization go to the lowest index.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::UncertaintySet;

/// A control `(v, 0, Q)` from the uncertainty set, as indices into its families.
///
/// `measure == None` means no jumps; this is only a member of the family in
/// jump-free mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ControlChoice {
    pub measure: Option<usize>,
    pub vol: usize,
}

impl ControlChoice {
    pub fn new(measure: Option<usize>, vol: usize) -> Self {
        Self { measure, vol }
    }
}

/// Every constant control of the family, measures outermost.
pub fn constant_controls(set: &UncertaintySet) -> Vec<ControlChoice> {
    let measures: Vec<Option<usize>> = if set.is_jump_free() {
        vec![None]
    } else {
        (0..set.measures().len()).map(Some).collect()
    };
    measures
        .into_iter()
        .flat_map(|m| (0..set.vols().len()).map(move |q| ControlChoice::new(m, q)))
        .collect()
}

/// First index attaining the maximum of `values`; `None` for an empty slice.
pub(crate) fn argmax_first(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// `max_i 1/2 a * variances[i]` and its maximizer, for scalar second derivative `a`.
#[inline]
pub(crate) fn gc_scalar(a: f64, variances: &[f64]) -> (f64, usize) {
    let mut best = 0.5 * variances[0] * a;
    let mut arg = 0;
    for (i, &s) in variances.iter().enumerate().skip(1) {
        let v = 0.5 * s * a;
        if v > best {
            best = v;
            arg = i;
        }
    }
    (best, arg)
}

/// `max_m sum_j diffs[j] * weights[m][j]` and its maximizer; `(0, None)` for an
/// empty family.
#[inline]
pub(crate) fn gd_from_diffs(diffs: &[f64], weights: &[Vec<f64>]) -> (f64, Option<usize>) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = None;
    for (m, w) in weights.iter().enumerate() {
        let v: f64 = diffs.iter().zip(w).map(|(d, w)| d * w).sum();
        if v > best {
            best = v;
            arg = Some(m);
        }
    }
    match arg {
        Some(_) => (best, arg),
        None => (0.0, None),
    }
}

/// `G^c(A) = max_{Q} 1/2 tr[A QQ^T]`.
pub fn eval_gc(a: &DMatrix<f64>, set: &UncertaintySet) -> f64 {
    set.vols()
        .iter()
        .map(|v| 0.5 * (a * v.gram()).trace())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn gc_argmax(a: &DMatrix<f64>, set: &UncertaintySet) -> usize {
    argmax_first(set.vols().iter().map(|v| 0.5 * (a * v.gram()).trace())).map_or(0, |(i, _)| i)
}

const PROBE_TOL: f64 = 1e-12;

/// A scalar field sampled on finitely many points, optionally with the
/// gradient and Hessian at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFunctionProbe {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    gradient: Option<DVector<f64>>,
    hessian: Option<DMatrix<f64>>,
}

impl LocalFunctionProbe {
    pub fn new(points: Vec<Vec<f64>>, values: Vec<f64>) -> Self {
        assert_eq!(points.len(), values.len(), "one value per probe point");
        Self {
            points,
            values,
            gradient: None,
            hessian: None,
        }
    }

    /// Samples `f` at `x` and at every `x + z_j` for the reference atoms of `set`.
    pub fn around(f: impl Fn(&[f64]) -> f64, x: &[f64], set: &UncertaintySet) -> Self {
        let mut points = vec![x.to_vec()];
        for atom in set.reference().atoms() {
            points.push(x.iter().zip(&atom.location).map(|(a, b)| a + b).collect());
        }
        let values = points.iter().map(|p| f(p)).collect();
        Self::new(points, values)
    }

    pub fn with_derivatives(mut self, gradient: DVector<f64>, hessian: DMatrix<f64>) -> Self {
        self.gradient = Some(gradient);
        self.hessian = Some(hessian);
        self
    }

    pub fn gradient(&self) -> Option<&DVector<f64>> {
        self.gradient.as_ref()
    }

    pub fn hessian(&self) -> Option<&DMatrix<f64>> {
        self.hessian.as_ref()
    }

    pub fn value_at(&self, x: &[f64]) -> Result<f64> {
        self.points
            .iter()
            .position(|p| {
                p.len() == x.len() && p.iter().zip(x).all(|(a, b)| (a - b).abs() <= PROBE_TOL)
            })
            .map(|i| self.values[i])
            .ok_or_else(|| Error::MissingProbePoint(x.to_vec()))
    }

    fn jump_diffs(&self, x: &[f64], set: &UncertaintySet) -> Result<Vec<f64>> {
        let base = self.value_at(x)?;
        set.reference()
            .atoms()
            .iter()
            .map(|atom| {
                let y: Vec<f64> = x.iter().zip(&atom.location).map(|(a, b)| a + b).collect();
                Ok(self.value_at(&y)? - base)
            })
            .collect()
    }
}

/// `G^d[w](x) = max_{v} sum_j [w(x + z_j) - w(x)] v({z_j})`, zero for an empty family.
pub fn eval_gd(w: &LocalFunctionProbe, x: &[f64], set: &UncertaintySet) -> Result<f64> {
    if set.is_jump_free() {
        return Ok(0.0);
    }
    let diffs = w.jump_diffs(x, set)?;
    Ok(gd_from_diffs(&diffs, set.weights()).0)
}

/// `G_X[f]` for `f(0) = 0`: the jump supremum plus the diffusion supremum
/// of `D^2 f(0)`. The drift term vanishes because the drift set is `{0}`.
pub fn eval_gx(f: &LocalFunctionProbe, set: &UncertaintySet) -> Result<f64> {
    let origin = vec![0.0; set.dim()];
    let hessian = f
        .hessian()
        .ok_or_else(|| Error::InvalidParameter("probe carries no Hessian at the origin".into()))?;
    Ok(eval_gd(f, &origin, set)? + eval_gc(hessian, set))
}

/// Indices attaining the jump and diffusion suprema separately.
pub fn argmax_controls(
    a: &DMatrix<f64>,
    w: &LocalFunctionProbe,
    x: &[f64],
    set: &UncertaintySet,
) -> Result<ControlChoice> {
    let vol = gc_argmax(a, set);
    if set.is_jump_free() {
        return Ok(ControlChoice::new(None, vol));
    }
    let diffs = w.jump_diffs(x, set)?;
    Ok(ControlChoice::new(
        gd_from_diffs(&diffs, set.weights()).1,
        vol,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, a)
    }

    fn square(p: &[f64]) -> f64 {
        p[0] * p[0]
    }

    #[test]
    fn gc_examples() {
        let one = UncertaintySet::scalar(&[], &[1.0], 0.5, 1.0).unwrap();
        assert_eq!(eval_gc(&scalar(2.0), &one), 1.0);
        let two = UncertaintySet::scalar(&[], &[0.5, 1.0], 0.1, 1.0).unwrap();
        assert_eq!(eval_gc(&scalar(-2.0), &two), -0.25);
        assert_eq!(eval_gc(&scalar(0.0), &two), 0.0);
    }

    #[test]
    fn gd_examples() {
        let one = UncertaintySet::scalar(&[&[(1.0, 1.0)]], &[0.0], 0.0, 4.0).unwrap();
        let probe = LocalFunctionProbe::around(square, &[0.0], &one);
        assert_eq!(eval_gd(&probe, &[0.0], &one).unwrap(), 1.0);

        let two =
            UncertaintySet::scalar(&[&[(1.0, 1.0)], &[(1.0, 2.0)]], &[0.0], 0.0, 4.0).unwrap();
        let probe = LocalFunctionProbe::around(square, &[0.0], &two);
        assert_eq!(eval_gd(&probe, &[0.0], &two).unwrap(), 2.0);

        let probe = LocalFunctionProbe::around(|_| 3.5, &[0.7], &two);
        assert_eq!(eval_gd(&probe, &[0.7], &two).unwrap(), 0.0);
    }

    #[test]
    fn gd_reports_missing_points() {
        let set = UncertaintySet::scalar(&[&[(1.0, 1.0)]], &[0.0], 0.0, 4.0).unwrap();
        let probe = LocalFunctionProbe::new(vec![vec![0.0]], vec![0.0]);
        assert_eq!(
            eval_gd(&probe, &[0.0], &set),
            Err(Error::MissingProbePoint(vec![1.0]))
        );
    }

    #[test]
    fn gx_examples() {
        let set = UncertaintySet::scalar(&[&[(1.0, 1.0)]], &[1.0], 0.5, 4.0).unwrap();
        let f = LocalFunctionProbe::around(square, &[0.0], &set)
            .with_derivatives(DVector::from_element(1, 0.0), scalar(2.0));
        assert_eq!(eval_gx(&f, &set).unwrap(), 2.0);

        let zero = LocalFunctionProbe::around(|_| 0.0, &[0.0], &set)
            .with_derivatives(DVector::from_element(1, 0.0), scalar(0.0));
        assert_eq!(eval_gx(&zero, &set).unwrap(), 0.0);

        let set = UncertaintySet::scalar(&[&[(1.0, 2.0)]], &[1.0], 0.5, 4.0).unwrap();
        let linear = LocalFunctionProbe::around(|p| p[0], &[0.0], &set)
            .with_derivatives(DVector::from_element(1, 1.0), scalar(0.0));
        assert_eq!(eval_gx(&linear, &set).unwrap(), 2.0);
    }

    #[test]
    fn argmax_examples() {
        let set = UncertaintySet::scalar(&[], &[0.5, 1.0], 0.1, 1.0).unwrap();
        let probe = LocalFunctionProbe::around(square, &[0.0], &set);
        assert_eq!(
            argmax_controls(&scalar(2.0), &probe, &[0.0], &set)
                .unwrap()
                .vol,
            1
        );
        assert_eq!(
            argmax_controls(&scalar(-2.0), &probe, &[0.0], &set)
                .unwrap()
                .vol,
            0
        );

        let twins =
            UncertaintySet::scalar(&[&[(1.0, 1.0)], &[(1.0, 1.0)]], &[1.0], 0.5, 4.0).unwrap();
        let probe = LocalFunctionProbe::around(square, &[0.0], &twins);
        let c = argmax_controls(&scalar(1.0), &probe, &[0.0], &twins).unwrap();
        assert_eq!(c, ControlChoice::new(Some(0), 0));
    }

    #[test]
    fn constant_control_enumeration() {
        let set =
            UncertaintySet::scalar(&[&[(1.0, 1.0)], &[(1.0, 2.0)]], &[0.5, 1.0], 0.1, 4.0).unwrap();
        let c = constant_controls(&set);
        assert_eq!(c.len(), 4);
        assert_eq!(c[0], ControlChoice::new(Some(0), 0));
        assert_eq!(c[3], ControlChoice::new(Some(1), 1));
        let jf = UncertaintySet::scalar(&[], &[0.5, 1.0], 0.1, 4.0).unwrap();
        assert_eq!(
            constant_controls(&jf),
            vec![ControlChoice::new(None, 0), ControlChoice::new(None, 1)]
        );
    }
}
