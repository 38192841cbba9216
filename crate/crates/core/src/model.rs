//! Uncertainty sets `V x {0} x Q` for finite-activity G-Levy processes.
//!
//! Levy measures are finite lists of atoms, so every supremum over the jump
//! family and every jump integral is a finite sum. The reference measure is
//! the atomwise upper envelope of the family, which makes the upper density
//! bound exactly one.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

/// A point mass `weight * delta_location` of a Levy measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub location: Vec<f64>,
    pub weight: f64,
}

impl Atom {
    pub fn new(location: Vec<f64>, weight: f64) -> Self {
        Self { location, weight }
    }

    pub fn scalar(z: f64, weight: f64) -> Self {
        Self {
            location: vec![z],
            weight,
        }
    }

    pub fn norm(&self) -> f64 {
        self.location.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A finite Levy measure on `R^d \ {0}` given by its atoms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevyMeasure {
    atoms: Vec<Atom>,
}

impl LevyMeasure {
    pub fn new(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    /// One-dimensional measure from `(z, w)` pairs.
    pub fn from_scalar(atoms: &[(f64, f64)]) -> Self {
        Self {
            atoms: atoms.iter().map(|&(z, w)| Atom::scalar(z, w)).collect(),
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total intensity `v(R^d \ {0})`.
    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `sum_j |z_j| w_j`.
    pub fn first_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.norm() * a.weight).sum()
    }

    /// Weight carried at exactly `location`, zero if there is no such atom.
    pub fn weight_at(&self, location: &[f64]) -> f64 {
        self.atoms
            .iter()
            .find(|a| a.location.as_slice() == location)
            .map_or(0.0, |a| a.weight)
    }

    fn check(&self, index: usize, dim: usize) -> Result<()> {
        for (k, atom) in self.atoms.iter().enumerate() {
            if atom.location.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: atom.location.len(),
                });
            }
            if atom.location.iter().all(|&v| v == 0.0) {
                return Err(Error::AtomAtOrigin { measure: index });
            }
            if !(atom.weight > 0.0 && atom.weight.is_finite()) {
                return Err(Error::NonPositiveWeight {
                    measure: index,
                    weight: atom.weight,
                });
            }
            if self.atoms[..k].iter().any(|b| b.location == atom.location) {
                return Err(Error::DuplicateAtom { measure: index });
            }
        }
        Ok(())
    }
}

/// A volatility matrix `Q` together with its Gram form `a = Q Q^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityMatrix {
    q: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl VolatilityMatrix {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::InvalidParameter(format!(
                "volatility matrix must be square, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite volatility entry".into(),
            ));
        }
        let gram = &q * q.transpose();
        Ok(Self { q, gram })
    }

    pub fn scalar(sigma: f64) -> Self {
        let q = DMatrix::from_element(1, 1, sigma);
        let gram = DMatrix::from_element(1, 1, sigma * sigma);
        Self { q, gram }
    }

    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn trace_gram(&self) -> f64 {
        self.gram.trace()
    }
}

/// Reference measure and density bounds produced by [`validate_levy_family`].
#[derive(Debug, Clone, PartialEq)]
pub struct LevyFamily {
    pub reference: LevyMeasure,
    pub c_lower: f64,
    pub c_upper: f64,
}

/// Builds the reference measure as the atomwise upper envelope of the family
/// and computes the density bounds `c_lower <= dv/dpi <= c_upper` on its support.
pub fn validate_levy_family(measures: &[LevyMeasure]) -> Result<LevyFamily> {
    if measures.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let dim = measures
        .iter()
        .flat_map(|m| m.atoms.first())
        .map(|a| a.location.len())
        .next()
        .unwrap_or(1);
    for (i, m) in measures.iter().enumerate() {
        m.check(i, dim)?;
    }

    // Union support in order of first appearance.
    let mut support: Vec<Vec<f64>> = Vec::new();
    for m in measures {
        for a in &m.atoms {
            if !support.contains(&a.location) {
                support.push(a.location.clone());
            }
        }
    }

    let mut reference = Vec::with_capacity(support.len());
    for loc in &support {
        let w = measures
            .iter()
            .map(|m| m.weight_at(loc))
            .fold(0.0_f64, f64::max);
        reference.push(Atom::new(loc.clone(), w));
    }

    let mut c_lower = f64::INFINITY;
    let mut c_upper = 0.0_f64;
    for (i, m) in measures.iter().enumerate() {
        for atom in &reference {
            let ratio = m.weight_at(&atom.location) / atom.weight;
            if ratio == 0.0 {
                return Err(Error::DegenerateDensityRatio {
                    measure: i,
                    location: atom.location.clone(),
                });
            }
            c_lower = c_lower.min(ratio);
            c_upper = c_upper.max(ratio);
        }
    }
    if reference.is_empty() {
        // Family of null measures: nothing to compare against.
        c_lower = 1.0;
        c_upper = 1.0;
    }

    Ok(LevyFamily {
        reference: LevyMeasure::new(reference),
        c_lower,
        c_upper,
    })
}

/// Outcome of one non-degeneracy check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The check does not apply in the current mode (jump-free or diffusion-free).
    Skipped,
}

/// An ordered pair `A >= B` at which the ellipticity bound was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticityWitness {
    /// Row-major entries of `A`.
    pub a: Vec<f64>,
    /// Row-major entries of `B`.
    pub b: Vec<f64>,
    /// `(sup_Q 1/2 tr[A QQ^T] - sup_Q 1/2 tr[B QQ^T]) / tr(A - B) - sigma_lower_sq`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonDegeneracyReport {
    pub lk_bound: Option<f64>,
    pub density_ratio: CheckStatus,
    pub ellipticity: CheckStatus,
    /// Smallest normalized ellipticity margin over all sampled pairs.
    pub worst_margin: f64,
    pub trials: usize,
    /// The pair attaining `worst_margin`; also the failure witness when the check fails.
    pub witness: Option<EllipticityWitness>,
}

impl NonDegeneracyReport {
    pub fn density_ratio_ok(&self) -> bool {
        self.density_ratio != CheckStatus::Fail
    }

    pub fn ellipticity_ok(&self) -> bool {
        self.ellipticity != CheckStatus::Fail
    }
}

const MARGIN_TOL: f64 = 1e-12;

fn half_trace_sup(vols: &[VolatilityMatrix], a: &DMatrix<f64>) -> f64 {
    vols.iter()
        .map(|v| 0.5 * (a * v.gram()).trace())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn random_symmetric(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let m = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    (&m + m.transpose()) * 0.5
}

fn random_psd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let r = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    &r * r.transpose()
}

/// Checks `sup_Q 1/2 tr[A QQ^T] - sup_Q 1/2 tr[B QQ^T] >= sigma_lower_sq tr(A - B)`
/// on ordered pairs `A >= B`.
///
/// The pairs `(I, 0)` and `(0, -I)` are always evaluated first; in one
/// dimension the latter attains the infimum of the normalized margin, so the
/// check is exact there. Further pairs `B + P, B` with random symmetric `B`
/// and random positive semidefinite `P` are drawn `trials` times.
pub fn validate_ellipticity(
    vols: &[VolatilityMatrix],
    sigma_lower_sq: f64,
    trials: usize,
    seed: u64,
) -> NonDegeneracyReport {
    let dim = vols.first().map_or(1, VolatilityMatrix::dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eye = DMatrix::<f64>::identity(dim, dim);
    let zero = DMatrix::<f64>::zeros(dim, dim);

    let mut pairs: Vec<(DMatrix<f64>, DMatrix<f64>)> =
        vec![(eye.clone(), zero.clone()), (zero, -eye)];
    for _ in 0..trials.max(1) {
        let b = random_symmetric(&mut rng, dim);
        let p = random_psd(&mut rng, dim);
        if p.trace() <= 1e-12 {
            continue;
        }
        pairs.push((&b + p, b));
    }

    let mut worst: Option<EllipticityWitness> = None;
    for (a, b) in pairs {
        let diff = half_trace_sup(vols, &a) - half_trace_sup(vols, &b);
        let tr = (&a - &b).trace();
        let margin = diff / tr - sigma_lower_sq;
        if worst.as_ref().is_none_or(|w| margin < w.margin) {
            worst = Some(EllipticityWitness {
                a: a.transpose().iter().copied().collect(),
                b: b.transpose().iter().copied().collect(),
                margin,
            });
        }
    }
    let worst_margin = worst.as_ref().map_or(f64::INFINITY, |w| w.margin);
    let ellipticity = if sigma_lower_sq == 0.0 {
        CheckStatus::Skipped
    } else if worst_margin >= -MARGIN_TOL {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    NonDegeneracyReport {
        lk_bound: None,
        density_ratio: CheckStatus::Skipped,
        ellipticity,
        worst_margin,
        trials,
        witness: worst,
    }
}

/// The product uncertainty set `V x {0} x Q` with reference measure and
/// non-degeneracy constants.
///
/// An empty jump family is the jump-free mode; `sigma_lower_sq == 0` is the
/// diffusion-free mode. Checks that depend on the missing part report
/// [`CheckStatus::Skipped`].
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySet {
    dim: usize,
    measures: Vec<LevyMeasure>,
    vols: Vec<VolatilityMatrix>,
    reference: LevyMeasure,
    c_lower: f64,
    c_upper: f64,
    sigma_lower_sq: f64,
    lambda_max: f64,
    // weights[m][j] = v_m({z_j}) for reference atom z_j
    weights: Vec<Vec<f64>>,
}

impl UncertaintySet {
    pub fn new(
        dim: usize,
        measures: Vec<LevyMeasure>,
        vols: Vec<VolatilityMatrix>,
        sigma_lower_sq: f64,
        lambda_max: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if vols.is_empty() {
            return Err(Error::EmptyVolatilityFamily);
        }
        if let Some(v) = vols.iter().find(|v| v.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        if !(sigma_lower_sq >= 0.0 && sigma_lower_sq.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma_lower_sq must be a nonnegative number, got {sigma_lower_sq}"
            )));
        }
        if !(lambda_max > 0.0 && lambda_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_max must be positive, got {lambda_max}"
            )));
        }

        let (reference, c_lower, c_upper) = if measures.is_empty() {
            (LevyMeasure::default(), 1.0, 1.0)
        } else {
            let fam = validate_levy_family(&measures)?;
            if let Some(atom) = fam.reference.atoms.first() {
                if atom.location.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: atom.location.len(),
                    });
                }
            }
            (fam.reference, fam.c_lower, fam.c_upper)
        };
        for (i, m) in measures.iter().enumerate() {
            let mass = m.mass();
            if mass > lambda_max {
                return Err(Error::MassExceedsBound {
                    measure: i,
                    mass,
                    lambda_max,
                });
            }
        }
        let weights = measures
            .iter()
            .map(|m| {
                reference
                    .atoms
                    .iter()
                    .map(|a| m.weight_at(&a.location))
                    .collect()
            })
            .collect();

        Ok(Self {
            dim,
            measures,
            vols,
            reference,
            c_lower,
            c_upper,
            sigma_lower_sq,
            lambda_max,
            weights,
        })
    }

    /// One-dimensional set from scalar atoms and scalar volatilities.
    pub fn scalar(
        measures: &[&[(f64, f64)]],
        sigmas: &[f64],
        sigma_lower_sq: f64,
        lambda_max: f64,
    ) -> Result<Self> {
        Self::new(
            1,
            measures
                .iter()
                .map(|m| LevyMeasure::from_scalar(m))
                .collect(),
            sigmas
                .iter()
                .map(|&s| VolatilityMatrix::scalar(s))
                .collect(),
            sigma_lower_sq,
            lambda_max,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn measures(&self) -> &[LevyMeasure] {
        &self.measures
    }

    pub fn vols(&self) -> &[VolatilityMatrix] {
        &self.vols
    }

    /// The reference measure; empty in jump-free mode.
    pub fn reference(&self) -> &LevyMeasure {
        &self.reference
    }

    pub fn c_lower(&self) -> f64 {
        self.c_lower
    }

    pub fn c_upper(&self) -> f64 {
        self.c_upper
    }

    pub fn sigma_lower_sq(&self) -> f64 {
        self.sigma_lower_sq
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn is_jump_free(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn is_diffusion_free(&self) -> bool {
        self.sigma_lower_sq == 0.0
    }

    /// `weights()[m][j]` is the weight measure `m` puts on reference atom `j`.
    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Scalar jump locations of the reference atoms (dimension one).
    pub fn jump_locations(&self) -> Vec<f64> {
        self.reference.atoms.iter().map(|a| a.location[0]).collect()
    }

    /// Scalar variances `QQ^T` of the volatility family (dimension one).
    pub fn variances(&self) -> Vec<f64> {
        self.vols.iter().map(|v| v.gram()[(0, 0)]).collect()
    }

    pub fn max_mass(&self) -> f64 {
        self.measures
            .iter()
            .map(LevyMeasure::mass)
            .fold(0.0, f64::max)
    }

    pub fn max_trace(&self) -> f64 {
        self.vols
            .iter()
            .map(VolatilityMatrix::trace_gram)
            .fold(0.0, f64::max)
    }

    pub fn max_jump_norm(&self) -> f64 {
        self.reference
            .atoms
            .iter()
            .map(Atom::norm)
            .fold(0.0, f64::max)
    }

    /// Runs the density-ratio and ellipticity checks.
    pub fn non_degeneracy(&self, trials: usize, seed: u64) -> NonDegeneracyReport {
        let mut report = validate_ellipticity(&self.vols, self.sigma_lower_sq, trials, seed);
        report.lk_bound = Some(lk_bound(self));
        report.density_ratio = if self.is_jump_free() {
            CheckStatus::Skipped
        } else if self.c_lower > 0.0 && self.c_lower <= self.c_upper {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        report
    }
}

/// `sup_{(v, Q)} [ sum_j |z_j| w_j(v) + tr(QQ^T) ]`; the product form lets the
/// two suprema be taken separately.
pub fn lk_bound(set: &UncertaintySet) -> f64 {
    let jump = set
        .measures
        .iter()
        .map(LevyMeasure::first_moment)
        .fold(0.0, f64::max);
    jump + set.max_trace()
}
