//! The acceptance suite run by `verify all`.
//!
//! Each criterion runs on built-in models with fixed sizes, so that the only
//! input is the seed. Criterion seeds are derived from the suite seed.

use std::time::Instant;

use glevy_core::compensator::{
    verify_ab_identity, verify_martingale_mc, AbModel, CoupledSet, StepFieldSpec, StepRandomField,
};
use glevy_core::cylinder::{self, martingale_lattice, CylinderFunctional, LatticeConfig};
use glevy_core::decomposition::{
    analyze_controls, apriori_check, apriori_constants, decompose, embedding_check, residual,
    stability_check, ControlSummary, DecompositionTriple,
};
use glevy_core::pide::{
    scheme_tol, solve_backward, solve_initial_layer, Grid, SpaceGrid, TerminalFunction,
};
use glevy_core::sim::{constant_policies, duality_gap};
use glevy_core::{LevyMeasure, McParams, Payoff, UncertaintySet, VolatilityMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::report::{to_value, Check, Report, Timing};
use crate::CliError;

/// Wall-clock limits of criteria 1 and 12.
pub const DIFFUSION_SOLVE_LIMIT_S: f64 = 10.0;
pub const SUITE_LIMIT_S: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub details: Value,
}

impl CriterionResult {
    fn new(id: u32, title: &'static str, checks: Vec<Check>, details: Value) -> Self {
        Self {
            id,
            title,
            passed: checks.iter().all(|c| c.passed),
            checks,
            details,
        }
    }

    /// `criterion  3 PASS duality (worst margin 1.2e-3 at greedy_gap_jump)`.
    pub fn line(&self) -> String {
        let worst = self
            .checks
            .iter()
            .min_by(|a, b| a.margin.total_cmp(&b.margin))
            .map(|c| format!(" (worst margin {:.3e} at {})", c.margin, c.name))
            .unwrap_or_default();
        format!(
            "criterion {:>2} {} {}{}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            worst
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRun {
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
    pub timings: Vec<Timing>,
}

impl SuiteRun {
    pub fn lines(&self) -> Vec<String> {
        self.criteria.iter().map(CriterionResult::line).collect()
    }

    pub fn into_report(self, inputs_digest: String) -> Report {
        let checks = self
            .criteria
            .iter()
            .flat_map(|c| {
                c.checks.iter().map(move |k| Check {
                    name: format!("c{}.{}", c.id, k.name),
                    ..k.clone()
                })
            })
            .collect();
        let results = json!({
            "seed": self.seed,
            "criteria": self
                .criteria
                .iter()
                .map(|c| json!({ "id": c.id, "title": c.title, "passed": c.passed, "details": c.details }))
                .collect::<Vec<_>>(),
        });
        Report::new("verify all", inputs_digest, results, checks).with_timings(self.timings)
    }
}

struct Benchmark {
    name: &'static str,
    set: UncertaintySet,
    payoff: Payoff,
    horizon: f64,
    /// Grid of the headline PDE values.
    space: SpaceGrid,
    /// Grid of the per-node solves of the decomposition.
    decomposition_space: SpaceGrid,
}

impl Benchmark {
    fn functional(&self, payoff: Payoff) -> Result<CylinderFunctional, CliError> {
        Ok(CylinderFunctional::new(vec![self.horizon], payoff, None)?)
    }

    fn lattice(&self) -> LatticeConfig {
        LatticeConfig::new(self.decomposition_space, 41)
    }
}

/// No jumps, volatilities {0.5, 1}, `clip(x^2, 0, 100)` at `T = 0.5`; `u(0, 0) = 0.5`.
fn quadratic() -> Result<Benchmark, CliError> {
    Ok(Benchmark {
        name: "quadratic",
        set: UncertaintySet::scalar(&[], &[0.5, 1.0], 0.1, 1.0)?,
        payoff: Payoff::clip(Payoff::square(Payoff::arg(0)), 0.0, 100.0),
        horizon: 0.5,
        space: SpaceGrid::new(-6.0, 6.0, 801)?,
        decomposition_space: SpaceGrid::new(-6.0, 6.0, 241)?,
    })
}

/// No diffusion, one atom of mass 2 at 1, `clip(x, -50, 50)` at `T = 0.25`; `u(0, 0) = 0.5`.
fn jump() -> Result<Benchmark, CliError> {
    let space = SpaceGrid::new(-10.0, 10.0, 201)?;
    Ok(Benchmark {
        name: "jump",
        set: UncertaintySet::scalar(&[&[(1.0, 2.0)]], &[0.0], 0.0, 4.0)?,
        payoff: Payoff::clip(Payoff::arg(0), -50.0, 50.0),
        horizon: 0.25,
        space,
        decomposition_space: space,
    })
}

/// Two measures on two atoms and two volatilities.
fn mixed() -> Result<UncertaintySet, CliError> {
    Ok(UncertaintySet::scalar(
        &[&[(1.0, 1.0), (-0.5, 0.5)], &[(1.0, 0.4), (-0.5, 1.5)]],
        &[0.4, 1.0],
        0.16,
        4.0,
    )?)
}

pub fn run_suite(seed: u64) -> Result<SuiteRun, CliError> {
    let start = Instant::now();
    let quad = quadratic()?;
    let jmp = jump()?;
    let mut timings = Vec::new();
    let mut criteria = Vec::new();

    let (c1, solve_s) = criterion_1(&quad)?;
    timings.push(Timing {
        name: "c1.diffusion_solve".into(),
        seconds: solve_s,
        limit: DIFFUSION_SOLVE_LIMIT_S,
        passed: solve_s <= DIFFUSION_SOLVE_LIMIT_S,
    });
    criteria.push(c1);
    criteria.push(criterion_2(&jmp)?);
    criteria.push(criterion_3(&[&quad, &jmp], seed.wrapping_add(3))?);
    criteria.push(criterion_4(seed.wrapping_add(4))?);
    criteria.push(criterion_5(seed.wrapping_add(5))?);
    criteria.push(criterion_6(seed.wrapping_add(6))?);
    criteria.push(criterion_7(seed.wrapping_add(7))?);

    let decompositions = [&quad, &jmp]
        .into_iter()
        .map(|b| decomposition_run(b, seed.wrapping_add(8)))
        .collect::<Result<Vec<_>, _>>()?;
    criteria.push(criterion_8(&decompositions));
    criteria.push(criterion_9(&decompositions));
    criteria.push(criterion_10(&decompositions, seed.wrapping_add(10))?);
    criteria.push(criterion_11(&[&quad, &jmp], seed.wrapping_add(11))?);
    criteria.push(criterion_12(seed.wrapping_add(12))?);

    let total = start.elapsed().as_secs_f64();
    timings.push(Timing {
        name: "c12.suite_wall_clock".into(),
        seconds: total,
        limit: SUITE_LIMIT_S,
        passed: total <= SUITE_LIMIT_S,
    });
    Ok(SuiteRun {
        seed,
        criteria,
        timings,
    })
}

fn pde_value(b: &Benchmark) -> Result<(f64, Grid), CliError> {
    let grid = Grid::with_cfl(b.space, b.horizon, &b.set)?;
    let phi = TerminalFunction::from_payoff(&b.payoff, None)?;
    Ok((solve_backward(&b.set, &phi, &grid)?.u00(), grid))
}

fn criterion_1(b: &Benchmark) -> Result<(CriterionResult, f64), CliError> {
    let t0 = Instant::now();
    let (u, grid) = pde_value(b)?;
    let seconds = t0.elapsed().as_secs_f64();
    let checks = vec![Check::within("u00", u, 0.5, 1e-2)];
    let details = json!({ "u00": u, "nx": grid.space.nx, "nt": grid.nt });
    Ok((
        CriterionResult::new(1, "closed-form diffusion value", checks, details),
        seconds,
    ))
}

fn criterion_2(b: &Benchmark) -> Result<CriterionResult, CliError> {
    let (u, grid) = pde_value(b)?;
    let checks = vec![Check::within("u00", u, 0.5, 2e-2)];
    let details = json!({ "u00": u, "nx": grid.space.nx, "nt": grid.nt });
    Ok(CriterionResult::new(
        2,
        "closed-form jump value",
        checks,
        details,
    ))
}

fn criterion_3(benchmarks: &[&Benchmark], seed: u64) -> Result<CriterionResult, CliError> {
    let mut checks = Vec::new();
    let mut details = Vec::new();
    for b in benchmarks {
        let grid = Grid::with_cfl(b.space, b.horizon, &b.set)?;
        let phi = TerminalFunction::from_payoff(&b.payoff, None)?;
        let mc = McParams {
            n_paths: 100_000,
            mesh_dt: 0.005,
            seed,
        };
        let report = duality_gap(&b.set, &phi, &grid, &constant_policies(&b.set), &mc)?;
        for p in report.policies.iter().filter(|p| p.name != "greedy") {
            checks.push(Check::at_most(
                format!("lower_bound_{}_{}", b.name, p.name),
                p.violation,
                0.0,
            ));
        }
        checks.push(Check::at_most(
            format!("greedy_gap_{}", b.name),
            report.greedy_relative_gap,
            0.05,
        ));
        details.push(json!({ "benchmark": b.name, "report": to_value(&report) }));
    }
    Ok(CriterionResult::new(
        3,
        "duality",
        checks,
        Value::Array(details),
    ))
}

/// Bounded Lipschitz payoff with a linear part, a bump and a clipped square.
fn random_payoff(rng: &mut ChaCha8Rng) -> Payoff {
    let a = rng.random_range(-1.0..1.0);
    let b = rng.random_range(-1.0..1.0);
    let c = rng.random_range(-1.0..1.0);
    Payoff::sum([
        (a, Payoff::clip(Payoff::arg(0), -1.5, 2.0)),
        (b, Payoff::bump(0, c, 1.2)),
        (0.3, Payoff::clip(Payoff::square(Payoff::arg(0)), 0.0, 2.0)),
    ])
}

fn criterion_4(seed: u64) -> Result<CriterionResult, CliError> {
    let set = mixed()?;
    let grid = Grid::with_cfl(SpaceGrid::new(-5.0, 5.0, 201)?, 0.25, &set)?;
    let value = |p: &Payoff| -> Result<(f64, f64), CliError> {
        let phi = TerminalFunction::from_payoff(p, None)?;
        let u = solve_initial_layer(&set, &phi, &grid)?;
        Ok((
            grid.space.interpolate(&u, 0.0),
            scheme_tol(&set, &phi, &grid, 0.0)?,
        ))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mono, mut sub, mut constant, mut homog) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..50 {
        let f = random_payoff(&mut rng);
        let g = random_payoff(&mut rng);
        let (ef, tf) = value(&f)?;
        let (eg, tg) = value(&g)?;

        let h = rng.random_range(0.0..1.0);
        let center = rng.random_range(-1.0..1.0);
        let (eh, _) = value(&Payoff::sum([
            (1.0, f.clone()),
            (h, Payoff::bump(0, center, 2.0)),
        ]))?;
        mono.push((ef - eh, 2.0 * tf));

        let (es, ts) = value(&Payoff::sum([(1.0, f.clone()), (1.0, g)]))?;
        sub.push((es - ef - eg, 2.0 * tf.max(tg).max(ts)));

        let c = rng.random_range(-3.0..3.0);
        let (ec, _) = value(&Payoff::constant(c))?;
        let (efc, _) = value(&Payoff::sum([(1.0, f.clone()), (1.0, Payoff::constant(c))]))?;
        constant.push((ec - c).abs().max((efc - ef - c).abs()));

        let l = rng.random_range(0.0..3.0);
        let (el, _) = value(&f.clone().scaled(l))?;
        homog.push((el - l * ef).abs());
    }
    let worst = |v: &[(f64, f64)]| {
        v.iter()
            .copied()
            .min_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
            .expect("nonempty")
    };
    let (mv, mt) = worst(&mono);
    let (sv, st) = worst(&sub);
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let checks = vec![
        Check::at_most("monotonicity", mv, mt),
        Check::at_most("subadditivity", sv, st),
        Check::at_most("constant_preserving", max(&constant), 1e-12),
        Check::at_most("positive_homogeneity", max(&homog), 1e-12),
    ];
    Ok(CriterionResult::new(
        4,
        "sublinear expectation axioms",
        checks,
        json!({ "pairs": 50 }),
    ))
}

fn criterion_5(seed: u64) -> Result<CriterionResult, CliError> {
    let set = mixed()?;
    let cfg = LatticeConfig::new(SpaceGrid::new(-5.0, 5.0, 201)?, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut details = Vec::new();
    for i in 0..10 {
        let t1 = rng.random_range(0.1..0.2);
        let t2 = t1 + rng.random_range(0.1..0.2);
        let a = rng.random_range(-1.0..1.0);
        let b = rng.random_range(-1.0..1.0);
        let c = rng.random_range(-1.0..1.0);
        let expr = Payoff::sum([
            (
                a,
                Payoff::clip(
                    Payoff::sum([(1.0, Payoff::arg(0)), (1.0, Payoff::arg(1))]),
                    -2.0,
                    2.0,
                ),
            ),
            (b, Payoff::bump(1, c, 1.5)),
            (
                0.5,
                Payoff::Min(vec![
                    Payoff::clip(Payoff::arg(0), -1.0, 1.0),
                    Payoff::clip(Payoff::arg(1), -1.0, 1.0),
                ]),
            ),
        ]);
        let xi = CylinderFunctional::new(vec![t1, t2], expr, None)?;
        let lattice = martingale_lattice(&set, &xi, &cfg)?;
        let eta = lattice.conditional_functional(1)?;
        let outer = cylinder::expect(&set, &eta, &cfg)?;
        let tol = cylinder::scheme_tol(&set, &xi, &cfg)?;
        let bound = 2.0 * tol + lattice.interpolation_tol();
        checks.push(Check::at_most(
            format!("instance_{i}"),
            (outer - lattice.value()).abs(),
            bound,
        ));
        details.push(json!({
            "times": [t1, t2],
            "value": lattice.value(),
            "tower": outer,
            "scheme_tol": tol,
            "interpolation_tol": lattice.interpolation_tol(),
        }));
    }
    Ok(CriterionResult::new(
        5,
        "tower property",
        checks,
        Value::Array(details),
    ))
}

fn criterion_6(seed: u64) -> Result<CriterionResult, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..3.0)).collect();
        let n_vols = rng.random_range(1..4);
        let vols: Vec<f64> = (0..n_vols).map(|_| rng.random_range(0.0..1.5)).collect();
        let f: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h = rng.random_range(-3.0..3.0);
        let x = rng.random_range(-1.0..1.0);
        let set = UncertaintySet::scalar(
            &[&[(1.0, w[0]), (-1.0, w[1])], &[(1.0, w[2]), (-1.0, w[3])]],
            &vols,
            0.0,
            10.0,
        )?;
        let field = StepRandomField::new(
            vec![0.0, 0.2],
            vec![
                Payoff::clip(Payoff::arg(0), 0.0, 5.0),
                Payoff::clip(Payoff::arg(0), -5.0, 0.0),
            ],
            vec![vec![
                Payoff::sum([
                    (f[0], Payoff::constant(1.0)),
                    (0.5, Payoff::clip(Payoff::arg(0), -1.0, 1.0)),
                ]),
                Payoff::constant(f[1]),
            ]],
            None,
        )?;
        let r = verify_ab_identity(
            &AbModel::Product(&set),
            &field,
            &DMatrix::from_element(1, 1, h),
            0,
            &[x],
        )?;
        worst = worst.max(r.gap.abs());
    }

    // Mass 1 paired with the top volatility, mass 2 with the bottom one: the
    // separated suprema take mass 2 and volatility 1 together.
    let coupled = CoupledSet::new(vec![
        (
            LevyMeasure::from_scalar(&[(1.0, 1.0)]),
            VolatilityMatrix::scalar(1.0),
        ),
        (
            LevyMeasure::from_scalar(&[(1.0, 2.0)]),
            VolatilityMatrix::scalar(0.5),
        ),
    ])?;
    let dt = 0.25;
    let field = StepRandomField::new(
        vec![0.0, dt],
        vec![Payoff::clip(Payoff::arg(0), -5.0, 5.0)],
        vec![vec![Payoff::constant(1.0)]],
        None,
    )?;
    let r = verify_ab_identity(
        &AbModel::Coupled(&coupled),
        &field,
        &DMatrix::from_element(1, 1, 1.0),
        0,
        &[0.0],
    )?;
    let checks = vec![
        Check::at_most("product_sets", worst, 1e-12),
        Check::within("coupled_gap", r.gap, 0.375 * dt, 0.0),
    ];
    Ok(CriterionResult::new(
        6,
        "A = B identity",
        checks,
        json!({ "coupled": to_value(&r) }),
    ))
}

fn criterion_7(seed: u64) -> Result<CriterionResult, CliError> {
    let set = mixed()?;
    let mc = McParams {
        n_paths: 100_000,
        mesh_dt: 0.05,
        seed,
    };
    let with_vol = crate::commands::default_step_field(0.5)?;
    let spec: StepFieldSpec = with_vol.clone().into();
    let jump_only = StepRandomField::new(spec.times, spec.marks, spec.coefs, None)?;
    let mut checks = Vec::new();
    let mut details = Vec::new();
    for (label, field) in [("m", &jump_only), ("m_plus_n", &with_vol)] {
        let report = verify_martingale_mc(&set, field, &mc)?;
        for c in &report.controls {
            for (k, inc) in c.increments.iter().enumerate() {
                checks.push(Check::at_most(
                    format!("{label}_{}_{k}", c.name),
                    inc.mean,
                    3.0 * inc.se,
                ));
            }
        }
        for (k, best) in report.max_mean.iter().enumerate() {
            checks.push(Check::within(
                format!("{label}_max_{k}"),
                best.mean,
                0.0,
                3.0 * best.se,
            ));
        }
        details.push(json!({ "field": label, "report": to_value(&report) }));
    }
    Ok(CriterionResult::new(
        7,
        "compensated integral is a martingale",
        checks,
        Value::Array(details),
    ))
}

struct DecompositionRun<'a> {
    bench: &'a Benchmark,
    triple: DecompositionTriple,
    controls: Vec<ControlSummary>,
}

/// Sizes of the pathwise decomposition runs of criteria 8 to 10.
const DECOMPOSITION_PATHS: usize = 10_000;
const DECOMPOSITION_DT: f64 = 1e-4;

fn decomposition_run(b: &Benchmark, seed: u64) -> Result<DecompositionRun<'_>, CliError> {
    let triple = decompose(&b.set, &b.functional(b.payoff.clone())?, &b.lattice())?;
    let mc = McParams {
        n_paths: DECOMPOSITION_PATHS,
        mesh_dt: DECOMPOSITION_DT,
        seed,
    };
    let controls = analyze_controls(&triple, &mc)?;
    Ok(DecompositionRun {
        bench: b,
        triple,
        controls,
    })
}

fn criterion_8(runs: &[DecompositionRun<'_>]) -> CriterionResult {
    let mut checks = Vec::new();
    let mut details = Vec::new();
    for r in runs {
        let res = residual(&r.controls);
        for row in &res.controls {
            checks.push(Check::at_most(
                format!("{}_{}", r.bench.name, row.name),
                row.rms,
                2e-2,
            ));
        }
        details.push(json!({ "benchmark": r.bench.name, "residual": to_value(&res) }));
    }
    CriterionResult::new(8, "decomposition residual", checks, Value::Array(details))
}

fn criterion_9(runs: &[DecompositionRun<'_>]) -> CriterionResult {
    let checks = runs
        .iter()
        .flat_map(|r| {
            r.controls.iter().map(move |c| {
                Check::at_least(
                    format!("{}_{}", r.bench.name, c.name),
                    c.kc_min_increment,
                    -1e-10,
                )
            })
        })
        .collect();
    CriterionResult::new(
        9,
        "K^c is non-decreasing",
        checks,
        json!({ "paths": DECOMPOSITION_PATHS }),
    )
}

fn criterion_10(runs: &[DecompositionRun<'_>], seed: u64) -> Result<CriterionResult, CliError> {
    let constants = apriori_constants(1.0, 1.0, 1.0)?;
    let mut checks = vec![Check::within(
        "c1_at_unit_inputs",
        constants.c1,
        7050.0,
        0.0,
    )];
    let mut details = vec![json!({ "constants": to_value(&constants) })];
    let mc = McParams {
        n_paths: 2000,
        mesh_dt: 1e-3,
        seed,
    };
    for r in runs {
        let b = r.bench;
        let report = apriori_check(&r.triple, &r.controls)?;
        checks.push(Check::at_least(
            format!("apriori_margin_{}", b.name),
            report.margin,
            f64::MIN_POSITIVE,
        ));

        let same = stability_check(&r.triple, &r.triple, &mc)?;
        checks.push(Check::within(
            format!("stability_identical_{}", b.name),
            same.lhs,
            0.0,
            0.0,
        ));

        let bumped = Payoff::sum([(1.0, b.payoff.clone()), (0.1, Payoff::bump(0, 0.0, 1.0))]);
        let mut pairs = vec![("bump", bumped)];
        if b.set.is_jump_free() {
            pairs.push(("negated", b.payoff.clone().scaled(-1.0)));
        }
        let mut rows = Vec::new();
        for (label, payoff) in pairs {
            let other = decompose(&b.set, &b.functional(payoff)?, &b.lattice())?;
            let s = stability_check(&r.triple, &other, &mc)?;
            checks.push(Check::at_most(
                format!("stability_{label}_{}", b.name),
                s.lhs,
                s.rhs,
            ));
            rows.push(json!({ "pair": label, "report": to_value(&s) }));
        }
        details
            .push(json!({ "benchmark": b.name, "apriori": to_value(&report), "stability": rows }));
    }
    Ok(CriterionResult::new(
        10,
        "a-priori and stability bounds",
        checks,
        Value::Array(details),
    ))
}

fn criterion_11(benchmarks: &[&Benchmark], seed: u64) -> Result<CriterionResult, CliError> {
    let mut checks = Vec::new();
    let mut details = Vec::new();
    let mc = McParams {
        n_paths: 10_000,
        mesh_dt: 2e-3,
        seed,
    };
    for b in benchmarks {
        let xi = b.functional(b.payoff.clone())?;
        let report = embedding_check(&b.set, &xi, 4.0, &b.lattice(), &mc)?;
        checks.push(Check::within(
            format!("cp2_{}", b.name),
            report.cp2,
            3.0,
            0.0,
        ));
        checks.push(Check::outcome(
            format!("embedding_{}", b.name),
            report.lhs.mean,
            report.cp2 * report.rhs.mean,
            report.margin,
            report.passed,
        ));
        details.push(json!({ "benchmark": b.name, "report": to_value(&report) }));
    }
    Ok(CriterionResult::new(
        11,
        "embedding inequality",
        checks,
        Value::Array(details),
    ))
}

/// A parallel MC workload whose serialized output must not depend on the
/// number of worker threads.
fn determinism_probe(seed: u64) -> Result<String, CliError> {
    let b = jump()?;
    let grid = Grid::with_cfl(b.space, b.horizon, &b.set)?;
    let phi = TerminalFunction::from_payoff(&b.payoff, None)?;
    let mc = McParams {
        n_paths: 20_000,
        mesh_dt: 0.01,
        seed,
    };
    let duality = duality_gap(&b.set, &phi, &grid, &constant_policies(&b.set), &mc)?;
    let field = crate::commands::default_step_field(0.5)?;
    let martingale = verify_martingale_mc(&mixed()?, &field, &mc)?;
    Ok(serde_json::to_string(
        &json!({ "duality": to_value(&duality), "martingale": to_value(&martingale) }),
    )
    .expect("values serialize"))
}

fn criterion_12(seed: u64) -> Result<CriterionResult, CliError> {
    let in_pool = |threads: usize| -> Result<String, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        pool.install(|| determinism_probe(seed))
    };
    let one = in_pool(1)?;
    let four = in_pool(4)?;
    let again = in_pool(4)?;
    let mismatches = [one != four, four != again].iter().filter(|m| **m).count();
    let checks = vec![Check::at_most("mismatched_reruns", mismatches as f64, 0.0)];
    Ok(CriterionResult::new(
        12,
        "determinism",
        checks,
        json!({ "probe_bytes": one.len(), "threads": [1, 4, 4] }),
    ))
}
