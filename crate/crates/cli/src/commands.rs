//! The subcommands behind `glevy`.

use std::fmt::Write as _;

use glevy_core::compensator::{verify_ab_identity, verify_martingale_mc, AbModel, StepRandomField};
use glevy_core::cylinder::{self, martingale_lattice, CylinderFunctional};
use glevy_core::decomposition::{
    analyze_controls, apriori_check, decompose, embedding_check, residual, stability_check,
    DecompositionTriple,
};
use glevy_core::pide::{solve_backward, Grid, TerminalFunction};
use glevy_core::sim::{constant_policies, duality_gap, simulate_map, Mesh};
use glevy_core::{Payoff, UncertaintySet};
use nalgebra::DMatrix;
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{digest, to_value, Check, Report};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Solve,
    Expect,
    Simulate,
    Duality,
    Decompose,
    Verify(VerifyTarget),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyTarget {
    Apriori,
    Stability,
    Embedding,
    Compensator,
    All,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Solve => "solve",
            Command::Expect => "expect",
            Command::Simulate => "simulate",
            Command::Duality => "duality",
            Command::Decompose => "decompose",
            Command::Verify(VerifyTarget::Apriori) => "verify apriori",
            Command::Verify(VerifyTarget::Stability) => "verify stability",
            Command::Verify(VerifyTarget::Embedding) => "verify embedding",
            Command::Verify(VerifyTarget::Compensator) => "verify compensator",
            Command::Verify(VerifyTarget::All) => "verify all",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Options {
    /// Overrides the seed of the mc section.
    pub seed: Option<u64>,
    /// Number of simulated paths per control written as CSV by `simulate`.
    pub dump_paths: usize,
}

/// A CSV file written next to the report, named `<report stem>.<suffix>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub suffix: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Report,
    pub artifacts: Vec<Artifact>,
}

/// Largest number of time layers written by grid CSV exports.
const CSV_TIME_LAYERS: usize = 100;

pub fn run(cmd: Command, cfg: &RunConfig, opts: &Options) -> Result<Outcome, CliError> {
    let inputs = digest(cmd.name(), &json!({ "config": cfg, "seed": opts.seed }));
    let (results, checks, artifacts) = match cmd {
        Command::Validate => validate(cfg)?,
        Command::Solve => solve(cfg)?,
        Command::Expect => expect(cfg)?,
        Command::Simulate => simulate(cfg, opts)?,
        Command::Duality => duality(cfg, opts)?,
        Command::Decompose => decompose_cmd(cfg, opts)?,
        Command::Verify(VerifyTarget::Apriori) => verify_apriori(cfg, opts)?,
        Command::Verify(VerifyTarget::Stability) => verify_stability(cfg, opts)?,
        Command::Verify(VerifyTarget::Embedding) => verify_embedding(cfg, opts)?,
        Command::Verify(VerifyTarget::Compensator) => verify_compensator(cfg, opts)?,
        Command::Verify(VerifyTarget::All) => {
            let seed = match opts.seed {
                Some(s) => s,
                None => cfg.mc()?.seed,
            };
            let report = crate::suite::run_suite(seed)?.into_report(inputs);
            return Ok(Outcome {
                report,
                artifacts: Vec::new(),
            });
        }
    };
    Ok(Outcome {
        report: Report::new(cmd.name(), inputs, results, checks),
        artifacts,
    })
}

type Parts = (serde_json::Value, Vec<Check>, Vec<Artifact>);

fn mc_params(cfg: &RunConfig, opts: &Options) -> Result<glevy_core::McParams, CliError> {
    let mut mc = cfg.mc()?;
    if let Some(s) = opts.seed {
        mc.seed = s;
    }
    Ok(mc)
}

fn single_time(cfg: &RunConfig) -> Result<(f64, TerminalFunction), CliError> {
    let p = cfg.payoff()?;
    if p.times.len() != 1 {
        return Err(CliError::Config(format!(
            "this command needs a payoff on a single time, got {} times",
            p.times.len()
        )));
    }
    let phi = TerminalFunction::from_payoff(&p.expr, p.smooth).map_err(CliError::input)?;
    Ok((p.times[0], phi))
}

fn lattice_inputs(
    cfg: &RunConfig,
) -> Result<(UncertaintySet, CylinderFunctional, cylinder::LatticeConfig), CliError> {
    let set = cfg.model.build()?;
    let xi = cfg.payoff()?.functional()?;
    let lat = cfg.lattice()?;
    // Validates CFL and domain width against the model once up front.
    cfg.grid.grid(&set, xi.horizon())?;
    Ok((set, xi, lat))
}

fn validate(cfg: &RunConfig) -> Result<Parts, CliError> {
    let set = cfg.model.build()?;
    let seed = cfg.mc.map_or(0, |m| m.seed);
    let nd = set.non_degeneracy(cfg.checks.trials, seed);
    let reference: Vec<_> = set
        .reference()
        .atoms()
        .iter()
        .map(|a| json!({ "z": a.location, "w": a.weight }))
        .collect();
    let results = json!({
        "dim": set.dim(),
        "n_measures": set.measures().len(),
        "n_vols": set.vols().len(),
        "jump_free": set.is_jump_free(),
        "diffusion_free": set.is_diffusion_free(),
        "reference": reference,
        "c_lower": set.c_lower(),
        "c_upper": set.c_upper(),
        "max_mass": set.max_mass(),
        "non_degeneracy": to_value(&nd),
    });
    let checks = vec![
        Check::outcome(
            "density_ratio_positive",
            set.c_lower(),
            0.0,
            set.c_lower(),
            nd.density_ratio_ok(),
        ),
        Check::outcome(
            "ellipticity",
            nd.worst_margin,
            0.0,
            nd.worst_margin,
            nd.ellipticity_ok(),
        ),
    ];
    Ok((results, checks, Vec::new()))
}

fn solve(cfg: &RunConfig) -> Result<Parts, CliError> {
    let set = cfg.model.build()?;
    let (horizon, phi) = single_time(cfg)?;
    let grid = cfg.grid.grid(&set, horizon)?;
    let sol = solve_backward(&set, &phi, &grid)?;
    let tol = glevy_core::pide::scheme_tol(&set, &phi, &grid, cfg.grid.report_radius)?;
    let cfl = grid.cfl_ratio(&set);

    let mut csv = String::from("t,x,u,Du,D2u\n");
    let stride = grid.nt.div_ceil(CSV_TIME_LAYERS).max(1);
    let mut layers: Vec<usize> = (0..=grid.nt).step_by(stride).collect();
    if layers.last() != Some(&grid.nt) {
        layers.push(grid.nt);
    }
    for k in layers {
        for i in 0..grid.space.nx {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                grid.t(k),
                grid.space.x(i),
                sol.layer(k)[i],
                sol.du_node(k, i),
                sol.d2u_node(k, i)
            );
        }
    }
    let results = json!({
        "u00": sol.u00(),
        "scheme_tol": tol,
        "cfl": cfl,
        "nx": grid.space.nx,
        "nt": grid.nt,
        "dt": grid.dt(),
    });
    let checks = vec![Check::at_most("cfl", cfl, 1.0)];
    Ok((
        results,
        checks,
        vec![Artifact {
            suffix: "u".into(),
            contents: csv,
        }],
    ))
}

fn expect(cfg: &RunConfig) -> Result<Parts, CliError> {
    let (set, xi, lat) = lattice_inputs(cfg)?;
    let lattice = martingale_lattice(&set, &xi, &lat)?;
    let tol = cylinder::scheme_tol(&set, &xi, &lat)?;
    let results = json!({
        "value": lattice.value(),
        "scheme_tol": tol,
        "interpolation_tol": lattice.interpolation_tol(),
        "n": xi.n(),
        "times": xi.times(),
    });
    Ok((results, Vec::new(), Vec::new()))
}

fn simulate(cfg: &RunConfig, opts: &Options) -> Result<Parts, CliError> {
    let set = cfg.model.build()?;
    let mc = mc_params(cfg, opts)?;
    let xi = cfg.payoff()?.functional()?;
    let mesh = Mesh::with_breaks(xi.times(), mc.mesh_dt)?;
    let mut rows = Vec::new();
    let mut csv = String::from("control,path,t,x\n");
    for (name, policy) in constant_policies(&set) {
        let values = simulate_map(&set, &policy, mc.n_paths, &mesh, mc.seed, |p| {
            p.increments(xi.times()).map(|inc| xi.eval(&inc))
        })?
        .into_iter()
        .collect::<glevy_core::Result<Vec<f64>>>()?;
        let est = glevy_core::McEstimate::from_samples(&values, mc.seed);
        if opts.dump_paths > 0 {
            let paths =
                glevy_core::sim::sample_paths(&set, &policy, opts.dump_paths, &mesh, mc.seed)?;
            for (j, p) in paths.iter().enumerate() {
                for (t, x) in p.times.iter().zip(&p.states) {
                    let _ = writeln!(csv, "{name},{j},{t},{x}");
                }
            }
        }
        rows.push(json!({ "name": name, "mc": to_value(&est) }));
    }
    let artifacts = if opts.dump_paths > 0 {
        vec![Artifact {
            suffix: "paths".into(),
            contents: csv,
        }]
    } else {
        Vec::new()
    };
    Ok((
        json!({ "controls": rows, "mesh_steps": mesh.steps() }),
        Vec::new(),
        artifacts,
    ))
}

fn duality(cfg: &RunConfig, opts: &Options) -> Result<Parts, CliError> {
    let set = cfg.model.build()?;
    let mc = mc_params(cfg, opts)?;
    let (horizon, phi) = single_time(cfg)?;
    let grid: Grid = cfg.grid.grid(&set, horizon)?;
    let report = duality_gap(&set, &phi, &grid, &constant_policies(&set), &mc)?;
    let mut checks: Vec<Check> = report
        .policies
        .iter()
        .filter(|p| p.name != "greedy")
        .map(|p| Check::at_most(format!("lower_bound_{}", p.name), p.violation, 0.0))
        .collect();
    checks.push(Check::at_most(
        "greedy_relative_gap",
        report.greedy_relative_gap,
        cfg.checks.greedy_gap_tol,
    ));
    Ok((to_value(&report), checks, Vec::new()))
}

/// `Kc_rate` is `G^c(D^2 u)`; along a control with variance `s^2` the
/// increment of `K^c` is `(Kc_rate - s^2 D^2 u / 2) dt`.
fn triple_csv(triple: &DecompositionTriple) -> (String, String) {
    let jumps = triple.set().jump_locations();
    let mut fields = String::from("t,x,H,Kc_rate\n");
    let mut kd = String::from("t,x,z,Kd\n");
    for k in 1..=triple.functional().n() {
        let iv = triple.interval(k);
        let grid = *iv.nodes[0].grid();
        // The prefix of earlier increments is held at zero.
        let prefix = vec![0.0; iv.prefix_dims];
        let stride = grid.nt.div_ceil(CSV_TIME_LAYERS).max(1);
        for j in (0..grid.nt).step_by(stride) {
            let tau = grid.t(j);
            for i in 0..grid.space.nx {
                let y = grid.space.x(i);
                let f = triple.fields(k, &prefix, tau, y);
                let t = iv.start + tau;
                let _ = writeln!(fields, "{t},{y},{},{}", f.h, f.kc_rate);
                for (z, v) in jumps.iter().zip(&f.kd) {
                    let _ = writeln!(kd, "{t},{y},{z},{v}");
                }
            }
        }
    }
    (fields, kd)
}

fn decompose_cmd(cfg: &RunConfig, opts: &Options) -> Result<Parts, CliError> {
    let (set, xi, lat) = lattice_inputs(cfg)?;
    let mc = mc_params(cfg, opts)?;
    let triple = decompose(&set, &xi, &lat)?;
    let controls = analyze_controls(&triple, &mc)?;
    let res = residual(&controls);
    let mut checks: Vec<Check> = res
        .controls
        .iter()
        .map(|r| {
            Check::at_most(
                format!("residual_rms_{}", r.name),
                r.rms,
                cfg.checks.residual_tol,
            )
        })
        .collect();
    checks.push(Check::at_least(
        "kc_min_increment",
        res.min_kc_increment,
        -1e-10,
    ));
    let (fields, kd) = triple_csv(&triple);
    let results = json!({
        "value": triple.value(),
        "interpolation_tol": triple.lattice().interpolation_tol(),
        "residual": to_value(&res),
        "controls": to_value(&controls),
    });
    Ok((
        results,
        checks,
        vec![
            Artifact {
                suffix: "fields".into(),
                contents: fields,
            },
            Artifact {
                suffix: "kd".into(),
                contents: kd,
            },
        ],
    ))
}

fn verify_apriori(cfg: &RunConfig, opts: &Options) -> Result<Parts, CliError> {
    let (set, xi, lat) = lattice_inputs(cfg)?;
    let mc = mc_params(cfg, opts)?;
    let triple = decompose(&set, &xi, &lat)?;
    let controls = analyze_controls(&triple, &mc)?;
    let report = apriori_check(&triple, &controls)?;
    let checks = vec![Check::at_most("apriori", report.lhs, report.rhs)];
    Ok((to_value(&report), checks, Vec::new()))
}

/// The configured perturbation, by default a bump of height 0.1 at the origin
/// of the first increment.
fn perturbation(cfg: &RunConfig) -> Payoff {
    cfg.checks
        .perturbation
        .clone()
        .unwrap_or_else(|| Payoff::bump(0, 0.0, 1.0).scaled(0.1))
}

fn verify_stability(cfg: &RunConfig, opts: &Options) -> Result<Parts, CliError> {
    let (set, xi, lat) = lattice_inputs(cfg)?;
    let mc = mc_params(cfg, opts)?;
    let spec = cfg.payoff()?;
    let base = decompose(&set, &xi, &lat)?;
    let pert = perturbation(cfg);
    let functional =
        |e: Payoff| CylinderFunctional::new(spec.times.clone(), e, None).map_err(CliError::input);

    let same = stability_check(&base, &base, &mc)?;
    let mut checks = vec![Check::at_most("identical_lhs", same.lhs, 0.0)];

    let mut scaled = Vec::new();
    for s in [1.0, 0.5, 0.25] {
        let other = decompose(
            &set,
            &functional(Payoff::sum([(1.0, spec.expr.clone()), (s, pert.clone())]))?,
            &lat,
        )?;
        let r = stability_check(&base, &other, &mc)?;
        checks.push(Check::at_most(format!("perturbed_{s}"), r.lhs, r.rhs));
        scaled.push((s, r));
    }
    for w in scaled.windows(2) {
        checks.push(Check::at_most(
            format!("continuity_{}_vs_{}", w[1].0, w[0].0),
            w[1].1.lhs,
            w[0].1.lhs,
        ));
    }
    let negated = decompose(&set, &functional(spec.expr.clone().scaled(-1.0))?, &lat)?;
    let neg = stability_check(&base, &negated, &mc)?;
    checks.push(Check::at_most("negated", neg.lhs, neg.rhs));

    let results = json!({
        "identical": to_value(&same),
        "perturbed": scaled
            .iter()
            .map(|(s, r)| json!({ "scale": s, "report": to_value(r) }))
            .collect::<Vec<_>>(),
        "negated": to_value(&neg),
    });
    Ok((results, checks, Vec::new()))
}

fn verify_embedding(cfg: &RunConfig, opts: &Options) -> Result<Parts, CliError> {
    let (set, xi, lat) = lattice_inputs(cfg)?;
    let mc = mc_params(cfg, opts)?;
    let report = embedding_check(&set, &xi, cfg.checks.p, &lat, &mc)?;
    let checks = vec![Check::outcome(
        "embedding",
        report.lhs.mean,
        report.cp2 * report.rhs.mean,
        report.margin,
        report.passed,
    )];
    Ok((to_value(&report), checks, Vec::new()))
}

/// Field used by `verify compensator` when the config has none: positive and
/// negative jump parts with path-dependent weights on the second interval.
pub fn default_step_field(horizon: f64) -> Result<StepRandomField, CliError> {
    let x1 = Payoff::clip(Payoff::arg(1), -1.0, 1.0);
    StepRandomField::new(
        vec![0.0, 0.5 * horizon, horizon],
        vec![
            Payoff::clip(Payoff::arg(0), 0.0, 5.0),
            Payoff::clip(Payoff::arg(0), -5.0, 0.0),
        ],
        vec![
            vec![Payoff::constant(1.0), Payoff::constant(-0.5)],
            vec![
                x1.clone(),
                Payoff::sum([(1.0, Payoff::constant(1.0)), (-0.5, x1.clone())]),
            ],
        ],
        Some(vec![Payoff::constant(0.5), x1]),
    )
    .map_err(CliError::input)
}

fn verify_compensator(cfg: &RunConfig, opts: &Options) -> Result<Parts, CliError> {
    let set = cfg.model.build()?;
    let mc = mc_params(cfg, opts)?;
    let field = match &cfg.checks.step_field {
        Some(spec) => StepRandomField::try_from(spec.clone()).map_err(CliError::input)?,
        None => default_step_field(
            cfg.payoff
                .as_ref()
                .map_or(0.5, |p| p.times[p.times.len() - 1]),
        )?,
    };
    field.check_supports(&set).map_err(CliError::input)?;
    let report = verify_martingale_mc(&set, &field, &mc)?;

    let mut checks = Vec::new();
    for (k, (margin, best)) in report
        .supermartingale_margin
        .iter()
        .zip(&report.max_mean)
        .enumerate()
    {
        checks.push(Check::at_most(format!("supermartingale_{k}"), *margin, 0.0));
        checks.push(Check::within(
            format!("max_mean_{k}"),
            best.mean,
            0.0,
            3.0 * best.se,
        ));
    }

    let mut ab = Vec::new();
    for k in 0..field.intervals() {
        for x in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let observed = vec![x; k + 1];
            let h = if field.has_vol_coefs() {
                field.vol_coef_at(k, &observed)
            } else {
                1.0
            };
            let r = verify_ab_identity(
                &AbModel::Product(&set),
                &field,
                &DMatrix::from_element(1, 1, h),
                k,
                &observed,
            )?;
            ab.push(json!({ "interval": k, "x": x, "result": to_value(&r) }));
            checks.push(Check::at_most(
                format!("ab_identity_{k}_{x}"),
                r.gap.abs(),
                1e-12,
            ));
        }
    }
    let results = json!({ "martingale": to_value(&report), "ab_identity": ab });
    Ok((results, checks, Vec::new()))
}
