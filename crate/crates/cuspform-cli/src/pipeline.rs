//! End-to-end run: system, certificates, wave, amplitude ladder, fits, boundary.

use anyhow::{anyhow, Result};
use cuspform::eikonal::{evolve_to_stop, initialize, max_shock_gradient, physical_reconstruct, SolverConfig, Trajectory};
use cuspform::mghd::{
    class_counts, classify_boundary, cone_speed, extract_boundary, lambda_star, lipschitz_constant, mu_star,
    mu_star_brute_force, perverse_harness, preshock_clusters, side_classes, BoundaryClass, CausalConfig, FrameSet,
    PerverseReport,
};
use cuspform::preshock::{
    cusp_samples, detect_preshock, fit_correctors, fit_modulation, gauge_normalize_at_preshock,
    leading_state_coefficient, preshock_point, validate_leading_order, ShellConfig,
};
use cuspform::simplewave::{
    build_simple_wave, integrate_state_curve, MildParams, Nondegeneracy, SimpleWave, ThetaProfile,
};
use cuspform::systems::{builtin_system, graphical_condition_check, GaugeParams, SystemDefinition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, FieldPosition, FitSection, MghdSection};

/// One pass/fail verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), passed: value <= limit, value, limit }
    }

    fn flag(name: &str, passed: bool) -> Self {
        Self { name: name.into(), passed, value: if passed { 1.0 } else { 0.0 }, limit: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificates {
    pub graphical_condition: bool,
    pub nondegeneracy_mild: Result<String, String>,
    pub nondegeneracy_strong: Result<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderEntry {
    pub epsilon: f64,
    pub error: Option<String>,
    pub t_star: Option<f64>,
    pub x_star: Option<f64>,
    pub u0: Option<f64>,
    pub first_stop_tau: Option<f64>,
    pub frames: usize,
    /// `max |d_x psi^{I0}|` at the stop over its value at `tau = 0`.
    pub gradient_growth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinMuRow {
    pub epsilon: f64,
    pub tau: f64,
    pub min_mu: f64,
    pub argmin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldRow {
    pub epsilon: f64,
    pub tau: f64,
    pub t: f64,
    pub u: f64,
    pub x: f64,
    pub mu: f64,
    pub psi: Vec<f64>,
    pub dpsi_dx: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShellRow {
    pub d_lo: f64,
    pub d_hi: f64,
    pub samples: usize,
    pub ratio_u: f64,
    pub ratio_mu: f64,
    pub psi_coeff_relerr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectorResidual {
    pub d_lo: f64,
    pub d_hi: f64,
    pub pre_fit: f64,
    pub post_fit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectorReport {
    pub c20: f64,
    pub c12: f64,
    pub c04: f64,
    pub condition: f64,
    pub residuals: Vec<CorrectorResidual>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub t_star: f64,
    pub u0: f64,
    pub a0: f64,
    pub b0: f64,
    pub mu_remainder: f64,
    pub x_remainder: f64,
    pub predicted_state_coefficient: f64,
    pub shells_bounded: bool,
    pub shells: Vec<ShellRow>,
    pub correctors: Option<CorrectorReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryRow {
    pub t: f64,
    pub x: f64,
    pub tau: f64,
    pub u: f64,
    pub class: String,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    pub first: usize,
    pub last: usize,
    pub left: Option<String>,
    pub right: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub points: usize,
    pub max_difference: f64,
    pub certified: usize,
    pub fallback: usize,
    /// Largest `d_tau mu` over the lattice nodes of the sampled cones.
    pub max_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryReport {
    pub base_level: f64,
    pub t_box: f64,
    pub lambda_star: f64,
    pub t_star: f64,
    pub x_star: f64,
    pub counts: Vec<(String, usize)>,
    pub clusters: Vec<ClusterReport>,
    pub lipschitz: f64,
    pub cone_speed: f64,
    pub ladder_gaps: Vec<f64>,
    pub mu_zero_tol: f64,
    pub dmu_zero_tol: f64,
    pub oracle: OracleReport,
    pub rows: Vec<BoundaryRow>,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bundle {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub certificates: Option<Certificates>,
    pub ladder: Vec<LadderEntry>,
    pub min_mu: Vec<MinMuRow>,
    pub fields: Vec<FieldRow>,
    pub fit: Option<Result<FitReport, String>>,
    pub boundary: Option<Result<BoundaryReport, String>>,
    pub perverse: Option<Result<PerverseReport, String>>,
    pub checks: Vec<Check>,
}

impl Bundle {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn gauge(config: &ExperimentConfig) -> GaugeParams {
    GaugeParams { t0: 0.0, x0: 0.0, v: config.shear }
}

/// The configured system in the run's gauge.
pub fn build_system(config: &ExperimentConfig) -> Result<SystemDefinition> {
    let system = builtin_system(&config.system.name, &config.system.params)?;
    Ok(if config.shear != 0.0 { system.galilean_transform(&gauge(config)) } else { system })
}

pub fn build_wave(config: &ExperimentConfig, system: &SystemDefinition) -> Result<SimpleWave> {
    let w = &config.wave;
    let curve = integrate_state_curve(system, &w.anchor, w.half_length, w.curve_step)?;
    Ok(build_simple_wave(system, curve, ThetaProfile::new(w.terms.clone()), w.normalize)?)
}

fn certificates(config: &ExperimentConfig, wave: &SimpleWave) -> Certificates {
    let mild = config.wave.confinement.or_else(|| {
        config.mghd.as_ref().map(|m| MildParams { eta: m.eta, delta1: m.delta1, delta2: m.delta2 })
    });
    let show = |r: Result<_, cuspform::simplewave::SimpleWaveError>| r.map(|c| format!("{c:?}")).map_err(|e| e.to_string());
    Certificates {
        graphical_condition: graphical_condition_check(wave),
        nondegeneracy_mild: match mild {
            Some(p) => show(wave.check_nondegeneracy(Nondegeneracy::Mild(p))),
            None => Err("no confinement parameters configured".into()),
        },
        nondegeneracy_strong: show(wave.check_nondegeneracy(Nondegeneracy::Strong { uniqueness_margin: 1e-3 })),
    }
}

struct Rung {
    entry: LadderEntry,
    trajectory: Option<Trajectory>,
}

fn run_rung(
    config: &ExperimentConfig,
    system: &SystemDefinition,
    wave: &SimpleWave,
    epsilon: f64,
    min_mu: &mut Vec<MinMuRow>,
    fields: &mut Vec<FieldRow>,
) -> Rung {
    let mut entry = LadderEntry {
        epsilon,
        error: None,
        t_star: None,
        x_star: None,
        u0: None,
        first_stop_tau: None,
        frames: 0,
        gradient_growth: None,
    };
    let g = gauge(config);
    let trajectory = match initialize(wave, &config.perturbation, epsilon, &config.solver)
        .and_then(|init| evolve_to_stop(system, init, &config.solver))
    {
        Ok(t) => t,
        Err(e) => {
            entry.error = Some(e.to_string());
            return Rung { entry, trajectory: None };
        }
    };
    entry.frames = trajectory.frames.len();
    entry.first_stop_tau = trajectory.first_stop_tau;
    let initial = max_shock_gradient(&trajectory.frames[0]);
    entry.gradient_growth = Some(max_shock_gradient(trajectory.stop_frame()) / initial);
    min_mu.extend(trajectory.min_mu_history.iter().map(|&(tau, m, u)| MinMuRow { epsilon, tau, min_mu: m, argmin: u }));
    let mut dumps: Vec<_> = trajectory.checkpoints.iter().collect();
    if dumps.is_empty() {
        dumps.push(trajectory.frame_near(0.5));
        dumps.push(trajectory.stop_frame());
    }
    for frame in dumps {
        if let Ok(rows) = physical_reconstruct(frame) {
            for (j, row) in rows.into_iter().enumerate() {
                let (t, x) = g.invert(row.t, row.x);
                fields.push(FieldRow {
                    epsilon,
                    tau: frame.tau,
                    t,
                    u: frame.grid.node(j),
                    x,
                    mu: frame.mu[j],
                    psi: row.psi,
                    dpsi_dx: row.dpsi_dx,
                });
            }
        }
    }
    match detect_preshock(&trajectory, 0.01).map_err(|e| e.to_string()).and_then(|loc| {
        preshock_point(&trajectory, loc).map(|(_, x)| (loc, x)).map_err(|e| e.to_string())
    }) {
        Ok((loc, x_bar)) => {
            let (t, x) = g.invert(loc.t_star, x_bar);
            entry.t_star = Some(t);
            entry.x_star = Some(x);
            entry.u0 = Some(loc.u0);
        }
        Err(e) => entry.error = Some(e),
    }
    Rung { entry, trajectory: Some(trajectory) }
}

pub fn fit_report(system: &SystemDefinition, trajectory: &Trajectory, section: &FitSection) -> Result<FitReport> {
    let location = detect_preshock(trajectory, section.preshock_margin)?;
    let fit = fit_modulation(trajectory, location, section.window)?;
    let (normalized, shifted, model) = gauge_normalize_at_preshock(system, trajectory, &fit)?;
    let samples = cusp_samples(&normalized, &shifted, &model, section.shells.max_distance)?;
    let predicted = leading_state_coefficient(&normalized, &model)?;
    let shells = ShellConfig { resolution: section.shells.resolution.max(2.0 * trajectory.frames[0].grid.step), ..section.shells };
    let leading = validate_leading_order(&samples, predicted, &shells)?;
    let correctors = fit_correctors(&samples, section.corrector_shell, &section.shells).ok().map(|c| CorrectorReport {
        c20: c.c20,
        c12: c.c12,
        c04: c.c04,
        condition: c.condition,
        residuals: c
            .shells
            .iter()
            .map(|s| CorrectorResidual { d_lo: s.d_lo, d_hi: s.d_hi, pre_fit: s.pre_fit, post_fit: s.post_fit })
            .collect(),
    });
    Ok(FitReport {
        t_star: fit.t_star,
        u0: fit.u0,
        a0: fit.a0,
        b0: fit.b0,
        mu_remainder: fit.mu_remainder,
        x_remainder: fit.x_remainder,
        predicted_state_coefficient: predicted,
        shells_bounded: leading.bounded,
        shells: leading
            .shells
            .iter()
            .map(|s| ShellRow {
                d_lo: s.d_lo,
                d_hi: s.d_hi,
                samples: s.samples,
                ratio_u: s.ratio_u,
                ratio_mu: s.ratio_mu,
                psi_coeff_relerr: s.state_coefficient_relerr,
            })
            .collect(),
        correctors,
    })
}

/// Solver settings and causal box for a boundary run.
pub fn causal_setup(
    config: &ExperimentConfig,
    wave: &SimpleWave,
    section: &MghdSection,
) -> Result<(CausalConfig, SolverConfig)> {
    let causal = CausalConfig {
        trace_fraction: section.trace_fraction,
        ..CausalConfig::from_condition(
            wave.min_location(),
            section.eta,
            section.delta1,
            section.delta2,
            lambda_star(wave)?,
            section.mu_stop,
        )?
    };
    let base = SolverConfig {
        grid_points: section.grid_points,
        tau_step: section.tau_step,
        mu_stop: section.mu_stop,
        margin: section.margin,
        checkpoints: Vec::new(),
        ..config.solver.clone()
    };
    let solver = causal.solver_settings(&base, section.refined_steps);
    Ok((causal, solver))
}

/// Compares `mu*` with the brute-force cone minimum at random points of the development inside the box.
pub fn oracle_check(frames: &FrameSet, causal: &CausalConfig, points: usize, seed: u64, floor: f64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reach = causal.eta + causal.delta1;
    let mut report = OracleReport { points: 0, max_difference: 0.0, certified: 0, fallback: 0, max_rate: f64::NEG_INFINITY };
    let mut attempts = 0;
    while report.points < points && attempts < 100 * points.max(1) {
        attempts += 1;
        let u = causal.center + rng.gen_range(-reach..reach);
        let tau = rng.gen_range(causal.base_time(u)..causal.t_box);
        let fast = mu_star(frames, causal, (tau, u))?;
        if fast.value < floor {
            continue;
        }
        let brute = mu_star_brute_force(frames, causal, (tau, u))?;
        report.points += 1;
        report.max_difference = report.max_difference.max((fast.value - brute.value).abs());
        report.certified += usize::from(fast.certified);
        report.fallback += usize::from(fast.fallback);
        report.max_rate = report.max_rate.max(brute.max_rate);
    }
    Ok(report)
}

/// Evolves the boundary run, extracts and classifies the boundary, and cross-checks `mu*`.
pub fn boundary_run(
    config: &ExperimentConfig,
    system: &SystemDefinition,
    wave: &SimpleWave,
    section: &MghdSection,
) -> Result<(Trajectory, BoundaryReport)> {
    let (causal, solver) = causal_setup(config, wave, section)?;
    let init = initialize(wave, &config.perturbation, section.epsilon, &solver)?;
    let trajectory = evolve_to_stop(system, init, &solver)?;
    let location = detect_preshock(&trajectory, 0.01)?;
    let (state, x_bar) = preshock_point(&trajectory, location)?;
    let mut polyline = extract_boundary(&trajectory, &causal)?;
    classify_boundary(&mut polyline, &trajectory, &causal);
    let frames = FrameSet::new(&trajectory)?;
    let oracle = oracle_check(&frames, &causal, section.oracle_points, config.seed, 10.0 * section.mu_stop)?;
    let g = gauge(config);
    let clusters = preshock_clusters(&polyline)
        .into_iter()
        .map(|c| {
            let (l, r) = side_classes(&polyline, &c);
            ClusterReport {
                first: c.start,
                last: c.end - 1,
                left: l.map(|k| k.label().to_string()),
                right: r.map(|k| k.label().to_string()),
            }
        })
        .collect();
    let n = polyline.points.len();
    let rows = polyline
        .points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let (t, x) = g.invert(p.t, p.x);
            let slope = if n < 2 { 0.0 } else { polyline.slopes[j.min(n - 2)] };
            BoundaryRow { t, x, tau: p.tau, u: p.u, class: p.class.label().into(), slope }
        })
        .collect();
    let (t_star, x_star) = g.invert(location.t_star, x_bar);
    let report = BoundaryReport {
        base_level: causal.base_level,
        t_box: causal.t_box,
        lambda_star: causal.lambda_star,
        t_star,
        x_star,
        counts: class_counts(&polyline).iter().map(|(c, k)| (c.label().to_string(), *k)).collect(),
        clusters,
        lipschitz: lipschitz_constant(&polyline, 0.05 * (causal.t_box - causal.base_level)),
        cone_speed: cone_speed(system, &state)?,
        ladder_gaps: polyline.ladder_gaps.clone(),
        mu_zero_tol: polyline.mu_zero_tol,
        dmu_zero_tol: polyline.dmu_zero_tol,
        oracle,
        rows,
    };
    drop(frames);
    Ok((trajectory, report))
}

fn ladder_checks(config: &ExperimentConfig, ladder: &[LadderEntry], checks: &mut Vec<Check>) {
    let tol = &config.checks;
    for entry in ladder {
        checks.push(Check::flag(&format!("rung_{}_completed", entry.epsilon), entry.error.is_none()));
    }
    if let Some(t) = ladder.iter().find(|e| e.epsilon == 0.0).and_then(|e| e.t_star) {
        checks.push(Check::at_most("shock_time_unperturbed", (t - 1.0).abs(), tol.t_star_tol));
    }
    let constants: Vec<f64> = ladder
        .iter()
        .filter(|e| e.epsilon > 0.0)
        .filter_map(|e| e.t_star.map(|t| (t - 1.0).abs() / e.epsilon))
        .collect();
    if constants.len() >= 2 {
        let hi = constants.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = constants.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(Check::at_most("shock_time_linear_in_epsilon", hi / lo, tol.linear_spread));
    }
}

fn fit_checks(config: &ExperimentConfig, fit: &Result<FitReport, String>, checks: &mut Vec<Check>) {
    let tol = &config.checks;
    let report = match fit {
        Ok(r) => r,
        Err(_) => {
            checks.push(Check::flag("fit_completed", false));
            return;
        }
    };
    checks.push(Check::at_most("modulation_a0", (report.a0 - 1.0).abs(), tol.a0_tol));
    if let Some(b) = config.fit.as_ref().and_then(|f| f.expected_b0) {
        checks.push(Check::at_most("modulation_b0", (report.b0 - b).abs(), tol.b0_tol));
    }
    let ratios: Vec<f64> = report.shells.iter().map(|s| s.ratio_u).collect();
    let median = cuspform::numerics::median(&ratios);
    let max = ratios.iter().copied().fold(0.0, f64::max);
    checks.push(Check { name: "cusp_shell_count".into(), passed: ratios.len() >= 3, value: ratios.len() as f64, limit: 3.0 });
    checks.push(Check::at_most("cusp_shell_spread", max / median, tol.shell_spread));
    if let Some(finest) = report.shells.last() {
        checks.push(Check::at_most("cusp_state_coefficient", finest.psi_coeff_relerr, tol.state_coefficient_tol));
    }
}

pub fn boundary_checks(config: &ExperimentConfig, section: &MghdSection, report: &Result<BoundaryReport, String>, checks: &mut Vec<Check>) {
    let tol = &config.checks;
    let report = match report {
        Ok(r) => r,
        Err(_) => {
            checks.push(Check::flag("boundary_completed", false));
            return;
        }
    };
    checks.push(Check::at_most("mu_star_oracle", report.oracle.max_difference, tol.oracle_tol));
    checks.push(Check::flag(
        "mu_star_certificate",
        report.oracle.points > 0 && report.oracle.certified == report.oracle.points && report.oracle.max_rate <= -0.5,
    ));
    checks.push(Check::at_most("boundary_lipschitz", report.lipschitz, tol.lipschitz_factor / report.cone_speed));
    let count = |label: &str| report.counts.iter().find(|(c, _)| c == label).map_or(0, |(_, k)| *k);
    let singular = BoundaryClass::Singular.label();
    let cauchy = BoundaryClass::Cauchy.label();
    match section.expect {
        FieldPosition::Extremal => {
            let ok = report.clusters.len() == 1 && {
                let c = &report.clusters[0];
                let sides = [c.left.as_deref(), c.right.as_deref()];
                sides.contains(&Some(singular)) && sides.contains(&Some(cauchy))
            };
            checks.push(Check::flag("boundary_single_preshock_with_sides", ok));
        }
        FieldPosition::Intermediate => {
            checks.push(Check::at_most("boundary_singular_points", count(singular) as f64, 0.0));
        }
    }
}

fn perverse_checks(report: &Result<PerverseReport, String>, checks: &mut Vec<Check>) {
    match report {
        Ok(r) => {
            checks.push(Check::flag("perverse_locations", r.entries.iter().all(|e| e.location_ok)));
            checks.push(Check::flag("perverse_angles", r.entries.iter().all(|e| e.angle_ok)));
        }
        Err(_) => checks.push(Check::flag("perverse_completed", false)),
    }
}

/// Executes the configured pipeline. Module errors are recorded in the bundle; only setup errors abort.
pub fn run(config: &ExperimentConfig, fields_only: bool) -> Result<Bundle> {
    config.validate()?;
    let system = build_system(config)?;
    let wave = build_wave(config, &system)?;
    let mut bundle = Bundle {
        config: config.clone(),
        config_hash: config.hash(),
        certificates: None,
        ladder: Vec::new(),
        min_mu: Vec::new(),
        fields: Vec::new(),
        fit: None,
        boundary: None,
        perverse: None,
        checks: Vec::new(),
    };
    let fit_epsilon = if fields_only { None } else { config.fit.as_ref().map(|f| f.epsilon) };
    let mut fit_trajectory = None;
    for &epsilon in &config.epsilons {
        let rung = run_rung(config, &system, &wave, epsilon, &mut bundle.min_mu, &mut bundle.fields);
        if Some(epsilon) == fit_epsilon && fit_trajectory.is_none() {
            fit_trajectory = rung.trajectory;
        }
        bundle.ladder.push(rung.entry);
    }
    ladder_checks(config, &bundle.ladder, &mut bundle.checks);
    if fields_only {
        return Ok(bundle);
    }
    let certs = certificates(config, &wave);
    bundle.checks.push(Check::flag("graphical_condition", certs.graphical_condition));
    bundle.checks.push(Check::flag("nondegeneracy_strong", certs.nondegeneracy_strong.is_ok()));
    if config.wave.confinement.is_some() || config.mghd.is_some() {
        bundle.checks.push(Check::flag("nondegeneracy_mild", certs.nondegeneracy_mild.is_ok()));
    }
    bundle.certificates = Some(certs);
    if let Some(section) = &config.fit {
        let fit = match &fit_trajectory {
            Some(t) => fit_report(&system, t, section).map_err(|e| e.to_string()),
            None => Err(anyhow!("no trajectory for epsilon = {}", section.epsilon).to_string()),
        };
        fit_checks(config, &fit, &mut bundle.checks);
        bundle.fit = Some(fit);
    }
    drop(fit_trajectory);
    if let Some(section) = &config.mghd {
        let report = boundary_run(config, &system, &wave, section).map(|(_, r)| r).map_err(|e| e.to_string());
        boundary_checks(config, section, &report, &mut bundle.checks);
        bundle.boundary = Some(report);
    }
    if let Some(section) = &config.perverse {
        let report = perverse_harness(section.n_max, &section.config).map_err(|e| e.to_string());
        perverse_checks(&report, &mut bundle.checks);
        bundle.perverse = Some(report);
    }
    Ok(bundle)
}
