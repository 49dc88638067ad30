//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.

use std::f64::consts::FRAC_PI_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use cuspform::cusp::monotone_cubic_root;
use cuspform::eikonal::{
    c1_norms, evolve_to_stop, initialize, max_shock_gradient, Perturbation, SmoothnessNorms, SolverConfig, Trajectory,
};
use cuspform::numerics::observed_orders;
use cuspform::spectral::{compute_xi, SpectralConfig};
use cuspform::systems::{builtin_system, GaugeParams, SystemParams};
use cuspform::Cusp;
use cuspform_cli::config::MghdSection;
use cuspform_cli::emit::emit;
use cuspform_cli::pipeline::{boundary_checks, boundary_run, build_system, build_wave, fit_report, BoundaryReport};
use cuspform_cli::{run, Bundle, Check, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).expect("bundled config loads")
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn extremal_bundle() -> &'static Bundle {
    static BUNDLE: OnceLock<Bundle> = OnceLock::new();
    BUNDLE.get_or_init(|| run(&config("burgers_extremal.json"), false).expect("pipeline runs"))
}

struct BoundaryCase {
    config: ExperimentConfig,
    section: MghdSection,
    trajectory: Trajectory,
    report: BoundaryReport,
}

fn boundary_case(name: &str) -> BoundaryCase {
    let config = config(name);
    let section = config.mghd.clone().expect("config has a boundary section");
    let system = build_system(&config).expect("system builds");
    let wave = build_wave(&config, &system).expect("wave builds");
    let (trajectory, report) = boundary_run(&config, &system, &wave, &section).expect("boundary run succeeds");
    BoundaryCase { config, section, trajectory, report }
}

fn extremal_boundary() -> &'static BoundaryCase {
    static CASE: OnceLock<BoundaryCase> = OnceLock::new();
    CASE.get_or_init(|| boundary_case("burgers_extremal.json"))
}

fn intermediate_boundary() -> &'static BoundaryCase {
    static CASE: OnceLock<BoundaryCase> = OnceLock::new();
    CASE.get_or_init(|| boundary_case("synthetic3_intermediate.json"))
}

fn check<'a>(bundle: &'a Bundle, name: &str) -> Result<&'a Check, String> {
    bundle.checks.iter().find(|c| c.name == name).ok_or_else(|| format!("check `{name}` missing"))
}

fn checks_pass(bundle: &Bundle, names: &[&str]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in names {
        let c = check(bundle, name)?;
        ok &= c.passed;
        parts.push(format!("{name} {:.3e} (limit {:.3e})", c.value, c.limit));
    }
    ensure(ok, parts.join(", "))
}

fn spectral_identities() -> Outcome {
    let cfg = SpectralConfig::default();
    let mut worst = [0.0f64; 3];
    for name in ["burgers_transport", "p_system", "synthetic3_intermediate"] {
        let system = builtin_system(name, &SystemParams::default()).map_err(|e| e.to_string())?;
        for state in system.sample_states(100, 17) {
            let tensors = compute_xi(&system, &state, &cfg).map_err(|e| e.to_string())?;
            worst[0] = worst[0].max(tensors.spectral.duality_defect());
            worst[1] = worst[1].max(tensors.spectral.eigen_residual(&system.matrix(&state)));
            worst[2] = worst[2].max(tensors.structural_zero_defect());
        }
    }
    ensure(
        worst[0] <= 1e-10 && worst[1] <= 1e-10 && worst[2] <= 1e-8,
        format!("duality {:.2e}, eigen residual {:.2e}, off-diagonal xi {:.2e}", worst[0], worst[1], worst[2]),
    )
}

fn simple_wave_exactness() -> Outcome {
    let config = config("burgers_extremal.json");
    let system = build_system(&config).map_err(|e| e.to_string())?;
    let wave = build_wave(&config, &system).map_err(|e| e.to_string())?;
    let mut errors = Vec::new();
    for n in [128, 256, 512, 1024] {
        let solver = SolverConfig { grid_points: n, tau_step: 1e-3, margin: Some(1.0), ..SolverConfig::default() };
        let init = initialize(&wave, &Perturbation::default(), 0.0, &solver).map_err(|e| e.to_string())?;
        let trajectory = evolve_to_stop(&system, init, &solver).map_err(|e| e.to_string())?;
        let mut err: f64 = 0.0;
        for frame in trajectory.pre_stop_frames() {
            for (j, m) in frame.mu.iter().enumerate() {
                err = err.max((m - wave.mu_exact(frame.tau, frame.grid.node(j))).abs());
            }
        }
        errors.push(err);
    }
    let orders = observed_orders(&errors);
    let finest = errors[errors.len() - 1];
    ensure(
        finest <= 1e-6 && orders.iter().all(|&p| p >= 1.8),
        format!("errors {}, orders {orders:.2?}", errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" ")),
    )
}

fn shock_time() -> Outcome {
    let bundle = extremal_bundle();
    let amplitudes: Vec<f64> = bundle.ladder.iter().map(|e| e.epsilon).collect();
    let ladder = [0.0, 1e-2, 5e-3, 2.5e-3];
    if !ladder.iter().all(|e| amplitudes.contains(e)) {
        return Err(format!("ladder {amplitudes:?} does not cover {ladder:?}"));
    }
    checks_pass(bundle, &["shock_time_unperturbed", "shock_time_linear_in_epsilon"])
}

fn norm_ratio(trajectory: &Trajectory) -> Result<(f64, f64), String> {
    let frames = &trajectory.frames;
    let at = |tau: f64| -> usize {
        let f = trajectory.frame_near(tau);
        frames.iter().position(|g| std::ptr::eq(g, f)).expect("frame belongs to trajectory")
    };
    let mid = at(0.5).max(1);
    let stop = at(trajectory.stop_frame().tau);
    if stop < 1 {
        return Err("trajectory stopped at its first frame".into());
    }
    let early = c1_norms(&frames[mid - 1], &frames[mid]);
    let late = c1_norms(&frames[stop - 1], &frames[stop]);
    let parts = |n: &SmoothnessNorms| [n.psi, n.mu, n.shock_derivative, n.transversal];
    let ratio = parts(&late)
        .iter()
        .zip(parts(&early))
        .map(|(l, e)| if e > 0.0 { l / e } else if *l == 0.0 { 1.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    let growth = max_shock_gradient(&frames[stop]) / max_shock_gradient(&frames[mid]);
    Ok((ratio, growth))
}

fn eikonal_smoothness() -> Outcome {
    let (er, eg) = norm_ratio(&extremal_boundary().trajectory)?;
    let (ir, ig) = norm_ratio(&intermediate_boundary().trajectory)?;
    ensure(
        er <= 2.0 && ir <= 2.0 && eg >= 10.0 && ig >= 10.0,
        format!("extremal norm ratio {er:.3} growth {eg:.3e}; intermediate norm ratio {ir:.3} growth {ig:.3e}"),
    )
}

fn modulation_fit() -> Outcome {
    let bundle = extremal_bundle();
    let fine = bundle.fit.as_ref().ok_or("no fit in bundle")?.as_ref().map_err(|e| e.clone())?;
    let config = config("burgers_extremal.json");
    let section = config.fit.clone().ok_or("config has no fit section")?;
    let system = build_system(&config).map_err(|e| e.to_string())?;
    let wave = build_wave(&config, &system).map_err(|e| e.to_string())?;
    let coarse_solver = SolverConfig { grid_points: config.solver.grid_points / 2, ..config.solver.clone() };
    let init = initialize(&wave, &config.perturbation, section.epsilon, &coarse_solver).map_err(|e| e.to_string())?;
    let trajectory = evolve_to_stop(&system, init, &coarse_solver).map_err(|e| e.to_string())?;
    let coarse = fit_report(&system, &trajectory, &section).map_err(|e| e.to_string())?;
    let ratio = fine.x_remainder / coarse.x_remainder;
    let stable = (0.5..=2.0).contains(&ratio);
    let checks = checks_pass(bundle, &["modulation_a0", "modulation_b0"]);
    let detail = format!(
        "a0 {:.6}, b0 {:.6}, quartic remainder {:.4e} -> {:.4e} under refinement",
        fine.a0, fine.b0, coarse.x_remainder, fine.x_remainder
    );
    match checks {
        Ok(_) if stable => Ok(detail),
        Ok(_) => Err(format!("{detail} (unstable)")),
        Err(e) => Err(format!("{detail}; {e}")),
    }
}

fn cusp_validation() -> Outcome {
    let bundle = extremal_bundle();
    let fit = bundle.fit.as_ref().ok_or("no fit in bundle")?.as_ref().map_err(|e| e.clone())?;
    let inside = fit.shells.iter().filter(|s| s.d_lo >= 1e-3 * (1.0 - 1e-9) && s.d_hi <= 1e-1 * (1.0 + 1e-9)).count();
    let checks = checks_pass(bundle, &["cusp_shell_count", "cusp_shell_spread", "cusp_state_coefficient"])?;
    ensure(inside >= 3 && inside == fit.shells.len(), format!("{inside} shells in [1e-3, 1e-1]; {checks}"))
}

fn oracle_equivalence() -> Outcome {
    let bundle = extremal_bundle();
    let report = bundle.boundary.as_ref().ok_or("no boundary in bundle")?.as_ref().map_err(|e| e.clone())?;
    let o = &report.oracle;
    let checks = checks_pass(bundle, &["mu_star_oracle", "mu_star_certificate"]);
    let detail = format!(
        "{} points, max difference {:.2e}, certified {}, max d_tau mu {:.3}",
        o.points, o.max_difference, o.certified, o.max_rate
    );
    match checks {
        Ok(_) if o.points == 100 => Ok(detail),
        Ok(_) => Err(format!("{detail} (expected 100 points)")),
        Err(e) => Err(format!("{detail}; {e}")),
    }
}

fn boundary_structure() -> Outcome {
    let bundle = extremal_bundle();
    let extremal = checks_pass(bundle, &["boundary_lipschitz", "boundary_single_preshock_with_sides"]);
    let case = intermediate_boundary();
    let mut checks = Vec::new();
    boundary_checks(&case.config, &case.section, &Ok(case.report.clone()), &mut checks);
    let intermediate: Vec<&Check> =
        checks.iter().filter(|c| c.name == "boundary_lipschitz" || c.name == "boundary_singular_points").collect();
    let ok = intermediate.len() == 2 && intermediate.iter().all(|c| c.passed);
    let detail = intermediate
        .iter()
        .map(|c| format!("intermediate {} {:.3e} (limit {:.3e})", c.name, c.value, c.limit))
        .collect::<Vec<_>>()
        .join(", ");
    match extremal {
        Ok(e) if ok => Ok(format!("{e}; {detail}")),
        Ok(e) => Err(format!("{e}; {detail}")),
        Err(e) => Err(format!("{e}; {detail}")),
    }
}

fn perverse_example() -> Outcome {
    let bundle = extremal_bundle();
    let report = bundle.perverse.as_ref().ok_or("no perverse report in bundle")?.as_ref().map_err(|e| e.clone())?;
    let angles: Vec<f64> = report.entries.iter().map(|e| e.angle.unwrap_or(f64::NAN)).collect();
    let non_decaying = angles.windows(2).all(|w| w[1] >= w[0] - 0.05);
    let checks = checks_pass(bundle, &["perverse_locations", "perverse_angles"]);
    let detail = format!("n = 1..{}, angles {angles:.4?}, min {:.4}", report.entries.len(), report.min_angle);
    let ok = report.entries.len() >= 3 && report.min_angle >= FRAC_PI_2 - 0.05 && non_decaying;
    match checks {
        Ok(_) if ok => Ok(detail),
        Ok(_) => Err(detail),
        Err(e) => Err(format!("{detail}; {e}")),
    }
}

fn cusp_properties() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cubic_residual: f64 = 0.0;
    for _ in 0..10_000 {
        let cubic = rng.gen_range(0.05..10.0);
        let linear = rng.gen_range(0.0..10.0);
        let rhs = rng.gen_range(-10.0..10.0);
        let y: f64 = monotone_cubic_root(cubic, linear, rhs);
        cubic_residual = cubic_residual.max((cubic * y * y * y + linear * y - rhs).abs());
    }
    let mut homogeneity: f64 = 0.0;
    let mut identities: f64 = 0.0;
    let mut fd_orders = Vec::new();
    for _ in 0..50 {
        let a0 = rng.gen_range(0.5..2.0);
        let b0 = rng.gen_range(0.05..1.0);
        let model = Cusp::new(a0, b0, GaugeParams::identity()).map_err(|e| e.to_string())?;
        let t = rng.gen_range(-1.0..-0.1);
        let x = rng.gen_range(-1.0..1.0);
        let p = model.eval(t, x).map_err(|e| e.to_string())?;
        let scaled = model.eval(4.0 * t, 8.0 * x).map_err(|e| e.to_string())?;
        homogeneity = homogeneity.max((scaled.label - 2.0 * p.label).abs());
        identities = identities.max((p.density * p.distance * p.distance - 1.0).abs());
        identities = identities.max((t + 1.0 / (a0 * p.density) - 3.0 * b0 * p.label * p.label / a0).abs());
        let label = |t: f64, x: f64| model.eval(t, x).expect("t < 0").label;
        let fd_error = |h: f64| {
            let dx = (label(t, x + h) - label(t, x - h)) / (2.0 * h);
            let dt = (label(t + h, x) - label(t - h, x)) / (2.0 * h);
            (dx - p.density).abs().max((dt - a0 * p.label * p.density).abs())
        };
        let (coarse, fine) = (fd_error(1e-2), fd_error(5e-3));
        if coarse > 1e-9 {
            fd_orders.push((coarse / fine).log2());
        }
    }
    let order_ok = !fd_orders.is_empty() && fd_orders.iter().all(|p| (p - 2.0).abs() <= 0.2);
    let (lo, hi) = fd_orders.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &p| (l.min(p), h.max(p)));
    ensure(
        cubic_residual <= 1e-10 && homogeneity <= 1e-12 && identities <= 1e-10 && order_ok,
        format!(
            "cubic residual {cubic_residual:.1e}, homogeneity {homogeneity:.1e}, identities {identities:.1e}, FD orders [{lo:.3}, {hi:.3}]"
        ),
    )
}

fn galilean_and_determinism() -> Outcome {
    let base = config("burgers_small.json");
    let sheared = ExperimentConfig { shear: 0.7, ..base.clone() };
    let a = run(&base, false).map_err(|e| e.to_string())?;
    let b = run(&sheared, false).map_err(|e| e.to_string())?;
    let mut covariance: f64 = 0.0;
    for (x, y) in a.ladder.iter().zip(&b.ladder) {
        match (x.t_star, x.x_star, y.t_star, y.x_star) {
            (Some(t0), Some(x0), Some(t1), Some(x1)) => covariance = covariance.max((t0 - t1).abs()).max((x0 - x1).abs()),
            _ => return Err(format!("rung {} has no preshock", x.epsilon)),
        }
    }
    let again = run(&base, false).map_err(|e| e.to_string())?;
    let first = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = emit(&a, first.path(), false).map_err(|e| e.to_string())?;
    emit(&again, second.path(), false).map_err(|e| e.to_string())?;
    let mut identical = true;
    for name in &files {
        let x = std::fs::read(first.path().join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(second.path().join(name)).map_err(|e| e.to_string())?;
        identical &= x == y;
    }
    ensure(
        covariance <= 1e-6 && identical,
        format!("Galilean deviation {covariance:.1e}, {} files byte-identical: {identical}", files.len()),
    )
}

fn property_suites() -> Outcome {
    let cusp = cusp_properties()?;
    let runs = galilean_and_determinism()?;
    Ok(format!("{cusp}; {runs}"))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "spectral identities", spectral_identities),
        (2, "simple-wave exactness", simple_wave_exactness),
        (3, "shock time", shock_time),
        (4, "eikonal smoothness vs physical blowup", eikonal_smoothness),
        (5, "modulation fit", modulation_fit),
        (6, "cusp validation", cusp_validation),
        (7, "mu* oracle equivalence", oracle_equivalence),
        (8, "boundary structure", boundary_structure),
        (9, "perverse example", perverse_example),
        (10, "property suites", property_suites),
    ];
    let mut failures = 0;
    for (k, name, criterion) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {k} ({name}, {secs:.1} s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {k} ({name}, {secs:.1} s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
