//! Command-line testbench: run scenarios, batch suites, train the
//! steady-turn reference network, and execute the oracle self-checks.

use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sphere_mpc::dynamics::{
    mechanical_energy, plant_step, FrictionConfig, GeneralizedState, RobotParams,
};
use sphere_mpc::harness::{
    export_results, read_scenario, run_scenario, Metrics, ScenarioResult,
};
use sphere_mpc::linmodel::{linearize, numeric_jacobian, sub_accel, sub_state, Axis};
use sphere_mpc::mlp::{beta_grid, mse, train_beta_model, MLPParams, Split};
use sphere_mpc::qp::{build_prediction, condense, kkt_residual, solve_qp, MPCConfig};

#[derive(Parser)]
#[command(
    name = "sphere-mpc",
    version,
    about = "Motion-control testbench for a pendulum-driven spherical robot"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and export CSV + JSON results.
    Run {
        /// Scenario document (JSON).
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Reference-network file; trained from scratch when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run every scenario in a directory and print a combined table.
    Suite {
        /// Directory of scenario documents.
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the steady-turn reference network and save it.
    TrainMlp {
        /// Grid size as "<v steps>x<roll steps>", e.g. 9x10.
        #[arg(long, default_value = "9x10")]
        grid: String,
        #[arg(long, default_value_t = 14)]
        hidden: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Oracle self-tests: analytic Jacobians vs finite differences, QP
    /// optimality residuals, and lossless-plant energy conservation.
    Check,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            model,
        } => cmd_run(&scenario, seed, &out, model.as_deref()),
        Command::Suite {
            dir,
            seed,
            out,
            model,
        } => cmd_suite(&dir, seed, &out, model.as_deref()),
        Command::TrainMlp {
            grid,
            hidden,
            seed,
            out,
        } => cmd_train(&grid, hidden, seed, &out),
        Command::Check => cmd_check(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Load the reference network, or train the default one (9×10 grid, 14
/// hidden units, seed 7) deterministically.
fn resolve_model(path: Option<&Path>) -> Result<MLPParams, Box<dyn Error>> {
    match path {
        Some(p) => Ok(MLPParams::load(p)?),
        None => {
            eprintln!("no --model given; training the default reference network");
            let (v, phi) = beta_grid(9, 10);
            let (model, data) = train_beta_model(&RobotParams::default(), &v, &phi, 14, 7)?;
            eprintln!(
                "trained: test MSE {:.3e} over {} held-out samples",
                mse(&model, &data.subset(Split::Test)),
                data.subset(Split::Test).len()
            );
            Ok(model)
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.4}"),
        None => "-".to_string(),
    }
}

fn print_axis_metrics(indent: &str, label: &str, m: &Metrics) {
    println!(
        "{indent}{label:<9} t_r {:>8}  sigma {:>8}  t_s {:>8}  e_rmse {:.3e}  energy {:.3} J",
        fmt_opt(m.t_r),
        fmt_opt(m.sigma),
        fmt_opt(m.t_s),
        m.e_rmse,
        m.energy_q,
    );
}

fn report_run(result: &ScenarioResult) {
    println!(
        "scenario {} (seed {}), {} rows",
        result.scenario.name,
        result.seed,
        result.records.len()
    );
    print_axis_metrics("  ", "velocity", &result.velocity_metrics);
    print_axis_metrics("  ", "roll", &result.roll_metrics);
    if result.solver_failures != [0, 0] {
        println!(
            "  fail-safe cycles: velocity {}, roll {}",
            result.solver_failures[0], result.solver_failures[1]
        );
    }
    if let Some(path) = &result.path {
        println!(
            "  path: max error {:.3} m after {:.1} s (final {:.3} m)",
            path.max_error_after_quarter, path.quarter_time, path.final_error
        );
    }
}

fn cmd_run(
    scenario_path: &Path,
    seed: u64,
    out: &Path,
    model: Option<&Path>,
) -> Result<ExitCode, Box<dyn Error>> {
    let scenario = read_scenario(scenario_path)?;
    let mlp = resolve_model(model)?;
    let result = run_scenario(&scenario, seed, &mlp)?;
    report_run(&result);
    let files = export_results(&result, out)?;
    println!(
        "  wrote {}, {}, {}",
        files.csv.display(),
        files.metrics.display(),
        files.scenario.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_suite(
    dir: &Path,
    seed: u64,
    out: &Path,
    model: Option<&Path>,
) -> Result<ExitCode, Box<dyn Error>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("no scenario files in {}", dir.display()).into());
    }
    let mlp = resolve_model(model)?;

    println!(
        "{:<28} {:<9} {:>8} {:>9} {:>8} {:>10} {:>10}",
        "scenario", "axis", "t_r(s)", "sigma(%)", "t_s(s)", "e_rmse", "energy(J)"
    );
    let mut failures = 0usize;
    for path in &paths {
        let scenario = match read_scenario(path) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                failures += 1;
                continue;
            }
        };
        match run_scenario(&scenario, seed, &mlp) {
            Ok(result) => {
                for (axis, m) in [
                    ("velocity", &result.velocity_metrics),
                    ("roll", &result.roll_metrics),
                ] {
                    println!(
                        "{:<28} {:<9} {:>8} {:>9} {:>8} {:>10.3e} {:>10.3}",
                        if axis == "velocity" {
                            result.scenario.name.as_str()
                        } else {
                            ""
                        },
                        axis,
                        fmt_opt(m.t_r),
                        fmt_opt(m.sigma),
                        fmt_opt(m.t_s),
                        m.e_rmse,
                        m.energy_q,
                    );
                }
                export_results(&result, out)?;
            }
            Err(e) => {
                eprintln!("error: {}: {e}", scenario.name);
                failures += 1;
            }
        }
    }
    if failures > 0 {
        Err(format!("{failures} scenario(s) failed").into())
    } else {
        println!("results written to {}", out.display());
        Ok(ExitCode::SUCCESS)
    }
}

fn cmd_train(grid: &str, hidden: usize, seed: u64, out: &Path) -> Result<ExitCode, Box<dyn Error>> {
    let (n_v, n_phi) = grid
        .split_once('x')
        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
        .ok_or_else(|| format!("bad --grid {grid:?}; expected e.g. 9x10"))?;
    let (v, phi) = beta_grid(n_v, n_phi);
    let (model, data) = train_beta_model(&RobotParams::default(), &v, &phi, hidden, seed)?;
    println!(
        "trained {}x{} grid ({} samples), {} hidden units, seed {}",
        n_v,
        n_phi,
        data.samples.len(),
        hidden,
        seed
    );
    for split in [Split::Train, Split::Validation, Split::Test] {
        let subset = data.subset(split);
        println!(
            "  {:<10} {:>3} samples, MSE {:.3e}",
            format!("{split:?}").to_lowercase(),
            subset.len(),
            mse(&model, &subset)
        );
    }
    model.save(out)?;
    println!("saved {}", out.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// Oracle self-checks
// ---------------------------------------------------------------------------

struct CheckReport {
    failed: bool,
}

impl CheckReport {
    fn new() -> Self {
        CheckReport { failed: false }
    }

    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!(
            "check: {name} ... {} ({detail})",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failed = true;
        }
    }
}

fn random_small_state(rng: &mut ChaCha8Rng) -> GeneralizedState {
    GeneralizedState::new(
        Vector4::new(
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.15..0.15),
        ),
        Vector4::new(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
        ),
    )
}

/// Largest elementwise relative error between the analytic sub-model
/// Jacobian/input column and central finite differences of the nonlinear
/// sub-dynamics.
fn jacobian_check() -> f64 {
    let params = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let op = random_small_state(&mut rng);
        for axis in [Axis::Longitudinal, Axis::Transverse] {
            let friction = 0.0;
            let other_angle = match axis {
                Axis::Longitudinal => op.beta(),
                Axis::Transverse => op.alpha(),
            };
            let (a, b, _) = linearize(&params, axis, &op, friction).expect("linearize");
            let s0 = sub_state(axis, &op);

            let field = |s: &DVector<f64>| -> DVector<f64> {
                let sv = Vector4::new(s[0], s[1], s[2], s[3]);
                let acc = sub_accel(&params, axis, &sv, s[4], friction, other_angle)
                    .expect("sub_accel");
                DVector::from_vec(vec![sv[1], acc[0], sv[3], acc[1]])
            };
            // Differentiate over [state; input] so the input column is
            // checked alongside the state Jacobian.
            let point = DVector::from_vec(vec![s0[0], s0[1], s0[2], s0[3], 0.0]);
            let jac = numeric_jacobian(field, &point, h);

            let mut analytic = DMatrix::zeros(4, 5);
            analytic.view_mut((0, 0), (4, 4)).copy_from(&a);
            analytic.view_mut((0, 4), (4, 1)).copy_from(&b);
            for i in 0..4 {
                for j in 0..5 {
                    let denom = jac[(i, j)].abs().max(1.0);
                    worst = worst.max((analytic[(i, j)] - jac[(i, j)]).abs() / denom);
                }
            }
        }
    }
    worst
}

/// A random stable-ish single-input model; convexity of the condensed QP
/// is guaranteed by r > 0 regardless of the model.
fn random_qp(rng: &mut ChaCha8Rng) -> (sphere_mpc::linmodel::LinearModel, MPCConfig, Vector4<f64>) {
    let t_s = 0.02;
    let mut a = Matrix4::zeros();
    let mut b = Vector4::zeros();
    for i in 0..4 {
        for j in 0..4 {
            a[(i, j)] = rng.gen_range(-2.0..2.0);
        }
        b[i] = rng.gen_range(-1.5..1.5);
    }
    let c = Vector4::from_fn(|_, _| rng.gen_range(-0.2..0.2));
    let (a_d, b_d, c_d) = sphere_mpc::linmodel::discretize(&a, &b, &c, t_s);
    let model = sphere_mpc::linmodel::LinearModel {
        axis: Axis::Longitudinal,
        a,
        b,
        c,
        a_d,
        b_d,
        c_d,
        t_s,
    };
    let n_c = rng.gen_range(1..=8);
    let n_p = n_c + rng.gen_range(0..8);
    let q = Matrix4::from_diagonal(&Vector4::from_fn(|_, _| rng.gen_range(0.0..5.0)));
    let p = Matrix4::from_diagonal(&Vector4::from_fn(|_, _| rng.gen_range(0.0..5.0)));
    let lim = rng.gen_range(0.2..2.0);
    let cfg = MPCConfig {
        n_p,
        n_c,
        q,
        p,
        r: rng.gen_range(0.05..1.0),
        u_min: -lim,
        u_max: lim,
        du_max: if rng.gen_bool(0.5) {
            Some(rng.gen_range(0.1..1.0))
        } else {
            None
        },
    };
    let x0 = Vector4::from_fn(|_, _| rng.gen_range(-0.5..0.5));
    (model, cfg, x0)
}

/// Worst KKT residual (stationarity, feasibility, or complementarity)
/// across `n` random box QPs.
fn qp_check(n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (model, cfg, x0) = random_qp(&mut rng);
        let pred = build_prediction(&model, &cfg);
        let x_ref = DVector::zeros(4 * cfg.n_p);
        let u_ref = DVector::zeros(cfg.n_c);
        let qp = condense(&pred, &cfg, &x0, &x_ref, &u_ref).expect("condense");
        let sol = solve_qp(&qp, None).expect("solve");
        let (stat, feas, comp) = kkt_residual(&qp, &sol.u, &sol.lambda);
        worst = worst.max(stat).max(feas).max(comp);
    }
    worst
}

/// Energy drift of the lossless plant over 10 s of torque-free swinging.
fn energy_check() -> (f64, f64) {
    let mut params = RobotParams::default();
    params.zeta = 0.0;
    let friction = FrictionConfig::disabled();
    let mut s = GeneralizedState::new(
        Vector4::new(0.12, 0.0, 0.08, 0.0),
        Vector4::new(0.0, 0.2, 0.0, -0.1),
    );
    let e0 = mechanical_energy(&params, &s);
    let mut drift: f64 = 0.0;
    for _ in 0..10_000 {
        s = plant_step(&params, &friction, &s, &Vector2::zeros(), 1e-3).expect("plant step");
        drift = drift.max((mechanical_energy(&params, &s) - e0).abs());
    }
    (drift, e0)
}

fn cmd_check() -> Result<ExitCode, Box<dyn Error>> {
    let mut report = CheckReport::new();

    let worst = jacobian_check();
    report.record(
        "analytic Jacobians vs central differences",
        worst < 1e-5,
        format!("max rel err {worst:.3e}"),
    );

    let worst = qp_check(200);
    report.record(
        "QP optimality residuals on 200 random problems",
        worst < 1e-8,
        format!("max KKT residual {worst:.3e}"),
    );

    let (drift, e0) = energy_check();
    report.record(
        "lossless-plant energy conservation",
        drift < 1e-3 * e0.abs(),
        format!("max drift {drift:.3e} J of {e0:.3} J"),
    );

    if report.failed {
        println!("one or more checks failed");
        Ok(ExitCode::FAILURE)
    } else {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    }
}
