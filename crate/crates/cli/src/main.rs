mod config;
mod failure;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cqlqg::calculus::gradient;
use cqlqg::closed_loop::{covariance_positivity, lqg_cost_with_margin, ClosedLoopPoint};
use cqlqg::io::{flow_to_csv, parse_plant, parse_trace_csv, trace_to_csv, ControllerFile};
use cqlqg::model::{check_plant_pr, TRANSCRIBED_PR_TOL};
use cqlqg::optimizer::{descend, estimate_rate, integrate_flow, multi_start, FlowMode, FlowTrace};
use cqlqg::par::ExecPolicy;
use cqlqg::{ControllerParams, Error, PlantModel, SolverConfig};

use config::{ConfigFile, Curvature};
use failure::{Class, Failure};

#[derive(Parser, Debug)]
#[command(name = "cqlqg", version, about = "Coherent quantum LQG controller synthesis")]
struct Cli {
    /// TOML file with solver defaults.
    #[arg(long, global = true, env = "CQLQG_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the physical-realizability conditions of a plant.
    Check {
        plant: PathBuf,
        /// Absolute residual tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run gradient descent from random stabilizing starts or a given controller.
    Synthesize(SynthesizeArgs),
    /// Evaluate a controller: cost, gradient norm, spectrum and realizability residuals.
    Cost { plant: PathBuf, controller: PathBuf },
    /// Integrate the plain or balanced gradient flow.
    Flow(FlowArgs),
    /// Estimate the local convergence rate from the Hessian at a controller.
    Rate(RateArgs),
    /// Render a descent trace as cost / min cost - 1 on a log scale (SVG).
    Plot {
        trace: PathBuf,
        /// Minimum cost used for the relative deviation.
        #[arg(long)]
        e_min: f64,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value = "relative cost deviation")]
        title: String,
    },
}

#[derive(Args, Debug)]
struct SolverFlags {
    #[arg(long)]
    h_max: Option<f64>,
    #[arg(long)]
    f: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    curvature: Option<Curvature>,
    /// Run independent work items on one thread.
    #[arg(long)]
    sequential: bool,
}

impl SolverFlags {
    fn apply(&self, file: &ConfigFile) -> SolverConfig {
        let mut cfg = file.solver();
        if let Some(v) = self.h_max {
            cfg.h_max = v;
        }
        if let Some(v) = self.f {
            cfg.f = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.curvature {
            cfg.curvature = v.into();
        }
        if self.sequential {
            cfg.exec = ExecPolicy::Sequential;
        }
        cfg
    }
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    plant: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    starts: Option<usize>,
    /// Standard deviation of the random start entries.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Descend from this controller instead of random starts.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Controller file to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Trace CSV to write.
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args, Debug)]
struct FlowArgs {
    plant: PathBuf,
    controller: PathBuf,
    #[arg(long, default_value = "plain")]
    mode: FlowMode,
    #[arg(long, default_value_t = 1e-4)]
    dtau: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RateArgs {
    plant: PathBuf,
    controller: PathBuf,
    #[arg(long)]
    f: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Warn when the gradient norm exceeds this value.
    #[arg(long)]
    grad_warn: Option<f64>,
    #[arg(long)]
    sequential: bool,
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn with_path(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

fn load_plant(path: &Path) -> Result<PlantModel, Failure> {
    parse_plant(&read(path)?).map_err(with_path(path))
}

fn load_controller(path: &Path, plant: &PlantModel) -> Result<ControllerParams, Failure> {
    let u = ControllerFile::parse(&read(path)?)
        .and_then(|f| f.params())
        .map_err(with_path(path))?;
    u.check_dims(&plant.dims).map_err(with_path(path))?;
    Ok(u)
}

fn cmd_check(plant: &Path, tol: Option<f64>, file: &ConfigFile) -> Result<(), Failure> {
    let plant = load_plant(plant)?;
    let tol = tol.or(file.pr_tol).unwrap_or(TRANSCRIBED_PR_TOL);
    let report = check_plant_pr(&plant, tol);
    println!("{:<8} {:>12}  status", "residual", "norm");
    for (name, r) in &report.residuals {
        println!("{name:<8} {r:>12.3e}  {}", if *r <= tol { "ok" } else { "FAIL" });
    }
    println!("tolerance {tol:.1e}: {}", if report.pass { "pass" } else { "fail" });
    if report.pass {
        Ok(())
    } else {
        Err(Failure::new(Class::CheckFailed, "plant is not physically realizable at this tolerance"))
    }
}

fn cmd_synthesize(args: &SynthesizeArgs, file: &ConfigFile) -> Result<(), Failure> {
    let plant = load_plant(&args.plant)?;
    let mut cfg = args.solver.apply(file);
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    let result = match &args.init {
        Some(init) => {
            let u0 = load_controller(init, &plant)?;
            let r = descend(&plant, &u0, &cfg)?;
            println!("start: {}", init.display());
            r
        }
        None => {
            let starts = args.starts.or(file.starts).unwrap_or(1);
            let scale = args.scale.or(file.scale).unwrap_or(1.0);
            let ms = multi_start(&plant, &cfg, starts, scale)?;
            for run in &ms.runs {
                println!(
                    "start seed {:>20}  tries {:>6}  cost {:.10}  iterations {:>6}  {}",
                    run.seed, run.tries, run.result.final_cost, run.result.iterations, run.result.terminated
                );
            }
            for seed in &ms.failed_seeds {
                println!("start seed {seed:>20}  no stabilizing draw in {} tries", cfg.max_stabilize_tries);
            }
            let best = ms.runs.into_iter().nth(ms.best_index).expect("best index is valid");
            println!("best start: seed {}", best.seed);
            best.result
        }
    };
    let report = ControllerFile::with_report(&plant, &result.final_u)?;
    write(&args.out, &report.to_text())?;
    write(&args.trace, &trace_to_csv(&result.trace))?;
    println!("final cost {:.10}", result.final_cost);
    println!("gradient norm {:.3e}", result.final_grad_norm);
    println!("iterations {}", result.iterations);
    println!("termination {}", result.terminated);
    Ok(())
}

fn cmd_cost(plant: &Path, controller: &Path, file: &ConfigFile) -> Result<(), Failure> {
    let plant = load_plant(plant)?;
    let u = load_controller(controller, &plant)?;
    let margin = file.solver().hurwitz_margin;
    let report = ControllerFile::with_report(&plant, &u)?;
    let cost = lqg_cost_with_margin(&plant, &u, margin);
    println!("cost {}", if cost.stabilizing { format!("{:.10}", cost.value) } else { "inf".into() });
    if cost.stabilizing {
        let (g, _) = gradient(&plant, &u, margin)?;
        println!("gradient norm {:.6e}", g.norm());
        let point = ClosedLoopPoint::new(&plant, &u, margin)?;
        let pos = covariance_positivity(&point.gramians, &point.system.theta, 1e-9);
        println!("covariance min eigenvalue {:.6e}", pos.min_eig);
    } else {
        println!("controller is not stabilizing");
    }
    println!("closed-loop eigenvalues");
    for [re, im] in report.eigenvalues.unwrap_or_default() {
        println!("  {re:+.6} {im:+.6}i");
    }
    println!("controller realizability residuals");
    for (name, r) in report.pr_residuals.unwrap_or_default() {
        println!("  {name:<8} {r:.3e}");
    }
    Ok(())
}

fn report_flow(t: &FlowTrace) {
    println!("steps {}", t.records.len().saturating_sub(1));
    if let (Some(first), Some(last)) = (t.records.first(), t.records.last()) {
        println!("cost {:.10} -> {:.10}", first.cost, last.cost);
    }
    println!("balance drift {:.6e}", t.balance_drift());
    println!("norm drift {:.6e}", t.norm_drift());
}

fn cmd_flow(args: &FlowArgs, file: &ConfigFile) -> Result<(), Failure> {
    let plant = load_plant(&args.plant)?;
    let u = load_controller(&args.controller, &plant)?;
    let margin = file.solver().hurwitz_margin;
    match integrate_flow(&plant, &u, args.mode, args.dtau, args.steps, margin) {
        Ok(t) => {
            write(&args.out, &flow_to_csv(&t.records))?;
            report_flow(&t);
            Ok(())
        }
        Err(Error::FlowEscaped { step, trace }) => {
            write(&args.out, &flow_to_csv(&trace.records))?;
            report_flow(&trace);
            Err(Failure::new(
                Class::FlowEscaped,
                format!("flow left the stabilizing set at step {step}; partial trace written"),
            ))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_rate(args: &RateArgs, file: &ConfigFile) -> Result<(), Failure> {
    let plant = load_plant(&args.plant)?;
    let u = load_controller(&args.controller, &plant)?;
    let cfg = file.solver();
    let f = args.f.unwrap_or(cfg.f);
    let sigma = args.sigma.unwrap_or(cfg.sigma);
    let exec = if args.sequential { ExecPolicy::Sequential } else { cfg.exec };
    let est = estimate_rate(&plant, &u, f, sigma, cfg.hurwitz_margin, exec)?;
    let warn = args.grad_warn.or(file.grad_warn).unwrap_or(1e-2);
    if est.grad_norm > warn {
        eprintln!("warning: gradient norm {:.3e} exceeds {warn:.1e}; the point is not near-stationary", est.grad_norm);
    }
    if let Some(w) = &est.warning {
        eprintln!("warning: {w}");
    }
    println!("f {f}  sigma {sigma}");
    println!("ell {:.6e}", est.ell);
    println!("L {:.6e}", est.big_l);
    println!("ell/L {:.6e}", est.ell / est.big_l);
    println!("r {:.10}", est.r);
    println!("gradient norm {:.6e}", est.grad_norm);
    println!("tangent dimension {}", est.tangent_dim);
    println!("normal dimension {}", est.hessian_spectrum_normal.len());
    println!("normal eigenvalues near zero {}", est.normal_near_null);
    println!("tangent curvature max {:.3e}", est.tangent_curvature_max);
    println!("hessian asymmetry {:.3e}", est.hessian_asymmetry);
    let s = &est.hessian_spectrum_normal;
    let show: Vec<String> = s.iter().take(3).chain(s.iter().rev().take(3).rev()).map(|x| format!("{x:.4e}")).collect();
    println!("normal spectrum (3 smallest, 3 largest) {}", show.join(" "));
    Ok(())
}

fn cmd_plot(trace: &Path, e_min: f64, out: &Path, title: &str) -> Result<(), Failure> {
    if !(e_min > 0.0 && e_min.is_finite()) {
        return Err(Failure::new(Class::Usage, "--e-min must be positive"));
    }
    let records = parse_trace_csv(&read(trace)?).map_err(with_path(trace))?;
    let points = plot::deviations(&records, e_min);
    let svg = plot::render_svg(&points, title, (800, 500))?;
    write(out, &svg)?;
    println!("{} of {} rows plotted to {}", points.len(), records.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Check { plant, tol } => cmd_check(plant, *tol, &file),
        Command::Synthesize(args) => cmd_synthesize(args, &file),
        Command::Cost { plant, controller } => cmd_cost(plant, controller, &file),
        Command::Flow(args) => cmd_flow(args, &file),
        Command::Rate(args) => cmd_rate(args, &file),
        Command::Plot { trace, e_min, out, title } => cmd_plot(trace, *e_min, out, title),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}
