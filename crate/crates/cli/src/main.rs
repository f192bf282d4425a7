//! `preview-mpc`: synthesize terminal ingredients, solve one OCP, run a
//! closed loop, or compare controllers over many seeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use preview_mpc::harness::{compare_controllers, simulate, HarnessError};
use preview_mpc::io::{
    boundary_csv, ingredients_to_json, parse_ingredients, parse_point, parse_scenario, read_file,
    read_system, solution_to_json, summary_to_json, CertificateJson, IoError, SystemConfig,
};
use preview_mpc::model::linearize_at_origin;
use preview_mpc::ocp::{solve_ocp, OcpError};
use preview_mpc::synthesis::{synthesize, SynthesisError};
use preview_mpc::{ControllerKind, OcpSpec, QpStatus, TerminalIngredients};

#[derive(Parser)]
#[command(name = "preview-mpc", version, about = "MPC with disturbance preview")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute K, P and Xf and certify them.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Override the terminal cost scale from the system file.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Solve a single finite-horizon problem.
    Solve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ingredients: Ingredients,
        /// JSON with `x0` and an optional `window`.
        #[arg(long)]
        point: PathBuf,
    },
    /// Run one closed loop.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ingredients: Ingredients,
        #[arg(long)]
        scenario: PathBuf,
        /// Override the controller named in the scenario.
        #[arg(long)]
        controller: Option<ControllerKind>,
    },
    /// Run nominal MPC, DRMPC and preview MPC on paired disturbances.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ingredients: Ingredients,
        #[arg(long)]
        scenario: PathBuf,
        /// A count `n` (seeds 0..n), a range `a..b`, or a list `1,5,9`.
        #[arg(long, default_value = "1")]
        seeds: String,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    system: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct Ingredients {
    /// Ingredients JSON from `synth`; synthesized on the fly if omitted.
    #[arg(long)]
    ingredients: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Synthesis(String),
    Infeasible(String),
    IterationLimit(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Synthesis(_) => 3,
            Failure::Infeasible(_) => 4,
            Failure::IterationLimit(_) => 5,
            Failure::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m)
            | Failure::Synthesis(m)
            | Failure::Infeasible(m)
            | Failure::IterationLimit(m)
            | Failure::Internal(m) => m,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SynthesisError> for Failure {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::InvalidLambda(_) | SynthesisError::InvalidDelta => {
                Failure::Config(e.to_string())
            }
            SynthesisError::SetIterationLimit(_) | SynthesisError::RiccatiDiverged(_) => {
                Failure::IterationLimit(e.to_string())
            }
            _ => Failure::Synthesis(e.to_string()),
        }
    }
}

impl From<OcpError> for Failure {
    fn from(e: OcpError) -> Self {
        match e {
            OcpError::NotCertified(_) => Failure::Synthesis(e.to_string()),
            OcpError::Qp(_) => Failure::Internal(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InitialInfeasible {
                status: "MaxIter", ..
            } => Failure::IterationLimit(e.to_string()),
            HarnessError::InitialInfeasible { .. } => Failure::Infeasible(e.to_string()),
            HarnessError::Ocp(e) => e.into(),
            HarnessError::Pool(_) | HarnessError::UnpairedDisturbance { .. } => {
                Failure::Internal(e.to_string())
            }
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))
}

fn load_system(path: &Path, lambda: Option<f64>) -> Result<SystemConfig, Failure> {
    let mut sys = read_system(path)?;
    if let Some(l) = lambda {
        if l.is_nan() || l < 1.0 {
            return Err(Failure::Config(format!("lambda must be >= 1, got {l}")));
        }
        sys.options.lambda = Some(l);
    }
    Ok(sys)
}

/// Synthesizes and certifies. Returns the ingredients even when certification
/// fails so `synth` can still write them out for inspection.
fn run_synthesis(sys: &SystemConfig) -> Result<(TerminalIngredients, CertificateJson), Failure> {
    let lin = linearize_at_origin(&sys.model).map_err(|e| Failure::Config(e.to_string()))?;
    let (ing, cert, iters) = synthesize(
        &lin,
        &sys.weights,
        &sys.x_set,
        &sys.u_set,
        &sys.w_set,
        &sys.options,
    )?;
    info!("terminal set converged after {iters} iterations");
    Ok((ing, CertificateJson::new(&cert, Some(iters))))
}

fn load_ingredients(
    sys: &SystemConfig,
    path: Option<&Path>,
) -> Result<TerminalIngredients, Failure> {
    match path {
        Some(p) => Ok(parse_ingredients(&read_file(p)?, sys.model.n(), sys.model.m())?.0),
        None => {
            info!("no ingredients given, synthesizing");
            let (ing, cert) = run_synthesis(sys)?;
            if !cert.certified {
                return Err(Failure::Synthesis(format!(
                    "terminal ingredients are not certified\n{}",
                    cert.report()
                )));
            }
            Ok(ing)
        }
    }
}

fn build_spec(
    sys: &SystemConfig,
    ing: TerminalIngredients,
    horizon: usize,
) -> Result<OcpSpec, Failure> {
    Ok(OcpSpec::certified(
        sys.model.clone(),
        horizon,
        sys.x_set.clone(),
        sys.u_set.clone(),
        sys.w_set.clone(),
        sys.weights.clone(),
        ing,
    )?)
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Config(format!("cannot parse --seeds {s:?}"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    if s.contains(',') {
        return s
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect();
    }
    let n: u64 = s.parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok((0..n).collect())
}

fn cmd_synth(common: &Common, lambda: Option<f64>) -> Result<(), Failure> {
    let sys = load_system(&common.system, lambda)?;
    prepare_out(&common.out)?;
    let (ing, cert) = run_synthesis(&sys)?;
    write(
        &common.out,
        "ingredients.json",
        &ingredients_to_json(&ing, Some(&cert))?,
    )?;
    let report = cert.report();
    write(&common.out, "certificate.txt", &report)?;
    if ing.xf.dim() == 2 {
        match boundary_csv(&ing.xf) {
            Ok(csv) => write(&common.out, "xf_boundary.csv", &csv)?,
            Err(e) => warn!("no Xf boundary written: {e}"),
        }
    }
    print!("{report}");
    if !cert.certified {
        return Err(Failure::Synthesis(
            "terminal ingredients failed certification".into(),
        ));
    }
    Ok(())
}

fn cmd_solve(common: &Common, ingredients: &Ingredients, point: &Path) -> Result<(), Failure> {
    let sys = load_system(&common.system, None)?;
    let text = read_file(point)?;
    let window_len = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("window").and_then(|w| w.as_array()).map(|w| w.len()));
    let horizon = window_len.or(sys.horizon).ok_or_else(|| {
        Failure::Config("horizon unknown: set N in the system file or give a window".into())
    })?;
    let (x0, window) = parse_point(&text, sys.model.n(), sys.model.q(), horizon)?;
    let ing = load_ingredients(&sys, ingredients.ingredients.as_deref())?;
    let spec = build_spec(&sys, ing, horizon)?;
    prepare_out(&common.out)?;
    let sol = solve_ocp(&spec, &x0, &window, None)?;
    write(&common.out, "solution.json", &solution_to_json(&sol)?)?;
    println!("status {} value {:.6e}", sol.status.as_str(), sol.value);
    match sol.status {
        QpStatus::Optimal => Ok(()),
        QpStatus::Infeasible => Err(Failure::Infeasible("OCP is infeasible at x0".into())),
        QpStatus::MaxIter => Err(Failure::IterationLimit("QP iteration limit reached".into())),
    }
}

fn cmd_simulate(
    common: &Common,
    ingredients: &Ingredients,
    scenario: &Path,
    controller: Option<ControllerKind>,
) -> Result<(), Failure> {
    let sys = load_system(&common.system, None)?;
    let mut sc = parse_scenario(&read_file(scenario)?)?;
    if let Some(c) = controller {
        sc.controller = c;
    }
    let ing = load_ingredients(&sys, ingredients.ingredients.as_deref())?;
    let spec = build_spec(&sys, ing, sc.horizon)?;
    prepare_out(&common.out)?;
    let trace = simulate(&sc, &spec)?;
    write(&common.out, "trace.csv", &trace.to_csv())?;
    write(&common.out, "summary.json", &summary_to_json(&trace)?)?;
    let s = &trace.summary;
    println!(
        "{}: running cost {:.6} over {} steps, {} fallbacks, {} candidate failures",
        trace.controller,
        s.running_cost,
        trace.steps.len(),
        s.fallback_count,
        s.candidate_failures
    );
    Ok(())
}

fn cmd_compare(
    common: &Common,
    ingredients: &Ingredients,
    scenario: &Path,
    seeds: &str,
    jobs: Option<usize>,
) -> Result<(), Failure> {
    let sys = load_system(&common.system, None)?;
    let sc = parse_scenario(&read_file(scenario)?)?;
    let seeds = parse_seeds(seeds)?;
    if jobs == Some(0) {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    let ing = load_ingredients(&sys, ingredients.ingredients.as_deref())?;
    let spec = build_spec(&sys, ing, sc.horizon)?;
    prepare_out(&common.out)?;
    let cmp = compare_controllers(&sc, &spec, &seeds, jobs)?;
    write(&common.out, "table.csv", &cmp.to_csv())?;
    let table = cmp.to_table();
    write(&common.out, "table.txt", &table)?;
    // traces/<controller>/seed_<s>.csv
    for kind in ControllerKind::COMPARED {
        prepare_out(&common.out.join("traces").join(kind.as_str()))?;
    }
    for (seed, traces) in &cmp.traces {
        for trace in traces {
            let dir = common.out.join("traces").join(trace.controller.as_str());
            write(&dir, &format!("seed_{seed}.csv"), &trace.to_csv())?;
        }
    }
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PREVIEW_MPC_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth { common, lambda } => cmd_synth(common, *lambda),
        Command::Solve {
            common,
            ingredients,
            point,
        } => cmd_solve(common, ingredients, point),
        Command::Simulate {
            common,
            ingredients,
            scenario,
            controller,
        } => cmd_simulate(common, ingredients, scenario, *controller),
        Command::Compare {
            common,
            ingredients,
            scenario,
            seeds,
            jobs,
        } => cmd_compare(common, ingredients, scenario, seeds, *jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
