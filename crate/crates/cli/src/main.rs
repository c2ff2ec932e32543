//! `uavcast` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use uavcast::alloc::{self, benchmark_equal_power, benchmark_static, AllocationSolution};
use uavcast::evaluate::{self, evaluate, sweep_t, write_sweep_csv, PlanRef};
use uavcast::flightplan::{build_flightplan, sample_trajectory, write_trajectory_csv, FlightPlan};
use uavcast::pipeline::{run_pipeline, PipelineConfig};
use uavcast::relaxed::{solve_p2, HoverPlan};
use uavcast::scenario::{db_to_linear, dbm_to_watts, generate_random, Scenario, ScenarioDefaults};
use uavcast::PlanError;

const EXIT_INVALID: u8 = 2;
const EXIT_TOO_SHORT: u8 = 3;

#[derive(Parser)]
#[command(name = "uavcast", version, about = "Trajectory and power planning for a UAV multicast transmitter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scenario.
    Gen(GenArgs),
    /// Run the full pipeline and write every artifact.
    Solve(SolveArgs),
    /// Run the pipeline over a list of periods and write a CSV table.
    Sweep(SweepArgs),
    /// Certify a plan with the independent evaluator.
    Eval(EvalArgs),
    /// Best single hover point at constant power.
    BenchStatic(BenchArgs),
    /// Hover-and-fly with constant power and optimized hover durations.
    BenchEqual(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of users.
    #[arg(long)]
    k: usize,
    /// Deployment area in meters, `WxH`.
    #[arg(long, default_value = "1000x1000", value_parser = parse_area)]
    area: (f64, f64),
    /// Mission period, seconds.
    #[arg(long)]
    period: Option<f64>,
    /// Altitude, meters.
    #[arg(long)]
    altitude: Option<f64>,
    /// Maximum speed, m/s.
    #[arg(long)]
    speed: Option<f64>,
    /// Average power budget, dBm.
    #[arg(long)]
    power_dbm: Option<f64>,
    /// Channel gain at 1 m, dB.
    #[arg(long)]
    beta0_db: Option<f64>,
    /// Noise power, dBm.
    #[arg(long)]
    noise_dbm: Option<f64>,
    /// Output directory; the scenario goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Points per axis of the coarse search grid.
    #[arg(long, default_value_t = 64)]
    grid: usize,
    /// Relative duality-gap tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Ellipsoid iteration cap.
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
}

impl SolverArgs {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        if !(self.tol > 0.0) {
            return Err(PlanError::InvalidArgument(format!("--tol must be positive, got {}", self.tol)).into());
        }
        let mut cfg = PipelineConfig::default();
        cfg.relaxed.grid.coarse = self.grid;
        cfg.relaxed.gap_tolerance = self.tol;
        cfg.relaxed.ellipsoid.tolerance = self.tol;
        cfg.relaxed.ellipsoid.max_iters = self.max_iters;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SolveArgs {
    scenario: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Integration step of the certification, seconds.
    #[arg(long, default_value_t = evaluate::CERTIFY_DT)]
    dt: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    scenario: PathBuf,
    /// Periods in seconds, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    t_list: Vec<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory; the table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    scenario: PathBuf,
    /// Hover plan to certify.
    #[arg(long, conflicts_with_all = ["flight", "allocation"])]
    plan: Option<PathBuf>,
    /// Flight plan of a hover-and-fly trajectory.
    #[arg(long, requires = "allocation")]
    flight: Option<PathBuf>,
    /// Allocation of a hover-and-fly trajectory.
    #[arg(long, requires = "flight")]
    allocation: Option<PathBuf>,
    #[arg(long, default_value_t = evaluate::CERTIFY_DT)]
    dt: f64,
}

#[derive(Args)]
struct BenchArgs {
    scenario: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Hover plan giving the hover locations; solved when omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
}

fn parse_area(s: &str) -> Result<(f64, f64), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let w: f64 = w.trim().parse().map_err(|_| format!("bad width `{w}`"))?;
    let h: f64 = h.trim().parse().map_err(|_| format!("bad height `{h}`"))?;
    Ok((w, h))
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).map_err(|e| anyhow::Error::new(PlanError::Io(e)).context(format!("reading {}", path.display())))
}

fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    let text = read_text(path)?;
    Ok(Scenario::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(PlanError::Io).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(PlanError::Io).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> anyhow::Result<()> {
    let mut d = ScenarioDefaults::default();
    if let Some(v) = args.period {
        d.period = v;
    }
    if let Some(v) = args.altitude {
        d.altitude = v;
    }
    if let Some(v) = args.speed {
        d.max_speed = v;
    }
    if let Some(v) = args.power_dbm {
        d.power_ave = dbm_to_watts(v);
    }
    if let Some(v) = args.beta0_db {
        d.beta0 = db_to_linear(v);
    }
    if let Some(v) = args.noise_dbm {
        d.noise_power = dbm_to_watts(v);
    }
    let scenario = generate_random(args.seed, args.k, args.area, &d)?;
    let text = scenario.to_toml()?;
    match &args.out {
        Some(dir) => write(dir, "scenario.toml", &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_solve(args: &SolveArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let cfg = args.solver.config()?;
    let result = run_pipeline(&scenario, &cfg)?;
    let hover_report = evaluate(PlanRef::Hover(&result.hover), &scenario, args.dt)?;
    let joint_report = evaluate(
        PlanRef::HoverAndFly { flight: &result.flight, allocation: &result.joint },
        &scenario,
        args.dt,
    )?;
    let out = &args.out;
    write(out, "hover_plan.toml", &result.hover.to_toml()?)?;
    write(out, "flight_plan.toml", &result.flight.to_toml()?)?;
    write(out, "allocation.toml", &result.joint.to_toml()?)?;
    write(out, "allocation_equal.toml", &result.equal.to_toml()?)?;
    write(out, "schedule.toml", &result.schedule.to_toml()?)?;
    write(out, "evaluation.toml", &joint_report.to_toml()?)?;
    write(out, "evaluation_hover.toml", &hover_report.to_toml()?)?;
    let samples = sample_trajectory(&result.schedule, &result.flight, 0.1)?;
    let mut csv = Vec::new();
    write_trajectory_csv(&samples, &mut csv)?;
    write(out, "trajectory.csv", &String::from_utf8(csv)?)?;
    let summary = result.summary.to_toml()?;
    write(out, "summary.toml", &summary)?;
    print!("{summary}");
    if !joint_report.feasible() || !hover_report.feasible() {
        eprintln!("warning: the evaluator flagged a constraint violation, see evaluation.toml");
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let cfg = args.solver.config()?;
    let table = sweep_t(&scenario, &args.t_list, &cfg)?;
    for skip in &table.skipped {
        eprintln!(
            "warning: skipping T = {} s, shorter than the flying time {:.3} s",
            skip.period, skip.fly_time
        );
    }
    let mut csv = Vec::new();
    write_sweep_csv(&table.rows, &mut csv)?;
    let text = String::from_utf8(csv)?;
    match &args.out {
        Some(dir) => write(dir, "sweep.csv", &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let report = match (&args.plan, &args.flight, &args.allocation) {
        (Some(plan), None, None) => {
            let plan = HoverPlan::from_toml(&read_text(plan)?)?;
            evaluate(PlanRef::Hover(&plan), &scenario, args.dt)?
        }
        (None, Some(flight), Some(allocation)) => {
            let flight = FlightPlan::from_toml(&read_text(flight)?)?;
            let allocation = AllocationSolution::from_toml(&read_text(allocation)?)?;
            evaluate(PlanRef::HoverAndFly { flight: &flight, allocation: &allocation }, &scenario, args.dt)?
        }
        _ => {
            return Err(PlanError::InvalidArgument("give --plan, or --flight with --allocation".into()).into());
        }
    };
    print!("{}", report.to_toml()?);
    Ok(())
}

fn hover_locations(args: &BenchArgs, scenario: &Scenario, cfg: &PipelineConfig) -> anyhow::Result<HoverPlan> {
    match &args.plan {
        Some(path) => Ok(HoverPlan::from_toml(&read_text(path)?)?),
        None => Ok(solve_p2(scenario, &cfg.relaxed)?),
    }
}

fn cmd_bench_static(args: &BenchArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let cfg = args.solver.config()?;
    let hover = benchmark_static(&scenario, &cfg.relaxed.grid)?;
    print!("{}", hover.to_toml()?);
    Ok(())
}

fn cmd_bench_equal(args: &BenchArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let cfg = args.solver.config()?;
    let hover = hover_locations(args, &scenario, &cfg)?;
    let flight = build_flightplan(&hover.locations, &scenario)?;
    let slots = alloc::default_slot_count(flight.fly_time, cfg.max_slot);
    let disc = alloc::discretize(&flight, &scenario, slots)?;
    let sol = benchmark_equal_power(&flight, &disc, &scenario)?;
    print!("{}", sol.to_toml()?);
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PlanError>() {
        Some(PlanError::PeriodTooShort { .. }) => EXIT_TOO_SHORT,
        Some(
            PlanError::InvalidArgument(_)
            | PlanError::InvalidScenario(_)
            | PlanError::Io(_)
            | PlanError::Parse(_)
            | PlanError::Mismatch(_)
            | PlanError::UserIndex { .. }
            | PlanError::TimeOutOfRange { .. },
        ) => EXIT_INVALID,
        _ => 1,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("PLANNER_THREADS") else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| PlanError::InvalidArgument(format!("PLANNER_THREADS must be a positive integer, got `{value}`")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
        bail!("thread pool already initialized");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = configure_threads().and_then(|()| match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Eval(a) => cmd_eval(a),
        Command::BenchStatic(a) => cmd_bench_static(a),
        Command::BenchEqual(a) => cmd_bench_equal(a),
    });
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
