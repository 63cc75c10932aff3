//! `offload`: scenario generation, feasibility and load queries, solves and
//! ρ-sweeps from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use offload_core::{
    feasibility_margin, fixed_point_load, grid_scenario, load_demands, load_scenario, rho_grid,
    run_sweep, save_scenario, solve_q, CouplingSystem, Error, GridScenarioParams, IterationOptions,
    IterationSchedule, NetworkMode, UtilityKind,
};

#[derive(Parser)]
#[command(
    name = "offload",
    version,
    about = "Load-coupled data offloading between a cellular and a complementary network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario files.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Print the spectral radius of each network and the feasibility verdict.
    Feasibility(DemandArgs),
    /// Print the per-cell loads at the given demands.
    Load {
        #[command(flatten)]
        demands: DemandArgs,
        #[arg(long, value_enum, default_value_t = Schedule::Sync)]
        schedule: Schedule,
    },
    /// Maximize the sum utility at one ρ and write the report as JSON.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = Utility::Log)]
        utility: Utility,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve over a ρ grid and write one CSV row per ρ plus a `rho_star` row.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = Utility::Log)]
        utility: Utility,
        /// `start:step:end`, inclusive.
        #[arg(long, default_value = "0.005:0.005:0.995", value_parser = parse_grid)]
        rho_grid: RhoGrid,
        /// Loads must stay at or below `1 − epsilon`.
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Generate a square-grid scenario.
    Gen(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 3)]
    cols: usize,
    /// Macro cell side length.
    #[arg(long, default_value_t = 2.0)]
    side: f64,
    /// Complementary cells per macro cell (a perfect square).
    #[arg(long, default_value_t = 4)]
    per_macro: usize,
    #[arg(long, default_value_t = 5)]
    users_per_cell: usize,
    /// Path-loss exponent.
    #[arg(long, default_value_t = 4.0)]
    kappa: f64,
    #[arg(long, default_value_t = 100.0)]
    macro_power: f64,
    #[arg(long, default_value_t = 1.0)]
    complementary_power: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// Per-user weight of regular-cell demand.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Per-user weight of complementary-cell demand.
    #[arg(long, default_value_t = 0.25)]
    k_prime: f64,
    /// Demand cap of every user (nat).
    #[arg(long, default_value_t = 0.1)]
    cap: f64,
    #[arg(long, value_enum, default_value_t = Mode::Wifi)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DemandArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// JSON file `{"regular": [...], "complementary": [...]}`.
    #[arg(long)]
    demands: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Wifi,
    Smallcell,
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    Sync,
    Async,
}

#[derive(Clone, Copy, ValueEnum)]
enum Utility {
    Lin,
    Log,
    Dlog,
}

impl From<Utility> for UtilityKind {
    fn from(u: Utility) -> Self {
        match u {
            Utility::Lin => UtilityKind::Lin,
            Utility::Log => UtilityKind::Log,
            Utility::Dlog => UtilityKind::Dlog,
        }
    }
}

#[derive(Clone)]
struct RhoGrid(Vec<f64>);

fn parse_grid(s: &str) -> Result<RhoGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [start, step, end] = parts.as_slice() else {
        return Err(format!("expected start:step:end, got `{s}`"));
    };
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    rho_grid(num(start)?, num(step)?, num(end)?)
        .map(RhoGrid)
        .map_err(|e| e.to_string())
}

enum Failure {
    Core(Error),
    Infeasible,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidTopology(_)
        | Error::InvalidInput(_)
        | Error::UtilityDomain(_)
        | Error::InfeasibleCaps(_)
        | Error::GridTooLarge(_) => 2,
        Error::Diverged { .. }
        | Error::NoQualifyingRho
        | Error::NonConvergence { .. }
        | Error::Reducible => 3,
        Error::Io { .. } | Error::Parse { .. } | Error::SchemaVersion { .. } => 4,
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Scenario {
            command: ScenarioCommand::Gen(a),
        } => {
            let params = GridScenarioParams {
                rows: a.rows,
                cols: a.cols,
                side: a.side,
                complementary_per_macro: a.per_macro,
                users_per_complementary: a.users_per_cell,
                kappa: a.kappa,
                macro_power: a.macro_power,
                complementary_power: a.complementary_power,
                noise: a.noise,
                weight_regular: a.k,
                weight_complementary: a.k_prime,
                cap: a.cap,
                mode: match a.mode {
                    Mode::Wifi => NetworkMode::Wifi,
                    Mode::Smallcell => NetworkMode::SmallCell,
                },
                seed: a.seed,
            };
            let scenario = grid_scenario(&params)?;
            save_scenario(&scenario, &a.out)?;
            let t = &scenario.topology;
            eprintln!(
                "wrote {}: {} regular cells, {} complementary cells, {} users",
                a.out.display(),
                t.n_regular(),
                t.n_complementary(),
                t.n_users()
            );
        }
        Command::Feasibility(a) => {
            let scenario = load_scenario(&a.scenario)?;
            let demands = load_demands(&a.demands)?;
            let f = feasibility_margin(&scenario.topology, &demands)?;
            for (system, radius) in &f.radii {
                println!("{system:?} radius {radius}");
            }
            println!("{}", if f.feasible { "feasible" } else { "infeasible" });
            if !f.feasible {
                return Err(Failure::Infeasible);
            }
        }
        Command::Load {
            demands: a,
            schedule,
        } => {
            let scenario = load_scenario(&a.scenario)?;
            let demands = load_demands(&a.demands)?;
            let schedule = match schedule {
                Schedule::Sync => IterationSchedule::Synchronous,
                Schedule::Async => IterationSchedule::asynchronous(),
            };
            let t = &scenario.topology;
            let fp = fixed_point_load(t, &demands, &schedule, None, &IterationOptions::default())?;
            for system in CouplingSystem::for_topology(t) {
                for &cell in system.cells() {
                    println!("{cell}: {}", fp.load.load(cell));
                }
            }
            println!(
                "max load {} after {} iterations (converged: {})",
                fp.load.max(),
                fp.iterations,
                fp.converged
            );
        }
        Command::Solve {
            scenario,
            utility,
            rho,
            out,
        } => {
            let scenario = load_scenario(&scenario)?;
            let report = solve_q(&scenario.problem(utility.into()).with_rho(rho))?;
            let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
            text.push('\n');
            write_output(out.as_deref(), &text)?;
            eprintln!(
                "U_sum {} x_max {} max radius {}",
                report.sum_utility,
                report.x_max,
                report.max_radius()
            );
        }
        Command::Sweep {
            scenario,
            utility,
            rho_grid,
            epsilon,
            out,
        } => {
            let scenario = load_scenario(&scenario)?;
            let sweep = run_sweep(&scenario.problem(utility.into()), &rho_grid.0, epsilon)?;
            sweep.write_csv_file(&out)?;
            match sweep.rho_star {
                Some(r) => eprintln!("rho_star {r}"),
                None => eprintln!("no grid point keeps the maximum load at or below 1 - epsilon"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Infeasible) => ExitCode::from(3),
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
