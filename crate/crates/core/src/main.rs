use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bicgrid::error::Error;
use bicgrid::report::{compute_metrics, export_csv, import_csv};
use bicgrid::scenario::ScenarioFile;
use bicgrid::sim::{run_scenario, Simulation};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_BOUNDS: u8 = 3;

#[derive(Parser)]
#[command(
    version,
    about = "Multimachine power system with distributed bounded-integral control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its trajectory as CSV.
    Run {
        scenario: PathBuf,
        /// Output directory for trajectory.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compute the steady-state metrics of a trajectory CSV over a window.
    Metrics {
        csv: PathBuf,
        /// Averaging window `t0:t1` in seconds.
        #[arg(long, value_parser = parse_window)]
        window: (f64, f64),
        /// Scenario that produced the trajectory (gains and limits).
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Check a scenario file and print it with all defaults resolved.
    Validate { scenario: PathBuf },
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected t0:t1, got '{s}'"))?;
    let t0 = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let t1 = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((t0, t1))
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::BoundViolation { .. } => EXIT_BOUNDS,
        Error::DegenerateMachine { .. }
        | Error::NetworkSingular { .. }
        | Error::PowerFlowDiverged { .. }
        | Error::InfeasibleDispatch { .. }
        | Error::IntegrationDiverged { .. } => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

fn load(path: &PathBuf) -> Result<ScenarioFile, Error> {
    ScenarioFile::parse(&std::fs::read_to_string(path)?)
}

fn run(scenario: &PathBuf, out: &PathBuf) -> Result<u8, Error> {
    let scenario = load(scenario)?.to_scenario()?;
    let output = run_scenario(&scenario)?;
    std::fs::create_dir_all(out)?;
    let csv = out.join("trajectory.csv");
    export_csv(&output.records, &csv)?;
    let last = output.records.last().expect("at least one record").time;
    let report = compute_metrics(&output.records, &output.controller, (last, last))?;
    println!(
        "wrote {} records to {}",
        output.records.len(),
        csv.display()
    );
    for s in &report.saturated_units {
        println!(
            "generator {} {:?} at {:?} limit from {} s to {} s",
            s.generator, s.input, s.limit, s.t_start, s.t_end
        );
    }
    println!("bound violations: {}", report.bound_violations);
    Ok(if report.bound_violations == 0 {
        0
    } else {
        EXIT_BOUNDS
    })
}

fn metrics(csv: &PathBuf, window: (f64, f64), scenario: &PathBuf) -> Result<u8, Error> {
    let scenario = load(scenario)?.to_scenario()?;
    let params = Simulation::new(&scenario)?.params().clone();
    let records = import_csv(csv)?;
    let report = compute_metrics(&records, &params, window)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(if report.bound_violations == 0 {
        0
    } else {
        EXIT_BOUNDS
    })
}

fn validate(scenario: &PathBuf) -> Result<u8, Error> {
    let file = load(scenario)?;
    let resolved = file.resolved()?;
    let sim = Simulation::new(&resolved.to_scenario()?)?;
    println!("{}", resolved.to_json());
    eprintln!("nominal T_m: {:?}", sim.params().t_m_nominal);
    eprintln!("nominal E_f: {:?}", sim.params().e_f_nominal);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, out } => run(scenario, out),
        Command::Metrics {
            csv,
            window,
            scenario,
        } => metrics(csv, *window, scenario),
        Command::Validate { scenario } => validate(scenario),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
