use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ivctl::calibration::{calibrate, CalibrationConfig};
use ivctl::harness::{
    bench_optimizer, build_plant, bundled_scenarios, run_scenario, write_artifacts, write_bench_csv, PlantSource,
    Scenario, ORACLE_MAX_M,
};
use ivctl::plant::preset_families;
use ivctl::rng::stream;
use ivctl::Error;

#[derive(Parser)]
#[command(name = "ivctl", version, about = "Influence-vector control of discretely actuated plants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identify influence vectors and approximation dispersion for a plant.
    Calibrate(CalibrateArgs),
    /// Run a static (iterative correction) scenario.
    Static(RunArgs),
    /// Run a dynamic (bang-bang sliding mode) scenario.
    Dynamic(RunArgs),
    /// Compare the switch-vector search against exhaustive search.
    BenchOptimizer(BenchArgs),
    /// List plant presets and bundled scenarios.
    ListPresets,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    /// Master seed; overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the scenario output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Plant preset name or plant JSON file.
    #[arg(long, default_value = "nonlinear20x4")]
    plant: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Readouts averaged per calibration step.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value = "out/calibration")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Actuator counts to benchmark.
    #[arg(long, value_delimiter = ',', default_value = "8,12")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the exhaustive oracle (required above m = 12).
    #[arg(long)]
    no_oracle: bool,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Runtime(_) => 3,
        Error::Io(_) | Error::Csv(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Static(a) => cmd_run(a, "static"),
        Command::Dynamic(a) => cmd_run(a, "dynamic"),
        Command::BenchOptimizer(a) => cmd_bench(a),
        Command::ListPresets => {
            println!("plant presets:");
            for (name, desc) in preset_families() {
                println!("  {name:<16} {desc}");
            }
            println!("bundled scenarios:");
            for (name, desc) in bundled_scenarios() {
                println!("  {name:<16} {desc}");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_run(args: RunArgs, kind: &str) -> Result<ExitCode, Error> {
    let (scenario, base_dir) = Scenario::load(&args.scenario)?;
    if scenario.controller.kind() != kind {
        return Err(Error::validation(format!(
            "scenario {} uses the {} controller; run it with `ivctl {}`",
            scenario.id,
            scenario.controller.kind(),
            scenario.controller.kind()
        )));
    }
    let out = args
        .out
        .or_else(|| scenario.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("out").join(&scenario.id));
    let run = run_scenario(&scenario, args.seed, base_dir.as_deref())?;
    write_artifacts(&run, &out, args.plot)?;

    let rows = &run.summary;
    println!("{} (seed {}): {} rows -> {}", scenario.id, run.seed, rows.len(), out.display());
    for r in rows {
        println!(
            "  {:<20} {:<10} n_f={:<5} final={:.3} {}",
            r.variant, r.target, r.n_f, r.final_error, r.termination
        );
    }
    if let Some(msg) = run.abort() {
        eprintln!("runtime abort: {msg}; partial artifacts written to {}", out.display());
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<ExitCode, Error> {
    let source = if Path::new(&args.plant).exists() {
        PlantSource::File { file: args.plant.clone() }
    } else {
        PlantSource::Preset { preset: args.plant.clone(), seed: None }
    };
    let plant = build_plant(&source, args.seed, None)?;
    let config = CalibrationConfig {
        trials: args.trials,
        repeats: args.repeats,
        ..Default::default()
    };
    config.validate()?;
    let report = calibrate(&plant, &config, &mut stream(args.seed, "calibration"))?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("plant.json"), plant.to_json())?;
    fs::write(args.out.join("calibration.json"), report.to_json())?;
    report.write_dispersion_csv(fs::File::create(args.out.join("dispersion.csv"))?)?;
    println!(
        "calibrated {} actuators x {} DOFs from {} dispersion trials -> {}",
        report.m(),
        report.n(),
        report.sample_count,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, Error> {
    if !args.no_oracle {
        if let Some(m) = args.sizes.iter().find(|&&m| m > ORACLE_MAX_M) {
            return Err(Error::validation(format!(
                "m = {m} is above the oracle limit of {ORACLE_MAX_M}; rerun with --no-oracle"
            )));
        }
    }
    let rows = bench_optimizer(&args.sizes, args.instances, args.seed, !args.no_oracle)?;
    match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_bench_csv(&rows, fs::File::create(path)?)?;
        }
        None => write_bench_csv(&rows, std::io::stdout().lock())?,
    }
    if !args.no_oracle {
        let exact = rows.iter().filter(|r| r.gap().is_some_and(|g| g <= 1e-9)).count();
        eprintln!("{exact}/{} instances matched the exhaustive optimum", rows.len());
    }
    Ok(ExitCode::SUCCESS)
}
