//! `musclespeed`: run swing scenarios, inspect motion moment arms and check
//! model files.
//!
//! Exit codes: 0 success, 1 start posture cannot be held, 2 file I/O error,
//! 3 invalid input (bad arguments, parse or validation failure), 4 numerical
//! failure during simulation.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use musclespeed::analysis;
use musclespeed::model::MuscleModel;
use musclespeed::scenario::{self, Scenario};
use musclespeed::sim::format_real;
use musclespeed::strategy::{self, Strategy};
use musclespeed::Error;

#[derive(Parser)]
#[command(
    name = "musclespeed",
    version,
    about = "Antagonist management for tendon-driven arm swings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scenario with each strategy and write traces plus a summary.
    Run {
        scenario: PathBuf,
        /// Strategy to run (Basic, Method1, Method2); repeat for several.
        #[arg(long = "strategy")]
        strategies: Vec<Strategy>,
        /// Output directory (default: the scenario's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        c_threshold: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Print moment arm, speed index and role of each muscle at the motion midpoint.
    Analyze {
        scenario: PathBuf,
        #[arg(long)]
        c_threshold: Option<f64>,
    },
    /// Check a model file and report its contents.
    Validate { model: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run {
            scenario,
            strategies,
            out,
            c_threshold,
            dt,
            epsilon,
        } => cmd_run(&scenario, strategies, out, c_threshold, dt, epsilon),
        Command::Analyze {
            scenario,
            c_threshold,
        } => cmd_analyze(&scenario, c_threshold),
        Command::Validate { model } => cmd_validate(&model),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::PostureUnholdable => 1,
        Error::Io { .. } => 2,
        Error::Step { .. }
        | Error::QpFailed { .. }
        | Error::MalformedQp(_)
        | Error::NearLimit { .. } => 4,
        _ => 3,
    }
}

fn load(
    path: &Path,
    c_threshold: Option<f64>,
    dt: Option<f64>,
    epsilon: Option<f64>,
) -> Result<Scenario, Error> {
    let mut scenario = scenario::load_scenario(path)?;
    if let Some(c) = c_threshold {
        scenario.c_threshold = c;
    }
    if let Some(dt) = dt {
        scenario.dt = dt;
    }
    if let Some(eps) = epsilon {
        scenario.epsilon = eps;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn cmd_run(
    path: &Path,
    strategies: Vec<Strategy>,
    out: Option<PathBuf>,
    c_threshold: Option<f64>,
    dt: Option<f64>,
    epsilon: Option<f64>,
) -> Result<(), Error> {
    let mut scenario = load(path, c_threshold, dt, epsilon)?;
    if !strategies.is_empty() {
        let mut strategies = strategies;
        strategies.sort();
        strategies.dedup();
        scenario.strategies = strategies;
    }
    let out_dir = out.unwrap_or_else(|| scenario.output_dir.clone());
    let config = scenario.strategy_config()?;
    let results = strategy::compare(
        &scenario.model,
        &scenario.theta_start,
        &scenario.theta_end,
        &scenario.strategies,
        &config,
    )?;

    fs::create_dir_all(&out_dir).map_err(|source| Error::Io {
        path: out_dir.clone(),
        source,
    })?;
    for result in &results {
        let name = format!("trace_{}.csv", result.strategy.name().to_ascii_lowercase());
        write_atomic(&out_dir.join(name), &result.trace.to_csv())?;
    }
    write_atomic(
        &out_dir.join("summary.csv"),
        &strategy::summary_csv(&results),
    )?;

    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}", strategy::summary_table(&results));
    for result in &results {
        if result.trace.termination != musclespeed::sim::Termination::Converged {
            let _ = writeln!(
                stdout,
                "warning: {} stopped at the step limit before reaching theta_end",
                result.strategy
            );
        }
    }
    let _ = writeln!(stdout, "wrote {}", out_dir.display());
    Ok(())
}

fn cmd_analyze(path: &Path, c_threshold: Option<f64>) -> Result<(), Error> {
    let scenario = load(path, c_threshold, None, None)?;
    let a = analysis::analyze_motion(
        &scenario.model,
        &scenario.theta_start,
        &scenario.theta_end,
        &scenario.l_dot_limit,
    )?;
    let mask = strategy::method1_mask(&a.speed_index, scenario.c_threshold);
    let mut out = String::from("muscle,name,moment_arm,speed_index,role,inhibited\n");
    for (i, muscle) in scenario.model.muscles().iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i + 1,
            muscle.name,
            format_real(a.moment_arms[i]),
            format_real(a.speed_index[i]),
            a.roles[i],
            u8::from(!mask.is_active(i))
        ));
    }
    print!("{out}");
    Ok(())
}

fn cmd_validate(path: &Path) -> Result<(), Error> {
    let model = scenario::load_model(path)?;
    println!(
        "{}: valid model `{}` with {} joints and {} muscles",
        path.display(),
        model.name,
        model.joint_count(),
        model.muscle_count()
    );
    for (j, joint) in model.joints().iter().enumerate() {
        println!(
            "  joint {}: {} limits [{}, {}]",
            j + 1,
            joint.name,
            joint.limits.0,
            joint.limits.1
        );
    }
    for (i, muscle) in model.muscles().iter().enumerate() {
        let span = muscle.spanned_joints();
        println!(
            "  muscle {}: {} spans joints {}..={}",
            i + 1,
            muscle.name,
            span.start + 1,
            span.end
        );
    }
    Ok(())
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Error> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("output");
    let tmp = path.with_file_name(format!(".{file_name}.{}.tmp", std::process::id()));
    let mut file = fs::File::create(&tmp).map_err(io_err)?;
    file.write_all(contents.as_bytes()).map_err(io_err)?;
    file.sync_all().map_err(io_err)?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_err)
}
