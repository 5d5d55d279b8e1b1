use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data")
        .join(name)
}

fn musclespeed(args: &[&std::ffi::OsStr]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_musclespeed"))
        .args(args)
        .output()
        .unwrap()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exited normally")
}

/// Copies the reference model next to a scenario built from `body`.
fn scenario_dir(body: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(
        data("reference_arm.toml"),
        dir.path().join("reference_arm.toml"),
    )
    .unwrap();
    let path = dir.path().join("scenario.toml");
    fs::write(&path, body).unwrap();
    (dir, path)
}

#[test]
fn run_writes_every_trace_and_the_summary() {
    let out = tempfile::tempdir().unwrap();
    let output = musclespeed(&[
        "run".as_ref(),
        data("reference_scenario.toml").as_os_str(),
        "--out".as_ref(),
        out.path().as_os_str(),
    ]);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    for name in [
        "trace_basic.csv",
        "trace_method1.csv",
        "trace_method2.csv",
        "summary.csv",
    ] {
        assert!(out.path().join(name).is_file(), "{name} missing");
    }
    let summary = fs::read_to_string(out.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "strategy,max_joint_speed,t_cost,masked_muscle_indices,total_elongation"
    );
    assert!(lines[1].starts_with("Basic,"));
    assert!(
        lines[3].starts_with("Method2,") && lines[3].contains(",5,"),
        "{}",
        lines[3]
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("Method1"));
}

#[test]
fn summary_is_recomputable_from_traces() {
    let out = tempfile::tempdir().unwrap();
    let output = musclespeed(&[
        "run".as_ref(),
        data("reference_scenario.toml").as_os_str(),
        "--out".as_ref(),
        out.path().as_os_str(),
    ]);
    assert_eq!(code(&output), 0);
    let summary = fs::read_to_string(out.path().join("summary.csv")).unwrap();
    for row in summary.lines().skip(1) {
        let fields: Vec<&str> = row.split(',').collect();
        let trace = fs::read_to_string(
            out.path()
                .join(format!("trace_{}.csv", fields[0].to_lowercase())),
        )
        .unwrap();
        let mut lines = trace.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let rates: Vec<usize> = (0..header.len())
            .filter(|&c| header[c].starts_with("theta_dot_"))
            .collect();
        let rows: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        let max_speed = rows
            .iter()
            .flat_map(|r| rates.iter().map(move |&c| r[c].abs()))
            .fold(0.0, f64::max);
        let t_cost = rows.last().unwrap()[0];
        let summary_speed: f64 = fields[1].parse().unwrap();
        let summary_t: f64 = fields[2].parse().unwrap();
        assert!(
            (max_speed - summary_speed).abs() <= 1e-7 * summary_speed,
            "{}",
            fields[0]
        );
        assert!((t_cost - summary_t).abs() < 1e-9, "{}", fields[0]);
    }
}

#[test]
fn strategy_flag_limits_the_outputs() {
    let out = tempfile::tempdir().unwrap();
    let output = musclespeed(&[
        "run".as_ref(),
        data("reference_scenario.toml").as_os_str(),
        "--strategy".as_ref(),
        "basic".as_ref(),
        "--out".as_ref(),
        out.path().as_os_str(),
    ]);
    assert_eq!(code(&output), 0);
    let mut names: Vec<String> = fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["summary.csv", "trace_basic.csv"]);
}

#[test]
fn analyze_prints_one_row_per_muscle() {
    let output = musclespeed(&[
        "analyze".as_ref(),
        data("reference_scenario.toml").as_os_str(),
    ]);
    assert_eq!(code(&output), 0);
    let stdout = String::from_utf8(output.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(
        lines[0],
        "muscle,name,moment_arm,speed_index,role,inhibited"
    );
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("5,biarticular_flexor,") && lines[5].ends_with(",antagonist,1"));
    assert!(lines[2].ends_with(",agonist,0"));
}

#[test]
fn validate_reports_the_reference_arm() {
    let output = musclespeed(&["validate".as_ref(), data("reference_arm.toml").as_os_str()]);
    assert_eq!(code(&output), 0);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("2 joints and 5 muscles"));
}

#[test]
fn missing_file_is_an_io_error() {
    let output = musclespeed(&["run".as_ref(), "/nonexistent/scenario.toml".as_ref()]);
    assert_eq!(code(&output), 2);
}

#[test]
fn identical_endpoints_are_invalid_input() {
    let (_dir, path) = scenario_dir(
        "schema_version = 1\nmodel = \"reference_arm.toml\"\ntheta_start = [0.0, 1.0]\ntheta_end = [0.0, 1.0]\n",
    );
    let output = musclespeed(&["run".as_ref(), path.as_os_str()]);
    assert_eq!(
        code(&output),
        3,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn unholdable_start_posture_has_its_own_code() {
    // Tensions capped at 11 N cannot carry the raised arm.
    let (dir, path) = scenario_dir(
        "schema_version = 1\nmodel = \"reference_arm.toml\"\ntheta_start = [0.0, 1.45]\ntheta_end = [-1.0, 0.0]\nf_max = 11.0\nstrategies = [\"Method2\"]\n",
    );
    let output = musclespeed(&[
        "run".as_ref(),
        path.as_os_str(),
        "--out".as_ref(),
        dir.path().join("out").as_os_str(),
    ]);
    assert_eq!(
        code(&output),
        1,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn zero_mass_link_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(data("reference_arm.toml")).unwrap();
    let broken = dir.path().join("arm.toml");
    fs::write(&broken, text.replacen("mass = 1.5", "mass = 0.0", 1)).unwrap();
    let output = musclespeed(&["validate".as_ref(), broken.as_os_str()]);
    assert_eq!(
        code(&output),
        3,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(!output.stderr.is_empty());
}

#[test]
fn bad_arguments_are_invalid_input() {
    let output = musclespeed(&[
        "run".as_ref(),
        data("reference_scenario.toml").as_os_str(),
        "--strategy".as_ref(),
        "fastest".as_ref(),
    ]);
    assert_eq!(code(&output), 3);
}
