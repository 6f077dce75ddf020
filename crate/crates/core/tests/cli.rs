use std::path::Path;
use std::process::{Command, Output};

use irs_gbd::channel::ChannelSet;

fn irs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irs-gbd")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn solve_reports_the_optimum() {
    let o = irs(&["solve", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("status     optimal"), "{text}");
    assert!(text.contains("selection"));
}

#[test]
fn gbd_and_oracle_agree_from_the_command_line() {
    let power = |scheme: &str| {
        let o = irs(&["solve", "--seed", "8", "--scheme", scheme]);
        assert_eq!(code(&o), 0);
        let text = String::from_utf8(o.stdout).unwrap();
        let line = text.lines().find(|l| l.starts_with("power")).expect("power line").to_string();
        let w = line.split('(').nth(1).unwrap().trim_end_matches(" W)");
        w.parse::<f64>().unwrap()
    };
    let (g, o) = (power("gbd"), power("oracle"));
    assert!((g - o).abs() <= 1e-5 * o, "{g} {o}");
}

#[test]
fn exit_codes() {
    assert_eq!(code(&irs(&["solve", "--n", "1", "--l", "1"])), 2);
    assert_eq!(code(&irs(&["solve", "--scheme", "oracle", "--n", "13"])), 4);
    assert_eq!(code(&irs(&["solve", "--m", "0"])), 4);
    assert_eq!(code(&irs(&["solve", "--scheme", "nonsense"])), 4);
    assert_eq!(code(&irs(&["sweep", "--config", "/nonexistent/plan.toml"])), 4);
}

#[test]
fn trace_and_sweep_files() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let o = irs(&["solve", "--seed", "1", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("iteration,feasible,primal_objective,eta,ub,lb,selection"));
    assert!(text.lines().count() > 1);

    let rows = dir.path().join("rows.csv");
    let summary = dir.path().join("summary.csv");
    let o = irs(&[
        "sweep",
        "--trials",
        "2",
        "--n",
        "3",
        "--schemes",
        "gbd,random_phase",
        "--output",
        rows.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&rows).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("sweep_value,trial,scheme,status,power_dBm,iterations,wall_ms"));
    assert!(Path::new(&summary).exists());
}

#[test]
fn oracle_check_matches() {
    let o = irs(&["oracle-check", "--trials", "3", "--n", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with(",1")).count(), 3, "{text}");
}

#[test]
fn dumped_channels_round_trip() {
    let o = irs(&["dump-channels", "--seed", "5"]);
    assert_eq!(code(&o), 0);
    let ch = ChannelSet::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!((ch.n(), ch.m(), ch.k()), (4, 3, 2));
}

#[test]
fn shipped_profiles_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../profiles");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        irs_gbd::cli::ExperimentPlan::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
