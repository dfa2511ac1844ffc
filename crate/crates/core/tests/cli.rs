use std::path::Path;
use std::process::{Command, Output};

use hbf_jcas::beampattern::load_psi;
use hbf_jcas::channel::load_dataset;
use hbf_jcas::pga::{load_schedule, save_schedule, StepSchedule};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbf-jcas"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

const DESK: &str = "\
# small sweep
N = 8
M = 2
K = 2
I = 3
J = 2
snr_db = 0, 6
n_channels = 4
seed = 21
epochs = 1
batch_size = 2
record_timing = false
repetitions = 1
";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("desk.conf"), DESK).unwrap();
    dir
}

#[test]
fn full_pipeline() {
    let dir = setup();
    let d = dir.path();
    ok(&bin(&["gen", "--config", "desk.conf", "--out", "ch.bin"], d));
    assert_eq!(load_dataset(&d.join("ch.bin")).unwrap().len(), 4);

    ok(&bin(&["solve-psi", "--config", "desk.conf", "--out", "psi.bin"], d));
    assert_eq!(load_psi(&d.join("psi.bin")).unwrap().psi.nrows(), 8);

    ok(&bin(
        &["train", "--config", "desk.conf", "--dataset", "ch.bin", "--out", "s.toml", "--report", "r.csv"],
        d,
    ));
    let sched = load_schedule(&d.join("s.toml")).unwrap();
    assert_eq!((sched.outer(), sched.inner()), (3, 2));
    let report = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);

    ok(&bin(
        &["eval", "--config", "desk.conf", "--dataset", "ch.bin", "--psi", "psi.bin", "--schedule", "s.toml", "--out", "e.csv"],
        d,
    ));
    let csv = std::fs::read_to_string(d.join("e.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,snr_db,channel_idx,sum_rate,beampattern_mse,objective,seconds"
    );
    assert_eq!(lines.count(), 3 * 2 * 4);

    ok(&bin(
        &["eval", "--config", "desk.conf", "--dataset", "ch.bin", "--psi", "psi.bin", "--out", "e2.csv"],
        d,
    ));
    assert_eq!(std::fs::read_to_string(d.join("e2.csv")).unwrap().lines().count(), 1 + 2 * 2 * 4);

    ok(&bin(&["beampattern", "--config", "desk.conf", "--psi", "psi.bin", "--out", "bp.csv"], d));
    assert_eq!(std::fs::read_to_string(d.join("bp.csv")).unwrap().lines().count(), 1 + 181);
    ok(&bin(
        &["beampattern", "--config", "desk.conf", "--dataset", "ch.bin", "--schedule", "s.toml", "--out", "bp2.csv"],
        d,
    ));

    ok(&bin(
        &["scaling", "--config", "desk.conf", "--axis", "n", "--values", "8,16", "--out", "sc.csv"],
        d,
    ));
    let sc = std::fs::read_to_string(d.join("sc.csv")).unwrap();
    assert_eq!(sc.lines().next().unwrap(), "n_antennas,n_users,seconds_per_iteration");
    assert_eq!(sc.lines().count(), 3);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = setup();
    let d = dir.path();
    ok(&bin(&["gen", "--config", "desk.conf", "--out", "a.bin"], d));
    ok(&bin(&["gen", "--config", "desk.conf", "--seed", "21", "--out", "b.bin"], d));
    ok(&bin(&["gen", "--config", "desk.conf", "--seed", "22", "--out", "c.bin"], d));
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a.bin"), read("b.bin"));
    assert_ne!(read("a.bin"), read("c.bin"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.conf"), "N = 8\nM = 9\n").unwrap();
    assert_eq!(bin(&["gen", "--config", "bad.conf", "--out", "x.bin"], d).status.code(), Some(2));
    std::fs::write(d.join("typo.conf"), "antennas = 8\n").unwrap();
    assert_eq!(bin(&["gen", "--config", "typo.conf", "--out", "x.bin"], d).status.code(), Some(2));
    assert_eq!(bin(&["gen", "--config", "missing.conf", "--out", "x.bin"], d).status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"], d).status.code(), Some(2));
    assert_eq!(
        bin(&["eval", "--config", "desk.conf", "--dataset", "nope.bin", "--psi", "nope.bin", "--out", "e.csv"], d)
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn numerical_failures_exit_with_3() {
    let dir = setup();
    let d = dir.path();
    ok(&bin(&["gen", "--config", "desk.conf", "--out", "ch.bin"], d));
    ok(&bin(&["solve-psi", "--config", "desk.conf", "--out", "psi.bin"], d));
    save_schedule(&d.join("huge.toml"), &StepSchedule::constant(3, 2, 1e300, 1e300).unwrap()).unwrap();
    let out = bin(
        &["eval", "--config", "desk.conf", "--dataset", "ch.bin", "--psi", "psi.bin", "--schedule", "huge.toml", "--out", "e.csv"],
        d,
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
