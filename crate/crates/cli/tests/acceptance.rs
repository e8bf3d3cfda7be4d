//! Acceptance battery at full size. Each test prints one PASS/FAIL line to
//! stdout (uncaptured) and then asserts. The tests hold a shared lock so
//! their wall-clock budgets are measured one at a time.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard};

use polymer_core::verify::{run_check, CheckResult, Level, VerifyConfig};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn criterion(id: u32) {
    let _guard = serial();
    let cfg = VerifyConfig { level: Level::Full, ..VerifyConfig::default() };
    let r: CheckResult = run_check(id, &cfg);
    report(&format!("acceptance {}", r.line()));
    assert!(r.passed, "criterion {id} failed: {}", r.line());
}

#[test]
fn criterion_01_rate_function_duality() {
    criterion(1);
}

#[test]
fn criterion_02_bessel_oracle() {
    criterion(2);
}

#[test]
fn criterion_03_convolution_identity() {
    criterion(3);
}

#[test]
fn criterion_04_tilting_identity() {
    criterion(4);
}

#[test]
fn criterion_05_annealed_identity() {
    criterion(5);
}

#[test]
fn criterion_06_hard_obstacle_closed_form() {
    criterion(6);
}

#[test]
fn criterion_07_comparison_order() {
    criterion(7);
}

#[test]
fn criterion_08_sandwich() {
    criterion(8);
}

#[test]
fn criterion_09_route_agreement() {
    criterion(9);
}

#[test]
fn criterion_10_disorder_trend() {
    criterion(10);
}

fn ensemble_csvs(dir: &Path, threads: &str, kind: &str, extra: &[&str]) -> Vec<(String, Vec<u8>)> {
    let status = Command::new(env!("CARGO_BIN_EXE_polymer"))
        .args(["ensemble", "--kind", kind, "--seed", "20240601", "--threads", threads, "--out"])
        .arg(dir)
        .args(extra)
        .env_remove("POLYMER_THREADS")
        .status()
        .expect("spawn polymer");
    assert!(status.success(), "polymer ensemble exited with {status}");
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_11_determinism_across_thread_counts() {
    let _guard = serial();
    let start = std::time::Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 2] = [
        ("free-energy", &["--preset", "hard_obstacles(0.5) + gaussian(0.3)", "--dim", "2", "--horizons", "1,2", "--n-env", "48"]),
        ("cumulant", &["--preset", "bernoulli_reward(0.3, 0.5)", "--lambda", "0.25", "--lambda", "-0.5", "--n-env", "48"]),
    ];
    let mut identical = true;
    let mut bytes = 0;
    for (kind, extra) in cases {
        let a = ensemble_csvs(&tmp.path().join(format!("{kind}-t1")), "1", kind, extra);
        let b = ensemble_csvs(&tmp.path().join(format!("{kind}-t4")), "4", kind, extra);
        assert!(!a.is_empty());
        bytes += a.iter().map(|f| f.1.len()).sum::<usize>();
        identical &= a == b;
    }
    report(&format!(
        "acceptance [{}] 11 {:<28} csv bytes compared={bytes} time={:.2}s",
        if identical { "PASS" } else { "FAIL" },
        "determinism-across-threads",
        start.elapsed().as_secs_f64()
    ));
    assert!(identical, "CSV outputs differ between --threads 1 and --threads 4");
}
