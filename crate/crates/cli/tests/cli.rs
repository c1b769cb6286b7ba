use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use pcrm_cli::commands::simulate;

fn pcrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcrm")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMOKE: &str = r#"replicates = 10
master_seed = 7
prevalences = [0.5]
n_max = [45]
comparator = "both"

[design]
n_doses = 6
target = 0.25

[design.calibration]
nu = 2
delta = 0.08
"#;

fn skeleton_rows(text: &str) -> Vec<(usize, f64, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn skeleton_defaults() {
    let out = pcrm(&["skeleton"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = skeleton_rows(&stdout(&out));
    assert_eq!(rows.len(), 6);
    let expected = [0.112202, 0.25, 0.422051, 0.579283, 0.696919, 0.776846];
    for ((j, p, label), e) in rows.iter().zip(expected) {
        assert!((p - e).abs() < 1e-6, "dose {j}: {p}");
        // label solves expit(3 + label) = p
        assert!((3.0 + label - (p / (1.0 - p)).ln()).abs() < 1e-5);
    }
}

#[test]
fn skeleton_single_dose_is_the_target() {
    let out = pcrm(&["skeleton", "--doses", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = skeleton_rows(&stdout(&out));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].1, 0.25);
}

#[test]
fn skeleton_rejects_wide_interval() {
    let out = pcrm(&["skeleton", "--target", "0.25", "--delta", "0.5"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("0.5"), "{}", stderr(&out));
}

#[test]
fn missing_skeleton_names_the_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, SMOKE.replace("[design.calibration]\nnu = 2\ndelta = 0.08\n", "")).unwrap();
    let out = pcrm(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("bad.toml:7: design.skeleton"), "{err}");
}

#[test]
fn invalid_field_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, SMOKE.replace("target = 0.25", "target = 1.5")).unwrap();
    let out = pcrm(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("bad.toml:9: design.target"), "{}", stderr(&out));
}

#[test]
fn smoke_simulation_is_fast_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smoke.toml");
    std::fs::write(&cfg, SMOKE).unwrap();

    let start = Instant::now();
    let first = simulate(&cfg, &dir.path().join("a"), None, Some(1)).unwrap();
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    assert_eq!(first.reports.len(), 5 * 2);

    let out = pcrm(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("b").to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("Probability of criteria selection"));
    let read = |d: &str, f: &str| std::fs::read_to_string(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "results.csv"), read("b", "results.csv"));
    assert_eq!(read("a", "results.json"), read("b", "results.json"));

    let other = pcrm(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("c").to_str().unwrap(),
        "--seed",
        "8",
    ]);
    assert!(other.status.success());
    assert_ne!(read("a", "results.csv"), read("c", "results.csv"));
}

#[test]
fn report_renders_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smoke.toml");
    std::fs::write(&cfg, SMOKE.replace("replicates = 10", "replicates = 4")).unwrap();
    let result = simulate(&cfg, dir.path(), None, None).unwrap();
    let csv_path = result.csv.to_str().unwrap();

    let table = pcrm(&["report", "--in", csv_path]);
    assert!(table.status.success(), "{}", stderr(&table));
    assert_eq!(stdout(&table), std::fs::read_to_string(&result.summary).unwrap());

    let csv = pcrm(&["report", "--in", csv_path, "--format", "csv"]);
    assert_eq!(stdout(&csv), std::fs::read_to_string(&result.csv).unwrap());

    let json = pcrm(&["report", "--in", csv_path, "--format", "json"]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), result.reports.len());

    let missing = pcrm(&["report", "--in", dir.path().join("nope.csv").to_str().unwrap()]);
    assert!(!missing.status.success());
}

#[test]
fn default_config_round_trips_through_simulate() {
    let out = pcrm(&["default-config"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let config = pcrm_cli::parse_sim_config(&text, "default.toml").unwrap();
    assert_eq!(config.scenarios.len(), 5);
    assert_eq!(config.prevalences.len(), 2);
    assert_eq!(config.n_max, vec![30, 45, 60, 72]);
}

fn http(port: u16, request: &str) -> std::io::Result<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port))?;
    s.set_read_timeout(Some(Duration::from_secs(10)))?;
    s.write_all(request.as_bytes())?;
    let mut response = String::new();
    s.read_to_string(&mut response)?;
    Ok(response)
}

fn wait_for_port(port: u16) {
    let deadline = Instant::now() + Duration::from_secs(20);
    while TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn trial_files(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .map(|d| d.filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json")).count())
        .unwrap_or(0)
}

#[test]
fn serve_reads_port_and_data_dir_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("trials");
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_pcrm"))
        .arg("serve")
        .env("PCRM_PORT", port.to_string())
        .env("PCRM_DATA_DIR", &data)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    wait_for_port(port);
    let created = http(
        port,
        "POST /trials HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: 2\r\nConnection: close\r\n\r\n{}",
    );
    let missing = http(port, "GET /trials/absent HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n");
    child.kill().unwrap();
    child.wait().unwrap();

    let created = created.unwrap();
    assert!(created.starts_with("HTTP/1.1 201"), "{created}");
    assert!(missing.unwrap().starts_with("HTTP/1.1 404"));
    assert_eq!(trial_files(&data), 1);
}
