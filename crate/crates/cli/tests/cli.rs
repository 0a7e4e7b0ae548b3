use std::path::Path;
use std::process::{Command, Output};

fn omnisurf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnisurf"))
        .args(args)
        .current_dir(dir)
        .env_remove("OMNISURF_WORKERS")
        .output()
        .unwrap()
}

const SMALL: &str = r#"
carrier_hz = 3.6e9

[ios]
rows = 4
cols = 4

[[bs]]
position = [0.8, 0.3, 0.0]

[[users]]
position = [2.0, -1.0, 0.0]
direct_blocked = true

[[users]]
position = [-2.0, -0.5, 0.0]

[experiment]
restarts = 2
"#;

#[test]
fn hybrid_writes_a_reproducible_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), SMALL).unwrap();
    let a = omnisurf(&["hybrid", "-c", "s.toml", "--seeds", "0..3", "-o", "out/a.csv", "-q"], dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(a.stderr.is_empty());
    let b = omnisurf(&["hybrid", "-c", "s.toml", "--seeds", "0..3", "-o", "b.csv"], dir.path());
    assert!(b.status.success());
    assert!(String::from_utf8_lossy(&b.stderr).contains("wrote b.csv"));
    let a = std::fs::read_to_string(dir.path().join("out/a.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert!(a.contains("# seeds: 0,1,2\n"));
    assert!(a.contains("\nseed,sum_rate_bpshz,rate_u0_bpshz,rate_u1_bpshz,sweeps\n"));
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), SMALL).unwrap();
    let one = Command::new(env!("CARGO_BIN_EXE_omnisurf"))
        .args(["hybrid", "-c", "s.toml", "--seeds", "0..4", "-o", "one.csv", "-q"])
        .current_dir(dir.path())
        .env("OMNISURF_WORKERS", "1")
        .status()
        .unwrap();
    assert!(one.success());
    assert!(omnisurf(&["hybrid", "-c", "s.toml", "--seeds", "0..4", "-o", "many.csv", "-q"], dir.path()).status.success());
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read("one.csv"), read("many.csv"));
    let bad = Command::new(env!("CARGO_BIN_EXE_omnisurf"))
        .args(["hybrid", "-c", "s.toml", "-q"])
        .current_dir(dir.path())
        .env("OMNISURF_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn canonical_pattern_writes_metrics_companion() {
    let dir = tempfile::tempdir().unwrap();
    let out = omnisurf(&["pattern", "-c", "canonical:pattern", "--seed", "0", "-o", "p.csv", "-q"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("p_metrics.csv")).unwrap();
    assert!(metrics.contains("\ntarget_psi_deg,main_lobe_deg,hpbw_deg,sll_db\n"));
    let pattern = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(pattern.lines().filter(|l| !l.starts_with('#')).count(), 1 + 360);
}

#[test]
fn default_output_name_is_the_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), SMALL).unwrap();
    assert!(omnisurf(&["estimate", "-c", "s.toml", "-q"], dir.path()).status.success());
    assert!(dir.path().join("estimate.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Configuration errors.
    assert_eq!(omnisurf(&["hybrid", "-c", "missing.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(omnisurf(&["hybrid", "-c", "canonical:nowhere"], dir.path()).status.code(), Some(1));
    assert_eq!(omnisurf(&["hybrid", "-c", "canonical:two_side", "--seeds", "5..2"], dir.path()).status.code(), Some(1));
    assert_eq!(omnisurf(&["frobnicate"], dir.path()).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.toml"), SMALL.replace("rows = 4", "rows = \"four\"")).unwrap();
    let bad = omnisurf(&["hybrid", "-c", "bad.toml"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("rows"));
    // Numerical failure: tiles that do not divide the panel.
    std::fs::write(dir.path().join("tiles.toml"), SMALL.replace("restarts = 2", "tile_rows = 3")).unwrap();
    assert_eq!(omnisurf(&["estimate", "-c", "tiles.toml", "-q"], dir.path()).status.code(), Some(2));
    // Infeasible: more users than antennas.
    std::fs::write(dir.path().join("one.toml"), SMALL.replace("[[bs]]", "[[bs]]\nn_antennas = 1")).unwrap();
    assert_eq!(omnisurf(&["hybrid", "-c", "one.toml", "-q"], dir.path()).status.code(), Some(3));
    // Help is not an error.
    assert_eq!(omnisurf(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn timing_is_reported_on_request() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), SMALL).unwrap();
    let out = omnisurf(&["hybrid", "-c", "s.toml", "-q", "--timing"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("hybrid: "));
}
