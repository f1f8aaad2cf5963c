use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_peakon-lab"))
}

const ZERO_HORIZON: &str = "seed = 3\n[initial]\nkind = \"mollified\"\na = 1.0\nb = 2.0\n[step]\nt_end = 0.0\n";

#[test]
fn simulate_zero_horizon_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, ZERO_HORIZON).unwrap();
    let out = dir.path().join("out");
    let st = bin()
        .args(["--quiet", "simulate"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let ts = std::fs::read_to_string(out.join("timeseries.csv")).unwrap();
    let lines: Vec<&str> = ts.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("t,E_u,E_v,H,F,E0,xi,M,"));
    let summary = std::fs::read_to_string(out.join("summary.toml")).unwrap();
    assert!(summary.contains("all_passed = true"));
    assert!(out.join("snapshots/snap_00000.u.f64").exists());
    assert!(out.join("snapshots/snap_00000.txt").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, ZERO_HORIZON).unwrap();
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let st = bin()
            .args(["simulate", "--quiet", "--seed", seed])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read_to_string(out.join("config.toml")).unwrap()
    };
    assert!(run("41", "a").starts_with("seed = 41\n"));
    assert!(run("42", "b").starts_with("seed = 42\n"));
}

#[test]
fn unknown_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("{ZERO_HORIZON}typo = 1\n")).unwrap();
    let out = bin().arg("simulate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo"));
}

#[test]
fn check_weights_reports_the_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["check-weights", "4"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS monotone"), "{text}");
    assert!(text.contains("PASS partition_sum"), "{text}");
    // The ratio cannot meet the bound of 10, so the command exits non-zero.
    assert!(text.contains("FAIL third_derivative_ratio"), "{text}");
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("summary.toml").exists());
}
