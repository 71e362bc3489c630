//! End-to-end checks of the binary: subcommands, exit codes and the files
//! it writes.

use std::path::PathBuf;
use std::process::Command;

fn barc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_barc"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("barc_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn list_studies_names_all_kinds() {
    let out = barc().arg("list-studies").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "ber_vs_rank",
        "ber_vs_interp_rank",
        "ber_vs_symbols",
        "ber_vs_branches",
        "ber_vs_snr",
        "ber_vs_users",
        "order_selection",
        "branch_selection",
    ] {
        assert!(text.contains(name), "missing {name} in:\n{text}");
    }
}

#[test]
fn validate_config_accepts_good_rejects_bad() {
    let dir = temp_dir("validate");
    let good = dir.join("good.json");
    std::fs::write(
        &good,
        r#"{"study":"ber_vs_snr","n":8,"l_p":3,"k":2,"d":3,"i_len":2,"b":2,"scheme":"random"}"#,
    )
    .unwrap();
    let out = barc().arg("validate-config").arg(&good).output().unwrap();
    assert!(out.status.success(), "{:?}", out);

    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"study":"ber_vs_snr","alpha":7.0}"#).unwrap();
    let out = barc().arg("validate-config").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("alpha"), "{err}");

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_config_file_is_a_runtime_error() {
    let out = barc()
        .arg("validate-config")
        .arg("/nonexistent/nowhere.json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_writes_results_and_is_seed_deterministic() {
    let dir = temp_dir("simulate");
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"study":"ber_vs_snr","n":8,"l_p":3,"k":2,"num_symbols":100,
            "num_runs":2,"training_prefix":40,"d":3,"i_len":2,"b":2,
            "scheme":"random","algorithm":"barc_rls","ebn0_db":[8.0],"fd_t":0.0}"#,
    )
    .unwrap();

    let out_a = dir.join("a");
    let status = barc()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--seed", "42", "--out"])
        .arg(&out_a)
        .arg("--emit-plot")
        .output()
        .unwrap();
    assert!(status.status.success(), "{:?}", status);
    assert!(out_a.join("results.csv").exists());
    assert!(out_a.join("sidecar.json").exists());
    assert!(out_a.join("plot.gp").exists());

    let out_b = dir.join("b");
    let status = barc()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--seed", "42", "--out"])
        .arg(&out_b)
        .output()
        .unwrap();
    assert!(status.status.success());

    let csv_a = std::fs::read_to_string(out_a.join("results.csv")).unwrap();
    let csv_b = std::fs::read_to_string(out_b.join("results.csv")).unwrap();
    // Identical up to the wall-clock column.
    let strip = |text: &str| -> Vec<String> {
        text.lines()
            .map(|line| {
                let mut cells: Vec<&str> = line.split(',').collect();
                cells.pop(); // wall_ms is the final column
                cells.join(",")
            })
            .collect()
    };
    assert_eq!(strip(&csv_a), strip(&csv_b));

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn simulate_study_override_applies() {
    let dir = temp_dir("override");
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"study":"ber_vs_snr","n":8,"l_p":3,"k":2,"num_symbols":80,
            "num_runs":1,"training_prefix":30,"d":3,"i_len":2,"b":2,
            "scheme":"random","algorithm":"barc_rls","ebn0_db":[8.0],
            "rank_grid":[2,3],"fd_t":0.0}"#,
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = barc()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--study", "ber_vs_rank", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{:?}", out);
    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}"); // header + two rank rows
    std::fs::remove_dir_all(&dir).ok();
}
