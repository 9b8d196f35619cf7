use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_rissense");

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rissense-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn run(args: &[&str], out: &Path, workers: &str) {
    let status = Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RISSENSE_WORKERS", workers)
        .status()
        .expect("binary runs");
    assert!(status.success(), "{args:?} failed");
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .next()
        .unwrap_or_default()
        .to_string()
}

const CAMPAIGN: &[&str] = &["campaign", "--seed", "7", "--runs", "2", "--set", "epochs=3"];
const CAMPAIGN_FILES: &[&str] = &[
    "gospa_timeseries.csv",
    "detections.jsonl",
    "posteriors.jsonl",
    "dp_ccdf.csv",
    "summary.json",
];

#[test]
fn campaign_is_bit_identical_across_invocations_and_workers() {
    let a = scratch("det-a");
    let b = scratch("det-b");
    run(CAMPAIGN, &a, "1");
    run(CAMPAIGN, &b, "2");
    for f in CAMPAIGN_FILES {
        let x = fs::read(a.join(f)).unwrap();
        let y = fs::read(b.join(f)).unwrap();
        assert!(!x.is_empty(), "{f} is empty");
        assert!(x == y, "{f} differs between invocations");
    }
    assert_eq!(header(&a.join("gospa_timeseries.csv")), "epoch,filter,mean,std");
    let rows = fs::read_to_string(a.join("gospa_timeseries.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4 * 4);
    let _ = fs::remove_dir_all(a);
    let _ = fs::remove_dir_all(b);
}

#[test]
fn subcommands_write_documented_headers() {
    let out = scratch("headers");
    run(&["dp-map", "--set", "dp_map.resolution=5"], &out, "1");
    for f in ["dp_map_random.csv", "dp_map_direct.csv"] {
        assert_eq!(header(&out.join(f)), "x,y,dp_D,dp_O,dp_N");
    }
    run(&["link-budget"], &out, "1");
    for s in ["a", "b"] {
        for m in ["direct", "random"] {
            let f = out.join(format!("link_budget_{s}_{m}.csv"));
            assert_eq!(header(&f), "rho,PL_R,PL_D,PL_N");
            assert_eq!(fs::read_to_string(&f).unwrap().lines().count(), 20);
        }
    }
    run(&["ccdf", "--runs", "2"], &out, "1");
    assert_eq!(
        header(&out.join("dp_ccdf.csv")),
        "threshold,D_random,O_random,N,D_directional,O_directional"
    );
    let _ = fs::remove_dir_all(out);
}

#[test]
fn invalid_config_reports_line_and_fails() {
    let dir = scratch("bad");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "seed = 3\n\n[signal]\ntransmissions = 41\n").unwrap();
    let out = Command::new(BIN)
        .args(["link-budget", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:4:"), "stderr: {err}");
    let _ = fs::remove_dir_all(dir);
}
