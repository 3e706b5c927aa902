//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::process::Command;
use std::time::Instant;

use rlbridge::mc_oracle::suite::{run_check, SuiteConfig};

/// (criterion, check name, wall-clock limit in seconds)
const CRITERIA: [(u32, &str, f64); 11] = [
    (1, "covariance", 1.0),
    (2, "kernel", 1.0),
    (3, "joint_density", 5.0),
    (4, "sampler_ks", 30.0),
    (5, "stopping_time", 30.0),
    (6, "posterior", 180.0),
    (7, "normalization", 10.0),
    (8, "markov_reduction", 30.0),
    (9, "markov", 180.0),
    (10, "convergence", 120.0),
    (11, "tower", 60.0),
];

fn bin(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_rlbridge"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Every subcommand twice with the same seed; outputs must match byte for byte.
fn determinism() -> (bool, String) {
    let commands: [&[&str]; 4] = [
        &["simulate", "--model", "brownian", "--tau", "atoms:1=0.5,2=0.5", "--grid", "0:2:0.01", "--paths", "100", "--seed", "7"],
        &["posterior", "--model", "ou:1,1", "--tau", "exp:1", "--obs", "0.4=0.3", "--obs", "0.9=-0.2", "--survival", "1,2"],
        &["verify", "--check", "posterior", "--check", "stopping_time", "--seed", "11"],
        &["validate", "--model", "ou:0.5,2"],
    ];
    let mut failed = Vec::new();
    for args in commands {
        if bin(args) != bin(args) {
            failed.push(args[0]);
        }
    }
    (failed.is_empty(), if failed.is_empty() { "4 commands byte-identical".into() } else { format!("differ: {failed:?}") })
}

fn main() {
    let config = SuiteConfig::default();
    let mut all = true;
    for (id, name, limit) in CRITERIA {
        let start = Instant::now();
        let r = run_check(name, &config).expect("known check");
        let secs = start.elapsed().as_secs_f64();
        let ok = r.pass && secs < limit;
        all &= ok;
        println!(
            "criterion {id:>2} {name:<17} {} statistic={:.4e} tolerance={:e} time={secs:.2}s (limit {limit}s){}",
            if ok { "PASS" } else { "FAIL" },
            r.statistic,
            r.tolerance,
            r.detail.map(|d| format!(" [{d}]")).unwrap_or_default(),
        );
    }
    let start = Instant::now();
    let (ok, detail) = determinism();
    all &= ok;
    println!(
        "criterion 12 {:<17} {} {detail} time={:.2}s",
        "determinism",
        if ok { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    if !all {
        std::process::exit(1);
    }
}
