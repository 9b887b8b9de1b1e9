#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anchorcast::synthetic::{two_regimes, SeasonalTrend};

pub const BIN: &str = env!("CARGO_BIN_EXE_anchorcast");

/// A scratch experiment: data, config and output directory in one tempdir.
pub struct Experiment {
    pub dir: tempfile::TempDir,
}

impl Experiment {
    pub fn new(csv: &str, config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("data.csv"), csv).unwrap();
        std::fs::write(dir.path().join("config.toml"), config).unwrap();
        Self { dir }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn out(&self) -> PathBuf {
        self.path("out")
    }

    pub fn cli(&self, args: &[&str]) -> Output {
        let config = self.path("config.toml");
        let out = self.out();
        Command::new(BIN)
            .arg("--config")
            .arg(&config)
            .arg("--output")
            .arg(&out)
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    /// Runs and asserts success, returning stdout.
    pub fn ok(&self, args: &[&str]) -> String {
        let o = self.cli(args);
        assert!(
            o.status.success(),
            "{args:?} failed:\n{}\n{}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }

    pub fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.out().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    pub fn pipeline(&self) {
        self.ok(&["ingest"]);
        self.ok(&["build-library"]);
        self.ok(&["build-memory"]);
        for arch in ["anchorer-only", "agent-only", "full"] {
            self.ok(&["--arch", arch, "run"]);
        }
        self.ok(&["export", "--kind", "sft"]);
        self.ok(&["export", "--kind", "rollouts"]);
    }
}

/// Seasonal series with a leading covariate and a noise covariate.
pub fn seasonal_csv(length: usize, period: usize, seed: u64) -> String {
    let s = SeasonalTrend { length, period, seed, ..Default::default() }.with_covariates();
    let v = s.values();
    let mut out = String::from("timestamp,target,leading,noise\n");
    for t in 0..s.len() {
        writeln!(out, "{},{:?},{:?},{:?}", 1_700_000_000 + 3600 * t as i64, v[[t, 0]], v[[t, 1]], v[[t, 2]]).unwrap();
    }
    out
}

pub fn regimes_csv(block: usize, blocks: usize, seed: u64) -> String {
    let (x, labels) = two_regimes(block, blocks, seed);
    let mut out = String::from("timestamp,value,regime\n");
    for (t, (v, l)) in x.iter().zip(&labels).enumerate() {
        writeln!(out, "{t},{v:?},{l}").unwrap();
    }
    out
}

/// Small-scale config over `seasonal_csv(600, 12, _)`.
pub const SMALL_CONFIG: &str = r#"
[data]
path = "data.csv"
target = "target"
exogenous = ["leading", "noise"]

[window]
lookback = 24
horizon = 24
stride = 12

[library]
period = 12
k_clusters = 3
seed = 3

[memory]
seed = 3
"#;

pub fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = vec![];
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}
