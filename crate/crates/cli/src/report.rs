use std::fmt::Write as _;

use sha2::{Digest, Sha256};

/// One acceptance check inside a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    /// `key = value` result lines, in insertion order.
    pub results: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
    pub seconds: f64,
}

impl Stage {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            results: Vec::new(),
            checks: Vec::new(),
            files: Vec::new(),
            seconds: 0.0,
        }
    }

    pub fn result(&mut self, key: &str, value: impl ToString) {
        self.results.push((key.into(), value.to_string()));
    }

    pub fn check(&mut self, label: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            label: label.into(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub command: String,
    pub config_path: String,
    pub config_hash: String,
    pub seed: u64,
    pub overrides: String,
    pub stages: Vec<Stage>,
}

/// Hex SHA-256 of the raw config bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.stages.iter().all(Stage::passed)
    }

    /// Plain-text rendering. Wall-clock times sit on lines starting with
    /// `time`; everything else is a function of config and seed.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "gebsde report");
        let _ = writeln!(s, "command: {}", self.command);
        let _ = writeln!(s, "config: {}", self.config_path);
        let _ = writeln!(s, "config sha256: {}", self.config_hash);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "overrides: {}", self.overrides);
        for st in &self.stages {
            let _ = writeln!(s, "\n[{}]", st.name);
            let width = st.results.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            for (k, v) in &st.results {
                if v.contains('\n') {
                    let _ = writeln!(s, "{k}:");
                    for line in v.lines() {
                        let _ = writeln!(s, "  {line}");
                    }
                } else {
                    let _ = writeln!(s, "{k:<width$} = {v}");
                }
            }
            for c in &st.checks {
                let _ = writeln!(
                    s,
                    "{} {}: {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.label,
                    c.detail
                );
            }
            for f in &st.files {
                let _ = writeln!(s, "wrote {f}");
            }
            let _ = writeln!(s, "time {:.3}s", st.seconds);
        }
        let total: usize = self.stages.iter().map(|st| st.checks.len()).sum();
        let failed: usize = self
            .stages
            .iter()
            .flat_map(|st| &st.checks)
            .filter(|c| !c.pass)
            .count();
        let _ = writeln!(
            s,
            "\noverall: {} ({} checks, {failed} failed)",
            if failed == 0 { "PASS" } else { "FAIL" },
            total
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_of_empty_input() {
        assert_eq!(
            config_hash(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn render_marks_failures() {
        let mut st = Stage::new("ergodic");
        st.result("lambda", 0.7);
        st.check("lambda", false, "off by 1");
        let r = RunReport {
            command: "ergodic".into(),
            config_path: "c.toml".into(),
            config_hash: "00".into(),
            seed: 1,
            overrides: "none".into(),
            stages: vec![st],
        };
        let text = r.render();
        assert!(!r.passed());
        assert!(text.contains("FAIL lambda: off by 1"));
        assert!(text.contains("overall: FAIL (1 checks, 1 failed)"));
        assert!(text.contains("lambda = 0.7"));
    }
}
