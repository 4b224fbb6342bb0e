//! Runtime configuration with the experiment-parameter defaults
//! (BS 5000, SS 200000, split size 150000, R 1.5, T 168, T-hat 2).
//!
//! Precedence: command-line flags > config file > defaults. The config file
//! is flat `key = value` text; `#` starts a comment.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownTypePolicy {
    /// A never-seen entity or event kind cannot be classified: flag it.
    MarkAnomalous,
    /// Hard error instead.
    Reject,
}

/// What the detection flush counter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsSemantics {
    /// Flush when `SS` newly-arrived edges have accumulated.
    Edges,
    /// Flush when the active-node set reaches `SS`.
    ActiveNodes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Minibatch size for submodel training (BS).
    pub batch_size: usize,
    /// Detection flush threshold (SS); see `ss_semantics`.
    pub subgraph_size: usize,
    /// Active-node count per training subgraph.
    pub split_size: usize,
    /// Confidence ratio threshold (R), used in training and execution.
    pub ratio: f64,
    /// Waiting-time threshold (T) in stream time units; i64::MAX = never.
    pub wait_threshold: i64,
    /// Tolerance threshold (T-hat): alert when confirmed count exceeds it.
    pub tolerance: usize,
    /// Hop count K (1 or 2).
    pub k: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub unknown_type_policy: UnknownTypePolicy,
    pub ss_semantics: SsSemantics,
    /// Feed whole-history counts to the model instead of subgraph-local.
    pub whole_history_features: bool,
    /// Consecutive non-shrinking submodels tolerated before dropping the
    /// stuck nodes as unlearnable.
    pub stall_limit: usize,
    /// Seeded repetitions for mean-reported evaluations.
    pub repeats: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            batch_size: 5000,
            subgraph_size: 200_000,
            split_size: 150_000,
            ratio: 1.5,
            wait_threshold: 168,
            tolerance: 2,
            k: 2,
            hidden: 32,
            epochs: 60,
            learning_rate: 0.01,
            seed: 0,
            unknown_type_policy: UnknownTypePolicy::MarkAnomalous,
            ss_semantics: SsSemantics::Edges,
            whole_history_features: false,
            stall_limit: 3,
            repeats: 5,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if self.ratio < 1.0 {
            return Err(Error::InvalidConfig("R must be >= 1".into()));
        }
        if !(1..=2).contains(&self.k) {
            return Err(Error::InvalidConfig("K must be 1 or 2".into()));
        }
        if self.batch_size == 0 || self.subgraph_size == 0 || self.split_size == 0 {
            return Err(Error::InvalidConfig("BS, SS, split_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epoch must be positive".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.load_file(path)?;
        Ok(cfg)
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.load_str(&text)
    }

    /// Applies flat `key = value` text; `#` starts a comment.
    pub fn load_str(&mut self, text: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::FormatError {
                line: i + 1,
                msg: "expected key = value".into(),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidConfig(format!("duplicate key {key}")));
            }
            self.set(key, value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key = value` pair using the experiment-parameter names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value {v:?} for {key}")))
        }
        match key {
            "BS" | "batch_size" => self.batch_size = parse(key, value)?,
            "SS" | "subgraph_size" => self.subgraph_size = parse(key, value)?,
            "split_size" => self.split_size = parse(key, value)?,
            "R" | "ratio" => self.ratio = parse(key, value)?,
            "T" | "wait_threshold" => {
                self.wait_threshold = if value == "inf" {
                    i64::MAX
                } else {
                    parse(key, value)?
                }
            }
            "T_hat" | "tolerance" => self.tolerance = parse(key, value)?,
            "K" | "hops" => self.k = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "epoch" | "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "stall_limit" => self.stall_limit = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "unknown_type_policy" => {
                self.unknown_type_policy = match value {
                    "anomalous" => UnknownTypePolicy::MarkAnomalous,
                    "reject" => UnknownTypePolicy::Reject,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "unknown_type_policy must be anomalous|reject, got {value}"
                        )))
                    }
                }
            }
            "ss_semantics" => {
                self.ss_semantics = match value {
                    "edges" => SsSemantics::Edges,
                    "active_nodes" => SsSemantics::ActiveNodes,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "ss_semantics must be edges|active_nodes, got {value}"
                        )))
                    }
                }
            }
            "whole_history_features" => {
                self.whole_history_features = parse(key, value)?;
            }
            _ => return Err(Error::InvalidConfig(format!("unknown key {key}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_match_experiment_table() {
        let c = Config::default();
        assert_eq!(c.batch_size, 5000);
        assert_eq!(c.subgraph_size, 200_000);
        assert_eq!(c.split_size, 150_000);
        assert_eq!(c.ratio, 1.5);
        assert_eq!(c.wait_threshold, 168);
        assert_eq!(c.tolerance, 2);
        assert_eq!(c.k, 2);
        assert_eq!(c.hidden, 32);
        assert_eq!(c.epochs, 60);
        c.validate().unwrap();
    }

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nR = 2.0\nSS = 999").unwrap();
        let mut cfg = Config::from_file(f.path()).unwrap();
        assert_eq!(cfg.ratio, 2.0);
        assert_eq!(cfg.subgraph_size, 999);
        assert_eq!(cfg.batch_size, 5000); // still default
        cfg.set("R", "3.5").unwrap(); // flag layer
        assert_eq!(cfg.ratio, 3.5);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = Config::default();
        assert!(c.set("R", "abc").is_err());
        assert!(c.set("nope", "1").is_err());
        c.set("R", "0.5").unwrap();
        assert!(c.validate().is_err());
        c.set("R", "1.5").unwrap();
        c.set("K", "3").unwrap();
        assert!(c.validate().is_err());
    }
}
