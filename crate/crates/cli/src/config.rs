//! `key=value` configuration files. Keys use the long flag names; blank
//! lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

pub fn parse(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError {
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            });
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(ConfigError {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

/// Splices config entries in front of the user's flags for `subcommand`, so
/// flags given on the command line override them. Only keys in `known` are
/// used; the rest belong to other subcommands.
pub fn splice_args(args: &[String], subcommand_pos: usize, entries: &BTreeMap<String, String>, known: &[String]) -> Vec<String> {
    let mut out = args[..=subcommand_pos].to_vec();
    for (k, v) in entries {
        if known.iter().any(|n| n == k) {
            out.push(format!("--{k}={v}"));
        }
    }
    out.extend_from_slice(&args[subcommand_pos + 1..]);
    out
}
