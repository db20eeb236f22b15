//! Flag and config-file handling.
//!
//! Flags are `--key value` pairs (or bare `--key` for booleans); an optional
//! `--config <path>` file supplies `key = value` lines with `#` comments.
//! Flags override the file. Every numeric option is validated against its
//! documented range before any work starts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable inputs, out-of-range values. Exit code 1.
    Validation(String),
    /// Failures after validation passed. Exit code 2.
    Runtime(String),
    /// One or more gradient checks failed. Exit code 3.
    GradcheckFailed,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
            CliError::GradcheckFailed => write!(f, "gradient checks failed"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::GradcheckFailed => 3,
        }
    }
}

pub fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

pub fn runtime(err: impl fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

/// Boolean-valued flags (present means true).
const BOOL_FLAGS: [&str; 1] = ["dump-visuals"];

pub struct Options {
    values: BTreeMap<String, String>,
    /// Keys actually read by the command, for unknown-flag detection.
    known: std::cell::RefCell<Vec<String>>,
}

impl Options {
    /// Parse argv tokens (after the subcommand) plus the optional config file.
    pub fn parse(args: &[String]) -> Result<Options, CliError> {
        let mut flags: BTreeMap<String, String> = BTreeMap::new();
        let mut i = 0;
        while i < args.len() {
            let token = &args[i];
            let Some(stripped) = token.strip_prefix("--") else {
                return Err(validation(format!("unexpected argument {token:?}")));
            };
            if let Some((k, v)) = stripped.split_once('=') {
                flags.insert(k.to_string(), v.to_string());
                i += 1;
                continue;
            }
            if BOOL_FLAGS.contains(&stripped) {
                flags.insert(stripped.to_string(), "true".to_string());
                i += 1;
                continue;
            }
            let value = args
                .get(i + 1)
                .ok_or_else(|| validation(format!("flag --{stripped} is missing a value")))?;
            flags.insert(stripped.to_string(), value.clone());
            i += 2;
        }

        let mut values = BTreeMap::new();
        if let Some(path) = flags.get("config") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| validation(format!("cannot read config {path:?}: {e}")))?;
            for (lineno, line) in text.lines().enumerate() {
                let t = line.trim();
                if t.is_empty() || t.starts_with('#') {
                    continue;
                }
                let (k, v) = t.split_once('=').ok_or_else(|| {
                    validation(format!("config line {} has no '=': {t:?}", lineno + 1))
                })?;
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        values.extend(flags);
        values.remove("config");
        Ok(Options { values, known: Default::default() })
    }

    fn mark(&self, key: &str) {
        self.known.borrow_mut().push(key.to_string());
    }

    /// Error on any option that no accessor asked for.
    pub fn reject_unknown(&self) -> Result<(), CliError> {
        let known = self.known.borrow();
        for key in self.values.keys() {
            if !known.contains(key) {
                return Err(validation(format!("unknown option --{key}")));
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.mark(key);
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        Ok(self.raw(key).map(|s| s.to_string()))
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.raw(key)
            .map(PathBuf::from)
            .ok_or_else(|| validation(format!("missing required option --{key}")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn f64_in(&self, key: &str, default: f64, lo: f64, hi: f64) -> Result<f64, CliError> {
        let Some(raw) = self.raw(key) else { return Ok(default) };
        let v: f64 = raw
            .parse()
            .map_err(|_| validation(format!("--{key} expects a number, got {raw:?}")))?;
        if !(lo..=hi).contains(&v) || !v.is_finite() {
            return Err(validation(format!("--{key} must lie in [{lo}, {hi}], got {v}")));
        }
        Ok(v)
    }

    pub fn usize_in(
        &self,
        key: &str,
        default: usize,
        lo: usize,
        hi: usize,
    ) -> Result<usize, CliError> {
        let Some(raw) = self.raw(key) else { return Ok(default) };
        let v: usize = raw
            .parse()
            .map_err(|_| validation(format!("--{key} expects an integer, got {raw:?}")))?;
        if v < lo || v > hi {
            return Err(validation(format!("--{key} must lie in [{lo}, {hi}], got {v}")));
        }
        Ok(v)
    }

    pub fn u64_value(&self, key: &str, default: u64) -> Result<u64, CliError> {
        let Some(raw) = self.raw(key) else { return Ok(default) };
        raw.parse()
            .map_err(|_| validation(format!("--{key} expects an unsigned integer, got {raw:?}")))
    }

    pub fn bool_flag(&self, key: &str) -> Result<bool, CliError> {
        let Some(raw) = self.raw(key) else { return Ok(false) };
        match raw {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(validation(format!("--{key} expects a boolean, got {other:?}"))),
        }
    }
}
