//! Line-oriented `key = value` configuration with `#` comments.
//!
//! Nested keys are dotted (`reg.lambda`). Parsing is purely textual; each
//! command validates its own key set and ranges, and the resolved config can
//! be echoed canonically into output-file headers.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
}

impl ExperimentConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped. Later assignments override earlier ones.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut config = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line_no}: expected 'key = value', got '{line}'"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !valid_key(key) {
                return Err(Error::Config(format!("line {line_no}: invalid key '{key}'")));
            }
            if value.is_empty() {
                return Err(Error::Config(format!("line {line_no}: key '{key}' has no value")));
            }
            config.values.insert(key.to_string(), value.to_string());
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Applies one `--set key=value` override.
    pub fn apply_set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects key=value, got '{assignment}'"))
        })?;
        let key = key.trim();
        let value = value.trim();
        if !valid_key(key) || value.is_empty() {
            return Err(Error::Config(format!("--set has invalid assignment '{assignment}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Inserts a default only when the key is absent.
    pub fn ensure(&mut self, key: &str, value: impl ToString) {
        self.values
            .entry(key.to_string())
            .or_insert_with(|| value.to_string());
    }

    /// Rejects any key outside the allowed set, naming the offender.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.values.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "unknown key '{key}'; allowed keys: {}",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        self.values
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("key '{key}': '{v}' is not a number"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("key '{key}': '{v}' is not an unsigned integer"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_u64(key, default as u64)? as usize)
    }

    /// Numeric get with a range predicate; `range_desc` names the legal range
    /// in the error.
    pub fn get_f64_checked(
        &self,
        key: &str,
        default: f64,
        ok: impl Fn(f64) -> bool,
        range_desc: &str,
    ) -> Result<f64> {
        let v = self.get_f64(key, default)?;
        if !ok(v) {
            return Err(Error::Config(format!("key '{key}': {v} is outside {range_desc}")));
        }
        Ok(v)
    }

    pub fn get_usize_checked(
        &self,
        key: &str,
        default: usize,
        ok: impl Fn(usize) -> bool,
        range_desc: &str,
    ) -> Result<usize> {
        let v = self.get_usize(key, default)?;
        if !ok(v) {
            return Err(Error::Config(format!("key '{key}': {v} is outside {range_desc}")));
        }
        Ok(v)
    }

    /// Canonical echo: sorted `key = value` lines, one per key.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.values {
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let text = "\n# header comment\nreg.lambda = 1.5  # inline\nseed = 7\nseed = 9\n";
        let c = ExperimentConfig::parse_str(text).unwrap();
        assert_eq!(c.get_f64("reg.lambda", 0.0).unwrap(), 1.5);
        assert_eq!(c.get_u64("seed", 0).unwrap(), 9);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(ExperimentConfig::parse_str("just words\n").is_err());
        assert!(ExperimentConfig::parse_str("key =\n").is_err());
        assert!(ExperimentConfig::parse_str("bad key! = 1\n").is_err());
        let err = ExperimentConfig::parse_str("ok = 1\nbroken\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_keys_named() {
        let c = ExperimentConfig::parse_str("lambda = 1\nextra = 2\n").unwrap();
        let err = c.check_keys(&["lambda"]).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn range_checks() {
        let c = ExperimentConfig::parse_str("lambda = -1\n").unwrap();
        let err = c
            .get_f64_checked("lambda", 1.0, |v| v >= 0.0, "[0, inf)")
            .unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
        // Default path applies when the key is absent.
        let empty = ExperimentConfig::new();
        assert_eq!(
            empty
                .get_f64_checked("lambda", 1.0, |v| v >= 0.0, "[0, inf)")
                .unwrap(),
            1.0
        );
    }

    #[test]
    fn set_override_and_echo_determinism() {
        let mut a = ExperimentConfig::parse_str("b = 2\na = 1\n").unwrap();
        a.apply_set("c=3").unwrap();
        assert!(a.apply_set("nope").is_err());
        let b = ExperimentConfig::parse_str("a = 1\nb = 2\nc = 3\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.echo(), "a = 1\nb = 2\nc = 3\n");
        assert_eq!(a.echo(), b.echo());
    }
}
