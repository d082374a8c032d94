//! Sectioned `key = value` run configuration with a fixed schema.
//!
//! Files look like
//!
//! ```text
//! [run]
//! seed = 7
//! [calibrate]
//! q = 50
//! steps = 1,2,3,4
//! ```
//!
//! Every key must appear in [`SCHEMA`]; values from the file are overridden
//! by command-line flags. The resolved configuration lists every key of the
//! sections a command reads, so a run can be replayed from it.

use crate::CliError;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

pub const SCHEMA_VERSION: u32 = 1;

/// `(section, key, default)`. An empty default means "unset".
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("run", "schema_version", "1"),
    ("run", "seed", "0"),
    ("run", "workers", "0"),
    ("run", "log_level", "info"),
    ("simulate", "mode", "mqarch"),
    ("simulate", "spec", ""),
    ("simulate", "bins", "100000"),
    ("simulate", "horizon", "1000000"),
    ("simulate", "q", "50"),
    ("simulate", "q_aux", "30"),
    ("simulate", "noise_correlation", "0"),
    ("simulate", "bin_size", ""),
    ("preprocess", "input", ""),
    ("preprocess", "bins_per_day", "1000"),
    ("preprocess", "session_start", "10:00"),
    ("preprocess", "session_end", "15:00"),
    ("preprocess", "bin_minutes", "1"),
    ("preprocess", "window_days", "100"),
    ("preprocess", "intraday", "true"),
    ("preprocess", "martingalise", "true"),
    ("preprocess", "mirror", "false"),
    ("moments", "panel", ""),
    ("moments", "bins_per_day", "1000"),
    ("moments", "max_lag", "50"),
    ("moments", "symmetrize", "false"),
    ("moments", "winsorize", ""),
    ("moments", "mirror", "false"),
    ("moments", "smoothing", "none"),
    ("calibrate", "panel", ""),
    ("calibrate", "bins_per_day", "1000"),
    ("calibrate", "q", "50"),
    ("calibrate", "q_aux", "30"),
    ("calibrate", "steps", "1,2,3,4"),
    ("calibrate", "solver", "gauss-seidel"),
    ("calibrate", "sweeps", "100"),
    ("calibrate", "tol", "1e-10"),
    ("calibrate", "ridge", "0"),
    ("calibrate", "rank_one", "true"),
    ("calibrate", "include_k_cross", "false"),
    ("calibrate", "leverage_corrections", "false"),
    ("calibrate", "mirror", "false"),
    ("calibrate", "symmetrize", "false"),
    ("calibrate", "winsorize", ""),
    ("calibrate", "smoothing", "none"),
    ("calibrate", "refine", "false"),
    ("calibrate", "dt", "1"),
    ("mle", "mode", "binned-proxy"),
    ("mle", "events", ""),
    ("mle", "n_assets", "1"),
    ("mle", "horizon", ""),
    ("mle", "panel", ""),
    ("mle", "bins_per_day", "1000"),
    ("mle", "dt", "1"),
    ("mle", "init", ""),
    ("mle", "max_iter", "500"),
    ("mle", "grad_tol", "1e-6"),
    ("mle", "standard_errors", "true"),
    ("factor", "manifest", ""),
    ("factor", "factor", ""),
    ("factor", "bins_per_day", "1000"),
    ("factor", "q", "10"),
    ("factor", "q_aux", "5"),
    ("factor", "leverage", "false"),
    ("report", "model", ""),
];

fn in_schema(section: &str, key: &str) -> bool {
    SCHEMA.iter().any(|(s, k, _)| *s == section && *k == key)
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<(String, String), String>,
}

impl RunConfig {
    /// Parses a config file. Blank lines and lines starting with `#` or `;`
    /// are ignored.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !SCHEMA.iter().any(|(s, _, _)| *s == section) {
                    return Err(CliError::Config(format!(
                        "line {}: unknown section [{section}]",
                        no + 1
                    )));
                }
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected key = value",
                    no + 1
                )));
            };
            if section.is_empty() {
                return Err(CliError::Config(format!(
                    "line {}: key outside a section",
                    no + 1
                )));
            }
            cfg.set(&section, k.trim(), v.trim())?;
        }
        let version = cfg.get("run", "schema_version");
        if version != SCHEMA_VERSION.to_string() {
            return Err(CliError::Config(format!(
                "unsupported schema_version {version}, expected {SCHEMA_VERSION}"
            )));
        }
        Ok(cfg)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        if !in_schema(section, key) {
            return Err(CliError::Config(format!(
                "unknown config key {section}.{key}"
            )));
        }
        self.values
            .insert((section.to_string(), key.to_string()), value.to_string());
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn set_dotted(&mut self, assignment: &str) -> Result<(), CliError> {
        let bad = || CliError::Config(format!("expected section.key=value, got '{assignment}'"));
        let (path, value) = assignment.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        self.set(section, key, value.trim())
    }

    pub fn get(&self, section: &str, key: &str) -> String {
        if let Some(v) = self.values.get(&(section.to_string(), key.to_string())) {
            return v.clone();
        }
        SCHEMA
            .iter()
            .find(|(s, k, _)| *s == section && *k == key)
            .map(|(_, _, d)| d.to_string())
            .unwrap_or_else(|| panic!("{section}.{key} is not in the schema"))
    }

    /// A value that must be present.
    pub fn required(&self, section: &str, key: &str) -> Result<String, CliError> {
        let v = self.get(section, key);
        if v.is_empty() {
            Err(CliError::Config(format!("{section}.{key} is required")))
        } else {
            Ok(v)
        }
    }

    pub fn parse_as<T: FromStr>(&self, section: &str, key: &str) -> Result<T, CliError> {
        let v = self.get(section, key);
        v.parse()
            .map_err(|_| CliError::Config(format!("{section}.{key}: cannot parse '{v}'")))
    }

    pub fn optional<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, CliError> {
        if self.get(section, key).is_empty() {
            Ok(None)
        } else {
            self.parse_as(section, key).map(Some)
        }
    }

    pub fn flag(&self, section: &str, key: &str) -> Result<bool, CliError> {
        match self.get(section, key).as_str() {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            v => Err(CliError::Config(format!(
                "{section}.{key}: expected a boolean, got '{v}'"
            ))),
        }
    }

    /// The `[run]` section and the listed sections with every key resolved.
    pub fn resolved(&self, sections: &[&str]) -> String {
        let mut out = String::new();
        for section in std::iter::once("run").chain(sections.iter().copied()) {
            let _ = writeln!(out, "[{section}]");
            for (_, k, _) in SCHEMA.iter().filter(|(s, _, _)| *s == section) {
                let _ = writeln!(out, "{k} = {}", self.get(section, k));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_defaults() {
        let c = RunConfig::parse("# comment\n[run]\nseed = 7\n\n[calibrate]\nq = 20\nsteps=1,2\n")
            .unwrap();
        assert_eq!(c.get("run", "seed"), "7");
        assert_eq!(c.parse_as::<usize>("calibrate", "q").unwrap(), 20);
        assert_eq!(c.get("calibrate", "q_aux"), "30");
        assert_eq!(c.get("calibrate", "steps"), "1,2");
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        assert!(matches!(
            RunConfig::parse("[calibrate]\nqq = 3\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[nope]\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("q = 3\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[run]\nschema_version = 2\n"),
            Err(CliError::Config(_))
        ));
        assert!(RunConfig::default()
            .set_dotted("calibrate.bogus=1")
            .is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.set_dotted("moments.max_lag=12").unwrap();
        let text = c.resolved(&["moments"]);
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back.get("moments", "max_lag"), "12");
        assert_eq!(back.resolved(&["moments"]), text);
    }

    #[test]
    fn booleans() {
        let mut c = RunConfig::default();
        c.set("calibrate", "mirror", "off").unwrap();
        assert!(!c.flag("calibrate", "mirror").unwrap());
        c.set("calibrate", "mirror", "maybe").unwrap();
        assert!(c.flag("calibrate", "mirror").is_err());
    }
}
