//! `key=value` experiment configs: profile defaults, then the config file,
//! then `--set` overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Validation errors exit with 2, runtime errors with 1.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<nngp_sym::Error> for CliError {
    fn from(e: nngp_sym::Error) -> Self {
        use nngp_sym::Error as E;
        match e {
            E::InvalidArgument(_) | E::Feasibility(_) | E::Parse { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn validation<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Validation(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    Smoke,
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Smoke => "smoke",
            Profile::Paper => "paper",
        }
    }
}

/// `(key, smoke default, paper default)`.
pub type Defaults = &'static [(&'static str, &'static str, &'static str)];

/// Fully resolved settings of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub values: BTreeMap<String, String>,
}

/// Parses a config file body. Blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push((k.trim().to_string(), v.trim().to_string())),
            _ => return validation(format!("config line {}: expected key=value, got `{raw}`", i + 1)),
        }
    }
    Ok(out)
}

pub fn parse_override(s: &str) -> CliResult<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => validation(format!("override `{s}` is not key=value")),
    }
}

impl ExperimentConfig {
    pub fn resolve(
        defaults: Defaults,
        profile: Profile,
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> CliResult<Self> {
        let mut values: BTreeMap<String, String> = defaults
            .iter()
            .map(|(k, s, p)| (k.to_string(), if profile == Profile::Smoke { s } else { p }.to_string()))
            .collect();
        let mut layers = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
            layers.extend(parse_pairs(&text)?);
        }
        layers.extend(overrides.iter().cloned());
        for (k, v) in layers {
            if !values.contains_key(&k) {
                let known: Vec<&str> = defaults.iter().map(|d| d.0).collect();
                return validation(format!("unknown key `{k}`; known keys: {}", known.join(", ")));
            }
            values.insert(k, v);
        }
        Ok(Self { values })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.str(key);
        v.parse()
            .map_err(|_| CliError::Validation(format!("`{key}` = `{v}` does not parse")))
    }

    /// Comma-separated list; empty value gives an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        let v = self.str(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::Validation(format!("`{key}` entry `{s}` does not parse")))
            })
            .collect()
    }

    /// The resolved config in the same `key=value` format it is read from.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
