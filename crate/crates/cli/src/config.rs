use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use yieldgraph::error::Error;
use yieldgraph::eval::parse_key_values;

/// Process exit status and message of a failed command.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NumericalAbort { .. } => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        };
        CliError { code, msg: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Resolved `key = value` settings of one command: defaults, then the
/// config file, then `--key value` flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

/// Splits `--key value` and `--key=value` tokens.
pub fn parse_overrides(tokens: &[String]) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(t) = it.next() {
        let body = t
            .strip_prefix("--")
            .ok_or_else(|| CliError::input(format!("expected `--key value`, got `{t}`")))?;
        match body.split_once('=') {
            Some((k, v)) => out.push((normalize_key(k), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::input(format!("flag `{t}` needs a value")))?;
                out.push((normalize_key(body), v.clone()));
            }
        }
    }
    Ok(out)
}

impl RunConfig {
    /// `allowed` decides which keys the command accepts.
    pub fn resolve(
        defaults: &[(&str, &str)],
        allowed: impl Fn(&str) -> bool,
        file: Option<&Path>,
        overrides: &[String],
    ) -> CliResult<Self> {
        let mut values: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| CliError::from(Error::io(path, e)))?;
            for (k, v) in parse_key_values(&text, path)? {
                let k = normalize_key(&k);
                if !allowed(&k) {
                    return Err(CliError::input(format!("{}: unknown setting `{k}`", path.display())));
                }
                values.insert(k, v);
            }
        }
        for (k, v) in parse_overrides(overrides)? {
            if !allowed(&k) {
                return Err(CliError::input(format!("unknown setting `--{k}`")));
            }
            values.insert(k, v);
        }
        Ok(RunConfig { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key).ok_or_else(|| CliError::input(format!("missing required setting `{key}`")))
    }

    pub fn path(&self, key: &str) -> CliResult<PathBuf> {
        self.require(key).map(PathBuf::from)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| CliError::input(format!("setting `{key}`: cannot parse `{v}`")))
    }

    pub fn flag(&self, key: &str) -> CliResult<bool> {
        match self.get(key).unwrap_or("false") {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(CliError::input(format!("setting `{key}`: expected true or false, got `{v}`"))),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// The `config.txt` echo, loadable with `--config`.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Creates `dir`, refusing a non-empty existing one unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| CliError::from(Error::io(dir, e)))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(CliError::input(format!(
                "output directory {} exists and is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::from(Error::io(dir, e)))
}

pub fn write(path: &Path, body: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, body).map_err(|e| CliError::from(Error::io(path, e)))
}
