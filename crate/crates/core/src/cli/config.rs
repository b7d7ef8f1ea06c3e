use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Display};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::CliError;

/// Comma-separated list value, usable both as a flag and a config entry.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("bad list entry {p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Flag > config file > built-in default, with every resolved value
/// recorded for the run manifest.
#[derive(Debug, Default)]
pub struct Layers {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    effective: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl Layers {
    /// Reads `key = value` lines; `#` starts a comment line.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut layers = Self::default();
        let Some(path) = path else {
            return Ok(layers);
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Input(format!("{}:{}: expected key = value", path.display(), i + 1))
            })?;
            layers.file.insert(normalize(k), v.trim().to_owned());
        }
        Ok(layers)
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let Some(raw) = self.file.get(key) else {
            return Ok(None);
        };
        raw.parse::<T>()
            .map(Some)
            .map_err(|e| CliError::Input(format!("config key {key}: {e}")))
    }

    pub fn resolve<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        if self.file.contains_key(key) {
            self.used.insert(key.to_owned());
        }
        let value = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.effective.insert(key.to_owned(), value.to_string());
        Ok(value)
    }

    pub fn resolve_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        if self.file.contains_key(key) {
            self.used.insert(key.to_owned());
        }
        let value = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &value {
            self.effective.insert(key.to_owned(), v.to_string());
        }
        Ok(value)
    }

    /// Records a value that has no file or default layer, such as a path.
    pub fn record(&mut self, key: &str, value: impl Display) {
        self.effective.insert(key.to_owned(), value.to_string());
    }

    /// Fails on config-file keys that no resolved setting asked for.
    pub fn check(&self) -> Result<(), CliError> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Input(format!(
                "unknown config key(s) for this command: {}",
                unknown.join(", ")
            )))
        }
    }

    pub fn finish(self) -> Result<BTreeMap<String, String>, CliError> {
        self.check()?;
        Ok(self.effective)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn flag_beats_file_beats_default() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nlearning_rate = 3.5\nsteps=7").unwrap();
        let mut l = Layers::load(Some(f.path())).unwrap();
        assert_eq!(l.resolve("learning-rate", None, 1.0).unwrap(), 3.5);
        assert_eq!(l.resolve("steps", Some(9usize), 50).unwrap(), 9);
        assert_eq!(l.resolve("batch-size", None, 8usize).unwrap(), 8);
        let eff = l.finish().unwrap();
        assert_eq!(eff["learning-rate"], "3.5");
        assert_eq!(eff["steps"], "9");
        assert!(!eff.contains_key("missing"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "stepz = 7").unwrap();
        let l = Layers::load(Some(f.path())).unwrap();
        assert!(l.finish().is_err());
    }

    #[test]
    fn lists_round_trip() {
        let l: List<f64> = "0.1, 0.2,0.3".parse().unwrap();
        assert_eq!(l.0, vec![0.1, 0.2, 0.3]);
        assert_eq!(l.to_string(), "0.1,0.2,0.3");
        assert!("1,x".parse::<List<f64>>().is_err());
    }
}
