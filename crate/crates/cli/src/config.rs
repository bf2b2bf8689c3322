//! Flat `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are skipped. Keys are long flag
//! names without the leading dashes, e.g. `trees = 50`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::cli::CliError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile, CliError> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {} is not key=value: `{line}`", n + 1))
            })?;
            values.insert(k.trim().trim_start_matches("--").to_string(), v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        ConfigFile::parse(&text)
    }

    /// Reject keys that no flag of the running command reads.
    pub fn check_keys(&self, known: &[&str]) -> Result<(), CliError> {
        match self.values.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(CliError::Usage(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }

    /// The flag value if given, else the config value, else `None`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}")))
            })
            .transpose()
    }

    pub fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    pub fn flag(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        if flag {
            return Ok(true);
        }
        Ok(self.pick::<bool>(None, key)?.unwrap_or(false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let c = ConfigFile::parse("# comment\ntrees = 7\n\n--k=3\n").unwrap();
        assert_eq!(c.or(Some(9usize), "trees", 100).unwrap(), 9);
        assert_eq!(c.or(None::<usize>, "trees", 100).unwrap(), 7);
        assert_eq!(c.or(None::<usize>, "k", 2).unwrap(), 3);
        assert_eq!(c.or(None::<usize>, "depth", 2).unwrap(), 2);
    }

    #[test]
    fn bad_lines_and_keys_are_usage_errors() {
        assert!(matches!(ConfigFile::parse("trees"), Err(CliError::Usage(_))));
        let c = ConfigFile::parse("tres=3").unwrap();
        assert!(matches!(c.check_keys(&["trees"]), Err(CliError::Usage(_))));
        assert!(matches!(c.pick::<usize>(None, "tres"), Ok(Some(3))));
        let c = ConfigFile::parse("trees=many").unwrap();
        assert!(matches!(c.pick::<usize>(None, "trees"), Err(CliError::Usage(_))));
    }
}
