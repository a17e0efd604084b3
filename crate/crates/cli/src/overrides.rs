//! Flat JSON run configs with `--key value` overrides layered on top.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};
use wavets_core::RunConfig;

use crate::CliError;

/// Free-form `--key value` pairs after the named options of a subcommand.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Overrides {
    pairs: Vec<(String, String)>,
}

impl Overrides {
    /// Parses `--key value` and `--key=value`; dashes in keys become underscores.
    pub fn parse(args: &[String]) -> Result<Self, CliError> {
        let mut pairs = Vec::new();
        let mut iter = args.iter();
        while let Some(arg) = iter.next() {
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| CliError::Config(format!("expected `--key value`, found `{arg}`")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let value = iter
                        .next()
                        .ok_or_else(|| CliError::Config(format!("`--{key}` needs a value")))?;
                    (key.to_string(), value.clone())
                }
            };
            pairs.push((key.replace('-', "_"), value));
        }
        Ok(Overrides { pairs })
    }

    /// Removes and returns a key the subcommand handles itself.
    pub fn take(&mut self, key: &str) -> Option<String> {
        let idx = self.pairs.iter().rposition(|(k, _)| k == key)?;
        let value = self.pairs.remove(idx).1;
        self.pairs.retain(|(k, _)| k != key);
        Some(value)
    }

    /// Applies every pair to `base`; unknown keys and ill-typed values are errors.
    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig, CliError> {
        let mut map = match serde_json::to_value(base)? {
            Value::Object(m) => m,
            _ => unreachable!("RunConfig serializes to an object"),
        };
        for (key, raw) in &self.pairs {
            if !map.contains_key(key) {
                return Err(CliError::Config(format!("unknown config key `{key}`")));
            }
            map.insert(key.clone(), parse_value(raw));
        }
        from_map(map)
    }
}

/// JSON when it parses as JSON, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn from_map(map: Map<String, Value>) -> Result<RunConfig, CliError> {
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Config(e.to_string()))
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Comma-separated list, e.g. `0,1,2`.
pub fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| CliError::Config(format!("bad {what} `{s}`: {e}")))
        })
        .collect()
}

/// Base config from `--config` (named or trailing), then the remaining overrides.
pub fn resolve(config: Option<&Path>, rest: &[String]) -> Result<(RunConfig, Overrides), CliError> {
    let mut overrides = Overrides::parse(rest)?;
    let trailing = overrides.take("config");
    let path = match (config, trailing.as_deref()) {
        (Some(_), Some(_)) => return Err(CliError::Config("`--config` given twice".into())),
        (Some(p), None) => Some(p.to_path_buf()),
        (None, Some(p)) => Some(p.into()),
        (None, None) => None,
    };
    Ok((load_config(path.as_deref())?, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;
    use wavets_core::{SplitScheme, Variant};

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn flags_override_base_values() {
        let o = Overrides::parse(&args(&[
            "--lookback",
            "48",
            "--variant=S",
            "--delta-fixed",
            "1.0",
            "--split",
            "ett_hours",
        ]))
        .unwrap();
        let cfg = o.apply(&RunConfig::default()).unwrap();
        assert_eq!(cfg.lookback, 48);
        assert_eq!(cfg.variant, Variant::S);
        assert_eq!(cfg.delta_fixed, Some(1.0));
        assert_eq!(cfg.split, Some(SplitScheme::EttHours));
    }

    #[test]
    fn null_clears_options_and_strings_pass_through() {
        let base = RunConfig {
            delta_fixed: Some(2.0),
            ..Default::default()
        };
        let o = Overrides::parse(&args(&["--delta_fixed", "null", "--data", "data/ETTh1.csv"])).unwrap();
        let cfg = o.apply(&base).unwrap();
        assert_eq!(cfg.delta_fixed, None);
        assert_eq!(cfg.data, "data/ETTh1.csv");
    }

    #[test]
    fn typos_and_bad_values_are_config_errors() {
        let o = Overrides::parse(&args(&["--lookbak", "96"])).unwrap();
        assert!(matches!(o.apply(&RunConfig::default()), Err(CliError::Config(_))));
        let o = Overrides::parse(&args(&["--lookback", "many"])).unwrap();
        assert!(matches!(o.apply(&RunConfig::default()), Err(CliError::Config(_))));
        assert!(Overrides::parse(&args(&["--lookback"])).is_err());
        assert!(Overrides::parse(&args(&["lookback", "3"])).is_err());
    }

    #[test]
    fn take_removes_meta_keys() {
        let mut o = Overrides::parse(&args(&["--seeds", "0,1", "--epochs", "2"])).unwrap();
        assert_eq!(o.take("seeds").as_deref(), Some("0,1"));
        assert_eq!(o.take("seeds"), None);
        assert_eq!(o.pairs.len(), 1);
        assert_eq!(parse_list::<u64>("0, 1,2", "seed").unwrap(), vec![0, 1, 2]);
        assert!(parse_list::<u64>("0,x", "seed").is_err());
    }
}
