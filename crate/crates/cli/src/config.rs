//! Flat key/value JSON run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    UInt,
    Float,
    Str,
    Bool,
    UIntList,
    FloatList,
    StrList,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ty::UInt => "non-negative integer",
            Ty::Float => "number",
            Ty::Str => "string",
            Ty::Bool => "boolean",
            Ty::UIntList => "array of non-negative integers",
            Ty::FloatList => "array of numbers",
            Ty::StrList => "array of strings",
        })
    }
}

pub const KEYS: &[(&str, Ty)] = &[
    ("seed", Ty::UInt),
    ("jobs", Ty::UInt),
    ("env", Ty::Str),
    ("n", Ty::UInt),
    ("p", Ty::UInt),
    ("p_s", Ty::UInt),
    ("r", Ty::Float),
    ("noise_std", Ty::Float),
    ("label", Ty::Str),
    ("gamma", Ty::Float),
    ("lambda_w", Ty::Float),
    ("lambda_sum", Ty::Float),
    ("degree", Ty::UInt),
    ("max_iters", Ty::UInt),
    ("step_size", Ty::Float),
    ("tolerance", Ty::Float),
    ("dwr_lambda2", Ty::Float),
    ("c", Ty::Float),
    ("epsilon", Ty::Float),
    ("model", Ty::Str),
    ("lambda", Ty::Float),
    ("min_support", Ty::Float),
    ("min_confidence", Ty::Float),
    ("max_len", Ty::UInt),
    ("max_rules", Ty::UInt),
    ("min_rules", Ty::UInt),
    ("folds", Ty::UInt),
    ("item_reduce", Ty::Bool),
    ("binning", Ty::Str),
    ("bins", Ty::UInt),
    ("balance", Ty::Bool),
    ("feature_sizes", Ty::UIntList),
    ("ns", Ty::UIntList),
    ("ps", Ty::UIntList),
    ("repeats", Ty::UInt),
    ("seeds", Ty::UInt),
    ("methods", Ty::StrList),
    ("test_n", Ty::UInt),
    ("test_rs", Ty::FloatList),
    ("cs", Ty::FloatList),
    ("gammas", Ty::FloatList),
    ("lambdas", Ty::FloatList),
    ("record_wall_time", Ty::Bool),
];

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    UnknownKey(String),
    TypeError { key: String, expected: Ty },
    Unreadable(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey(k) => write!(f, "config: unknown key `{k}`"),
            ConfigError::TypeError { key, expected } => write!(f, "config: key `{key}` must be a {expected}"),
            ConfigError::Unreadable(m) => write!(f, "config: {m}"),
        }
    }
}

fn matches(v: &Value, ty: Ty) -> bool {
    let uint = |v: &Value| v.as_u64().is_some();
    match ty {
        Ty::UInt => uint(v),
        Ty::Float => v.is_number(),
        Ty::Str => v.is_string(),
        Ty::Bool => v.is_boolean(),
        Ty::UIntList => v.as_array().is_some_and(|a| a.iter().all(uint)),
        Ty::FloatList => v.as_array().is_some_and(|a| a.iter().all(Value::is_number)),
        Ty::StrList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
    }
}

/// Values read from a config file, checked against [`KEYS`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    values: BTreeMap<String, Value>,
}

impl FileConfig {
    /// An empty or whitespace-only document is the empty config.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::Unreadable(e.to_string()))?;
        let Value::Object(map) = doc else {
            return Err(ConfigError::Unreadable("top level must be a JSON object".into()));
        };
        let mut values = BTreeMap::new();
        for (k, v) in map {
            let ty = KEYS
                .iter()
                .find(|(name, _)| *name == k)
                .map(|(_, t)| *t)
                .ok_or_else(|| ConfigError::UnknownKey(k.clone()))?;
            if !matches(&v, ty) {
                return Err(ConfigError::TypeError { key: k, expected: ty });
            }
            values.insert(k, v);
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn f64(&self, key: &str) -> Option<f64> {
        self.values.get(key).and_then(Value::as_f64)
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.values.get(key).and_then(Value::as_u64)
    }

    pub fn usize(&self, key: &str) -> Option<usize> {
        self.u64(key).map(|v| v as usize)
    }

    pub fn str(&self, key: &str) -> Option<String> {
        self.values.get(key).and_then(Value::as_str).map(str::to_string)
    }

    pub fn bool(&self, key: &str) -> Option<bool> {
        self.values.get(key).and_then(Value::as_bool)
    }

    pub fn f64_list(&self, key: &str) -> Option<Vec<f64>> {
        self.values.get(key)?.as_array().map(|a| a.iter().filter_map(Value::as_f64).collect())
    }

    pub fn usize_list(&self, key: &str) -> Option<Vec<usize>> {
        self.values
            .get(key)?
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_u64).map(|v| v as usize).collect())
    }

    pub fn str_list(&self, key: &str) -> Option<Vec<String>> {
        self.values
            .get(key)?
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
    }
}

/// Resolution order for the base seed: flag, then `STABLERULES_SEED`, then
/// the config file, then the default.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, file: &FileConfig, default: u64) -> Result<u64, ConfigError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(e) = env {
        return e.trim().parse().map_err(|_| ConfigError::TypeError {
            key: "STABLERULES_SEED".into(),
            expected: Ty::UInt,
        });
    }
    Ok(file.u64("seed").unwrap_or(default))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_defaults() {
        assert_eq!(FileConfig::parse("").unwrap(), FileConfig::default());
        assert_eq!(FileConfig::parse("{}").unwrap(), FileConfig::default());
    }

    #[test]
    fn typo_is_named() {
        assert_eq!(FileConfig::parse(r#"{"gama": 600}"#), Err(ConfigError::UnknownKey("gama".into())));
    }

    #[test]
    fn wrong_type_is_named() {
        assert_eq!(
            FileConfig::parse(r#"{"n": "many"}"#),
            Err(ConfigError::TypeError {
                key: "n".into(),
                expected: Ty::UInt
            })
        );
        assert!(FileConfig::parse(r#"{"cs": [0, "x"]}"#).is_err());
    }

    #[test]
    fn flag_beats_file() {
        let f = FileConfig::parse(r#"{"gamma": 800, "seed": 3}"#).unwrap();
        assert_eq!(Some(600.0).or(f.f64("gamma")), Some(600.0));
        assert_eq!(None.or(f.f64("gamma")), Some(800.0));
        assert_eq!(resolve_seed(Some(9), Some("5"), &f, 1).unwrap(), 9);
        assert_eq!(resolve_seed(None, Some("5"), &f, 1).unwrap(), 5);
        assert_eq!(resolve_seed(None, None, &f, 1).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, &FileConfig::default(), 1).unwrap(), 1);
        assert!(resolve_seed(None, Some("x"), &f, 1).is_err());
    }
}
