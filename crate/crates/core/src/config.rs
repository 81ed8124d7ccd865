//! TOML document access with key-path aware errors.

use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("{0} required")]
    Missing(String),
    #[error("{key}: {message}")]
    Parse { key: String, message: String },
    #[error("invalid {key}: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    pub fn parse(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Parse {
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// The offending key, if the error names one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax(_) => None,
            ConfigError::Missing(k) => Some(k),
            ConfigError::Parse { key, .. } | ConfigError::Invalid { key, .. } => Some(key),
        }
    }
}

/// A view onto one table of a parsed document, remembering its key path.
#[derive(Debug, Clone)]
pub struct Doc {
    table: Table,
    prefix: String,
}

impl Doc {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
        Ok(Doc {
            table,
            prefix: String::new(),
        })
    }

    pub fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{}", self.prefix, key)
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.table.contains_key(key)
    }

    pub fn allow_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        match self.table.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(ConfigError::parse(&self.path(k), "unknown key")),
            None => Ok(()),
        }
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.table.get(key)
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(ConfigError::parse(&self.path(key), "expected a number")),
        }
    }

    pub fn req_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.opt_f64(key)?
            .ok_or_else(|| ConfigError::Missing(self.path(key)))
    }

    pub fn opt_i64(&self, key: &str) -> Result<Option<i64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) => Ok(Some(*i)),
            Some(Value::Float(f)) if f.fract() == 0.0 && f.abs() < 9.0e15 => Ok(Some(*f as i64)),
            Some(_) => Err(ConfigError::parse(&self.path(key), "expected an integer")),
        }
    }

    /// Nonnegative integer; negative values are validation errors.
    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.opt_i64(key)? {
            None => Ok(None),
            Some(i) if i < 0 => Err(ConfigError::invalid(&self.path(key), "must be >= 0")),
            Some(i) => Ok(Some(i as u64)),
        }
    }

    pub fn req_u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.opt_u64(key)?
            .ok_or_else(|| ConfigError::Missing(self.path(key)))
    }

    pub fn opt_str(&self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(ConfigError::parse(&self.path(key), "expected a string")),
        }
    }

    pub fn req_str(&self, key: &str) -> Result<String, ConfigError> {
        self.opt_str(key)?
            .ok_or_else(|| ConfigError::Missing(self.path(key)))
    }

    pub fn opt_table(&self, key: &str) -> Result<Option<Doc>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Doc {
                table: t.clone(),
                prefix: self.path(key),
            })),
            Some(_) => Err(ConfigError::parse(&self.path(key), "expected a table")),
        }
    }

    pub fn req_table(&self, key: &str) -> Result<Doc, ConfigError> {
        self.opt_table(key)?
            .ok_or_else(|| ConfigError::Missing(self.path(key)))
    }

    pub fn opt_array(&self, key: &str) -> Result<Option<Vec<Value>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => Ok(Some(a.clone())),
            Some(_) => Err(ConfigError::parse(&self.path(key), "expected an array")),
        }
    }

    pub fn opt_u64_array(&self, key: &str) -> Result<Option<Vec<u64>>, ConfigError> {
        let Some(items) = self.opt_array(key)? else {
            return Ok(None);
        };
        items
            .iter()
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                Value::Integer(_) => Err(ConfigError::invalid(&self.path(key), "entries must be >= 0")),
                _ => Err(ConfigError::parse(&self.path(key), "expected integers")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub fn opt_str_array(&self, key: &str) -> Result<Option<Vec<String>>, ConfigError> {
        let Some(items) = self.opt_array(key)? else {
            return Ok(None);
        };
        items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                _ => Err(ConfigError::parse(&self.path(key), "expected strings")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}
