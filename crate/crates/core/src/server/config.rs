//! Service configuration and the bearer-token table.
//!
//! Both files are flat `key=value` text; blank lines and `#` comments are
//! ignored.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::adaptive::RetrainTrigger;
use crate::classifier::GdParams;
use crate::role::Role;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {reason}")]
    Syntax {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn key_values(text: &str, path: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: path.to_string(),
            line: i + 1,
            reason: format!("expected key=value, got `{line}`"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Maps bearer tokens to roles. Unknown tokens get no role at all.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenTable {
    roles: HashMap<String, Role>,
}

impl TokenTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: impl Into<String>, role: Role) {
        self.roles.insert(token.into(), role);
    }

    pub fn with(mut self, token: impl Into<String>, role: Role) -> Self {
        self.insert(token, role);
        self
    }

    pub fn role(&self, token: &str) -> Option<Role> {
        self.roles.get(token).copied()
    }

    /// Parses `token=role` lines.
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let mut table = TokenTable::new();
        for (line, token, role) in key_values(text, path)? {
            if token.is_empty() {
                return Err(ConfigError::Syntax {
                    path: path.to_string(),
                    line,
                    reason: "empty token".into(),
                });
            }
            let role: Role = role.parse().map_err(|reason: String| ConfigError::Syntax {
                path: path.to_string(),
                line,
                reason,
            })?;
            table.insert(token, role);
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        TokenTable::parse(&read(path)?, &path.display().to_string())
    }
}

/// Everything `serve` needs besides the listen address.
#[derive(Clone, Debug, Default)]
pub struct ServerConfig {
    pub tokens: TokenTable,
    /// `None` keeps everything in memory.
    pub store_dir: Option<PathBuf>,
    pub trigger: RetrainTrigger,
    pub params: GdParams,
    /// Labeled corpus loaded into an empty store at startup.
    pub seed_corpus: Option<PathBuf>,
}

impl ServerConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    ///
    /// Keys: `tokens`, `store_dir`, `seed_corpus`, `retrain_every` (0 means
    /// administrator request only), `learning_rate`, `max_iters`, `tolerance`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        ServerConfig::parse(&read(path)?, &path.display().to_string(), base)
    }

    pub fn parse(text: &str, path: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = ServerConfig::default();
        for (line, key, value) in key_values(text, path)? {
            let bad = |reason: String| ConfigError::Syntax {
                path: path.to_string(),
                line,
                reason,
            };
            let number = |what: &str| bad(format!("`{what}` expects a number, got `{value}`"));
            match key.as_str() {
                "tokens" => cfg.tokens = TokenTable::load(base.join(&value))?,
                "store_dir" => cfg.store_dir = Some(base.join(&value)),
                "seed_corpus" => cfg.seed_corpus = Some(base.join(&value)),
                "retrain_every" => {
                    let k: u64 = value.parse().map_err(|_| number("retrain_every"))?;
                    cfg.trigger = RetrainTrigger {
                        every: (k > 0).then_some(k),
                    };
                }
                "learning_rate" => {
                    cfg.params.learning_rate = value.parse().map_err(|_| number("learning_rate"))?;
                    if !(cfg.params.learning_rate > 0.0 && cfg.params.learning_rate.is_finite()) {
                        return Err(bad("learning_rate must be positive".into()));
                    }
                }
                "max_iters" => cfg.params.max_iters = value.parse().map_err(|_| number("max_iters"))?,
                "tolerance" => {
                    cfg.params.tolerance = value.parse().map_err(|_| number("tolerance"))?;
                    if cfg.params.tolerance.is_nan() || cfg.params.tolerance < 0.0 {
                        return Err(bad("tolerance must be non-negative".into()));
                    }
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }
}
