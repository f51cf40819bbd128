//! `key=value` configuration: a file plus command-line overrides, checked
//! against the keys a command accepts before any work starts.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// One accepted key with its default and a short description.
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default,
        help,
    }
}

#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    /// Reads the optional file, then applies overrides, rejecting keys outside
    /// `accepted`.
    pub fn load(file: Option<&PathBuf>, overrides: &[String], accepted: &[Key]) -> Result<Self> {
        let mut cfg = Config::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                cfg.set(line, accepted)
                    .with_context(|| format!("{}:{}", path.display(), i + 1))?;
            }
        }
        for item in overrides {
            cfg.set(item, accepted)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, item: &str, accepted: &[Key]) -> Result<()> {
        let Some((k, v)) = item.split_once('=') else {
            bail!("expected key=value, got `{item}`");
        };
        let (k, v) = (k.trim(), v.trim());
        if !accepted.iter().any(|a| a.name == k) {
            let names: Vec<&str> = accepted.iter().map(|a| a.name).collect();
            bail!("unknown key `{k}` (accepted: {})", names.join(", "));
        }
        if v.is_empty() {
            bail!("empty value for `{k}`");
        }
        self.values.insert(k.to_string(), v.to_string());
        Ok(())
    }

    pub fn raw(&self, k: &str) -> Option<&str> {
        self.values.get(k).map(String::as_str)
    }

    /// Value of `k`, or the default from `accepted`.
    pub fn get<T>(&self, k: &str, accepted: &[Key]) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let text = match self.raw(k) {
            Some(v) => v,
            None => accepted
                .iter()
                .find(|a| a.name == k)
                .map(|a| a.default)
                .with_context(|| format!("internal: key `{k}` not declared"))?,
        };
        text.parse::<T>()
            .map_err(|e| anyhow::anyhow!("bad value `{text}` for `{k}`: {e}"))
    }

    pub fn get_opt<T>(&self, k: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(k)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow::anyhow!("bad value `{v}` for `{k}`: {e}"))
            })
            .transpose()
    }
}

/// Help text listing every key of a command.
pub fn key_help(keys: &[Key]) -> String {
    let mut out =
        String::from("Keys (key=value, on the command line or one per line in --config):\n");
    for k in keys {
        if k.default.is_empty() {
            out.push_str(&format!("  {:<14} {}\n", k.name, k.help));
        } else {
            out.push_str(&format!(
                "  {:<14} {} [default: {}]\n",
                k.name, k.help, k.default
            ));
        }
    }
    out.push_str("\nThe default seed is taken from LOCSVM_SEED when set.");
    out
}
