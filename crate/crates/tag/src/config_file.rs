//! Plain-text `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use tag_core::config::{ModelConfig, TrainConfig};

use crate::error::{Error, Result};

pub const KEYS: [&str; 14] = [
    "d",
    "layers",
    "heads",
    "k_cap",
    "m_cap",
    "n_cap",
    "t_cap",
    "dropout",
    "lr",
    "batch_size",
    "max_iters",
    "lr_decay_steps",
    "lr_decay_factor",
    "seed",
];

/// Model and schedule settings read from one config file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e: T::Err| Error::ConfigKey {
        key: key.into(),
        msg: format!("cannot parse {raw:?}: {e}"),
    })
}

impl RunConfig {
    /// Applies one assignment. Unknown keys are errors.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "d" => m.d = parse_value(key, raw)?,
            "layers" => m.layers = parse_value(key, raw)?,
            "heads" => m.heads = parse_value(key, raw)?,
            "k_cap" => m.k_cap = parse_value(key, raw)?,
            "m_cap" => m.m_cap = parse_value(key, raw)?,
            "n_cap" => m.n_cap = parse_value(key, raw)?,
            "t_cap" => m.t_cap = parse_value(key, raw)?,
            "dropout" => m.dropout = parse_value(key, raw)?,
            "lr" => t.lr = parse_value(key, raw)?,
            "batch_size" => t.batch_size = parse_value(key, raw)?,
            "max_iters" => t.max_iters = parse_value(key, raw)?,
            "lr_decay_steps" => {
                t.lr_decay_steps = raw
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(key, s))
                    .collect::<Result<_>>()?
            }
            "lr_decay_factor" => t.lr_decay_factor = parse_value(key, raw)?,
            "seed" => t.seed = parse_value(key, raw)?,
            _ => {
                return Err(Error::ConfigKey {
                    key: key.into(),
                    msg: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Parses over the defaults. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigKey {
                key: line.into(),
                msg: "expected key = value".into(),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_owned()) {
                return Err(Error::ConfigKey {
                    key: key.into(),
                    msg: "given twice".into(),
                });
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::fsutil::read_text(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Every key, one per line, in the order of [`KEYS`].
    pub fn render(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let steps: Vec<String> = t.lr_decay_steps.iter().map(usize::to_string).collect();
        let values = [
            m.d.to_string(),
            m.layers.to_string(),
            m.heads.to_string(),
            m.k_cap.to_string(),
            m.m_cap.to_string(),
            m.n_cap.to_string(),
            m.t_cap.to_string(),
            m.dropout.to_string(),
            t.lr.to_string(),
            t.batch_size.to_string(),
            t.max_iters.to_string(),
            steps.join(","),
            t.lr_decay_factor.to_string(),
            t.seed.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
