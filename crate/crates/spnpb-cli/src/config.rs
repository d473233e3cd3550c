//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Keys are namespaced by subcommand (`train.epochs`, `control.c_variance`, ...).
//! Unknown keys and duplicate keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "collect.steps",
    "collect.trials_per_config",
    "collect.alphas",
    "collect.betas",
    "train.epochs",
    "train.weight_lr",
    "train.pb_lr",
    "train.clip_norm",
    "train.final_lr_scale",
    "adapt.learning_rate",
    "adapt.momentum",
    "adapt.threshold",
    "adapt.capacity",
    "adapt.alpha",
    "adapt.beta",
    "adapt.ticks",
    "adapt.episodes",
    "adapt.switch_tick",
    "adapt.switch_alpha",
    "adapt.switch_beta",
    "estimate.alpha",
    "estimate.beta",
    "estimate.pb_label",
    "estimate.ticks",
    "estimate.episodes",
    "control.alpha",
    "control.beta",
    "control.pb_label",
    "control.c_variance",
    "control.c_orig",
    "control.variance_mode",
    "control.horizon",
    "control.batch",
    "control.epochs",
    "control.gamma_max",
    "control.command_limit",
    "control.episodes",
    "control.ticks",
    "control.ramp_ticks",
    "control.window",
    "control.live_adapt",
    "evaluate.seed",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`, got {raw:?}", n + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                bail!("config line {}: unknown key {k:?}", n + 1);
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                bail!("config line {}: duplicate key {k:?}", n + 1);
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!("config key {key}: cannot parse {v:?}: {e}"))
            })
            .transpose()
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        item.trim()
                            .parse::<T>()
                            .map_err(|e| anyhow!("config key {key}: cannot parse {item:?}: {e}"))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Flag value if given, else config value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }
}
