//! Flat key=value config files with strict key validation. Precedence is
//! command-line flag, then config file, then built-in default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// Every key any command understands; unknown keys are rejected up front.
pub const ALLOWED_KEYS: &[&str] = &[
    "seed",
    "out_dir",
    "data_dir",
    "scenes",
    "grid",
    "classes",
    "max_objects",
    "n_nuisance",
    "p_dark",
    "p_rain",
    "p_blur",
    "p_nuisance",
    "ratios",
    "unseen",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "pos_weight",
    "variant",
    "k",
    "backend",
    "runs",
    "m",
    "probe",
    "concurrency",
    "conditions_source",
    "score_threshold",
    "nms_iou",
    "ks",
    "seeds",
    "noisy",
    "noisy_flip",
    "flips",
    "prompts_dir",
];

#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected key=value", path.display(), lineno + 1);
            };
            let key = key.trim().to_string();
            if !ALLOWED_KEYS.contains(&key.as_str()) {
                bail!("{}:{}: unknown config key {key:?}", path.display(), lineno + 1);
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!("config key {key}={raw:?}: {e}"),
            },
        }
    }

    /// flag > file > default.
    pub fn resolve<T: FromStr + Clone>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn resolve_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.get(key)
    }
}

/// Parse comma-separated values like "2,4,6".
pub fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| anyhow::anyhow!("{what} entry {s:?}: {e}"))
        })
        .collect()
}
