//! Seen/unseen split construction over latent-condition combinations.
//!
//! A plan names degradation patterns that are held out entirely: any scene
//! whose flags cover a pattern lands in the unseen test split, so no
//! combination seen in training ever appears there.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json_atomic};
use crate::seed;

use super::scene::DatasetManifest;

/// A conjunction over the degradation flags; `true` entries are required.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradationCombo {
    pub dark: bool,
    pub rain: bool,
    pub blur: bool,
}

impl DegradationCombo {
    pub fn matches(&self, flags: (bool, bool, bool)) -> bool {
        (!self.dark || flags.0) && (!self.rain || flags.1) && (!self.blur || flags.2)
    }

    pub fn is_empty(&self) -> bool {
        !(self.dark || self.rain || self.blur)
    }

    /// Parse combos like "dark+rain" or "rain+blur".
    pub fn parse(s: &str) -> Result<Self> {
        let mut combo = DegradationCombo { dark: false, rain: false, blur: false };
        for part in s.split('+') {
            match part.trim() {
                "dark" => combo.dark = true,
                "rain" => combo.rain = true,
                "blur" => combo.blur = true,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown degradation flag {other:?} (expected dark, rain, blur)"
                    )))
                }
            }
        }
        if combo.is_empty() {
            return Err(Error::InvalidArgument("empty degradation combo".into()));
        }
        Ok(combo)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Scenes matching any of these patterns are reserved for unseen testing.
    pub unseen_combos: Vec<DegradationCombo>,
    /// Train/val/test fractions of the remaining (seen) scenes.
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            unseen_combos: vec![
                DegradationCombo { dark: true, rain: true, blur: false },
                DegradationCombo { dark: true, rain: false, blur: true },
                DegradationCombo { dark: false, rain: true, blur: true },
            ],
            ratios: (0.8, 0.1, 0.1),
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.unseen_combos.is_empty() {
            return Err(Error::InvalidArgument("plan names no unseen combos".into()));
        }
        if self.unseen_combos.iter().any(DegradationCombo::is_empty) {
            return Err(Error::InvalidArgument("unseen combo with no flags".into()));
        }
        let (a, b, c) = self.ratios;
        if a <= 0.0 || b < 0.0 || c < 0.0 || a + b + c > 1.0 + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "ratios {:?} must be positive and sum to at most 1",
                self.ratios
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test_seen: Vec<String>,
    pub test_unseen: Vec<String>,
}

impl Splits {
    pub fn counts(&self) -> (usize, usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test_seen.len(), self.test_unseen.len())
    }
}

/// Partition the manifest. The unseen bucket is rule-driven; the seen pool
/// is shuffled under the plan seed and cut by the ratios.
pub fn build_splits(manifest: &DatasetManifest, plan: &SplitPlan) -> Result<Splits> {
    plan.validate()?;
    let mut seen_pool = Vec::new();
    let mut test_unseen = Vec::new();
    for meta in &manifest.scenes {
        let combo = meta.latent.combo();
        if plan.unseen_combos.iter().any(|p| p.matches(combo)) {
            test_unseen.push(meta.id.clone());
        } else {
            seen_pool.push(meta.id.clone());
        }
    }
    if test_unseen.is_empty() {
        return Err(Error::InvalidArgument(
            "unseen split is empty; no scene matches the held-out combos".into(),
        ));
    }
    if seen_pool.is_empty() {
        return Err(Error::InvalidArgument(
            "seen pool is empty; the held-out combos cover every scene".into(),
        ));
    }

    let mut rng = seed::rng(plan.seed, &[seed::hash_str("splits")]);
    seen_pool.shuffle(&mut rng);
    let n = seen_pool.len() as f64;
    let n_train = (plan.ratios.0 * n).round() as usize;
    let n_val = (plan.ratios.1 * n).round() as usize;
    let n_train = n_train.min(seen_pool.len());
    let n_val = n_val.min(seen_pool.len() - n_train);

    let splits = Splits {
        train: seen_pool[..n_train].to_vec(),
        val: seen_pool[n_train..n_train + n_val].to_vec(),
        test_seen: seen_pool[n_train + n_val..].to_vec(),
        test_unseen,
    };

    // Hygiene: no training combination may reappear unseen.
    let train_combos: BTreeSet<(bool, bool, bool)> = splits
        .train
        .iter()
        .filter_map(|id| manifest.meta(id))
        .map(|m| m.latent.combo())
        .collect();
    for id in &splits.test_unseen {
        if let Some(meta) = manifest.meta(id) {
            if train_combos.contains(&meta.latent.combo()) {
                return Err(Error::InvalidArgument(format!(
                    "split hygiene violated: combo {:?} appears in train and unseen",
                    meta.latent.combo()
                )));
            }
        }
    }
    Ok(splits)
}

pub fn save_splits(path: &Path, splits: &Splits) -> Result<()> {
    write_json_atomic(path, splits)
}

pub fn load_splits(path: &Path) -> Result<Splits> {
    read_json(path)
}
