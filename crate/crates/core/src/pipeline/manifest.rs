//! Labeled corpus manifests, grouped k-fold assignment, and the
//! addition/substitution mixing of synthetic samples into a real manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tuner::Label;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Label,
    /// Field image the patch was cut from; folds never split a group.
    pub source_image_group: String,
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported manifest schema_version {}",
                self.schema_version
            )));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate path {:?}", e.path)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_slice(&bytes).map_err(|e| Error::io(path, e))?;
        m.validate().map_err(|e| Error::io(path, e))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    /// Entries whose fold is (`keep = true`) or is not (`keep = false`) `fold`.
    pub fn select_fold(&self, fold: usize, keep: bool) -> Self {
        Self {
            schema_version: self.schema_version,
            entries: self
                .entries
                .iter()
                .filter(|e| (e.fold == Some(fold)) == keep)
                .cloned()
                .collect(),
        }
    }
}

/// Assigns folds per source-image group, stratified by label.
///
/// Each group takes its majority label (anomalous on ties). Groups of each
/// class are shuffled with `seed` and dealt round-robin, the dealer position
/// carrying over between classes so fold sizes stay balanced.
pub fn split_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<DatasetManifest> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need k >= 2 folds, got {k}")));
    }
    let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for e in &manifest.entries {
        let v = votes.entry(e.source_image_group.as_str()).or_default();
        match e.label {
            Label::Normal => v.0 += 1,
            Label::Anomalous => v.1 += 1,
        }
    }
    let mut by_class: BTreeMap<Label, Vec<&str>> = BTreeMap::new();
    for (group, (n, a)) in &votes {
        let label = if a >= n { Label::Anomalous } else { Label::Normal };
        by_class.entry(label).or_default().push(group);
    }
    for (label, groups) in &by_class {
        if groups.len() < k {
            return Err(Error::InvalidArgument(format!(
                "{label:?} class has {} source groups, fewer than k = {k}",
                groups.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut dealer = 0;
    for groups in by_class.values_mut() {
        groups.shuffle(&mut rng);
        for g in groups.iter() {
            fold_of.insert(g, dealer % k);
            dealer += 1;
        }
    }
    let entries = manifest
        .entries
        .iter()
        .map(|e| ManifestEntry {
            fold: Some(fold_of[e.source_image_group.as_str()]),
            ..e.clone()
        })
        .collect();
    DatasetManifest::new(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Addition,
    Substitution,
}

/// `floor(pct / 100 * n)`.
pub fn percentage_count(pct: f64, n: usize) -> usize {
    // pct * n is exact for the integer percentages in use; the slack only
    // absorbs rounding of fractional inputs.
    ((pct * n as f64) / 100.0 + 1e-9).floor() as usize
}

/// Mixes synthetic entries into a real manifest.
///
/// Addition appends `floor(pct% * |synthetic|)` sampled synthetic entries.
/// Substitution removes `floor(pct% * |real anomalous|)` sampled real
/// anomalous entries and appends as many sampled synthetic ones. Normal
/// entries are never touched; kept entries stay in their original order.
pub fn augment_manifest(
    real: &DatasetManifest,
    synthetic: &DatasetManifest,
    mode: AugmentMode,
    pct: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::InvalidArgument(format!("pct must be in (0, 100], got {pct}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = |n: usize, amount: usize| -> Vec<usize> {
        let mut idx = rand::seq::index::sample(&mut rng, n, amount).into_vec();
        idx.sort_unstable();
        idx
    };
    let (removed, added) = match mode {
        AugmentMode::Addition => {
            let count = percentage_count(pct, synthetic.entries.len());
            (BTreeSet::new(), sample(synthetic.entries.len(), count))
        }
        AugmentMode::Substitution => {
            let anomalous: Vec<usize> = real
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.label == Label::Anomalous)
                .map(|(i, _)| i)
                .collect();
            let count = percentage_count(pct, anomalous.len());
            if synthetic.entries.len() < count {
                return Err(Error::InvalidArgument(format!(
                    "substitution needs {count} synthetic entries, pool has {}",
                    synthetic.entries.len()
                )));
            }
            let drop: BTreeSet<usize> = sample(anomalous.len(), count)
                .into_iter()
                .map(|i| anomalous[i])
                .collect();
            (drop, sample(synthetic.entries.len(), count))
        }
    };
    let entries = real
        .entries
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, e)| e.clone())
        .chain(added.into_iter().map(|i| synthetic.entries[i].clone()))
        .collect();
    DatasetManifest::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(path: &str, label: Label, group: &str) -> ManifestEntry {
        ManifestEntry {
            path: path.into(),
            label,
            source_image_group: group.into(),
            fold: None,
        }
    }

    fn six_groups() -> DatasetManifest {
        let mut entries = Vec::new();
        for g in 0..6 {
            let label = if g < 3 { Label::Normal } else { Label::Anomalous };
            for p in 0..3 {
                entries.push(entry(&format!("g{g}/p{p}.png"), label, &format!("g{g}")));
            }
        }
        DatasetManifest::new(entries).unwrap()
    }

    #[test]
    fn duplicate_paths_rejected() {
        let e = entry("a.png", Label::Normal, "g");
        assert!(DatasetManifest::new(vec![e.clone(), e]).is_err());
    }

    #[test]
    fn folds_by_group() {
        let m = six_groups();
        let s = split_folds(&m, 3, 11).unwrap();
        let mut groups_per_fold = vec![BTreeSet::new(); 3];
        let mut fold_of_group = BTreeMap::new();
        for e in &s.entries {
            let f = e.fold.unwrap();
            groups_per_fold[f].insert(e.source_image_group.clone());
            assert_eq!(*fold_of_group.entry(e.source_image_group.clone()).or_insert(f), f);
        }
        assert!(groups_per_fold.iter().all(|g| g.len() == 2));
        // One normal and one anomalous group per fold.
        for f in 0..3 {
            let fold = s.select_fold(f, true);
            assert_eq!(fold.count(Label::Normal), 3);
            assert_eq!(fold.count(Label::Anomalous), 3);
        }
        assert_eq!(split_folds(&m, 3, 11).unwrap(), s);
    }

    #[test]
    fn folds_need_enough_groups() {
        assert!(split_folds(&six_groups(), 4, 0).is_err());
        assert!(split_folds(&six_groups(), 1, 0).is_err());
    }

    #[test]
    fn percentage_rounding() {
        assert_eq!(percentage_count(25.0, 166), 41);
        assert_eq!(percentage_count(10.0, 166), 16);
        assert_eq!(percentage_count(50.0, 166), 83);
        assert_eq!(percentage_count(100.0, 166), 166);
    }

    #[test]
    fn augment_rejects_bad_pct_and_small_pool() {
        let real = six_groups();
        let syn = DatasetManifest::new(vec![entry("s0.png", Label::Anomalous, "s")]).unwrap();
        assert!(augment_manifest(&real, &syn, AugmentMode::Addition, 0.0, 1).is_err());
        assert!(augment_manifest(&real, &syn, AugmentMode::Addition, 101.0, 1).is_err());
        assert!(augment_manifest(&real, &syn, AugmentMode::Substitution, 50.0, 1).is_err());
    }
}
