//! Stratified 4:1 train/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use harmony_core::{DatasetManifest, Subset};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io, BenchError, Result};

pub const TEST_DENOMINATOR: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub ratio: String,
    pub stratify_key: String,
    pub seed: u64,
    /// Subset of every listed image, so evaluation needs no manifest.
    pub subsets: BTreeMap<String, Subset>,
}

impl SplitSpec {
    /// Every image of the manifest in the test fold.
    pub fn all_test(manifest: &DatasetManifest) -> Self {
        Self {
            train_ids: Vec::new(),
            test_ids: manifest.entries.iter().map(|e| e.image_id.clone()).collect(),
            ratio: "0:1".into(),
            stratify_key: "none".into(),
            seed: 0,
            subsets: subsets_of(manifest),
        }
    }

    pub fn test_set(&self) -> BTreeSet<&str> {
        self.test_ids.iter().map(String::as_str).collect()
    }

    pub fn train_set(&self) -> BTreeSet<&str> {
        self.train_ids.iter().map(String::as_str).collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn subsets_of(manifest: &DatasetManifest) -> BTreeMap<String, Subset> {
    manifest
        .entries
        .iter()
        .map(|e| (e.image_id.clone(), e.subset))
        .collect()
}

/// `round(n / 5)`; n/5 never lands on a half for integer n.
pub fn test_count(n: usize) -> usize {
    (n + TEST_DENOMINATOR / 2) / TEST_DENOMINATOR
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitOptions {
    /// Keep every harmonized variant of one composite on the same side.
    pub group_by_composite: bool,
}

/// Shuffles each algorithm's images with a seeded generator and moves
/// `round(n/5)` of them to the test fold. Groups are visited in name order so
/// the result depends only on the manifest contents and the seed.
pub fn split_dataset(manifest: &DatasetManifest, seed: u64, opts: SplitOptions) -> Result<SplitSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = BTreeSet::new();
    let stratify_key;
    if opts.group_by_composite {
        stratify_key = "composite_path".to_string();
        let mut composites: Vec<_> = manifest
            .entries
            .iter()
            .map(|e| e.composite_path.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if composites.len() < TEST_DENOMINATOR {
            return Err(BenchError::GroupTooSmall {
                group: "composites".into(),
                size: composites.len(),
            });
        }
        composites.shuffle(&mut rng);
        let chosen: BTreeSet<_> = composites[..test_count(composites.len())].iter().collect();
        for e in &manifest.entries {
            if chosen.contains(&e.composite_path) {
                test.insert(e.image_id.clone());
            }
        }
    } else {
        stratify_key = "iha_name".to_string();
        let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in &manifest.entries {
            groups.entry(&e.iha_name).or_default().push(&e.image_id);
        }
        for (name, mut ids) in groups {
            if ids.len() < TEST_DENOMINATOR {
                return Err(BenchError::GroupTooSmall {
                    group: name.to_string(),
                    size: ids.len(),
                });
            }
            ids.shuffle(&mut rng);
            test.extend(ids[..test_count(ids.len())].iter().map(|s| s.to_string()));
        }
    }
    let (test_ids, train_ids) = manifest
        .entries
        .iter()
        .map(|e| e.image_id.clone())
        .partition(|id| test.contains(id));
    Ok(SplitSpec {
        train_ids,
        test_ids,
        ratio: "4:1".into(),
        stratify_key,
        seed,
        subsets: subsets_of(manifest),
    })
}

/// Cuts the manifest into `sessions` consecutive parts of near-equal size,
/// one per rating session. Paths are made absolute so each part can be
/// written anywhere.
pub fn session_manifests(manifest: &DatasetManifest, sessions: usize) -> Result<Vec<DatasetManifest>> {
    if sessions == 0 || sessions > manifest.len() {
        return Err(BenchError::Config(format!(
            "cannot cut {} images into {sessions} sessions",
            manifest.len()
        )));
    }
    let absolute = |p: &Path| {
        let p = manifest.resolve(p);
        std::path::absolute(&p).map_err(|e| io(&p, e))
    };
    let (n, mut start) = (manifest.len(), 0);
    let mut parts = Vec::with_capacity(sessions);
    for k in 0..sessions {
        let end = (k + 1) * n / sessions;
        let entries = manifest.entries[start..end]
            .iter()
            .map(|e| {
                let mut e = e.clone();
                e.harmonized_path = absolute(&e.harmonized_path)?;
                e.composite_path = absolute(&e.composite_path)?;
                e.reference_path = absolute(&e.reference_path)?;
                Ok(e)
            })
            .collect::<Result<Vec<_>>>()?;
        parts.push(DatasetManifest::new(entries, &manifest.base_dir)?);
        start = end;
    }
    Ok(parts)
}
