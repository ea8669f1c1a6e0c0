//! Dataset manifests: JSON Lines catalogs of harmonized/composite/reference triplets.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Harmonization algorithm family an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subset {
    /// Non-generative harmonization algorithms.
    #[serde(rename = "NGIHA")]
    Ngiha,
    /// Generative harmonization algorithms.
    #[serde(rename = "GIHA")]
    Giha,
    #[serde(rename = "other")]
    Other,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Ngiha => "NGIHA",
            Subset::Giha => "GIHA",
            Subset::Other => "other",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The nine reference harmonization algorithms and their family.
pub const KNOWN_IHAS: [(&str, Subset); 9] = [
    ("L&E", Subset::Ngiha),
    ("DoveNet", Subset::Ngiha),
    ("CDT", Subset::Ngiha),
    ("PCT", Subset::Ngiha),
    ("DucoNet", Subset::Ngiha),
    ("ObjectStitch", Subset::Giha),
    ("PHD", Subset::Giha),
    ("PHDiffusion", Subset::Giha),
    ("IC-Light", Subset::Giha),
];

fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Family of a known algorithm label, matched case- and punctuation-insensitively.
pub fn known_subset(iha_name: &str) -> Option<Subset> {
    let key = normalize_name(iha_name);
    KNOWN_IHAS
        .iter()
        .find(|(name, _)| normalize_name(name) == key)
        .map(|&(_, subset)| subset)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletEntry {
    pub image_id: String,
    pub harmonized_path: PathBuf,
    pub composite_path: PathBuf,
    pub reference_path: PathBuf,
    pub iha_name: String,
    pub subset: Subset,
}

/// Which image of a triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageRole {
    Harmonized,
    Composite,
    Reference,
}

impl ImageRole {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "harmonized" => Some(Self::Harmonized),
            "composite" => Some(Self::Composite),
            "reference" => Some(Self::Reference),
            _ => None,
        }
    }
}

impl TripletEntry {
    pub fn path(&self, role: ImageRole) -> &Path {
        match role {
            ImageRole::Harmonized => &self.harmonized_path,
            ImageRole::Composite => &self.composite_path,
            ImageRole::Reference => &self.reference_path,
        }
    }
}

/// Ordered collection of triplets. Relative paths resolve against `base_dir`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<TripletEntry>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<TripletEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let manifest = Self {
            entries,
            base_dir: base_dir.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for entry in &self.entries {
            if !seen.insert(entry.image_id.as_str()) {
                return Err(Error::DuplicateImageId(entry.image_id.clone()));
            }
            if let Some(expected) = known_subset(&entry.iha_name) {
                if expected != entry.subset {
                    return Err(Error::SubsetMismatch {
                        image_id: entry.image_id.clone(),
                        iha_name: entry.iha_name.clone(),
                        expected: expected.to_string(),
                        found: entry.subset.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&TripletEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Absolute (or base-relative) location of one image of an entry.
    pub fn image_path(&self, entry: &TripletEntry, role: ImageRole) -> PathBuf {
        self.resolve(entry.path(role))
    }

    pub fn counts_by_iha(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.iha_name.as_str()).or_default() += 1;
        }
        counts
    }
}

pub fn parse_manifest(reader: impl BufRead, origin: &Path, base_dir: PathBuf) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TripletEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    DatasetManifest::new(entries, base_dir)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(BufReader::new(file), path, base)
}

pub fn write_manifest_to(manifest: &DatasetManifest, mut writer: impl Write) -> Result<()> {
    for entry in &manifest.entries {
        serde_json::to_writer(&mut writer, entry)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<manifest>", e))?;
    }
    Ok(())
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_manifest_to(manifest, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
