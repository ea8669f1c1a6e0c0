//! Synthetic study corpora: harmonization triplets with a known latent
//! quality, simulated annotators, and exactly scored model tasks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use harmony_core::manifest::{write_manifest, KNOWN_IHAS};
use harmony_core::records::write_mos;
use harmony_core::{DatasetManifest, ImageBuffer, MosRecord, RatingRecord, Subset, TripletEntry};
use harmony_model::synthetic::{brightness_task, contrast_task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{io, BenchError, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MOS_FILE: &str = "mos.csv";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Composite scenes; each is harmonized once by every algorithm.
    pub composites: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            composites: 150,
            image_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Study {
    pub manifest: DatasetManifest,
    /// Ground-truth quality in `[0, 1]` per image id.
    pub latent: BTreeMap<String, f64>,
}

/// File-name friendly form of an algorithm label.
pub fn slug(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io(path, e))
}

struct Scene {
    reference: ImageBuffer,
    rect: (usize, usize, usize, usize),
    shift: [f64; 3],
}

fn scene(rng: &mut ChaCha8Rng, size: usize) -> Scene {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(60.0..190.0));
    let grad: [f64; 3] = std::array::from_fn(|_| rng.random_range(-40.0..40.0));
    let freq = rng.random_range(0.15..0.5);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = rng.random_range(8.0..25.0);
    let s = size as f64;
    let reference = ImageBuffer::from_fn(size, size, 3, |x, y, c| {
        let t = (freq * x as f64 + 0.7 * freq * y as f64 + phase + c as f64).sin();
        (base[c] + grad[c] * (y as f64 / s - 0.5) + amp * t)
            .round()
            .clamp(0.0, 255.0)
    })
    .expect("non-empty scene");
    let w = rng.random_range(size / 4..=size / 2);
    let h = rng.random_range(size / 4..=size / 2);
    let x0 = rng.random_range(0..=size - w);
    let y0 = rng.random_range(0..=size - h);
    let shift = std::array::from_fn(|_| {
        let m = rng.random_range(30.0..80.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    Scene {
        reference,
        rect: (x0, y0, w, h),
        shift,
    }
}

/// Paints the foreground as `reference + residual · shift + artifact noise`.
fn with_foreground(sc: &Scene, residual: f64, noise: &[f64], artifact: f64) -> ImageBuffer {
    let (x0, y0, w, h) = sc.rect;
    let size = sc.reference.width();
    ImageBuffer::from_fn(size, size, 3, |x, y, c| {
        let v = sc.reference.get(x, y, c);
        if x >= x0 && x < x0 + w && y >= y0 && y < y0 + h {
            let n = noise[(y * size + x) * 3 + c];
            (v + residual * sc.shift[c] + artifact * n).round().clamp(0.0, 255.0)
        } else {
            v
        }
    })
    .expect("same size as the scene")
}

/// How much of the colour shift an algorithm removes on average, and the
/// strength of the texture artifacts it leaves.
fn algorithm_profile(index: usize, subset: Subset) -> (f64, f64) {
    let strength = 0.35 + 0.065 * index as f64;
    let artifact = if subset == Subset::Giha {
        6.0 + 2.0 * (index % 3) as f64
    } else {
        1.0
    };
    (strength, artifact)
}

/// Writes reference, composite and nine harmonized images per scene plus the
/// manifest under `dir`. Paths in the manifest are relative to `dir`.
pub fn generate_study(dir: &Path, cfg: &StudyConfig) -> Result<Study> {
    if cfg.composites == 0 || cfg.image_size < 8 {
        return Err(BenchError::Config("need at least one composite of size ≥ 8".into()));
    }
    let images = dir.join(IMAGE_DIR);
    ensure_dir(&images)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, 0.12).unwrap();
    let mut entries = Vec::new();
    let mut latent = BTreeMap::new();
    for c in 0..cfg.composites {
        let sc = scene(&mut rng, cfg.image_size);
        let ref_rel = PathBuf::from(IMAGE_DIR).join(format!("ref_{c:04}.png"));
        let comp_rel = PathBuf::from(IMAGE_DIR).join(format!("comp_{c:04}.png"));
        let zeros = vec![0.0; cfg.image_size * cfg.image_size * 3];
        sc.reference.save_png(dir.join(&ref_rel))?;
        with_foreground(&sc, 1.0, &zeros, 0.0).save_png(dir.join(&comp_rel))?;
        for (k, (name, subset)) in KNOWN_IHAS.iter().enumerate() {
            let (base, artifact) = algorithm_profile(k, *subset);
            let strength = (base + jitter.sample(&mut rng)).clamp(0.0, 1.0);
            let noise: Vec<f64> = (0..zeros.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let img = with_foreground(&sc, 1.0 - strength, &noise, artifact);
            let id = format!("{}_{c:04}", slug(name));
            let rel = PathBuf::from(IMAGE_DIR).join(format!("{id}.png"));
            img.save_png(dir.join(&rel))?;
            latent.insert(id.clone(), (strength - artifact / 40.0).clamp(0.0, 1.0));
            entries.push(TripletEntry {
                image_id: id,
                harmonized_path: rel,
                composite_path: comp_rel.clone(),
                reference_path: ref_rel.clone(),
                iha_name: name.to_string(),
                subset: *subset,
            });
        }
    }
    let manifest = DatasetManifest::new(entries, dir)?;
    write_manifest(&manifest, dir.join(MANIFEST_FILE))?;
    Ok(Study { manifest, latent })
}

/// A manifest only (no image files): `per_group` entries for each of the nine
/// algorithms. Enough for split experiments.
pub fn synthetic_manifest(per_group: usize) -> DatasetManifest {
    let mut entries = Vec::new();
    for (name, subset) in KNOWN_IHAS {
        for i in 0..per_group {
            let id = format!("{}_{i:04}", slug(name));
            entries.push(TripletEntry {
                image_id: id.clone(),
                harmonized_path: PathBuf::from(format!("{id}.png")),
                composite_path: PathBuf::from(format!("comp_{i:04}.png")),
                reference_path: PathBuf::from(format!("ref_{i:04}.png")),
                iha_name: name.to_string(),
                subset,
            });
        }
    }
    DatasetManifest::new(entries, ".").expect("generated ids are unique")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterConfig {
    pub subjects: usize,
    /// Per-vote noise, in rating steps.
    pub noise: f64,
    /// Subjects who answer uniformly at random.
    pub careless_subjects: usize,
    pub seed: u64,
}

impl Default for RaterConfig {
    fn default() -> Self {
        Self {
            subjects: 21,
            noise: 0.45,
            careless_subjects: 1,
            seed: 0,
        }
    }
}

fn timestamp(seconds: usize) -> String {
    let (h, m, s) = (seconds / 3600 % 24, seconds / 60 % 60, seconds % 60);
    format!("2024-05-01T{h:02}:{m:02}:{s:02}Z")
}

/// Every subject rates every image once. Honest subjects follow the latent
/// quality through a personal gain and offset plus noise; careless subjects
/// (the last ones) pick uniformly.
pub fn simulate_ratings(
    manifest: &DatasetManifest,
    latent: &BTreeMap<String, f64>,
    cfg: &RaterConfig,
) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise.max(1e-12)).unwrap();
    let mut out = Vec::with_capacity(cfg.subjects * manifest.len());
    for s in 0..cfg.subjects {
        let subject = format!("subject{s:02}");
        let careless = s >= cfg.subjects.saturating_sub(cfg.careless_subjects);
        let gain = rng.random_range(0.8..1.2);
        let offset = rng.random_range(-0.4..0.4);
        for (i, e) in manifest.entries.iter().enumerate() {
            let rating = if careless {
                rng.random_range(1..=5)
            } else {
                let q = latent.get(&e.image_id).copied().unwrap_or(0.5);
                let r = 3.0 + gain * 4.0 * (q - 0.5) + offset + noise.sample(&mut rng);
                r.round().clamp(1.0, 5.0) as u8
            };
            out.push(RatingRecord {
                subject_id: subject.clone(),
                image_id: e.image_id.clone(),
                session_id: format!("{subject}-1"),
                rating,
                timestamp: timestamp(i * 7),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Brightness,
    Contrast,
}

impl std::str::FromStr for Task {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brightness" => Ok(Task::Brightness),
            "contrast" => Ok(Task::Contrast),
            other => Err(BenchError::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Writes a dataset directory (`manifest.jsonl`, `mos.csv`, images) whose MOS
/// is the exact task score. Each image serves as its own composite and
/// reference; algorithm labels rotate so both subsets are populated.
pub fn generate_task(dir: &Path, task: Task, n: usize, image_size: usize, seed: u64) -> Result<DatasetManifest> {
    let images = dir.join(IMAGE_DIR);
    ensure_dir(&images)?;
    let samples = match task {
        Task::Brightness => brightness_task(n, image_size, seed),
        Task::Contrast => contrast_task(n, image_size, seed),
    };
    let mut entries = Vec::with_capacity(n);
    let mut mos = Vec::with_capacity(n);
    for (i, s) in samples.iter().enumerate() {
        let (name, subset) = KNOWN_IHAS[i % KNOWN_IHAS.len()];
        let id = format!("img_{i:05}");
        let rel = PathBuf::from(IMAGE_DIR).join(format!("{id}.png"));
        s.image.save_png(dir.join(&rel))?;
        entries.push(TripletEntry {
            image_id: id.clone(),
            harmonized_path: rel.clone(),
            composite_path: rel.clone(),
            reference_path: rel,
            iha_name: name.to_string(),
            subset,
        });
        mos.push(MosRecord {
            image_id: id,
            mos: s.mos,
            n_valid: 1,
            n_removed: 0,
        });
    }
    let manifest = DatasetManifest::new(entries, dir)?;
    write_manifest(&manifest, dir.join(MANIFEST_FILE))?;
    write_mos(dir.join(MOS_FILE), &mos)?;
    Ok(manifest)
}
