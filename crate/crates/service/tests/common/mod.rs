#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use harmony_core::{DatasetManifest, ImageBuffer, Subset, TripletEntry};
use harmony_service::{ManualClock, RatingService, ServiceConfig};

/// `n` triplets whose three images are tiny PNGs on disk.
pub fn manifest(dir: &Path, n: usize) -> DatasetManifest {
    let img = ImageBuffer::filled(4, 4, 3, 128.0).unwrap();
    let mut entries = Vec::new();
    for i in 0..n {
        for role in ["h", "c", "r"] {
            img.save_png(dir.join(format!("{role}{i}.png"))).unwrap();
        }
        entries.push(TripletEntry {
            image_id: format!("img{i:02}"),
            harmonized_path: format!("h{i}.png").into(),
            composite_path: format!("c{i}.png").into(),
            reference_path: format!("r{i}.png").into(),
            iha_name: "DoveNet".into(),
            subset: Subset::Ngiha,
        });
    }
    DatasetManifest::new(entries, dir).unwrap()
}

pub fn clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap()))
}

pub fn open(dir: &Path, n: usize, clock: Arc<ManualClock>) -> RatingService {
    let cfg = ServiceConfig::new(manifest(dir, n), dir.join("ratings.csv"), 17);
    RatingService::open(cfg, clock).unwrap()
}

pub fn csv_rows(dir: &Path) -> usize {
    std::fs::read_to_string(dir.join("ratings.csv"))
        .unwrap()
        .lines()
        .count()
        - 1
}
