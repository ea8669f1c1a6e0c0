//! Core building blocks for harmonization quality studies: image and dataset
//! I/O, classical full-reference metrics, rank/linear correlation, and the
//! rating-to-MOS cleaning pipeline.

pub mod correlation;
pub mod error;
pub mod image;
pub mod manifest;
pub mod metrics;
pub mod mos;
pub mod records;
pub mod report;

pub use error::{Error, Result};
pub use image::{load_image, to_luminance, ImageBuffer};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, ImageRole, Subset, TripletEntry};
pub use records::{MetricScore, MosRecord, RatingRecord};
pub use report::{CellStats, EvalReport};
