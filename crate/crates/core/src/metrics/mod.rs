//! Classical full-reference quality metrics and manifest scoring.

mod gmsd;
mod ssim;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use gmsd::{gms_map, gmsd, gmsm, GMS_C};
pub use ssim::{ms_ssim, ssim, SsimParams, MS_SSIM_MIN_SIDE, MS_SSIM_WEIGHTS};

use crate::error::{Error, Result};
use crate::image::{load_image, ImageBuffer};
use crate::manifest::{DatasetManifest, ImageRole};
use crate::records::MetricScore;

/// Peak value for PSNR on 8-bit data.
pub const PSNR_PEAK: f64 = 255.0;

fn check_same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

/// Mean squared difference over every sample of every channel.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

/// Converts an MSE value to decibels against [`PSNR_PEAK`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10()
    }
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Mse,
    Psnr,
    Ssim,
    MsSsim,
    Gmsd,
    Gmsm,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Mse,
        Metric::Psnr,
        Metric::Ssim,
        Metric::MsSsim,
        Metric::Gmsd,
        Metric::Gmsm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::MsSsim => "ms_ssim",
            Metric::Gmsd => "gmsd",
            Metric::Gmsm => "gmsm",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Mse | Metric::Gmsd)
    }

    /// Scores `test` against `reference`. SSIM-family metrics and GMS run on
    /// BT.601 luminance; MSE/PSNR use every channel (both images are reduced
    /// to luminance when their channel counts differ).
    pub fn compute(self, test: &ImageBuffer, reference: &ImageBuffer) -> Result<f64> {
        let params = SsimParams::default();
        match self {
            Metric::Mse | Metric::Psnr => {
                let (a, b) = if test.channels() == reference.channels() {
                    (test.clone(), reference.clone())
                } else {
                    (test.to_luminance(), reference.to_luminance())
                };
                if self == Metric::Mse {
                    mse(&a, &b)
                } else {
                    psnr(&a, &b)
                }
            }
            Metric::Ssim => ssim(&test.to_luminance(), &reference.to_luminance(), &params),
            Metric::MsSsim => ms_ssim(&test.to_luminance(), &reference.to_luminance(), &params),
            Metric::Gmsd => gmsd(&test.to_luminance(), &reference.to_luminance()),
            Metric::Gmsm => gmsm(&test.to_luminance(), &reference.to_luminance()),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        let key = if key == "mssim" { "ms_ssim".to_string() } else { key };
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

/// Orientation of a metric by name; unregistered names count as higher-is-better.
pub fn higher_is_better(metric_name: &str) -> bool {
    metric_name
        .parse::<Metric>()
        .map(Metric::higher_is_better)
        .unwrap_or(true)
}

/// What to do when a harmonized image and its reference differ in size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResizePolicy {
    /// Bicubically resample the reference to the harmonized image's size.
    #[default]
    ResizeReference,
    /// Treat a size mismatch as an error.
    Strict,
}

#[derive(Debug)]
pub struct EntryError {
    pub image_id: String,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct ScoreRun {
    pub scores: Vec<MetricScore>,
    pub errors: Vec<EntryError>,
}

/// Scores the harmonized image of one entry against its reference.
pub fn score_pair(
    harmonized: &ImageBuffer,
    reference: &ImageBuffer,
    metric: Metric,
    policy: ResizePolicy,
) -> Result<f64> {
    let same_size = (harmonized.width(), harmonized.height()) == (reference.width(), reference.height());
    if same_size {
        return metric.compute(harmonized, reference);
    }
    match policy {
        ResizePolicy::Strict => Err(Error::DimensionMismatch {
            left: harmonized.dims(),
            right: reference.dims(),
        }),
        ResizePolicy::ResizeReference => {
            let resized = reference.resize_bicubic(harmonized.width(), harmonized.height())?;
            metric.compute(harmonized, &resized)
        }
    }
}

/// Scores every manifest entry (harmonized vs reference) in parallel. Results
/// keep manifest order; failing entries are collected instead of aborting.
pub fn score_manifest(manifest: &DatasetManifest, metric: Metric, policy: ResizePolicy) -> ScoreRun {
    let results: Vec<(String, Result<f64>)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let value = load_image(manifest.image_path(entry, ImageRole::Harmonized)).and_then(|h| {
                let r = load_image(manifest.image_path(entry, ImageRole::Reference))?;
                score_pair(&h, &r, metric, policy)
            });
            (entry.image_id.clone(), value)
        })
        .collect();

    let mut run = ScoreRun::default();
    for (image_id, value) in results {
        match value {
            Ok(value) => run.scores.push(MetricScore {
                metric_name: metric.name().to_string(),
                image_id,
                value,
                higher_is_better: metric.higher_is_better(),
            }),
            Err(error) => {
                log::warn!("{}: {error}", image_id);
                run.errors.push(EntryError { image_id, error })
            }
        }
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 1, |x, y, _| f(x, y)).unwrap()
    }

    #[test]
    fn mse_cases() {
        let a = gray(4, 3, |x, y| (x + y) as f64);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 1.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        let zeros = ImageBuffer::filled(5, 5, 1, 0.0).unwrap();
        let full = ImageBuffer::filled(5, 5, 1, 255.0).unwrap();
        assert_eq!(mse(&zeros, &full).unwrap(), 65025.0);
        assert!(matches!(mse(&zeros, &a), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn psnr_cases() {
        let a = gray(4, 4, |x, _| x as f64);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((psnr_from_mse(1.0) - 48.1308).abs() < 1e-3);
        assert!(psnr_from_mse(65025.0).abs() < 1e-12);
    }

    #[test]
    fn metric_names_roundtrip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert_eq!("MSSIM".parse::<Metric>().unwrap(), Metric::MsSsim);
        assert!("vif".parse::<Metric>().is_err());
        assert!(!higher_is_better("gmsd"));
        assert!(higher_is_better("harmonyiqa_nr"));
    }

    #[test]
    fn strict_policy_refuses_mismatch() {
        let a = gray(20, 20, |x, y| (x * y) as f64);
        let b = gray(24, 20, |x, y| (x * y) as f64);
        assert!(score_pair(&a, &b, Metric::Psnr, ResizePolicy::Strict).is_err());
        let v = score_pair(&a, &b, Metric::Psnr, ResizePolicy::ResizeReference).unwrap();
        assert!(v.is_finite());
    }
}
