//! End-to-end run on a synthetic study: ratings, MOS, full-reference metric
//! scores, split, report. Every artifact is written to one directory and is
//! byte-identical across runs with the same configuration.

use std::path::{Path, PathBuf};

use harmony_core::correlation::PlccFit;
use harmony_core::metrics::{score_manifest, Metric, ResizePolicy};
use harmony_core::mos::{run_pipeline, CleaningConfig};
use harmony_core::records::{write_mos, write_ratings, write_scores};

use crate::error::{io, BenchError, Result};
use crate::evaluate::{evaluate, EvalOptions};
use crate::render::render_report;
use crate::split::{split_dataset, SplitOptions};
use crate::synth::{generate_study, simulate_ratings, RaterConfig, StudyConfig, MOS_FILE};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub study: StudyConfig,
    pub raters: RaterConfig,
    pub split_seed: u64,
    /// `None` picks every metric the image size supports.
    pub metrics: Option<Vec<Metric>>,
    pub fit: PlccFit,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            study: StudyConfig::default(),
            raters: RaterConfig::default(),
            split_seed: 0,
            metrics: None,
            fit: PlccFit::Raw,
        }
    }
}

/// Paths of everything a run writes.
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub manifest: PathBuf,
    pub ratings: PathBuf,
    pub mos: PathBuf,
    pub cleaning: PathBuf,
    pub scores: PathBuf,
    pub split: PathBuf,
    pub report_json: PathBuf,
    pub report_md: PathBuf,
}

impl PipelineArtifacts {
    pub fn all(&self) -> [&Path; 8] {
        [
            &self.manifest,
            &self.ratings,
            &self.mos,
            &self.cleaning,
            &self.scores,
            &self.split,
            &self.report_json,
            &self.report_md,
        ]
    }
}

/// MS-SSIM needs five dyadic scales; skip it on images that are too small.
pub fn default_metrics(image_size: usize) -> Vec<Metric> {
    Metric::ALL
        .into_iter()
        .filter(|m| *m != Metric::MsSsim || image_size >= 176)
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

pub fn run_synthetic_pipeline(dir: &Path, cfg: &PipelineConfig) -> Result<PipelineArtifacts> {
    let study = generate_study(dir, &cfg.study)?;
    let manifest = &study.manifest;

    let ratings = simulate_ratings(manifest, &study.latent, &cfg.raters);
    let ratings_path = dir.join("ratings.csv");
    write_ratings(&ratings_path, &ratings)?;

    let outcome = run_pipeline(&ratings, &CleaningConfig::default())?;
    let mos_path = dir.join(MOS_FILE);
    write_mos(&mos_path, &outcome.records)?;
    let cleaning_path = dir.join("cleaning.json");
    write_text(
        &cleaning_path,
        &(serde_json::to_string_pretty(&outcome.summary)? + "\n"),
    )?;

    let metrics = cfg
        .metrics
        .clone()
        .unwrap_or_else(|| default_metrics(cfg.study.image_size));
    let mut scores = Vec::new();
    for metric in metrics {
        let run = score_manifest(manifest, metric, ResizePolicy::Strict);
        if let Some(first) = run.errors.into_iter().next() {
            return Err(BenchError::Config(format!(
                "{} failed on {}: {}",
                metric.name(),
                first.image_id,
                first.error
            )));
        }
        scores.extend(run.scores);
    }
    let scores_path = dir.join("scores.csv");
    write_scores(&scores_path, &scores)?;

    let split = split_dataset(manifest, cfg.split_seed, SplitOptions::default())?;
    let split_path = dir.join("split.json");
    split.write(&split_path)?;

    let opts = EvalOptions {
        fit: cfg.fit,
        ..EvalOptions::default()
    };
    let report = evaluate(&scores, &outcome.records, &split, &opts)?;
    let (md, json) = render_report(&report)?;
    let report_json = dir.join("report.json");
    let report_md = dir.join("report.md");
    write_text(&report_json, &json)?;
    write_text(&report_md, &md)?;

    Ok(PipelineArtifacts {
        manifest: dir.join(crate::synth::MANIFEST_FILE),
        ratings: ratings_path,
        mos: mos_path,
        cleaning: cleaning_path,
        scores: scores_path,
        split: split_path,
        report_json,
        report_md,
    })
}
