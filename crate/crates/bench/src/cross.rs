//! Train on one dataset, evaluate on another.

use std::path::Path;

use harmony_core::correlation::PlccFit;
use harmony_core::records::read_mos;
use harmony_core::{load_manifest, DatasetManifest, EvalReport, MosRecord};
use harmony_model::{ModelConfig, Stages, TrainConfig};

use crate::error::{BenchError, Result};
use crate::evaluate::{evaluate, EvalOptions};
use crate::scorer::{predict_scores, train_model};
use crate::split::SplitSpec;
use crate::synth::{MANIFEST_FILE, MOS_FILE};

/// A manifest together with its MOS table.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub manifest: DatasetManifest,
    pub mos: Vec<MosRecord>,
}

impl Dataset {
    /// Reads `manifest.jsonl` and `mos.csv` from a directory; the directory
    /// name becomes the dataset name.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = load_manifest(dir.join(MANIFEST_FILE))?;
        let mos = read_mos(dir.join(MOS_FILE))?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        Ok(Self { name, manifest, mos })
    }
}

#[derive(Debug, Clone, Default)]
pub struct CrossEvalConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fit: PlccFit,
}

/// Row label of a cross-dataset result.
pub fn cross_label(train: &str, test: &str) -> String {
    format!("{train}/{test}")
}

/// Trains on every image of `train` and reports correlations on every image
/// of `test`.
pub fn cross_eval(train: &Dataset, test: &Dataset, cfg: &CrossEvalConfig) -> Result<EvalReport> {
    if test.manifest.is_empty() {
        return Err(BenchError::EmptyTestSet);
    }
    let (model, _) = train_model(
        &train.manifest,
        &train.mos,
        None,
        None,
        cfg.model.clone(),
        &cfg.train,
        Stages::Both,
    )?;
    let label = cross_label(&train.name, &test.name);
    let scores = predict_scores(&model, &test.manifest, None, &label)?;
    let opts = EvalOptions {
        fit: cfg.fit,
        ..EvalOptions::default()
    };
    evaluate(&scores, &test.mos, &SplitSpec::all_test(&test.manifest), &opts)
}

/// The degenerate case of one dataset: train on the train fold of `split`,
/// report on its test fold.
pub fn cross_eval_split(data: &Dataset, split: &SplitSpec, cfg: &CrossEvalConfig) -> Result<EvalReport> {
    if split.test_ids.is_empty() {
        return Err(BenchError::EmptyTestSet);
    }
    let train_ids = split.train_set();
    let test_ids = split.test_set();
    let (model, _) = train_model(
        &data.manifest,
        &data.mos,
        Some(&train_ids),
        None,
        cfg.model.clone(),
        &cfg.train,
        Stages::Both,
    )?;
    let label = cross_label(&data.name, &data.name);
    let scores = predict_scores(&model, &data.manifest, Some(&test_ids), &label)?;
    let opts = EvalOptions {
        fit: cfg.fit,
        ..EvalOptions::default()
    };
    evaluate(&scores, &data.mos, split, &opts)
}
