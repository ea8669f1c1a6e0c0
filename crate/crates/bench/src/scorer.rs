//! Glue between manifests and the learned scorer.

use std::collections::{BTreeSet, HashMap};

use harmony_core::{load_image, DatasetManifest, ImageBuffer, ImageRole, MetricScore, MosRecord};
use harmony_model::train::{encode_samples, train_encoded};
use harmony_model::{HarmonyIqa, Mode, ModelConfig, Sample, Stages, TrainConfig, TrainHistory};

use crate::error::{BenchError, Result};

/// Metric name under which model predictions are reported.
pub const MODEL_METRIC: &str = "harmonyiqa";

/// Brings an image to the encoder's input: three channels, square, `size` px.
pub fn fit_image(img: &ImageBuffer, size: usize) -> Result<ImageBuffer> {
    let rgb = match img.channels() {
        3 => img.clone(),
        1 => ImageBuffer::from_fn(img.width(), img.height(), 3, |x, y, _| img.get(x, y, 0))?,
        _ => ImageBuffer::from_fn(img.width(), img.height(), 3, |x, y, c| img.get(x, y, c))?,
    };
    if rgb.width() == size && rgb.height() == size {
        Ok(rgb)
    } else {
        Ok(rgb.resize_bicubic(size, size)?)
    }
}

fn selected<'a>(manifest: &'a DatasetManifest, ids: Option<&BTreeSet<&str>>) -> Vec<&'a harmony_core::TripletEntry> {
    manifest
        .entries
        .iter()
        .filter(|e| ids.is_none_or(|s| s.contains(e.image_id.as_str())))
        .collect()
}

/// Loads the selected entries as training samples. Every one needs a MOS.
pub fn load_samples(
    manifest: &DatasetManifest,
    mos: &[MosRecord],
    ids: Option<&BTreeSet<&str>>,
    config: &ModelConfig,
) -> Result<Vec<Sample>> {
    let by_id: HashMap<&str, f64> = mos.iter().map(|m| (m.image_id.as_str(), m.mos)).collect();
    let entries = selected(manifest, ids);
    let missing: Vec<String> = entries
        .iter()
        .filter(|e| !by_id.contains_key(e.image_id.as_str()))
        .map(|e| e.image_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(BenchError::MissingPairs {
            metric: "mos".into(),
            ids: missing,
        });
    }
    let size = config.vision.image_size;
    entries
        .into_iter()
        .map(|e| {
            let image = fit_image(&load_image(manifest.image_path(e, ImageRole::Harmonized))?, size)?;
            let reference = match config.mode {
                Mode::Fr => Some(fit_image(
                    &load_image(manifest.image_path(e, ImageRole::Reference))?,
                    size,
                )?),
                Mode::Nr => None,
            };
            Ok(Sample {
                image,
                reference,
                mos: by_id[e.image_id.as_str()],
            })
        })
        .collect()
}

/// Builds a fresh model and trains it on `train_ids` (or everything),
/// validating on `val_ids` when given.
pub fn train_model(
    manifest: &DatasetManifest,
    mos: &[MosRecord],
    train_ids: Option<&BTreeSet<&str>>,
    val_ids: Option<&BTreeSet<&str>>,
    config: ModelConfig,
    train_cfg: &TrainConfig,
    stages: Stages,
) -> Result<(HarmonyIqa, TrainHistory)> {
    let mut model = HarmonyIqa::new(config)?;
    let history = continue_training(&mut model, manifest, mos, train_ids, val_ids, train_cfg, stages)?;
    Ok((model, history))
}

/// Trains an existing model further, e.g. stage 2 on a stage-1 checkpoint.
pub fn continue_training(
    model: &mut HarmonyIqa,
    manifest: &DatasetManifest,
    mos: &[MosRecord],
    train_ids: Option<&BTreeSet<&str>>,
    val_ids: Option<&BTreeSet<&str>>,
    train_cfg: &TrainConfig,
    stages: Stages,
) -> Result<TrainHistory> {
    let config = model.config().clone();
    let train = load_samples(manifest, mos, train_ids, &config)?;
    if train.is_empty() {
        return Err(BenchError::Config("no training images selected".into()));
    }
    let val = match val_ids {
        Some(ids) => load_samples(manifest, mos, Some(ids), &config)?,
        None => Vec::new(),
    };
    let tr = encode_samples(model, &train)?;
    let va = encode_samples(model, &val)?;
    Ok(train_encoded(model, &tr, &va, train_cfg, stages)?)
}

/// Decoder scores for the selected entries, in manifest order.
pub fn predict_scores(
    model: &HarmonyIqa,
    manifest: &DatasetManifest,
    ids: Option<&BTreeSet<&str>>,
    metric_name: &str,
) -> Result<Vec<MetricScore>> {
    let size = model.config().vision.image_size;
    selected(manifest, ids)
        .into_iter()
        .map(|e| {
            let image = fit_image(&load_image(manifest.image_path(e, ImageRole::Harmonized))?, size)?;
            let reference = match model.mode() {
                Mode::Fr => Some(fit_image(
                    &load_image(manifest.image_path(e, ImageRole::Reference))?,
                    size,
                )?),
                Mode::Nr => None,
            };
            Ok(MetricScore {
                metric_name: metric_name.to_string(),
                image_id: e.image_id.clone(),
                value: model.predict_score(&image, reference.as_ref())?,
                higher_is_better: true,
            })
        })
        .collect()
}
