//! Two-stage training with momentum SGD.

use harmony_core::correlation::{srcc, PairedSample};
use harmony_core::ImageBuffer;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::{HarmonyIqa, Mode, Stage};
use crate::params::{Forward, ParamGrads, ParamId};
use crate::tensor::Tensor;

/// One labelled example. `reference` is only read in full-reference mode.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: ImageBuffer,
    pub reference: Option<ImageBuffer>,
    pub mos: f64,
}

/// A sample with its frozen encoder features computed once.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub features: Tensor,
    pub reference: Option<Tensor>,
    pub mos: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stages {
    One,
    Two,
    Both,
}

impl Stages {
    fn list(self) -> &'static [Stage] {
        match self {
            Stages::One => &[Stage::One],
            Stages::Two => &[Stage::Two],
            Stages::Both => &[Stage::One, Stage::Two],
        }
    }
}

impl std::str::FromStr for Stages {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Stages::One),
            "2" => Ok(Stages::Two),
            "both" => Ok(Stages::Both),
            other => Err(ModelError::Config(format!("stage must be 1, 2 or both, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub epochs: usize,
    pub lr: f64,
    /// Multiply the learning rate by `lr_decay` after every epoch.
    pub lr_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage1: StageSchedule,
    pub stage2: StageSchedule,
    pub batch_size: usize,
    pub momentum: f64,
    /// Global gradient-norm ceiling applied per step.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1: StageSchedule {
                epochs: 8,
                lr: 0.05,
                lr_decay: 0.85,
            },
            stage2: StageSchedule {
                epochs: 12,
                lr: 0.05,
                lr_decay: 0.85,
            },
            batch_size: 8,
            momentum: 0.9,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        for s in [&self.stage1, &self.stage2] {
            if !(s.lr.is_finite() && s.lr >= 0.0 && s.lr_decay > 0.0) {
                return bad("learning rate must be finite and non-negative");
            }
        }
        // NaN must fail too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.grad_clip > 0.0) {
            return bad("gradient clip must be positive");
        }
        Ok(())
    }

    fn schedule(&self, stage: Stage) -> &StageSchedule {
        match stage {
            Stage::One => &self.stage1,
            Stage::Two => &self.stage2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Stage 2 only: SRCC of decoder scores against validation MOS.
    pub val_srcc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self, stage: u8) -> Option<&EpochRecord> {
        self.epochs.iter().rev().find(|e| e.stage == stage)
    }
}

pub fn encode_samples(model: &HarmonyIqa, samples: &[Sample]) -> Result<Vec<Encoded>> {
    samples
        .iter()
        .map(|s| {
            let reference = match (model.mode(), &s.reference) {
                (Mode::Fr, Some(r)) => Some(model.vision_features(r)?),
                (Mode::Fr, None) => return Err(ModelError::MissingReference),
                (Mode::Nr, _) => None,
            };
            Ok(Encoded {
                features: model.vision_features(&s.image)?,
                reference,
                mos: s.mos,
            })
        })
        .collect()
}

/// Loss and parameter gradients for one encoded sample.
pub fn sample_gradients(model: &HarmonyIqa, sample: &Encoded, stage: Stage) -> Result<(f64, ParamGrads)> {
    let mut f = Forward::new(model.store(), stage.trainable());
    let loss = model.sample_loss(&mut f, &sample.features, sample.reference.as_ref(), sample.mos, stage)?;
    let value = f.graph.value(loss).item();
    f.graph.backward(loss);
    Ok((value, f.param_grads()))
}

pub fn sample_loss_value(model: &HarmonyIqa, sample: &Encoded, stage: Stage) -> Result<f64> {
    let mut f = Forward::new(model.store(), crate::params::Trainable::none());
    let loss = model.sample_loss(&mut f, &sample.features, sample.reference.as_ref(), sample.mos, stage)?;
    Ok(f.graph.value(loss).item())
}

struct Sgd {
    momentum: f64,
    velocity: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    fn new(n_params: usize, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: vec![None; n_params],
        }
    }

    fn step(&mut self, model: &mut HarmonyIqa, grads: &[(ParamId, Vec<f64>)], lr: f64, clip: f64) {
        let norm = grads
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let factor = if norm > clip { clip / norm } else { 1.0 };
        let store = model.store_mut();
        for (id, g) in grads {
            let param = store.get_mut(*id);
            debug_assert!(!param.group.is_frozen());
            let v = self.velocity[id.index()].get_or_insert_with(|| vec![0.0; g.len()]);
            for ((vi, gi), p) in v.iter_mut().zip(g).zip(param.value.data_mut()) {
                *vi = self.momentum * *vi + factor * gi;
                *p -= lr * *vi;
            }
            param.grad = Some(Tensor::new(param.value.shape().to_vec(), g.clone()).unwrap());
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean validation loss plus (stage 2) SRCC of decoder scores against MOS.
pub fn validate(model: &HarmonyIqa, val: &[Encoded], stage: Stage) -> Result<(Option<f64>, Option<f64>)> {
    if val.is_empty() {
        return Ok((None, None));
    }
    let losses = val
        .iter()
        .map(|s| sample_loss_value(model, s, stage))
        .collect::<Result<Vec<_>>>()?;
    let srcc_value = if stage == Stage::Two && val.len() >= 2 {
        let preds = val
            .iter()
            .map(|s| model.score_from_features(&s.features, s.reference.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let mos: Vec<f64> = val.iter().map(|s| s.mos).collect();
        PairedSample::new(preds, mos).ok().and_then(|p| srcc(&p).ok())
    } else {
        None
    };
    Ok((Some(mean(&losses)), srcc_value))
}

/// Runs the requested stages in order. The encoder and base LM are never updated.
pub fn train_encoded(
    model: &mut HarmonyIqa,
    train: &[Encoded],
    val: &[Encoded],
    cfg: &TrainConfig,
    stages: Stages,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    for &stage in stages.list() {
        let sched = cfg.schedule(stage).clone();
        let mut opt = Sgd::new(model.store().len(), cfg.momentum);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (u64::from(stage.number()) << 32));
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut lr = sched.lr;
        for epoch in 0..sched.epochs {
            order.shuffle(&mut rng);
            let mut losses = Vec::with_capacity(train.len());
            for batch in order.chunks(cfg.batch_size) {
                let mut acc: ParamGrads = Vec::new();
                for &i in batch {
                    let (loss, grads) = sample_gradients(model, &train[i], stage)?;
                    if !loss.is_finite() {
                        return Err(ModelError::Diverged {
                            stage: stage.number(),
                            epoch,
                            loss,
                        });
                    }
                    losses.push(loss);
                    accumulate(&mut acc, grads);
                }
                let scale = 1.0 / batch.len() as f64;
                for (_, g) in &mut acc {
                    g.iter_mut().for_each(|x| *x *= scale);
                }
                opt.step(model, &acc, lr, cfg.grad_clip);
            }
            let (val_loss, val_srcc) = validate(model, val, stage)?;
            let train_loss = mean(&losses);
            if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
                return Err(ModelError::Diverged {
                    stage: stage.number(),
                    epoch,
                    loss: train_loss,
                });
            }
            log::info!(
                "stage {} epoch {epoch}: train {train_loss:.5} val {val_loss:?} srcc {val_srcc:?}",
                stage.number()
            );
            history.epochs.push(EpochRecord {
                stage: stage.number(),
                epoch,
                train_loss,
                val_loss,
                val_srcc,
            });
            lr *= sched.lr_decay;
        }
        match stage {
            Stage::One => model.state.stage1 = true,
            Stage::Two => model.state.stage2 = true,
        }
    }
    Ok(history)
}

pub fn train(
    model: &mut HarmonyIqa,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    stages: Stages,
) -> Result<TrainHistory> {
    let tr = encode_samples(model, train)?;
    let va = encode_samples(model, val)?;
    train_encoded(model, &tr, &va, cfg, stages)
}

fn accumulate(acc: &mut ParamGrads, grads: ParamGrads) {
    if acc.is_empty() {
        *acc = grads;
        return;
    }
    for (id, g) in grads {
        match acc.iter_mut().find(|(a, _)| *a == id) {
            Some((_, a)) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
            None => acc.push((id, g)),
        }
    }
}
