//! Finite-difference verification of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::model::{HarmonyIqa, Stage};
use crate::params::{Forward, Group, ParamGrads, Trainable};
use crate::train::{sample_loss_value, Encoded};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor so entries with vanishing gradients compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters of the group that received an analytic gradient.
    pub with_gradient: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic and central-difference gradients of the `stage` loss for
/// up to `max_entries` randomly chosen scalars of `group`. For a frozen group
/// nothing is differentiated and `with_gradient` is zero.
pub fn grad_check(
    model: &mut HarmonyIqa,
    sample_in: &Encoded,
    stage: Stage,
    group: Group,
    max_entries: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let ids = model.store().ids_in(group);
    let analytic: ParamGrads = {
        let mut f = Forward::new(model.store(), Trainable::of(&[group]));
        let loss = model.sample_loss(
            &mut f,
            &sample_in.features,
            sample_in.reference.as_ref(),
            sample_in.mos,
            stage,
        )?;
        f.graph.backward(loss);
        f.param_grads()
    };
    let with_gradient = analytic.iter().filter(|(id, _)| ids.contains(id)).count();
    if group.is_frozen() {
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            checked: 0,
            with_gradient,
        });
    }

    // flatten (param, offset) over the group; parameters the loss never touches
    // have an analytic gradient of zero
    let mut slots = Vec::new();
    for id in &ids {
        for j in 0..model.store().value(*id).len() {
            slots.push((*id, j));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, slots.len(), max_entries.min(slots.len()));
    let mut max_rel: f64 = 0.0;
    for k in picks {
        let (id, j) = slots[k];
        let a = analytic.iter().find(|(pid, _)| *pid == id).map_or(0.0, |(_, g)| g[j]);
        let orig = model.store().value(id).data()[j];
        model.store_mut().value_mut(id).data_mut()[j] = orig + FD_STEP;
        let plus = sample_loss_value(model, sample_in, stage)?;
        model.store_mut().value_mut(id).data_mut()[j] = orig - FD_STEP;
        let minus = sample_loss_value(model, sample_in, stage)?;
        model.store_mut().value_mut(id).data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        max_rel = max_rel.max(relative_error(a, numeric));
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        checked: max_entries.min(slots.len()),
        with_gradient,
    })
}

/// Adds Gaussian noise to every parameter of `group`. Used to move LoRA `B`
/// off zero so that gradients with respect to `A` are not trivially zero.
pub fn jitter(model: &mut HarmonyIqa, group: Group, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, std).expect("finite std");
    for id in model.store().ids_in(group) {
        for x in model.store_mut().value_mut(id).data_mut() {
            *x += dist.sample(&mut rng);
        }
    }
}
