use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Example, GradFault, Model};
use crate::error::ModelError;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference derivative of a scalar function.
pub fn central_difference(f: impl Fn(f64) -> f64, w: f64, h: f64) -> f64 {
    (f(w + h) - f(w - h)) / (2.0 * h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub tensors_total: usize,
    pub tensors_covered: usize,
    pub worst: Option<GradCheckEntry>,
}

/// Compares the analytic gradient of the mean batch loss (computed with
/// `fault` injected) against central differences on at least
/// `min_params` parameters, drawn from every tensor. Embedding entries are
/// drawn only from rows the batch actually reads.
pub fn grad_check(
    model: &Model,
    batch: &[Example],
    min_params: usize,
    seed: u64,
    fault: GradFault,
) -> Result<GradCheckReport, ModelError> {
    let mut grad = vec![0.0; model.num_params()];
    model.batch_loss(batch, Some(&mut grad), fault)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = &model.layout.tensors;
    let per_tensor = min_params.div_ceil(tensors.len()).max(1);
    let d = model.config.d_model;
    let mut used_rows: BTreeSet<usize> = batch.iter().flat_map(|e| e.tokens.iter().copied()).collect();
    for a in [&model.config.gaze_anchor, &model.config.head_anchor] {
        if model.config.conditioning.uses_anchors() {
            if let Some(i) = model.vocab.get(a) {
                used_rows.insert(i);
            }
        }
    }
    let used_rows: Vec<usize> = used_rows.into_iter().collect();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for (ti, t) in tensors.iter().enumerate() {
        for _ in 0..per_tensor {
            let local = if t.name == "embedding" {
                let row = *used_rows.choose(&mut rng).expect("batch has tokens");
                row * d + rng.random_range(0..d)
            } else {
                rng.random_range(0..t.len())
            };
            picks.push((ti, t.offset + local));
        }
    }

    let mut probe = model.clone();
    let mut worst: Option<GradCheckEntry> = None;
    let mut covered = BTreeSet::new();
    for &(ti, i) in &picks {
        let w = model.params[i];
        probe.params[i] = w + FD_STEP;
        let up = probe.batch_loss(batch, None, GradFault::None)?;
        probe.params[i] = w - FD_STEP;
        let down = probe.batch_loss(batch, None, GradFault::None)?;
        probe.params[i] = w;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let e = relative_error(grad[i], numeric);
        covered.insert(ti);
        if worst.as_ref().is_none_or(|x| e > x.rel_error) {
            worst = Some(GradCheckEntry {
                tensor: tensors[ti].name.clone(),
                index: i - tensors[ti].offset,
                analytic: grad[i],
                numeric,
                rel_error: e,
            });
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.as_ref().map_or(0.0, |w| w.rel_error),
        checked: picks.len(),
        tensors_total: tensors.len(),
        tensors_covered: covered.len(),
        worst,
    })
}
