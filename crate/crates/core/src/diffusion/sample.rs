use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::Model;
use super::schedule::denormalize_pose;
use crate::error::ModelError;
use crate::geometry::YawPitch;

/// Deterministic DDIM over an evenly strided sub-schedule. Returns the
/// final x0 estimate before clamping.
pub fn ddim_sample_raw(model: &Model, cond: &[f64], steps: usize, seed: u64) -> Result<[f64; 4], ModelError> {
    let taus = model.schedule.strided(steps)?;
    Ok(ddim_with(|t| model.schedule.alpha_bar(t), &taus, seed, |x, t| model.predict_eps(x, t, cond)))
}

/// The DDIM recursion with an arbitrary noise predictor.
pub fn ddim_with(
    alpha_bar: impl Fn(usize) -> f64,
    taus: &[usize],
    seed: u64,
    mut eps: impl FnMut(&[f64; 4], usize) -> [f64; 4],
) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let mut x0 = x;
    for k in (0..taus.len()).rev() {
        let t = taus[k];
        let ab = alpha_bar(t);
        let ab_prev = if k == 0 { 1.0 } else { alpha_bar(taus[k - 1]) };
        let e = eps(&x, t);
        x0 = std::array::from_fn(|i| (x[i] - (1.0 - ab).sqrt() * e[i]) / ab.sqrt());
        x = std::array::from_fn(|i| ab_prev.sqrt() * x0[i] + (1.0 - ab_prev).sqrt() * e[i]);
    }
    x0
}

/// Samples a (gaze, head) pose in degrees for a condition vector.
pub fn ddim_sample(model: &Model, cond: &[f64], steps: usize, seed: u64) -> Result<(YawPitch, YawPitch), ModelError> {
    let x0 = ddim_sample_raw(model, cond, steps, seed)?;
    let clamped = x0.map(|v| v.clamp(-1.0, 1.0));
    Ok(denormalize_pose(&clamped))
}

/// The initial noise `x_T` drawn for `seed`.
pub fn initial_noise(seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| rng.sample(StandardNormal))
}
