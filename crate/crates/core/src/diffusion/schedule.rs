use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::geometry::YawPitch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 2e-2 }
    }
}

/// Linear β schedule with cumulative products. Index `t` runs 1..=T;
/// `alpha_bar(0)` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub spec: ScheduleSpec,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(spec: ScheduleSpec) -> Result<Self, ModelError> {
        let ScheduleSpec { steps, beta_start, beta_end } = spec;
        if steps < 2 || !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(ModelError::Config(format!(
                "schedule needs T >= 2 and 0 < beta_start < beta_end < 1, got T={steps}, {beta_start}..{beta_end}"
            )));
        }
        let mut betas = vec![0.0; steps + 1];
        let mut alpha_bars = vec![1.0; steps + 1];
        for t in 1..=steps {
            betas[t] = beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64;
            alpha_bars[t] = alpha_bars[t - 1] * (1.0 - betas[t]);
        }
        Ok(Self { spec, betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.spec.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn check_t(&self, t: usize) -> Result<(), ModelError> {
        if t == 0 || t > self.steps() {
            return Err(ModelError::Timestep { t, max: self.steps() });
        }
        Ok(())
    }

    /// Forward noising `√ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
    pub fn q_sample(&self, x0: &[f64; 4], t: usize, eps: &[f64; 4]) -> Result<[f64; 4], ModelError> {
        self.check_t(t)?;
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(std::array::from_fn(|i| a * x0[i] + b * eps[i]))
    }

    /// Evenly strided sub-schedule `t_k = ⌊k·T/steps⌋`, k = 1..=steps.
    pub fn strided(&self, steps: usize) -> Result<Vec<usize>, ModelError> {
        if steps == 0 || steps > self.steps() {
            return Err(ModelError::TooManySteps { steps, max: self.steps() });
        }
        Ok((1..=steps).map(|k| k * self.steps() / steps).collect())
    }
}

/// Degrees per unit for (gaze yaw, gaze pitch, head yaw, head pitch).
pub const POSE_SCALE: [f64; 4] = [120.0, 70.0, 70.0, 70.0];

pub fn normalize_pose(gaze: YawPitch, head: YawPitch) -> [f64; 4] {
    [gaze.yaw / POSE_SCALE[0], gaze.pitch / POSE_SCALE[1], head.yaw / POSE_SCALE[2], head.pitch / POSE_SCALE[3]]
}

/// Inverse of [`normalize_pose`], returning (gaze, head).
pub fn denormalize_pose(x: &[f64; 4]) -> (YawPitch, YawPitch) {
    (
        YawPitch::new(x[0] * POSE_SCALE[0], x[1] * POSE_SCALE[1]),
        YawPitch::new(x[2] * POSE_SCALE[2], x[3] * POSE_SCALE[3]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = NoiseSchedule::new(ScheduleSpec::default()).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 2e-2).abs() < 1e-15);
        for t in 2..=1000 {
            assert!(s.beta(t) > s.beta(t - 1));
        }
        assert!(s.alpha_bar(1000) < s.alpha_bar(1) && s.alpha_bar(1) <= 1.0);
        assert!(s.check_t(0).is_err() && s.check_t(1001).is_err());
    }

    #[test]
    fn q_sample_examples() {
        let s = NoiseSchedule::new(ScheduleSpec::default()).unwrap();
        let x0 = [0.3, -0.2, 0.9, -1.0];
        let eps = [1.0, -1.0, 0.5, 2.0];
        let x1 = s.q_sample(&x0, 1, &eps).unwrap();
        for i in 0..4 {
            assert!((x1[i] - x0[i]).abs() <= s.beta(1).sqrt() * eps[i].abs() + s.beta(1) * x0[i].abs());
        }
        let z = s.q_sample(&x0, 500, &[0.0; 4]).unwrap();
        for i in 0..4 {
            assert_eq!(z[i], s.alpha_bar(500).sqrt() * x0[i]);
        }
        // the t where ᾱ is closest to 0.5, checked against its own ᾱ
        let t = (1..=1000).min_by(|&a, &b| (s.alpha_bar(a) - 0.5).abs().total_cmp(&(s.alpha_bar(b) - 0.5).abs())).unwrap();
        let z = s.q_sample(&[0.0; 4], t, &eps).unwrap();
        for i in 0..4 {
            assert!((z[i] - (1.0 - s.alpha_bar(t)).sqrt() * eps[i]).abs() < 1e-15);
        }
        assert!(matches!(s.q_sample(&x0, 0, &eps), Err(ModelError::Timestep { .. })));
    }

    #[test]
    fn strides() {
        let s = NoiseSchedule::new(ScheduleSpec::default()).unwrap();
        let st = s.strided(50).unwrap();
        assert_eq!(st.len(), 50);
        assert_eq!((st[0], st[49]), (20, 1000));
        assert_eq!(s.strided(1000).unwrap(), (1..=1000).collect::<Vec<_>>());
        assert!(s.strided(1001).is_err());
    }

    #[test]
    fn normalization_inverts() {
        let (g, h) = (YawPitch::new(-117.3, 41.0), YawPitch::new(70.0, -70.0));
        let (g2, h2) = denormalize_pose(&normalize_pose(g, h));
        assert!((g2.yaw - g.yaw).abs() < 1e-9 && (h2.pitch - h.pitch).abs() < 1e-9);
    }
}
