//! Dense head/eye pose lattices, gaze composition over their product, and
//! the visibility filter on the composed gaze.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::geometry::{angle_diff_deg, compose_gaze, Convention, YawPitch};

/// Reference size of the filtered grid.
pub const TARGET_KEPT: usize = 23_887;
/// Reference composition anchor: head (60, 0) with eye (50, 10) looks at ~(109, 10).
pub const ANCHOR_HEAD: YawPitch = YawPitch::new(60.0, 0.0);
pub const ANCHOR_EYE: YawPitch = YawPitch::new(50.0, 10.0);
pub const ANCHOR_GAZE: YawPitch = YawPitch::new(109.0, 10.0);
pub const ANCHOR_TOLERANCE_DEG: f64 = 2.0;

const BOUND_EPS: f64 = 1e-9;

/// Closed degree interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64, inclusive: bool) -> bool {
        if inclusive {
            v >= self.min - BOUND_EPS && v <= self.max + BOUND_EPS
        } else {
            v > self.min + BOUND_EPS && v < self.max - BOUND_EPS
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub head_min: f64,
    pub head_max: f64,
    pub head_step: f64,
    pub eye_min: f64,
    pub eye_max: f64,
    pub eye_step: f64,
    pub pitch_keep: Interval,
    pub yaw_keep: Interval,
    pub bounds_inclusive: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            head_min: -70.0,
            head_max: 70.0,
            head_step: 10.0,
            eye_min: -50.0,
            eye_max: 50.0,
            eye_step: 10.0,
            pitch_keep: Interval::new(-70.0, 70.0),
            yaw_keep: Interval::new(-120.0, 120.0),
            bounds_inclusive: true,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        axis_values("head", self.head_min, self.head_max, self.head_step)?;
        axis_values("eye", self.eye_min, self.eye_max, self.eye_step)?;
        for (name, iv) in [("pitch_keep", self.pitch_keep), ("yaw_keep", self.yaw_keep)] {
            if !(iv.min.is_finite() && iv.max.is_finite()) || iv.min > iv.max {
                return Err(ConfigError::Grid(format!("{name} [{}, {}] is not an interval", iv.min, iv.max)));
            }
        }
        Ok(())
    }

    pub fn is_reference_default(&self) -> bool {
        *self == GridSpec::default()
    }

    /// Whether a composed gaze falls inside the keep ranges.
    pub fn keeps(&self, gaze: YawPitch) -> bool {
        self.pitch_keep.contains(gaze.pitch, self.bounds_inclusive)
            && self.yaw_keep.contains(gaze.yaw, self.bounds_inclusive)
    }
}

fn axis_values(name: &str, min: f64, max: f64, step: f64) -> Result<Vec<f64>, ConfigError> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) {
        return Err(ConfigError::Grid(format!("{name} range must be finite")));
    }
    if step <= 0.0 {
        return Err(ConfigError::Grid(format!("{name} step must be positive, got {step}")));
    }
    if min > max {
        return Err(ConfigError::Grid(format!("{name} min {min} exceeds max {max}")));
    }
    let n = (max - min) / step;
    if (n - n.round()).abs() > 1e-9 {
        return Err(ConfigError::Grid(format!("{name} range {min}..{max} is not a multiple of step {step}")));
    }
    let n = n.round() as usize;
    Ok((0..=n).map(|i| min + step * i as f64).collect())
}

/// One (head, eye) combination with its composed gaze.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub id: u32,
    pub head: YawPitch,
    pub eye: YawPitch,
    pub gaze: YawPitch,
}

fn lattice(values: &[f64]) -> Vec<YawPitch> {
    values
        .iter()
        .flat_map(|&yaw| values.iter().map(move |&pitch| YawPitch::new(yaw, pitch)))
        .collect()
}

/// Head and eye lattices in ascending (yaw, pitch) order.
pub fn generate_grids(spec: &GridSpec) -> Result<(Vec<YawPitch>, Vec<YawPitch>), ConfigError> {
    spec.validate()?;
    let head = axis_values("head", spec.head_min, spec.head_max, spec.head_step)?;
    let eye = axis_values("eye", spec.eye_min, spec.eye_max, spec.eye_step)?;
    Ok((lattice(&head), lattice(&eye)))
}

/// Every head×eye combination, head-major, with ids assigned in that order.
pub fn enumerate_all(spec: &GridSpec, conv: Convention) -> Result<Vec<PoseSample>, ConfigError> {
    let (heads, eyes) = generate_grids(spec)?;
    Ok(compose_all(&heads, &eyes, conv))
}

fn compose_all(heads: &[YawPitch], eyes: &[YawPitch], conv: Convention) -> Vec<PoseSample> {
    let per_head = eyes.len();
    heads
        .par_iter()
        .enumerate()
        .flat_map_iter(|(hi, &head)| {
            eyes.iter().enumerate().map(move |(ei, &eye)| PoseSample {
                id: (hi * per_head + ei) as u32,
                head,
                eye,
                gaze: compose_gaze(head, eye, conv),
            })
        })
        .collect()
}

/// Enumerated samples whose gaze survives the keep ranges. Ids are those
/// of [`enumerate_all`].
pub fn enumerate_and_filter(spec: &GridSpec, conv: Convention) -> Result<Vec<PoseSample>, ConfigError> {
    let all = enumerate_all(spec, conv)?;
    Ok(all.into_iter().filter(|s| spec.keeps(s.gaze)).collect())
}

/// Like [`enumerate_and_filter`] but with an explicit eye lattice.
pub fn enumerate_with_eyes(
    spec: &GridSpec,
    eyes: &[YawPitch],
    conv: Convention,
) -> Result<Vec<PoseSample>, ConfigError> {
    let (heads, _) = generate_grids(spec)?;
    Ok(compose_all(&heads, eyes, conv).into_iter().filter(|s| spec.keeps(s.gaze)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateResult {
    pub convention: Convention,
    pub pre_filter: usize,
    pub kept: usize,
    pub anchor_gaze: YawPitch,
    pub anchor_error_deg: f64,
    pub anchor_ok: bool,
}

impl CandidateResult {
    pub fn residual(&self) -> i64 {
        self.kept as i64 - TARGET_KEPT as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub target: usize,
    pub candidates: Vec<CandidateResult>,
    pub chosen: Convention,
    pub chosen_kept: usize,
    pub exact: bool,
    pub residual: i64,
    pub notes: Vec<String>,
}

impl SelectionReport {
    /// `key = value` summary, one fact per line.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "target_kept = {}", self.target);
        for c in &self.candidates {
            let _ = writeln!(s, "candidate.{}.pre_filter = {}", c.convention, c.pre_filter);
            let _ = writeln!(s, "candidate.{}.kept = {}", c.convention, c.kept);
            let _ = writeln!(s, "candidate.{}.residual = {}", c.convention, c.residual());
            let _ = writeln!(
                s,
                "candidate.{}.anchor_gaze = {:.4} {:.4}",
                c.convention, c.anchor_gaze.yaw, c.anchor_gaze.pitch
            );
            let _ = writeln!(s, "candidate.{}.anchor_error_deg = {:.4}", c.convention, c.anchor_error_deg);
        }
        let _ = writeln!(s, "chosen = {}", self.chosen);
        let _ = writeln!(s, "chosen.kept = {}", self.chosen_kept);
        let _ = writeln!(s, "exact_match = {}", self.exact);
        let _ = writeln!(s, "residual = {}", self.residual);
        for n in &self.notes {
            let _ = writeln!(s, "note = {n}");
        }
        s
    }
}

/// Evaluates every candidate convention on `spec` and picks the one that
/// reproduces the reference kept count and composition anchor. Falls back to
/// the closest count (among anchor-consistent candidates, when any exist).
pub fn select_convention(spec: &GridSpec) -> Result<(Convention, SelectionReport), ConfigError> {
    let (heads, eyes) = generate_grids(spec)?;
    let pre = heads.len() * eyes.len();
    let candidates: Vec<CandidateResult> = Convention::ALL
        .iter()
        .map(|&conv| {
            let kept = compose_all(&heads, &eyes, conv).iter().filter(|s| spec.keeps(s.gaze)).count();
            let anchor_gaze = compose_gaze(ANCHOR_HEAD, ANCHOR_EYE, conv);
            let anchor_error_deg = angle_diff_deg(anchor_gaze.yaw, ANCHOR_GAZE.yaw)
                .abs()
                .max((anchor_gaze.pitch - ANCHOR_GAZE.pitch).abs());
            CandidateResult {
                convention: conv,
                pre_filter: pre,
                kept,
                anchor_gaze,
                anchor_error_deg,
                anchor_ok: anchor_error_deg <= ANCHOR_TOLERANCE_DEG,
            }
        })
        .collect();

    let mut notes = Vec::new();
    let exact = candidates.iter().find(|c| c.kept == TARGET_KEPT && c.anchor_ok);
    let chosen = match exact {
        Some(c) => c,
        None => {
            let anchored: Vec<&CandidateResult> = candidates.iter().filter(|c| c.anchor_ok).collect();
            let pool: Vec<&CandidateResult> = if anchored.is_empty() {
                notes.push("no candidate reproduces the composition anchor".to_string());
                candidates.iter().collect()
            } else {
                anchored
            };
            // min_by_key keeps the first of equal keys, i.e. candidate order
            let best = pool.into_iter().min_by_key(|c| c.residual().unsigned_abs()).expect("4 candidates");
            notes.push(format!(
                "no candidate reproduces {TARGET_KEPT} kept samples; closest is {} with {} ({:+})",
                best.convention,
                best.kept,
                best.residual()
            ));
            if (best.kept as f64) < 0.5 * TARGET_KEPT as f64 {
                notes.push("kept count far below target".to_string());
            }
            best
        }
    };
    let report = SelectionReport {
        target: TARGET_KEPT,
        chosen: chosen.convention,
        chosen_kept: chosen.kept,
        exact: chosen.kept == TARGET_KEPT,
        residual: chosen.residual(),
        candidates: candidates.clone(),
        notes,
    };
    Ok((report.chosen, report))
}
