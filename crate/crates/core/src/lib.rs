//! Text-of-gaze toolkit: dense head/eye pose grids with composed gaze
//! labels, natural-language annotation, face-sketch rendering, and a small
//! text-conditioned pose diffusion model with its evaluation harness.

pub mod error;
pub mod geometry;
pub mod grid;
pub mod annotation;
pub mod numfmt;
pub mod dataset;
pub mod sketch;
pub mod diffusion;
pub mod eval;

pub use error::*;
pub use geometry::{angular_error_deg, compose_gaze, yawpitch_to_vec, vec_to_yawpitch, Convention, YawPitch};
pub use grid::{GridSpec, PoseSample};
