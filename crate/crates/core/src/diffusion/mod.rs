//! Text-conditioned diffusion over 4-D (gaze, head) pose vectors.

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod sample;
pub mod schedule;
pub mod train;
pub mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{Conditioning, Example, GradFault, Model, ModelConfig};
pub use sample::{ddim_sample, ddim_sample_raw};
pub use schedule::{denormalize_pose, normalize_pose, NoiseSchedule, ScheduleSpec};
pub use train::{train, TrainConfig, TrainItem, TrainReport, Trainer};
pub use vocab::Vocab;
