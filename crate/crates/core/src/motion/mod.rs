//! Skeleton, pose representation, procedural action data and dataset files.

mod dataset;
pub mod quat;
mod repr;
mod skeleton;
mod synth;

pub use dataset::{Dataset, Sample, DATASET_MAGIC};
pub use repr::{decode, detect_foot_contact, encode, ContactThresholds, Layout, MotionClip, NormStats, Pose};
pub use skeleton::{BipedSpec, Skeleton, FOOT_L, FOOT_R, HAND, HEAD, HIP_L, HIP_R, PELVIS, SPINE};
pub use synth::{synth_clip, synth_dataset, SynthConfig, CLASS_NAMES, FOOT_HEIGHT};
