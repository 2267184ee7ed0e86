//! Video feature datasets: in-memory sample types, a little-endian binary
//! on-disk format, a synthetic clip generator with recoverable ground truth,
//! and the frame-dropping augmenter used for the missing-data studies.

mod format;
mod missing;
mod synth;

use crate::autodiff::Tensor;
use thiserror::Error;

pub use format::{read_dataset, write_dataset, Manifest, ManifestEntry};
pub use missing::{apply_missing, subset, MissingSpec};
pub use synth::{gen_synthetic, gen_synthetic_traced, GenConfig, LatentTrajectory};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("format: {0}")]
    Format(String),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

/// Per-frame features: one row per tracked object plus a frame-level context
/// vector. `observed == false` means the frame was dropped by augmentation;
/// its tensors are zero-filled but keep their shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    /// [n, d] object features.
    pub objects: Tensor,
    /// [d] frame context.
    pub context: Tensor,
    pub observed: bool,
}

/// One annotated clip. `tau` is the 1-based accident frame and is present
/// exactly when `label` is true.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub fps: f32,
    pub label: bool,
    pub tau: Option<u32>,
    pub frames: Vec<FrameFeatures>,
}

impl VideoSample {
    pub fn t_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_objects(&self) -> usize {
        self.frames[0].objects.shape()[0]
    }

    pub fn feat_dim(&self) -> usize {
        self.frames[0].context.len()
    }

    /// Structural checks shared by the generator, the reader, and the writer.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.frames.is_empty() {
            return Err(DataError::InvalidArg(format!("video {}: zero frames", self.id)));
        }
        let n = self.frames[0].objects.shape().first().copied().unwrap_or(0);
        let d = self.frames[0].context.len();
        if n == 0 || d == 0 {
            return Err(DataError::InvalidArg(format!(
                "video {}: empty object or feature dimension",
                self.id
            )));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.objects.shape() != [n, d] {
                return Err(DataError::InvalidArg(format!(
                    "video {}: frame {} object shape {:?}, expected [{n}, {d}]",
                    self.id,
                    t + 1,
                    f.objects.shape()
                )));
            }
            if f.context.shape() != [d] {
                return Err(DataError::InvalidArg(format!(
                    "video {}: frame {} context shape {:?}, expected [{d}]",
                    self.id,
                    t + 1,
                    f.context.shape()
                )));
            }
        }
        match (self.label, self.tau) {
            (true, Some(tau)) if tau >= 1 && tau as usize <= self.frames.len() => {}
            (true, tau) => {
                return Err(DataError::InvalidArg(format!(
                    "video {}: positive needs tau in 1..=T, got {tau:?}",
                    self.id
                )))
            }
            (false, None) => {}
            (false, Some(_)) => {
                return Err(DataError::InvalidArg(format!(
                    "video {}: negative must not carry tau",
                    self.id
                )))
            }
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(DataError::InvalidArg(format!(
                "video {}: fps must be positive, got {}",
                self.id, self.fps
            )));
        }
        Ok(())
    }
}
