//! Accident anticipation on per-frame object/context feature streams.
//!
//! The model watches a clip frame by frame and emits a rising accident
//! probability ahead of the event: object features pass through a
//! recurrence-conditioned attention stage, the frame-level context vector
//! through a frequency-domain gating block, and a two-layer GRU with temporal
//! attention over its own hidden history turns both into per-frame scores.
//! Training balances an exponentially front-weighted anticipation loss against
//! a sequence-level consistency head via learned uncertainty weights.
//!
//! Everything numeric runs on the crate's own f64 tape (see [`autodiff`]), so
//! training, evaluation, and checkpoints are bit-reproducible under a seed.

pub mod autodiff;
pub mod data;

pub use autodiff::{ComplexTensor, Tensor};
