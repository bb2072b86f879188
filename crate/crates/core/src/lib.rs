//! Desk-scale laboratory for test-time prompt tuning of a dual-encoder
//! classifier, with a full calibration measurement suite.
//!
//! The model is a frozen pair of small random encoders (text and image
//! towers) sharing an embedding space, driven by a learnable prompt. At test
//! time the prompt is adapted per sample by minimizing the entropy of the
//! averaged prediction over confident augmented views (`tpt`), optionally
//! regularized by text-feature dispersion (`ctpt`) or by an orthogonality
//! penalty on the Gram matrix of the text feature rows (`otpt` and
//! variants). Calibration is measured with ECE, SCE, reliability bins and a
//! temperature-scaling baseline.
//!
//! Everything is deterministic: weights, prompts, datasets and augmentations
//! all derive from explicit seeds through a counter-based generator, and
//! per-sample work is independent so results do not depend on thread count.

pub mod calibration;
pub mod error;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod synthdata;
pub mod tuner;

pub use error::{LabError, Result};
