//! Emotion-controllable talking-face coefficient pipeline.
//!
//! Audio features are split into content and emotion by AU-anchored
//! contrastive training, face-model coefficients are predicted per frame
//! under an (emotion, intensity label, window length) control, and a
//! separately trained mapping turns coefficients into latent keypoints.
//! Everything is trained and checked on a synthetic corpus whose
//! factorization is known.

pub mod csvio;
pub mod decoupler;
pub mod dsp;
pub mod error;
pub mod evalharness;
pub mod facemodel;
pub mod finegrain;
pub mod gradsuite;
pub mod mappingnet;
pub mod model;
pub mod predictor;
pub mod synthdata;
pub mod training;

pub use error::{CoreError, Result};
