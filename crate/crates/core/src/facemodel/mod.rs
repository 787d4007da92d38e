//! Linear face model, landmark projection and the action-unit constants.

pub mod au;
pub mod basis;
pub mod coeff;

pub use au::{
    au_index, emotion_au_template, emotion_au_template_by_name, AuVector, Emotion, AU_IDS,
    AU_NAMES, NUM_AUS, NUM_EMOTIONS,
};
pub use basis::{
    landmarks_csv, pose_transform, rotation_matrix, to_obj, BlendshapeBasis, FrameFit,
    LandmarkRegion, FRAME_SIZE, NUM_LANDMARKS,
};
pub use coeff::*;
