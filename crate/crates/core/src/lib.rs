//! Monocular face capture and conditioning for portrait video re-animation.
//!
//! The crate covers the parametric head model, its software renderer, the
//! analysis-by-synthesis tracker, relative parameter transfer between
//! performances and the space-time conditioning volumes consumed by the
//! translation network.

pub mod conditioning;
pub mod error;
pub mod face_model;
pub mod image_formation;
pub mod reconstruction;
pub mod transfer;

pub use error::{Error, Result};
