//! Text-to-gesture synthesis: kinematics, affective features, text encoding,
//! a small reverse-mode autodiff engine, the transformer model and its
//! training loop.

pub mod affect;
pub mod bvh;
pub mod diff;
pub mod error;
pub mod kinematics;
pub mod model;
pub mod motion;
pub mod quat;
pub mod skeleton;
pub mod text;
pub mod train;

pub use error::{Error, Result};
