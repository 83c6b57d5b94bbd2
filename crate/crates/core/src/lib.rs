//! Pose-conditioned 3D motion diffusion.
//!
//! The crate covers the full desk-scale pipeline: skeleton geometry and forward
//! kinematics, COCO-17 pose ingestion and synthetic multi-view data, the
//! transformer denoiser, diffusion training and sampling with classifier-free
//! guidance, masked completion, zero-initialized style adapters, and the
//! motion-quality metric suite.

pub mod adapter;
pub mod diffusion;
pub mod edit;
pub mod metrics;
pub mod error;
pub mod net;
pub mod pose;
pub mod render;
pub mod rng;
pub mod skeleton;

pub use error::{Error, Result};
