//! Meta-learned keypoint voting for 6D object pose estimation.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: rigid poses, farthest point sampling, canonical keypoints and
//!   the KNN keypoint graph.
//! - [`posefit`]: SVD least-squares pose recovery and the ADD / ADD-S metrics.
//! - [`clustering`]: mean-shift mode seeking used for keypoint voting.
//! - [`nn`]: dense networks with hand-written backward passes, losses, Adam and
//!   a finite-difference gradient checker.
//! - [`meta`]: the conditional neural process (context encoder, latent
//!   aggregation, segmentation decoder, plain MLP offset decoder).
//! - [`gnn`]: the geometry-aware offset decoder that passes messages over the
//!   keypoint graph.
//! - [`data`]: the synthetic multi-object scene generator and dataset format.
//! - [`pipeline`]: training, inference, evaluation, checkpoints and reports.

pub mod clustering;
pub mod data;
pub mod error;
pub mod geometry;
pub mod gnn;
pub mod meta;
pub mod nn;
pub mod pipeline;
pub mod posefit;

pub use error::{Error, Result};
pub use geometry::{KeypointGraph, KeypointSet, Pose, Vec3, NUM_KEYPOINTS};
