//! Geometric core for world-consistent RGB-D video generation.
//!
//! The crate keeps an expandable point-cloud *world cache* of everything
//! generated so far, renders it into upcoming cameras as partial RGB-D
//! conditions, schedules long trajectories as half-overlapping clips around a
//! pluggable [`sampler::Denoiser`], and aligns monocular depth estimates to a
//! common metric scale.
//!
//! Module map:
//! - [`camera`]: pinhole intrinsics, rigid poses, (un)projection, normals.
//! - [`render`]: z-buffer point splatting and visibility classification.
//! - [`cache`]: the world cache with normal-based point culling.
//! - [`condition`]: partial RGB-D conditions and the height-packed layout.
//! - [`sampler`]: clip scheduling and auto-regressive smooth sampling.
//! - [`align`]: disparity least squares and quantile metric scaling.
//! - [`synthetic`]: analytic ray-cast scenes and brute-force oracles.
//! - [`io`]: PFM, PLY, camera JSON and the extern-denoiser wire protocol.

pub mod align;
pub mod cache;
pub mod camera;
pub mod condition;
pub mod error;
pub mod image;
pub mod io;
mod par;
pub mod render;
pub mod sampler;
pub mod synthetic;

pub use cache::{CacheSummary, CachedPoint, CullingConfig, UpdateStats, WorldCache};
pub use camera::{Camera, CameraIntrinsics, CameraPose, Mat3, Vec3};
pub use error::{Error, Result};
pub use image::{ColorImage, DepthMap, Grid, Mask, Rgb, RgbdFrame};
pub use render::{RenderOutput, SplatConfig, Visibility};
