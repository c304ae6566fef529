//! On-disk and on-wire formats.

pub mod cameras;
pub mod pfm;
pub mod ply;
pub mod protocol;

pub use cameras::{read_cameras, write_cameras, CameraRecord};
pub use pfm::{read_pfm, write_pfm, Pfm};
pub use ply::{read_cache_ply, write_cache_ply};
