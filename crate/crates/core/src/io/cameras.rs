//! Camera trajectories as JSON: an array of
//! `{fx, fy, cx, cy, width, height, R: [9 row-major], T: [3]}`.

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraIntrinsics, CameraPose};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    #[serde(rename = "T")]
    pub t: [f64; 3],
}

impl CameraRecord {
    pub fn from_camera(c: &Camera) -> Self {
        let i = &c.intrinsics;
        Self {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
            r: c.pose.rotation_array(),
            t: c.pose.translation_array(),
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        Ok(Camera::new(
            CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?,
            CameraPose::from_arrays(self.r, self.t)?,
        ))
    }
}

pub fn read_cameras(json: &str) -> Result<Vec<Camera>> {
    let records: Vec<CameraRecord> = serde_json::from_str(json)?;
    records.iter().map(CameraRecord::to_camera).collect()
}

pub fn write_cameras(cameras: &[Camera]) -> Result<String> {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from_camera).collect();
    Ok(serde_json::to_string_pretty(&records)?)
}
