//! Pinhole camera model.
//!
//! Conventions: camera axes are x right, y down, z forward; a pose maps
//! world to camera as `x_cam = R * x_world + T`; depth values are camera z,
//! not ray length; pixel `(u, v)` has its center at integer coordinates.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorImage, DepthMap, Rgb};
use crate::par;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const DEFAULT_NEAR_PLANE: f64 = 1e-4;

/// Tolerance on `R^T R = I` and `det R = 1`.
const ROTATION_TOLERANCE: f64 = 1e-9;

/// Neighbors whose depth differs by more than this fraction are treated as
/// belonging to another surface when differencing for normals.
pub const DEFAULT_NORMAL_DEPTH_JUMP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Centered principal point with the given vertical field of view.
    pub fn from_fov(width: usize, height: usize, fov_y_degrees: f64) -> Result<Self> {
        let f = 0.5 * height as f64 / (0.5 * fov_y_degrees.to_radians()).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) * 0.5,
            (height as f64 - 1.0) * 0.5,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image size must be non-zero".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::InvalidCamera(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Row-major pixel index for continuous coordinates, rounding to the
    /// nearest pixel center.
    #[inline]
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let x = (u + 0.5).floor();
        let y = (v + 0.5).floor();
        if x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64 {
            Some((x as usize, y as usize))
        } else {
            None
        }
    }

    fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if (width, height) != (self.width, self.height) {
            return Err(Error::DimensionMismatch(format!(
                "image is {width}x{height} but intrinsics expect {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Rigid world-to-camera transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    rotation: Mat3,
    translation: Vec3,
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("pose has non-finite entries".into()));
        }
        let ortho_err = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho_err > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidCamera(format!(
                "rotation not orthonormal (|RtR - I| = {ortho_err:e}, det = {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a pose from a row-major 3x3 rotation and a translation.
    pub fn from_arrays(r: [f64; 9], t: [f64; 3]) -> Result<Self> {
        Self::new(Mat3::from_row_slice(&r), Vec3::from(t))
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction
    /// (the camera's y axis points against it).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up is parallel to the view axis".into()))?;
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Ok(Self {
            rotation,
            translation: -(rotation * eye),
        })
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Row-major rotation entries.
    pub fn rotation_array(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// Same rotation, translation multiplied by `s`.
    pub fn with_scaled_translation(&self, s: f64) -> Self {
        Self {
            rotation: self.rotation,
            translation: self.translation * s,
        }
    }

    /// Camera-to-world transform, returned in the same `R, T` form.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &CameraPose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }
}

/// Intrinsics and pose of one view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: CameraPose) -> Self {
        Self { intrinsics, pose }
    }
}

/// A point recovered from one depth pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldPoint {
    /// Row-major index of the source pixel.
    pub pixel: usize,
    pub position: Vec3,
    pub color: Option<Rgb>,
}

#[inline]
fn backproject(intr: &CameraIntrinsics, x: usize, y: usize, depth: f64) -> Vec3 {
    Vec3::new(
        (x as f64 - intr.cx) * depth / intr.fx,
        (y as f64 - intr.cy) * depth / intr.fy,
        depth,
    )
}

/// Lifts every valid depth pixel to world space, in row-major order.
pub fn unproject(
    depth: &DepthMap,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    rgb: Option<&ColorImage>,
) -> Result<Vec<WorldPoint>> {
    intr.check_dims(depth.width(), depth.height())?;
    if let Some(rgb) = rgb {
        intr.check_dims(rgb.width(), rgb.height())?;
    }
    let w = depth.width();
    let mut out = Vec::with_capacity(depth.valid_count());
    for (i, &d) in depth.raw().iter().enumerate() {
        if d <= 0.0 {
            continue;
        }
        let cam = backproject(intr, i % w, i / w, d);
        out.push(WorldPoint {
            pixel: i,
            position: pose.camera_to_world(&cam),
            color: rgb.map(|c| c.as_slice()[i]),
        });
    }
    Ok(out)
}

/// Continuous image coordinates and camera depth of a projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub in_frustum: bool,
}

impl Projection {
    /// Nearest pixel, only when the point is inside the frustum.
    pub fn pixel(&self, intr: &CameraIntrinsics) -> Option<(usize, usize)> {
        if self.in_frustum {
            intr.pixel_of(self.u, self.v)
        } else {
            None
        }
    }
}

#[inline]
pub fn project_point(p: &Vec3, intr: &CameraIntrinsics, pose: &CameraPose, near: f64) -> Projection {
    let c = pose.world_to_camera(p);
    let u = intr.fx * c.x / c.z + intr.cx;
    let v = intr.fy * c.y / c.z + intr.cy;
    let in_frustum = c.z > near && intr.pixel_of(u, v).is_some();
    Projection {
        u,
        v,
        z: c.z,
        in_frustum,
    }
}

pub fn project(
    points: &[Vec3],
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    near: f64,
) -> Vec<Projection> {
    par::map_collect(points, |_, p| project_point(p, intr, pose, near))
}

/// Unit vector from the camera center toward `point`, in world space.
pub fn view_direction(point: &Vec3, pose: &CameraPose) -> Result<Vec3> {
    let d = point - pose.center();
    let n = d.norm();
    if !(n > 1e-12) {
        return Err(Error::Degenerate(format!(
            "point is {n:e} m from the camera center"
        )));
    }
    Ok(d / n)
}

/// Per-pixel world-space unit normals facing the capturing camera; `None`
/// at invalid pixels.
pub fn estimate_normals(
    depth: &DepthMap,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Vec<Option<Vec3>>> {
    estimate_normals_with(depth, intr, pose, DEFAULT_NORMAL_DEPTH_JUMP)
}

/// [`estimate_normals`] with an explicit relative depth-jump cutoff.
pub fn estimate_normals_with(
    depth: &DepthMap,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    max_depth_jump: f64,
) -> Result<Vec<Option<Vec3>>> {
    intr.check_dims(depth.width(), depth.height())?;
    let (w, h) = depth.dims();
    let raw = depth.raw();
    let points: Vec<Option<Vec3>> = par::map_range(w * h, |i| {
        let d = raw[i];
        (d > 0.0).then(|| pose.camera_to_world(&backproject(intr, i % w, i / w, d)))
    });
    let center = pose.center();

    let normals = par::map_range(w * h, |i| {
        let p = points[i]?;
        let d = raw[i];
        let usable = |j: usize| raw[j] > 0.0 && (raw[j] - d).abs() <= max_depth_jump * d;
        let (x, y) = (i % w, i / w);
        let tangent = |prev: Option<usize>, next: Option<usize>| -> Option<Vec3> {
            let prev = prev.filter(|&j| usable(j));
            let next = next.filter(|&j| usable(j));
            match (prev, next) {
                (Some(a), Some(b)) => Some(points[b]? - points[a]?),
                (None, Some(b)) => Some(points[b]? - p),
                (Some(a), None) => Some(p - points[a]?),
                (None, None) => None,
            }
        };
        let tx = tangent(
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
        );
        let ty = tangent(
            (y > 0).then(|| i - w),
            (y + 1 < h).then(|| i + w),
        );
        let to_point = p - center;
        let fallback = || -to_point.normalize();
        let n = match (tx, ty) {
            (Some(a), Some(b)) => a.cross(&b).try_normalize(1e-300).unwrap_or_else(fallback),
            _ => fallback(),
        };
        Some(if n.dot(&to_point) > 0.0 { -n } else { n })
    });
    Ok(normals)
}
