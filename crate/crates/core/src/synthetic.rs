//! Procedural ground truth: analytic ray-cast scenes, camera trajectories,
//! and brute-force reference implementations used as test oracles.
//!
//! Geometry here is written on plain `[f64; 3]` arrays and does not call
//! into [`crate::camera`] or [`crate::render`] apart from constructing
//! trajectory poses, so it can serve as an independent check on them.

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraIntrinsics, CameraPose, Vec3};
use crate::error::{Error, Result};
use crate::image::{DepthMap, Grid, Rgb, RgbdFrame};
use crate::par;
use crate::render::{SplatConfig, Visibility};

/// Largest instance the brute-force oracles accept.
pub const ORACLE_SIZE_LIMIT: usize = 1_000_000;

const RAY_NEAR: f64 = 1e-4;

/// Checker cells are offset by this fraction of a period so axis-aligned
/// surfaces do not sit on cell boundaries.
const CHECKER_PHASE: f64 = std::f64::consts::FRAC_1_PI;

type V3 = [f64; 3];

#[inline]
fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
#[inline]
fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
#[inline]
fn mul(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
#[inline]
fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
#[inline]
fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
/// `M v` for a row-major 3x3.
#[inline]
fn mat_vec(m: &[f64; 9], v: V3) -> V3 {
    [
        m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
        m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
        m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
    ]
}
/// `Mᵀ v` for a row-major 3x3.
#[inline]
fn mat_t_vec(m: &[f64; 9], v: V3) -> V3 {
    [
        m[0] * v[0] + m[3] * v[1] + m[6] * v[2],
        m[1] * v[0] + m[4] * v[1] + m[7] * v[2],
        m[2] * v[0] + m[5] * v[1] + m[8] * v[2],
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Unbounded plane.
    Plane { point: V3, normal: V3 },
    /// Parallelogram `center + a u + b v` with `|a|, |b| <= 1`.
    Rect { center: V3, u: V3, v: V3 },
    /// Oriented box; `rotation` (row-major) maps box axes to world.
    Box {
        center: V3,
        half_size: V3,
        #[serde(default)]
        rotation: Option<[f64; 9]>,
    },
    Sphere { center: V3, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Albedo {
    Solid { color: Rgb },
    /// 3D checkerboard with cubic cells of side `period`.
    Checker { period: f64, a: Rgb, b: Rgb },
}

impl Albedo {
    fn at(&self, p: V3) -> Rgb {
        match self {
            Albedo::Solid { color } => *color,
            Albedo::Checker { period, a, b } => {
                let cell: i64 = p
                    .iter()
                    .map(|c| (c / period + CHECKER_PHASE).floor() as i64)
                    .sum();
                if cell.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: Albedo,
}

/// A set of primitives; rays that miss everything produce invalid depth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.primitives.iter().enumerate() {
            let bad = |why: &str| Err(Error::InvalidInput(format!("primitive {i}: {why}")));
            match &p.shape {
                Shape::Plane { point, normal } => {
                    if !finite(point) || !finite(normal) || dot(*normal, *normal) == 0.0 {
                        return bad("plane needs a finite point and non-zero normal");
                    }
                }
                Shape::Rect { center, u, v } => {
                    let n = cross(*u, *v);
                    if !finite(center) || !finite(u) || !finite(v) || dot(n, n) == 0.0 {
                        return bad("rect axes must be finite and independent");
                    }
                }
                Shape::Box {
                    center,
                    half_size,
                    rotation,
                } => {
                    if !finite(center) || !half_size.iter().all(|h| h.is_finite() && *h > 0.0) {
                        return bad("box needs a finite center and positive half sizes");
                    }
                    if let Some(r) = rotation {
                        if CameraPose::from_arrays(*r, [0.0; 3]).is_err() {
                            return bad("box rotation is not a rotation");
                        }
                    }
                }
                Shape::Sphere { center, radius } => {
                    if !finite(center) || !(radius.is_finite() && *radius > 0.0) {
                        return bad("sphere needs a finite center and positive radius");
                    }
                }
            }
            if let Albedo::Checker { period, .. } = p.albedo {
                if !(period > 0.0 && period.is_finite()) {
                    return bad("checker period must be positive");
                }
            }
        }
        Ok(())
    }

    /// Nearest hit along `origin + t dir`, as `(t, primitive index)`.
    pub fn intersect(&self, origin: V3, dir: V3) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(t) = intersect_shape(&p.shape, origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }
}

fn intersect_shape(shape: &Shape, o: V3, d: V3) -> Option<f64> {
    let t = match shape {
        Shape::Plane { point, normal } => {
            let denom = dot(d, *normal);
            if denom.abs() < 1e-15 {
                return None;
            }
            dot(sub(*point, o), *normal) / denom
        }
        Shape::Rect { center, u, v } => {
            let n = cross(*u, *v);
            let denom = dot(d, n);
            if denom.abs() < 1e-15 {
                return None;
            }
            let t = dot(sub(*center, o), n) / denom;
            let q = sub(add(o, mul(d, t)), *center);
            let a = dot(q, *u) / dot(*u, *u);
            let b = dot(q, *v) / dot(*v, *v);
            if a.abs() > 1.0 || b.abs() > 1.0 {
                return None;
            }
            t
        }
        Shape::Box {
            center,
            half_size,
            rotation,
        } => {
            let (lo, ld) = match rotation {
                Some(r) => (mat_t_vec(r, sub(o, *center)), mat_t_vec(r, d)),
                None => (sub(o, *center), d),
            };
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            for k in 0..3 {
                if ld[k] == 0.0 {
                    if lo[k].abs() > half_size[k] {
                        return None;
                    }
                    continue;
                }
                let a = (-half_size[k] - lo[k]) / ld[k];
                let b = (half_size[k] - lo[k]) / ld[k];
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
            if t0 > t1 {
                return None;
            }
            if t0 > RAY_NEAR {
                t0
            } else {
                t1
            }
        }
        Shape::Sphere { center, radius } => {
            let oc = sub(o, *center);
            let a = dot(d, d);
            let b = dot(oc, d);
            let c = dot(oc, oc) - radius * radius;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            let near = (-b - s) / a;
            if near > RAY_NEAR {
                near
            } else {
                (-b + s) / a
            }
        }
    };
    (t > RAY_NEAR && t.is_finite()).then_some(t)
}

/// Ray origin and direction through pixel `(x, y)`, scaled so the direction
/// has unit camera-space z: the hit parameter is the z-depth.
fn pixel_ray(intr: &CameraIntrinsics, pose: &CameraPose, x: usize, y: usize) -> (V3, V3) {
    let r = pose.rotation_array();
    let t = pose.translation_array();
    let dc = [
        (x as f64 - intr.cx) / intr.fx,
        (y as f64 - intr.cy) / intr.fy,
        1.0,
    ];
    (mul(mat_t_vec(&r, t), -1.0), mat_t_vec(&r, dc))
}

/// Exact depth and albedo for one camera.
pub fn render_view(scene: &SceneSpec, camera: &Camera) -> Result<RgbdFrame> {
    let intr = &camera.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let pixels: Vec<(f64, Rgb)> = par::map_range(w * h, |i| {
        let (o, d) = pixel_ray(intr, &camera.pose, i % w, i / w);
        match scene.intersect(o, d) {
            Some((t, k)) => (t, scene.primitives[k].albedo.at(add(o, mul(d, t)))),
            None => (0.0, [0.0; 3]),
        }
    });
    let (depth, rgb): (Vec<f64>, Vec<Rgb>) = pixels.into_iter().unzip();
    RgbdFrame::new(Grid::from_vec(w, h, rgb)?, DepthMap::new(w, h, depth)?)
}

fn default_up() -> V3 {
    [0.0, 1.0, 0.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub eye: V3,
    pub target: V3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Circle of `radius` around `center` in the horizontal plane, lifted
    /// by `height`, sweeping `degrees` from `start_degrees` (end exclusive).
    /// Cameras look at `target`, or at `center` when absent.
    Orbit {
        center: V3,
        radius: f64,
        degrees: f64,
        #[serde(default)]
        start_degrees: f64,
        #[serde(default)]
        height: f64,
        #[serde(default)]
        target: Option<V3>,
    },
    /// Straight move of `distance` along `axis` from `start`, looking along
    /// `look` (end inclusive).
    Dolly {
        start: V3,
        axis: V3,
        distance: f64,
        look: V3,
    },
    /// Piecewise-linear interpolation of eye and target (end inclusive).
    LookAtPath { waypoints: Vec<Waypoint> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub frames: usize,
    pub intrinsics: CameraIntrinsics,
    #[serde(default = "default_up")]
    pub up: V3,
}

impl TrajectorySpec {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        if self.frames == 0 {
            return Err(Error::InvalidInput("trajectory needs at least one frame".into()));
        }
        self.intrinsics.validate()?;
        let up = Vec3::from(self.up);
        let n = self.frames;
        let frac = |i: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let mut cams = Vec::with_capacity(n);
        for i in 0..n {
            let (eye, target) = match &self.kind {
                TrajectoryKind::Orbit {
                    center,
                    radius,
                    degrees,
                    start_degrees,
                    height,
                    target,
                } => {
                    if !(*radius > 0.0) {
                        return Err(Error::InvalidInput("orbit radius must be positive".into()));
                    }
                    let theta = (start_degrees + degrees * i as f64 / n as f64).to_radians();
                    let eye = add(*center, [radius * theta.sin(), *height, -radius * theta.cos()]);
                    (eye, target.unwrap_or(*center))
                }
                TrajectoryKind::Dolly {
                    start,
                    axis,
                    distance,
                    look,
                } => {
                    let len = dot(*axis, *axis).sqrt();
                    if !(*distance > 0.0) || len == 0.0 {
                        return Err(Error::InvalidInput(
                            "dolly needs a positive distance and non-zero axis".into(),
                        ));
                    }
                    let eye = add(*start, mul(*axis, distance * frac(i) / len));
                    (eye, add(eye, *look))
                }
                TrajectoryKind::LookAtPath { waypoints } => {
                    if waypoints.is_empty() {
                        return Err(Error::InvalidInput("look-at path has no waypoints".into()));
                    }
                    let s = frac(i) * (waypoints.len() - 1) as f64;
                    let k = (s.floor() as usize).min(waypoints.len().saturating_sub(2));
                    let (a, b) = (&waypoints[k], &waypoints[(k + 1).min(waypoints.len() - 1)]);
                    let f = s - k as f64;
                    let lerp = |p: V3, q: V3| add(mul(p, 1.0 - f), mul(q, f));
                    (lerp(a.eye, b.eye), lerp(a.target, b.target))
                }
            };
            let pose = CameraPose::look_at(Vec3::from(eye), Vec3::from(target), up)?;
            cams.push(Camera::new(self.intrinsics, pose));
        }
        Ok(cams)
    }
}

/// Renders every camera of a trajectory.
pub fn render_ground_truth(scene: &SceneSpec, traj: &TrajectorySpec) -> Result<(Vec<RgbdFrame>, Vec<Camera>)> {
    scene.validate()?;
    let cams = traj.cameras()?;
    let frames = cams
        .iter()
        .map(|c| render_view(scene, c))
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, cams))
}

/// Camera-space depth and nearest pixel, computed without the production
/// projection code.
fn oracle_project(p: V3, camera: &Camera, near: f64) -> Option<(i64, i64, f64)> {
    let r = camera.pose.rotation_array();
    let c = add(mat_vec(&r, p), camera.pose.translation_array());
    if !(c[2] > near) {
        return None;
    }
    let intr = &camera.intrinsics;
    let px = (intr.fx * c[0] / c[2] + intr.cx + 0.5).floor();
    let py = (intr.fy * c[1] / c[2] + intr.cy + 0.5).floor();
    if px < 0.0 || py < 0.0 || px >= intr.width as f64 || py >= intr.height as f64 {
        return None;
    }
    Some((px as i64, py as i64, c[2]))
}

/// Exhaustive occlusion test: every candidate is compared against every
/// cached point whose splat footprint covers the candidate's pixel.
pub fn brute_force_visibility(
    candidates: &[Vec3],
    cached: &[Vec3],
    camera: &Camera,
    cfg: &SplatConfig,
) -> Result<Vec<Visibility>> {
    if candidates.len() > ORACLE_SIZE_LIMIT || cached.len() > ORACLE_SIZE_LIMIT {
        return Err(Error::SizeGuard(format!(
            "brute-force visibility is limited to {ORACLE_SIZE_LIMIT} points per side"
        )));
    }
    let r = cfg.splat_radius as i64;
    let cached_px: Vec<Option<(i64, i64, f64)>> = cached
        .iter()
        .map(|p| oracle_project([p.x, p.y, p.z], camera, cfg.near_plane))
        .collect();
    Ok(par::map_collect(candidates, |_, c| {
        let Some((cx, cy, z)) = oracle_project([c.x, c.y, c.z], camera, cfg.near_plane) else {
            return Visibility::InHole;
        };
        let nearest = cached_px
            .iter()
            .flatten()
            .filter(|(px, py, _)| (px - cx).abs() <= r && (py - cy).abs() <= r)
            .map(|&(_, _, pz)| pz)
            .fold(f64::INFINITY, f64::min);
        if nearest == f64::INFINITY {
            return Visibility::InHole;
        }
        let tol = cfg.depth_test_epsilon * z.max(1.0);
        if z - nearest > tol {
            Visibility::Occluded
        } else if nearest - z > tol {
            Visibility::InHole
        } else {
            Visibility::VisibleMatch
        }
    }))
}

/// Store-everything baseline: every valid pixel of every frame, in world
/// space.
pub fn brute_force_cache(frames: &[RgbdFrame], cameras: &[Camera]) -> Result<Vec<(Vec3, Rgb)>> {
    if frames.len() != cameras.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames but {} cameras",
            frames.len(),
            cameras.len()
        )));
    }
    let total: usize = frames.iter().map(|f| f.depth.valid_count()).sum();
    if total > ORACLE_SIZE_LIMIT * 16 {
        return Err(Error::SizeGuard(format!("{total} points is too many for the baseline")));
    }
    let mut out = Vec::with_capacity(total);
    for (f, cam) in frames.iter().zip(cameras) {
        let w = f.width();
        for (i, &d) in f.depth.raw().iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            let (o, dir) = pixel_ray(&cam.intrinsics, &cam.pose, i % w, i / w);
            out.push((Vec3::from(add(o, mul(dir, d))), f.rgb.as_slice()[i]));
        }
    }
    Ok(out)
}

/// Quantile by full sort with linear interpolation between order statistics.
pub fn brute_force_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() || values.len() > ORACLE_SIZE_LIMIT {
        return Err(Error::SizeGuard(format!(
            "sort quantile needs 1..={ORACLE_SIZE_LIMIT} values, got {}",
            values.len()
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let i = h.floor() as usize;
    if i + 1 >= v.len() {
        return Ok(v[v.len() - 1]);
    }
    Ok(v[i] + (h - i as f64) * (v[i + 1] - v[i]))
}

fn solid(color: Rgb) -> Albedo {
    Albedo::Solid { color }
}

fn checker(period: f64, a: Rgb, b: Rgb) -> Albedo {
    Albedo::Checker { period, a, b }
}

/// A furnished 10 m x 3 m x 10 m room: checkered floor and walls, two
/// boxes, a sphere and a thin hanging panel.
pub fn orbit_room_scene() -> SceneSpec {
    let wall = |point: V3, normal: V3, a: Rgb, b: Rgb| Primitive {
        shape: Shape::Plane { point, normal },
        albedo: checker(0.5, a, b),
    };
    let rot_y = |deg: f64| {
        let (s, c) = deg.to_radians().sin_cos();
        [c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c]
    };
    SceneSpec {
        primitives: vec![
            wall([0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.8, 0.8, 0.75], [0.35, 0.3, 0.3]),
            wall([0.0, 3.0, 0.0], [0.0, -1.0, 0.0], [0.9, 0.9, 0.9], [0.7, 0.7, 0.75]),
            wall([5.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.7, 0.3, 0.2], [0.9, 0.7, 0.5]),
            wall([-5.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.2, 0.4, 0.7], [0.6, 0.75, 0.9]),
            wall([0.0, 0.0, 5.0], [0.0, 0.0, -1.0], [0.3, 0.6, 0.3], [0.7, 0.9, 0.6]),
            wall([0.0, 0.0, -5.0], [0.0, 0.0, 1.0], [0.6, 0.5, 0.2], [0.95, 0.85, 0.4]),
            Primitive {
                shape: Shape::Box {
                    center: [1.6, 0.5, 1.2],
                    half_size: [0.5, 0.5, 0.5],
                    rotation: None,
                },
                albedo: checker(0.25, [0.9, 0.2, 0.2], [0.3, 0.05, 0.05]),
            },
            Primitive {
                shape: Shape::Box {
                    center: [-2.0, 0.75, -1.5],
                    half_size: [0.6, 0.75, 0.4],
                    rotation: Some(rot_y(30.0)),
                },
                albedo: checker(0.3, [0.2, 0.7, 0.9], [0.05, 0.2, 0.3]),
            },
            Primitive {
                shape: Shape::Sphere {
                    center: [-1.2, 0.6, 2.0],
                    radius: 0.6,
                },
                albedo: checker(0.2, [0.95, 0.9, 0.3], [0.4, 0.3, 0.05]),
            },
            Primitive {
                shape: Shape::Rect {
                    center: [1.8, 1.6, -2.2],
                    u: [0.7, 0.0, 0.3],
                    v: [0.0, 0.6, 0.0],
                },
                albedo: solid([0.6, 0.2, 0.8]),
            },
        ],
    }
}

/// A full turn inside [`orbit_room_scene`] at `radius` around the room
/// center, looking at the center.
pub fn orbit_room_trajectory(frames: usize, size: usize, radius: f64) -> Result<TrajectorySpec> {
    Ok(TrajectorySpec {
        kind: TrajectoryKind::Orbit {
            center: [0.0, 1.5, 0.0],
            radius,
            degrees: 360.0,
            start_degrees: 0.0,
            height: 0.2,
            target: Some([0.0, 1.0, 0.0]),
        },
        frames,
        intrinsics: CameraIntrinsics::from_fov(size, size, 60.0)?,
        up: default_up(),
    })
}
