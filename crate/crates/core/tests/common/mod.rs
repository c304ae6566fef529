#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use worldcache::condition::pack_frame;
use worldcache::sampler::{DenoiseRequest, Denoiser};
use worldcache::synthetic::{Albedo, Primitive, SceneSpec, Shape};
use worldcache::{Camera, CameraIntrinsics, CameraPose, DepthMap, Grid, Rgb, RgbdFrame, SplatConfig, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(r: &mut impl Rng) -> nalgebra::Rotation3<f64> {
    let axis = nalgebra::Unit::new_normalize(Vec3::new(
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0) + 1e-3,
    ));
    nalgebra::Rotation3::from_axis_angle(&axis, r.random_range(-3.1..3.1))
}

pub fn random_pose(r: &mut impl Rng) -> CameraPose {
    let t = Vec3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
    CameraPose::new(random_rotation(r).into_inner(), t).unwrap()
}

pub fn random_intrinsics(r: &mut impl Rng, w: usize, h: usize) -> CameraIntrinsics {
    let f = r.random_range(0.5..2.0) * w as f64;
    CameraIntrinsics::new(
        f,
        f * r.random_range(0.9..1.1),
        ((w as f64 - 1.0) / 2.0 + r.random_range(-0.4..0.4)).clamp(0.0, w as f64 - 1.0),
        ((h as f64 - 1.0) / 2.0 + r.random_range(-0.4..0.4)).clamp(0.0, h as f64 - 1.0),
        w,
        h,
    )
    .unwrap()
}

pub fn random_depth(r: &mut impl Rng, w: usize, h: usize, invalid_fraction: f64) -> DepthMap {
    let values = (0..w * h)
        .map(|_| if r.random_bool(invalid_fraction) { 0.0 } else { r.random_range(0.2..30.0) })
        .collect();
    DepthMap::new(w, h, values).unwrap()
}

pub fn random_rgb(r: &mut impl Rng, w: usize, h: usize) -> Grid<Rgb> {
    Grid::from_vec(w, h, (0..w * h).map(|_| [r.random(), r.random(), r.random()]).collect()).unwrap()
}

/// Two random objects (box or sphere) in front of a back wall, the nearer
/// one partly hiding the farther one from a camera at the origin.
pub fn random_two_object_scene(r: &mut impl Rng) -> SceneSpec {
    let mut object = |near: bool| {
        let z = if near { r.random_range(2.5..3.5) } else { r.random_range(4.5..6.0) };
        let center = [r.random_range(-0.6..0.6), r.random_range(-0.6..0.6), z];
        let shape = if r.random_bool(0.5) {
            Shape::Sphere {
                center,
                radius: r.random_range(0.3..0.8),
            }
        } else {
            let rot = random_rotation(r).into_inner();
            Shape::Box {
                center,
                half_size: [r.random_range(0.2..0.7), r.random_range(0.2..0.7), r.random_range(0.2..0.7)],
                rotation: Some(std::array::from_fn(|i| rot[(i / 3, i % 3)])),
            }
        };
        Primitive {
            shape,
            albedo: Albedo::Checker {
                period: 0.2,
                a: [r.random(), r.random(), r.random()],
                b: [r.random(), r.random(), r.random()],
            },
        }
    };
    let near = object(true);
    let far = object(false);
    SceneSpec {
        primitives: vec![
            near,
            far,
            Primitive {
                shape: Shape::Plane {
                    point: [0.0, 0.0, 8.0],
                    normal: [0.0, 0.0, -1.0],
                },
                albedo: Albedo::Solid { color: [0.5, 0.5, 0.5] },
            },
        ],
    }
}

/// Minimum camera z over in-view cached points whose splat footprint
/// covers each pixel, by direct loops over all points.
pub fn oracle_zbuffer(points: &[Vec3], camera: &Camera, cfg: &SplatConfig) -> Vec<f64> {
    let intr = &camera.intrinsics;
    let (w, h) = (intr.width as i64, intr.height as i64);
    let mut zb = vec![f64::INFINITY; (w * h) as usize];
    let r = cfg.splat_radius as i64;
    let rot = camera.pose.rotation();
    let t = camera.pose.translation();
    for p in points {
        let c = rot * p + t;
        if c.z <= cfg.near_plane {
            continue;
        }
        let px = (intr.fx * c.x / c.z + intr.cx + 0.5).floor() as i64;
        let py = (intr.fy * c.y / c.z + intr.cy + 0.5).floor() as i64;
        // only points whose own pixel is in the image splat
        if px < 0 || py < 0 || px >= w || py >= h {
            continue;
        }
        for y in py - r..=py + r {
            for x in px - r..=px + r {
                if x >= 0 && y >= 0 && x < w && y < h {
                    let i = (y * w + x) as usize;
                    zb[i] = zb[i].min(c.z);
                }
            }
        }
    }
    zb
}

/// Sum of squared disparity residuals, straight from the definition.
pub fn disparity_objective(scale: f64, bias: f64, pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|&(x, y)| (scale * x + bias - y).powi(2)).sum()
}

/// Grid search over (scale, bias) followed by shrinking coordinate descent.
pub fn grid_search_alignment(pairs: &[(f64, f64)], scale_range: (f64, f64), bias_range: (f64, f64)) -> (f64, f64, f64) {
    let f = |a: f64, b: f64| disparity_objective(a, b, pairs);
    let n = 60;
    let mut best = (scale_range.0, bias_range.0, f64::INFINITY);
    for i in 0..=n {
        for j in 0..=n {
            let a = scale_range.0 + (scale_range.1 - scale_range.0) * i as f64 / n as f64;
            let b = bias_range.0 + (bias_range.1 - bias_range.0) * j as f64 / n as f64;
            let v = f(a, b);
            if v < best.2 {
                best = (a, b, v);
            }
        }
    }
    let (mut sa, mut sb) = (
        (scale_range.1 - scale_range.0) / n as f64,
        (bias_range.1 - bias_range.0) / n as f64,
    );
    for _ in 0..2000 {
        let mut moved = false;
        for (da, db) in [(sa, 0.0), (-sa, 0.0), (0.0, sb), (0.0, -sb)] {
            let v = f(best.0 + da, best.1 + db);
            if v < best.2 {
                best = (best.0 + da, best.1 + db, v);
                moved = true;
            }
        }
        if !moved {
            sa *= 0.5;
            sb *= 0.5;
        }
    }
    best
}

/// Quantizes points to a voxel grid for nearest-neighbor queries.
pub struct PointIndex {
    cell: f64,
    map: HashMap<(i64, i64, i64), Vec<Vec3>>,
}

impl PointIndex {
    pub fn new(points: impl IntoIterator<Item = Vec3>, cell: f64) -> Self {
        let mut map: HashMap<_, Vec<Vec3>> = HashMap::new();
        for p in points {
            map.entry(Self::key(&p, cell)).or_default().push(p);
        }
        Self { cell, map }
    }

    fn key(p: &Vec3, cell: f64) -> (i64, i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
    }

    /// Whether a stored point lies within `radius <= cell` of `p`.
    pub fn has_within(&self, p: &Vec3, radius: f64) -> bool {
        let (kx, ky, kz) = Self::key(p, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = self.map.get(&(kx + dx, ky + dy, kz + dz)) {
                        if v.iter().any(|q| (q - p).norm() <= radius) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Fraction of `a` that has a point of `b` within `radius`.
pub fn coverage(a: &[Vec3], b: &[Vec3], radius: f64) -> f64 {
    let index = PointIndex::new(b.iter().copied(), radius);
    a.iter().filter(|p| index.has_within(p, radius)).count() as f64 / a.len().max(1) as f64
}

/// Mean absolute per-channel color change between two frames.
pub fn mean_abs_delta(a: &RgbdFrame, b: &RgbdFrame) -> f64 {
    let s: f64 = a
        .rgb
        .as_slice()
        .iter()
        .zip(b.rgb.as_slice())
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).abs() as f64))
        .sum();
    s / (3 * a.rgb.len()) as f64
}

/// Stand-in for a video model: returns ground truth plus a global color
/// offset that changes from call to call. Frames that arrive partly
/// denoised keep the offset they already carry, and the fresh frames of
/// the same call continue from it with a small drift, which is how a real
/// model stays coherent with the frames it was given.
pub struct StochasticDenoiser {
    pub truth: Vec<RgbdFrame>,
    /// Spread of the offset drawn when no frame anchors the call.
    pub offset_sigma: f64,
    /// Spread of the per-call drift away from the anchor.
    pub drift_sigma: f64,
}

impl StochasticDenoiser {
    fn estimated_offset(&self, noisy: &Grid<Rgb>, truth: &RgbdFrame, level: f64) -> [f64; 3] {
        let n = truth.rgb.len();
        let mut acc = [0.0f64; 3];
        for (p, t) in noisy.as_slice()[..n].iter().zip(truth.rgb.as_slice()) {
            for c in 0..3 {
                acc[c] += p[c] as f64 / (1.0 - level) - t[c] as f64;
            }
        }
        acc.map(|v| v / n as f64)
    }
}

impl Denoiser for StochasticDenoiser {
    fn denoise(&mut self, req: &DenoiseRequest<'_>) -> worldcache::Result<Vec<Grid<Rgb>>> {
        let mut r = rng(req.seed);
        let truth: Vec<&RgbdFrame> = req.frames.clone().map(|k| &self.truth[k]).collect();
        let estimates: Vec<Option<[f64; 3]>> = req
            .noisy
            .iter()
            .zip(req.noise_levels)
            .zip(&truth)
            .map(|((g, &lvl), t)| (lvl < 1.0).then(|| self.estimated_offset(g, t, lvl)))
            .collect();
        let anchored: Vec<[f64; 3]> = estimates.iter().flatten().copied().collect();
        let base: [f64; 3] = if anchored.is_empty() {
            let n = Normal::new(0.0, self.offset_sigma).unwrap();
            std::array::from_fn(|_| n.sample(&mut r))
        } else {
            std::array::from_fn(|c| anchored.iter().map(|e| e[c]).sum::<f64>() / anchored.len() as f64)
        };
        let drift = Normal::new(0.0, self.drift_sigma).unwrap();
        let target: [f64; 3] = std::array::from_fn(|c| base[c] + drift.sample(&mut r));
        truth
            .iter()
            .zip(&estimates)
            .zip(req.noise_levels)
            .map(|((t, est), &lvl)| {
                let offset: [f64; 3] = match est {
                    Some(e) => std::array::from_fn(|c| (1.0 - lvl) * e[c] + lvl * target[c]),
                    None => target,
                };
                let rgb = t
                    .rgb
                    .map(|p| std::array::from_fn(|c| (p[c] as f64 + offset[c]).clamp(0.0, 1.0) as f32));
                pack_frame(&RgbdFrame::new(rgb, t.depth.clone())?, &req.layout, &req.normalization)
            })
            .collect()
    }
}
