//! Browser bindings: fuse an orbit of the test room into a world cache,
//! look at the cache from any orbit camera, and fit a depth alignment.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;
use worldcache::align::align_disparity;
use worldcache::io::ply::quantize_color;
use worldcache::synthetic::{orbit_room_scene, orbit_room_trajectory, render_ground_truth};
use worldcache::{Camera, ColorImage, CullingConfig, DepthMap, Mask, RgbdFrame, SplatConfig, WorldCache};

const ORBIT_RADIUS: f64 = 2.5;
const HOLE: [u8; 4] = [255, 0, 255, 255];

fn js_err(e: worldcache::Error) -> JsError {
    JsError::new(&format!("{}: {e}", e.code()))
}

fn to_rgba(rgb: &ColorImage, mask: Option<&Mask>) -> Vec<u8> {
    let mut out = Vec::with_capacity(rgb.len() * 4);
    for (i, c) in rgb.as_slice().iter().enumerate() {
        if mask.is_some_and(|m| !m.as_slice()[i]) {
            out.extend_from_slice(&HOLE);
        } else {
            out.extend(c.map(quantize_color));
            out.push(255);
        }
    }
    out
}

/// Ground-truth orbit frames plus a cache fused from a prefix of them.
#[wasm_bindgen]
pub struct OrbitDemo {
    frames: Vec<RgbdFrame>,
    cameras: Vec<Camera>,
    cache: WorldCache,
}

#[wasm_bindgen]
impl OrbitDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(frames: usize, size: usize) -> Result<OrbitDemo, JsError> {
        let traj = orbit_room_trajectory(frames, size, ORBIT_RADIUS).map_err(js_err)?;
        let (frames, cameras) = render_ground_truth(&orbit_room_scene(), &traj).map_err(js_err)?;
        let cache = WorldCache::init(&frames[0], &cameras[0], 0).map_err(js_err)?;
        Ok(OrbitDemo { frames, cameras, cache })
    }

    pub fn size(&self) -> usize {
        self.frames[0].width()
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Rebuilds the cache from the first `fused` frames; returns the
    /// summary as JSON.
    pub fn build(&mut self, fused: usize, threshold: f64) -> Result<String, JsError> {
        let cfg = CullingConfig {
            normal_dot_threshold: threshold,
            ..CullingConfig::default()
        };
        let n = fused.clamp(1, self.frames.len());
        let mut cache = WorldCache::init(&self.frames[0], &self.cameras[0], 0).map_err(js_err)?;
        for k in 1..n {
            cache.update(&self.frames[k], &self.cameras[k], &cfg, k as u32).map_err(js_err)?;
        }
        self.cache = cache;
        serde_json::to_string(&self.cache.summary()).map_err(|e| JsError::new(&e.to_string()))
    }

    /// The cache rendered into orbit camera `view`, holes in magenta.
    pub fn cache_view(&self, view: usize) -> Vec<u8> {
        let out = self.cache.render(&self.cameras[view % self.cameras.len()], &SplatConfig::default());
        to_rgba(&out.partial_rgb, Some(&out.mask))
    }

    pub fn truth_view(&self, view: usize) -> Vec<u8> {
        to_rgba(&self.frames[view % self.frames.len()].rgb, None)
    }

    /// Fraction of pixels the cache covers from `view`.
    pub fn coverage(&self, view: usize) -> f64 {
        let out = self.cache.render(&self.cameras[view % self.cameras.len()], &SplatConfig::default());
        out.coverage() as f64 / out.mask.len() as f64
    }
}

/// Plants `scale` and `bias` in a disparity map of the room, adds relative
/// Gaussian noise and fits them back. Returns the fit as JSON.
#[wasm_bindgen]
pub fn align_demo(scale: f64, bias: f64, noise: f64, seed: u64) -> Result<String, JsError> {
    let traj = orbit_room_trajectory(1, 64, ORBIT_RADIUS).map_err(js_err)?;
    let (frames, _) = render_ground_truth(&orbit_room_scene(), &traj).map_err(js_err)?;
    let truth = &frames[0].depth;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.max(0.0)).map_err(|e| JsError::new(&e.to_string()))?;
    let src: Vec<f64> = truth
        .raw()
        .iter()
        .map(|&z| {
            let disp = (1.0 / z - bias) / scale * (1.0 + jitter.sample(&mut rng));
            if z > 0.0 && disp > 0.0 {
                1.0 / disp
            } else {
                0.0
            }
        })
        .collect();
    let src = DepthMap::new(truth.width(), truth.height(), src).map_err(js_err)?;
    let fit = align_disparity(&src, truth, &truth.valid_mask()).map_err(js_err)?;
    serde_json::to_string(&fit).map_err(|e| JsError::new(&e.to_string()))
}
