//! Z-buffer point splatting.
//!
//! Every in-frustum point covers a `(2r+1)²` pixel footprint around its
//! nearest pixel. Per pixel the smallest camera depth wins and exact ties go
//! to the lower point index, so the output does not depend on evaluation
//! order.

use serde::{Deserialize, Serialize};

use crate::camera::{project_point, CameraIntrinsics, CameraPose, Vec3, DEFAULT_NEAR_PLANE};
use crate::error::{Error, Result};
use crate::image::{ColorImage, DepthMap, Grid, Mask, Rgb};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplatConfig {
    /// Footprint half-size in pixels; 0 covers only the containing pixel.
    pub splat_radius: usize,
    /// Relative depth tolerance in meters, scaled by `max(1, z)`.
    pub depth_test_epsilon: f64,
    pub near_plane: f64,
}

impl Default for SplatConfig {
    fn default() -> Self {
        Self {
            splat_radius: 1,
            depth_test_epsilon: 1e-3,
            near_plane: DEFAULT_NEAR_PLANE,
        }
    }
}

impl SplatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_test_epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "depth_test_epsilon must be > 0, got {}",
                self.depth_test_epsilon
            )));
        }
        if !(self.near_plane >= 0.0 && self.near_plane.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "near_plane must be finite and >= 0, got {}",
                self.near_plane
            )));
        }
        Ok(())
    }

    /// Depth tolerance at camera depth `z`.
    #[inline]
    pub fn tolerance(&self, z: f64) -> f64 {
        self.depth_test_epsilon * z.max(1.0)
    }
}

/// Anything that can be splatted.
pub trait Splat {
    fn position(&self) -> Vec3;
    fn color(&self) -> Rgb;
}

impl Splat for (Vec3, Rgb) {
    fn position(&self) -> Vec3 {
        self.0
    }
    fn color(&self) -> Rgb {
        self.1
    }
}

impl Splat for crate::camera::WorldPoint {
    fn position(&self) -> Vec3 {
        self.position
    }
    fn color(&self) -> Rgb {
        self.color.unwrap_or([0.0; 3])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    /// Winner colors; zero where the mask is unset.
    pub partial_rgb: ColorImage,
    pub partial_depth: DepthMap,
    pub mask: Mask,
    /// Nearest camera depth per pixel, `+inf` where nothing landed.
    pub zbuffer: Grid<f64>,
    pub hit_index: Grid<Option<u32>>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn coverage(&self) -> usize {
        self.mask.count()
    }
}

/// Renders points into the view; see the module docs for the rules.
pub fn render_points<P: Splat + Sync>(
    points: &[P],
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    cfg: &SplatConfig,
) -> RenderOutput {
    let (w, h) = (intr.width, intr.height);
    let r = cfg.splat_radius as isize;
    let projected = par::map_collect(points, |_, p| {
        let pr = project_point(&p.position(), intr, pose, cfg.near_plane);
        pr.pixel(intr).map(|(x, y)| (x, y, pr.z))
    });

    let mut zbuffer = vec![f64::INFINITY; w * h];
    let mut hit: Vec<Option<u32>> = vec![None; w * h];
    for (i, proj) in projected.iter().enumerate() {
        let Some((px, py, z)) = *proj else { continue };
        let (px, py) = (px as isize, py as isize);
        let y0 = (py - r).max(0) as usize;
        let y1 = (py + r).min(h as isize - 1) as usize;
        let x0 = (px - r).max(0) as usize;
        let x1 = (px + r).min(w as isize - 1) as usize;
        for y in y0..=y1 {
            let row = y * w;
            for x in x0..=x1 {
                // strict: equal depth keeps the earlier (lower) index
                if z < zbuffer[row + x] {
                    zbuffer[row + x] = z;
                    hit[row + x] = Some(i as u32);
                }
            }
        }
    }

    let mut rgb = vec![[0.0f32; 3]; w * h];
    let mut depth = vec![0.0f64; w * h];
    let mut mask = vec![false; w * h];
    for j in 0..w * h {
        if let Some(i) = hit[j] {
            rgb[j] = points[i as usize].color();
            depth[j] = zbuffer[j];
            mask[j] = true;
        }
    }

    RenderOutput {
        partial_rgb: Grid::from_vec(w, h, rgb).expect("sized"),
        partial_depth: DepthMap::new(w, h, depth).expect("sized"),
        mask: Grid::from_vec(w, h, mask).expect("sized"),
        zbuffer: Grid::from_vec(w, h, zbuffer).expect("sized"),
        hit_index: Grid::from_vec(w, h, hit).expect("sized"),
    }
}

/// How a candidate point relates to already rendered geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    /// Behind the rendered surface.
    Occluded,
    /// At the rendered surface depth.
    VisibleMatch,
    /// On an empty pixel, in front of the rendered surface, or outside
    /// the view: nothing rendered explains it.
    InHole,
}

/// Classifies a candidate at camera depth `z` against a z-buffer value.
#[inline]
pub fn classify_depth(z: f64, zbuffer: Option<f64>, cfg: &SplatConfig) -> Visibility {
    let Some(zb) = zbuffer else {
        return Visibility::InHole;
    };
    let tol = cfg.tolerance(z);
    if z > zb + tol {
        Visibility::Occluded
    } else if z < zb - tol {
        Visibility::InHole
    } else {
        Visibility::VisibleMatch
    }
}

/// Classifies candidates against a render made with the same camera and config.
pub fn visibility_against_cache(
    candidates: &[Vec3],
    output: &RenderOutput,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    cfg: &SplatConfig,
) -> Vec<Visibility> {
    par::map_collect(candidates, |_, c| {
        let pr = project_point(c, intr, pose, cfg.near_plane);
        match pr.pixel(intr) {
            None => Visibility::InHole,
            Some((x, y)) => {
                let j = y * intr.width + x;
                let zb = output.mask.as_slice()[j].then(|| output.zbuffer.as_slice()[j]);
                classify_depth(pr.z, zb, cfg)
            }
        }
    })
}
