//! The world cache: an append-only colored point cloud with per-frame
//! culling.
//!
//! Each update renders the cache into the incoming camera and lifts the
//! frame's valid pixels as candidates. Candidates landing in holes are
//! always kept. Candidates that match a cached surface are kept only when
//! that surface faces away from the current camera, i.e. the winning
//! cached point's normal makes more than 90° with the direction from the
//! camera toward the surface point. Occluded candidates are dropped.

use serde::{Deserialize, Serialize};

use crate::camera::{estimate_normals, project_point, unproject, view_direction, Camera, Vec3};
use crate::error::{Error, Result};
use crate::image::{Rgb, RgbdFrame};
use crate::render::{render_points, visibility_against_cache, RenderOutput, Splat, SplatConfig, Visibility};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CachedPoint {
    pub position: Vec3,
    pub color: Rgb,
    /// World-space unit normal, facing the camera that created the point.
    pub normal: Vec3,
    pub source_frame: u32,
}

impl Splat for CachedPoint {
    fn position(&self) -> Vec3 {
        self.position
    }
    fn color(&self) -> Rgb {
        self.color
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CullingConfig {
    /// A matched candidate is kept when `dot(cached_normal, view_dir)`
    /// exceeds this. `0.0` is the 90° rule.
    pub normal_dot_threshold: f64,
    pub splat: SplatConfig,
}

impl Default for CullingConfig {
    fn default() -> Self {
        Self {
            normal_dot_threshold: 0.0,
            splat: SplatConfig::default(),
        }
    }
}

impl CullingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.normal_dot_threshold) {
            return Err(Error::InvalidConfig(format!(
                "normal_dot_threshold must be in [-1, 1], got {}",
                self.normal_dot_threshold
            )));
        }
        self.splat.validate()
    }
}

/// Bookkeeping for one init or update call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub frame: u32,
    pub candidates: usize,
    pub added_hole: usize,
    pub added_normal: usize,
    pub rejected: usize,
}

impl UpdateStats {
    pub fn added(&self) -> usize {
        self.added_hole + self.added_normal
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub total_points: usize,
    pub total_candidates: usize,
    /// `1 - total_points / total_candidates`; what culling saved relative to
    /// keeping every pixel of every frame.
    pub reduction_ratio: f64,
    pub updates: Vec<UpdateStats>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorldCache {
    points: Vec<CachedPoint>,
    updates: Vec<UpdateStats>,
}

impl WorldCache {
    /// Seeds the cache with one point per valid pixel of `frame`.
    pub fn init(frame: &RgbdFrame, camera: &Camera, frame_index: u32) -> Result<Self> {
        let mut cache = Self::default();
        let added = cache.lift_frame(frame, camera, frame_index)?;
        if added.candidates == 0 {
            return Err(Error::Degenerate(
                "initial frame has no valid depth pixels".into(),
            ));
        }
        cache.updates.push(added);
        Ok(cache)
    }

    /// Rebuilds a cache from stored points and update history, checking that
    /// the history accounts for every point.
    pub fn from_parts(points: Vec<CachedPoint>, updates: Vec<UpdateStats>) -> Result<Self> {
        let added: usize = updates.iter().map(UpdateStats::added).sum();
        if added != points.len() {
            return Err(Error::InvalidInput(format!(
                "update history adds {added} points but {} are stored",
                points.len()
            )));
        }
        for u in &updates {
            if u.added_hole + u.added_normal + u.rejected != u.candidates {
                return Err(Error::InvalidInput(format!(
                    "update for frame {} does not sum to its candidates",
                    u.frame
                )));
            }
        }
        Ok(Self { points, updates })
    }

    pub fn points(&self) -> &[CachedPoint] {
        &self.points
    }

    pub fn updates(&self) -> &[UpdateStats] {
        &self.updates
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn render(&self, camera: &Camera, cfg: &SplatConfig) -> RenderOutput {
        render_points(&self.points, &camera.intrinsics, &camera.pose, cfg)
    }

    /// Adds the parts of `frame` the cache cannot already explain.
    pub fn update(
        &mut self,
        frame: &RgbdFrame,
        camera: &Camera,
        cfg: &CullingConfig,
        frame_index: u32,
    ) -> Result<UpdateStats> {
        cfg.validate()?;
        let (intr, pose) = (&camera.intrinsics, &camera.pose);
        let rendered = self.render(camera, &cfg.splat);
        let candidates = unproject(&frame.depth, intr, pose, Some(&frame.rgb))?;
        let normals = estimate_normals(&frame.depth, intr, pose)?;
        let positions: Vec<Vec3> = candidates.iter().map(|c| c.position).collect();
        let classes = visibility_against_cache(&positions, &rendered, intr, pose, &cfg.splat);

        let mut stats = UpdateStats {
            frame: frame_index,
            candidates: candidates.len(),
            ..UpdateStats::default()
        };
        let mut lifted = Vec::new();
        for (c, class) in candidates.iter().zip(classes) {
            let keep = match class {
                Visibility::InHole => {
                    stats.added_hole += 1;
                    true
                }
                Visibility::Occluded => false,
                Visibility::VisibleMatch => {
                    let pr = project_point(&c.position, intr, pose, cfg.splat.near_plane);
                    let (x, y) = pr.pixel(intr).expect("matched candidate is in view");
                    let winner = rendered.hit_index.get(x, y).expect("matched pixel has a hit");
                    let normal = self.points[winner as usize].normal;
                    let back_facing =
                        normal.dot(&view_direction(&c.position, pose)?) > cfg.normal_dot_threshold;
                    if back_facing {
                        stats.added_normal += 1;
                    }
                    back_facing
                }
            };
            if keep {
                lifted.push(CachedPoint {
                    position: c.position,
                    color: c.color.unwrap_or([0.0; 3]),
                    normal: normals[c.pixel].expect("valid pixel has a normal"),
                    source_frame: frame_index,
                });
            } else {
                stats.rejected += 1;
            }
        }
        self.points.extend(lifted);
        self.updates.push(stats);
        Ok(stats)
    }

    fn lift_frame(&mut self, frame: &RgbdFrame, camera: &Camera, frame_index: u32) -> Result<UpdateStats> {
        let candidates = unproject(&frame.depth, &camera.intrinsics, &camera.pose, Some(&frame.rgb))?;
        let normals = estimate_normals(&frame.depth, &camera.intrinsics, &camera.pose)?;
        self.points.extend(candidates.iter().map(|c| CachedPoint {
            position: c.position,
            color: c.color.unwrap_or([0.0; 3]),
            normal: normals[c.pixel].expect("valid pixel has a normal"),
            source_frame: frame_index,
        }));
        Ok(UpdateStats {
            frame: frame_index,
            candidates: candidates.len(),
            added_hole: candidates.len(),
            ..UpdateStats::default()
        })
    }

    pub fn summary(&self) -> CacheSummary {
        let total_candidates: usize = self.updates.iter().map(|u| u.candidates).sum();
        let reduction_ratio = if total_candidates == 0 {
            0.0
        } else {
            1.0 - self.points.len() as f64 / total_candidates as f64
        };
        CacheSummary {
            total_points: self.points.len(),
            total_candidates,
            reduction_ratio,
            updates: self.updates.clone(),
        }
    }
}
