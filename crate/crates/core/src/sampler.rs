//! Auto-regressive long-trajectory sampling around a pluggable denoiser.
//!
//! A trajectory is cut into clips that overlap by half a clip. Each clip is
//! conditioned on renders of the world cache. Its overlap with the previous
//! clip starts from the previous result lightly noised instead of pure
//! noise. Once a clip is done the two versions of the overlap are
//! averaged, re-noised at the same light level and denoised once more.
//! Finished frames are fed back into the cache before the next clip is
//! conditioned.

use std::ops::Range;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cache::{CullingConfig, WorldCache};
use crate::camera::Camera;
use crate::condition::{
    make_condition, pack_conditions, pack_frame, unpack_frame, DepthNormalization, PackLayout,
    PackedCondition, DEFAULT_PLACEHOLDER_HEIGHT, DEFAULT_POOL_FACTOR,
};
use crate::error::{Error, Result};
use crate::image::{DepthMap, Grid, Rgb, RgbdFrame};

/// Frames generated per denoiser pass.
pub const DEFAULT_CLIP_LENGTH: usize = 49;

/// Overlap used when none is given: half a clip, rounded down.
pub fn default_overlap(clip_length: usize) -> usize {
    clip_length / 2
}

/// Clip ranges covering `[0, total_frames)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSchedule {
    pub total_frames: usize,
    pub clip_length: usize,
    pub overlap: usize,
    pub clips: Vec<Range<usize>>,
}

impl ClipSchedule {
    /// Frames shared by clip `i` and clip `i - 1`.
    pub fn overlap_with_previous(&self, i: usize) -> Range<usize> {
        if i == 0 {
            let s = self.clips[0].start;
            return s..s;
        }
        self.clips[i].start..self.clips[i - 1].end
    }
}

/// Clip `i` starts at `i * (clip_length - overlap)`; the last clip is cut
/// at `total_frames`.
pub fn plan_clips(total_frames: usize, clip_length: usize, overlap: usize) -> Result<ClipSchedule> {
    if total_frames == 0 {
        return Err(Error::InvalidInput("cannot schedule zero frames".into()));
    }
    if clip_length == 0 || overlap >= clip_length {
        return Err(Error::InvalidConfig(format!(
            "overlap {overlap} must be smaller than clip length {clip_length}"
        )));
    }
    let step = clip_length - overlap;
    let mut clips = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + clip_length).min(total_frames);
        clips.push(start..end);
        if end == total_frames {
            break;
        }
        start += step;
    }
    Ok(ClipSchedule {
        total_frames,
        clip_length,
        overlap,
        clips,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseStage {
    /// First pass over a clip.
    Clip,
    /// Second pass over a merged overlap.
    Refine,
}

/// One call into the generator. All grids use [`DenoiseRequest::layout`].
#[derive(Clone, Debug)]
pub struct DenoiseRequest<'a> {
    pub clip_index: usize,
    pub stage: DenoiseStage,
    /// Trajectory frames covered, in order.
    pub frames: Range<usize>,
    pub layout: PackLayout,
    /// Maps the packed depth region back to meters.
    pub normalization: DepthNormalization,
    /// `(1 - level) * content + level * noise`, one grid per frame.
    pub noisy: &'a [Grid<Rgb>],
    /// Noise level per frame: 1.0 is pure noise, 0.0 clean.
    pub noise_levels: &'a [f64],
    pub conditions: &'a [PackedCondition],
    pub seed: u64,
}

/// The generator boundary. Implementations must return one packed frame per
/// requested frame, with the request's dimensions, and must be
/// deterministic for a fixed request (including seed).
pub trait Denoiser {
    fn denoise(&mut self, request: &DenoiseRequest<'_>) -> Result<Vec<Grid<Rgb>>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &mut D {
    fn denoise(&mut self, request: &DenoiseRequest<'_>) -> Result<Vec<Grid<Rgb>>> {
        (**self).denoise(request)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn denoise(&mut self, request: &DenoiseRequest<'_>) -> Result<Vec<Grid<Rgb>>> {
        (**self).denoise(request)
    }
}

/// Echoes the condition: rendered color and depth where the cache is
/// visible, black with invalid depth elsewhere.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&mut self, request: &DenoiseRequest<'_>) -> Result<Vec<Grid<Rgb>>> {
        let layout = &request.layout;
        let base = layout.depth_row() * layout.width;
        Ok(request
            .conditions
            .iter()
            .map(|c| {
                let mut g = c.grid.clone();
                let m = c.mask.as_slice();
                for (i, px) in g.as_mut_slice()[base..].iter_mut().enumerate() {
                    if m[base + i] == 0.0 {
                        *px = [f32::NAN; 3];
                    }
                }
                g
            })
            .collect())
    }
}

/// Returns known frames for each trajectory index, e.g. an analytic render.
#[derive(Clone, Debug)]
pub struct GroundTruthDenoiser {
    pub frames: Vec<RgbdFrame>,
}

impl Denoiser for GroundTruthDenoiser {
    fn denoise(&mut self, request: &DenoiseRequest<'_>) -> Result<Vec<Grid<Rgb>>> {
        request
            .frames
            .clone()
            .map(|k| {
                let f = self
                    .frames
                    .get(k)
                    .ok_or_else(|| Error::Denoiser(format!("no ground truth for frame {k}")))?;
                pack_frame(f, &request.layout, &request.normalization)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendWeighting {
    /// Plain average of both clips.
    #[default]
    Uniform,
    /// Weight moves from the earlier clip to the later one across the
    /// overlap, matching each clip exactly at its far end.
    LinearRamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Noise level for overlap initialization and refinement.
    pub refine_noise_level: f64,
    pub seed: u64,
    pub blend: BlendWeighting,
    /// Refine the whole later clip instead of only the merged overlap.
    pub refine_whole_segment: bool,
    /// When false the overlap starts from pure noise and the later clip
    /// simply replaces it, with no averaging or refinement.
    pub smooth: bool,
    pub clip_length: usize,
    /// Defaults to half the clip length.
    pub overlap: Option<usize>,
    pub placeholder_height: usize,
    pub pool_factor: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            refine_noise_level: 0.2,
            seed: 0,
            blend: BlendWeighting::Uniform,
            refine_whole_segment: false,
            smooth: true,
            clip_length: DEFAULT_CLIP_LENGTH,
            overlap: None,
            placeholder_height: DEFAULT_PLACEHOLDER_HEIGHT,
            pool_factor: DEFAULT_POOL_FACTOR,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.refine_noise_level > 0.0 && self.refine_noise_level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "refine_noise_level must be in (0, 1), got {}",
                self.refine_noise_level
            )));
        }
        Ok(())
    }

    pub fn overlap(&self) -> usize {
        self.overlap.unwrap_or_else(|| default_overlap(self.clip_length))
    }
}

/// Frames produced for a contiguous trajectory range.
#[derive(Clone, Debug)]
pub struct ClipFrames<'a> {
    pub range: Range<usize>,
    pub frames: &'a [RgbdFrame],
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergedOverlap {
    pub range: Range<usize>,
    pub frames: Vec<RgbdFrame>,
    /// Level at which to re-noise `frames` for the refinement pass.
    pub noise_level: f64,
}

/// Blends the frames two consecutive clips produced for their shared range.
pub fn merge_overlap(a: &ClipFrames<'_>, b: &ClipFrames<'_>, cfg: &SamplerConfig) -> Result<MergedOverlap> {
    if a.frames.len() != a.range.len() || b.frames.len() != b.range.len() {
        return Err(Error::InvalidInput("clip frame count does not match its range".into()));
    }
    if !(a.range.start < b.range.start && b.range.start < a.range.end && a.range.end <= b.range.end) {
        return Err(Error::InvalidInput(format!(
            "clips {:?} and {:?} are not consecutive overlapping ranges",
            a.range, b.range
        )));
    }
    let range = b.range.start..a.range.end;
    let len = range.len();
    let mut frames = Vec::with_capacity(len);
    for (j, k) in range.clone().enumerate() {
        let fa = &a.frames[k - a.range.start];
        let fb = &b.frames[k - b.range.start];
        if fa.rgb.dims() != fb.rgb.dims() {
            return Err(Error::DimensionMismatch("overlap frames differ in size".into()));
        }
        let wb = match cfg.blend {
            BlendWeighting::Uniform => 0.5,
            BlendWeighting::LinearRamp if len == 1 => 0.5,
            BlendWeighting::LinearRamp => j as f64 / (len - 1) as f64,
        };
        frames.push(blend_frames(fa, fb, wb)?);
    }
    Ok(MergedOverlap {
        range,
        frames,
        noise_level: cfg.refine_noise_level,
    })
}

/// `(1 - wb) a + wb b`; when only one side has valid depth it is used as is.
fn blend_frames(a: &RgbdFrame, b: &RgbdFrame, wb: f64) -> Result<RgbdFrame> {
    let wa = 1.0 - wb;
    let (wa32, wb32) = (wa as f32, wb as f32);
    let rgb: Vec<Rgb> = if wb == 0.0 {
        a.rgb.as_slice().to_vec()
    } else if wb == 1.0 {
        b.rgb.as_slice().to_vec()
    } else {
        a.rgb
            .as_slice()
            .iter()
            .zip(b.rgb.as_slice())
            .map(|(ca, cb)| std::array::from_fn(|c| wa32 * ca[c] + wb32 * cb[c]))
            .collect()
    };
    let depth: Vec<f64> = (0..a.depth.len())
        .map(|i| match (a.depth.at(i), b.depth.at(i)) {
            (Some(x), Some(_)) if wb == 0.0 => x,
            (Some(_), Some(y)) if wb == 1.0 => y,
            (Some(x), Some(y)) => wa * x + wb * y,
            (Some(x), None) => x,
            (None, Some(y)) => y,
            (None, None) => 0.0,
        })
        .collect();
    RgbdFrame::new(
        Grid::from_vec(a.width(), a.height(), rgb)?,
        DepthMap::new(a.width(), a.height(), depth)?,
    )
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-call seed derived from the run seed.
pub fn derive_seed(seed: u64, clip_index: usize, stage: DenoiseStage, purpose: u64) -> u64 {
    let s = match stage {
        DenoiseStage::Clip => 1,
        DenoiseStage::Refine => 2,
    };
    mix(mix(mix(seed) ^ clip_index as u64) ^ (s << 8 | purpose))
}

/// `(1 - level) * x + level * n` with standard normal `n`; NaN cells stay NaN.
pub fn add_noise(grid: &Grid<Rgb>, level: f64, rng: &mut ChaCha8Rng) -> Grid<Rgb> {
    let keep = (1.0 - level) as f32;
    let lvl = level as f32;
    grid.map(|px| {
        std::array::from_fn(|c| {
            let n: f32 = StandardNormal.sample(rng);
            keep * px[c] + lvl * n
        })
    })
}

/// Record of one denoiser call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiseCall {
    pub clip_index: usize,
    pub stage: DenoiseStage,
    pub frames: Range<usize>,
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub frames: Vec<RgbdFrame>,
    pub cache: WorldCache,
    pub schedule: ClipSchedule,
    pub calls: Vec<DenoiseCall>,
}

impl SampleOutput {
    /// Number of denoiser calls that touched each frame.
    pub fn calls_per_frame(&self) -> Vec<usize> {
        let mut n = vec![0; self.frames.len()];
        for c in &self.calls {
            for k in c.frames.clone() {
                n[k] += 1;
            }
        }
        n
    }
}

struct Runner<'a, D: Denoiser> {
    denoiser: D,
    cfg: &'a SamplerConfig,
    calls: Vec<DenoiseCall>,
}

impl<D: Denoiser> Runner<'_, D> {
    #[allow(clippy::too_many_arguments)]
    fn call(
        &mut self,
        clip_index: usize,
        stage: DenoiseStage,
        frames: Range<usize>,
        clean: &[Option<Grid<Rgb>>],
        levels: &[f64],
        conditions: &[PackedCondition],
    ) -> Result<Vec<Grid<Rgb>>> {
        let layout = conditions[0].layout;
        let normalization = conditions[0].normalization;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, clip_index, stage, 0));
        let zeros = Grid::filled(layout.width, layout.packed_height(), [0.0f32; 3]);
        let noisy: Vec<Grid<Rgb>> = clean
            .iter()
            .zip(levels)
            .map(|(g, &lvl)| add_noise(g.as_ref().unwrap_or(&zeros), lvl, &mut rng))
            .collect();
        let request = DenoiseRequest {
            clip_index,
            stage,
            frames: frames.clone(),
            layout,
            normalization,
            noisy: &noisy,
            noise_levels: levels,
            conditions,
            seed: derive_seed(self.cfg.seed, clip_index, stage, 1),
        };
        let out = self.denoiser.denoise(&request)?;
        if out.len() != frames.len() {
            return Err(Error::Denoiser(format!(
                "requested {} frames, denoiser returned {}",
                frames.len(),
                out.len()
            )));
        }
        if let Some(g) = out.iter().find(|g| g.dims() != (layout.width, layout.packed_height())) {
            return Err(Error::Denoiser(format!(
                "denoiser returned a {}x{} frame, expected {}x{}",
                g.width(),
                g.height(),
                layout.width,
                layout.packed_height()
            )));
        }
        self.calls.push(DenoiseCall {
            clip_index,
            stage,
            frames,
        });
        Ok(out)
    }
}

/// Generates one frame per trajectory camera starting from `init_frame`
/// (which must belong to `trajectory[0]`).
pub fn run_autoregressive<D: Denoiser>(
    init_frame: &RgbdFrame,
    trajectory: &[Camera],
    denoiser: D,
    cull: &CullingConfig,
    cfg: &SamplerConfig,
) -> Result<SampleOutput> {
    let Some(first) = trajectory.first() else {
        return Err(Error::InvalidInput("trajectory is empty".into()));
    };
    cfg.validate()?;
    cull.validate()?;
    let dims = (first.intrinsics.width, first.intrinsics.height);
    if trajectory.iter().any(|c| (c.intrinsics.width, c.intrinsics.height) != dims) {
        return Err(Error::DimensionMismatch("trajectory cameras differ in image size".into()));
    }
    if init_frame.rgb.dims() != dims {
        return Err(Error::DimensionMismatch(format!(
            "initial frame is {}x{}, cameras are {}x{}",
            init_frame.width(),
            init_frame.height(),
            dims.0,
            dims.1
        )));
    }
    let schedule = plan_clips(trajectory.len(), cfg.clip_length, cfg.overlap())?;
    let mut cache = WorldCache::init(init_frame, first, 0)?;
    let mut frames: Vec<Option<RgbdFrame>> = vec![None; trajectory.len()];
    let mut cached = vec![false; trajectory.len()];
    cached[0] = true;
    let mut runner = Runner {
        denoiser,
        cfg,
        calls: Vec::new(),
    };
    let lvl = cfg.refine_noise_level;

    for (ci, clip) in schedule.clips.iter().enumerate() {
        let conditions = clip
            .clone()
            .map(|k| make_condition(&cache, &trajectory[k], &cull.splat, k))
            .collect::<Result<Vec<_>>>()?;
        let packed = pack_conditions(&conditions, cfg.placeholder_height, cfg.pool_factor)?;
        let (layout, norm) = (packed[0].layout, packed[0].normalization);
        let overlap = if cfg.smooth {
            schedule.overlap_with_previous(ci)
        } else {
            clip.start..clip.start
        };

        let mut clean = Vec::with_capacity(clip.len());
        let mut levels = Vec::with_capacity(clip.len());
        for k in clip.clone() {
            if overlap.contains(&k) {
                let prev = frames[k].as_ref().expect("overlap generated by previous clip");
                clean.push(Some(pack_frame(prev, &layout, &norm)?));
                levels.push(lvl);
            } else {
                clean.push(None);
                levels.push(1.0);
            }
        }
        let out = runner.call(ci, DenoiseStage::Clip, clip.clone(), &clean, &levels, &packed)?;
        let generated = out
            .iter()
            .map(|g| unpack_frame(g, &layout, &norm))
            .collect::<Result<Vec<_>>>()?;

        if overlap.is_empty() {
            for (k, f) in clip.clone().zip(generated) {
                frames[k] = Some(f);
            }
        } else {
            let prev_range = schedule.clips[ci - 1].clone();
            let prev: Vec<RgbdFrame> = prev_range
                .clone()
                .map(|k| frames[k].clone().expect("previous clip complete"))
                .collect();
            let merged = merge_overlap(
                &ClipFrames {
                    range: prev_range,
                    frames: &prev,
                },
                &ClipFrames {
                    range: clip.clone(),
                    frames: &generated,
                },
                cfg,
            )?;
            let n_overlap = merged.range.len();
            let refine_range = if cfg.refine_whole_segment {
                clip.clone()
            } else {
                merged.range.clone()
            };
            let refine_input: Vec<&RgbdFrame> = merged
                .frames
                .iter()
                .chain(&generated[n_overlap..])
                .take(refine_range.len())
                .collect();
            let refine_clean = refine_input
                .iter()
                .map(|f| pack_frame(f, &layout, &norm).map(Some))
                .collect::<Result<Vec<_>>>()?;
            let refined = runner.call(
                ci,
                DenoiseStage::Refine,
                refine_range.clone(),
                &refine_clean,
                &vec![merged.noise_level; refine_range.len()],
                &packed[..refine_range.len()],
            )?;
            for (k, g) in refine_range.clone().zip(&refined) {
                frames[k] = Some(unpack_frame(g, &layout, &norm)?);
            }
            for (k, f) in clip.clone().zip(generated).skip(refine_range.len()) {
                frames[k] = Some(f);
            }
        }
        if ci == 0 {
            // the first frame is the given input, not a generated one
            frames[0] = Some(init_frame.clone());
        }
        for k in clip.clone() {
            if !cached[k] {
                let f = frames[k].as_ref().expect("clip complete");
                cache.update(f, &trajectory[k], cull, k as u32)?;
                cached[k] = true;
            }
        }
    }

    Ok(SampleOutput {
        frames: frames.into_iter().map(|f| f.expect("every frame scheduled")).collect(),
        cache,
        schedule,
        calls: runner.calls,
    })
}
