//! Partial RGB-D conditions and the height-packed model layout.
//!
//! A packed frame stacks, top to bottom, the RGB region (`H` rows), a
//! constant placeholder band (`placeholder_height` rows) and the depth
//! region (`H` rows, normalized depth replicated into all three channels).
//! The mask is packed the same way with the visibility mask repeated in
//! both regions, then max-pooled by `pool_factor` for the latent grid.

use serde::{Deserialize, Serialize};

use crate::cache::WorldCache;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{clamp_rgb, ColorImage, DepthMap, Grid, Mask, Rgb, RgbdFrame};
use crate::render::SplatConfig;

pub const DEFAULT_PLACEHOLDER_HEIGHT: usize = 8;
pub const DEFAULT_POOL_FACTOR: usize = 8;

/// Smallest depth range the normalization will divide by.
const MIN_DEPTH_RANGE: f64 = 1e-6;

/// The cache as seen from one target view.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionFrame {
    pub view_index: usize,
    /// Zero where `mask` is unset.
    pub partial_rgb: ColorImage,
    /// Invalid where `mask` is unset.
    pub partial_depth: DepthMap,
    pub mask: Mask,
}

impl ConditionFrame {
    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }
}

/// Renders the cache into `camera` as a condition frame.
pub fn make_condition(
    cache: &WorldCache,
    camera: &Camera,
    cfg: &SplatConfig,
    view_index: usize,
) -> Result<ConditionFrame> {
    if cache.is_empty() {
        return Err(Error::InvalidInput(
            "cannot render a condition from an empty cache".into(),
        ));
    }
    cfg.validate()?;
    let out = cache.render(camera, cfg);
    Ok(ConditionFrame {
        view_index,
        partial_rgb: out.partial_rgb,
        partial_depth: out.partial_depth,
        mask: out.mask,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackLayout {
    pub width: usize,
    /// Height `H` of one source frame.
    pub frame_height: usize,
    pub placeholder_height: usize,
    pub pool_factor: usize,
}

impl PackLayout {
    pub fn new(width: usize, frame_height: usize, placeholder_height: usize, pool_factor: usize) -> Result<Self> {
        let layout = Self {
            width,
            frame_height,
            placeholder_height,
            pool_factor,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.frame_height == 0 {
            return Err(Error::InvalidConfig("empty frame layout".into()));
        }
        let f = self.pool_factor;
        if f == 0 || !self.width.is_multiple_of(f) || !self.packed_height().is_multiple_of(f) {
            return Err(Error::InvalidConfig(format!(
                "pool factor {f} must divide the packed size {}x{}",
                self.width,
                self.packed_height()
            )));
        }
        Ok(())
    }

    pub fn packed_height(&self) -> usize {
        2 * self.frame_height + self.placeholder_height
    }

    /// First row of the depth region.
    pub fn depth_row(&self) -> usize {
        self.frame_height + self.placeholder_height
    }

    pub fn pooled_dims(&self) -> (usize, usize) {
        (self.width / self.pool_factor, self.packed_height() / self.pool_factor)
    }
}

/// Affine map from metric depth to `[0, 1]`, shared by a whole sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthNormalization {
    pub depth_min: f64,
    pub depth_max: f64,
}

impl Default for DepthNormalization {
    fn default() -> Self {
        Self {
            depth_min: 0.0,
            depth_max: 1.0,
        }
    }
}

impl DepthNormalization {
    /// Min/max over every valid depth; defaults to `[0, 1]` when nothing is
    /// valid and widens degenerate ranges to `MIN_DEPTH_RANGE`.
    pub fn from_depths<'a>(maps: impl IntoIterator<Item = &'a DepthMap>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for m in maps {
            for d in m.valid_values() {
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
        if !lo.is_finite() {
            return Self::default();
        }
        if hi - lo < MIN_DEPTH_RANGE {
            hi = lo + MIN_DEPTH_RANGE;
        }
        Self {
            depth_min: lo,
            depth_max: hi,
        }
    }

    pub fn range(&self) -> f64 {
        self.depth_max - self.depth_min
    }

    #[inline]
    pub fn normalize(&self, d: f64) -> f32 {
        ((d - self.depth_min) / self.range()) as f32
    }

    #[inline]
    pub fn denormalize(&self, n: f32) -> f64 {
        self.depth_min + n as f64 * self.range()
    }

    /// Worst-case depth error of one normalize/denormalize round trip.
    pub fn quantization_step(&self) -> f64 {
        self.range() * f32::EPSILON as f64
    }
}

/// One frame in model layout.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedCondition {
    pub view_index: usize,
    pub layout: PackLayout,
    pub normalization: DepthNormalization,
    pub grid: Grid<Rgb>,
    /// `1.0` visible, `0.0` hole; placeholder rows are `0.0`.
    pub mask: Grid<f32>,
    pub pooled_mask: Grid<f32>,
}

/// Fills the RGB and depth regions of a packed grid. Depth pixels for which
/// `depth` yields `None` receive `hole`.
fn pack_regions(
    layout: &PackLayout,
    rgb: &ColorImage,
    depth: impl Fn(usize) -> Option<f64>,
    norm: &DepthNormalization,
    hole: f32,
) -> Grid<Rgb> {
    let w = layout.width;
    let mut grid = Grid::filled(w, layout.packed_height(), [0.0f32; 3]);
    let data = grid.as_mut_slice();
    let n = w * layout.frame_height;
    data[..n].copy_from_slice(rgb.as_slice());
    let base = layout.depth_row() * w;
    for i in 0..n {
        let v = depth(i).map_or(hole, |d| norm.normalize(d));
        data[base + i] = [v; 3];
    }
    grid
}

/// Max-pools by `f`; trailing rows/columns that do not fill a cell are dropped.
pub fn max_pool(mask: &Grid<f32>, f: usize) -> Grid<f32> {
    let (pw, ph) = (mask.width() / f, mask.height() / f);
    let mut out = Grid::filled(pw, ph, 0.0f32);
    for y in 0..ph * f {
        for x in 0..pw * f {
            let v = *mask.get(x, y);
            let cell = out.get_mut(x / f, y / f);
            if v > *cell {
                *cell = v;
            }
        }
    }
    out
}

/// Packs a sequence of conditions with one shared depth normalization.
pub fn pack_conditions(
    frames: &[ConditionFrame],
    placeholder_height: usize,
    pool_factor: usize,
) -> Result<Vec<PackedCondition>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let layout = PackLayout::new(first.width(), first.height(), placeholder_height, pool_factor)?;
    for f in frames {
        let dims = [f.partial_rgb.dims(), f.partial_depth.dims(), f.mask.dims()];
        if dims.iter().any(|&d| d != (layout.width, layout.frame_height)) {
            return Err(Error::DimensionMismatch(format!(
                "condition {} does not match {}x{}",
                f.view_index, layout.width, layout.frame_height
            )));
        }
    }
    let norm = DepthNormalization::from_depths(frames.iter().map(|f| &f.partial_depth));
    Ok(frames.iter().map(|f| pack_condition(f, &layout, &norm)).collect())
}

/// Packs one condition frame with an externally chosen normalization.
pub fn pack_condition(frame: &ConditionFrame, layout: &PackLayout, norm: &DepthNormalization) -> PackedCondition {
    let grid = pack_regions(
        layout,
        &frame.partial_rgb,
        |i| frame.mask.as_slice()[i].then(|| frame.partial_depth.at(i)).flatten(),
        norm,
        0.0,
    );
    let w = layout.width;
    let n = w * layout.frame_height;
    let mut mask = Grid::filled(w, layout.packed_height(), 0.0f32);
    let base = layout.depth_row() * w;
    for (i, &m) in frame.mask.as_slice().iter().enumerate() {
        let v = if m { 1.0 } else { 0.0 };
        mask.as_mut_slice()[i] = v;
        mask.as_mut_slice()[base + i] = v;
    }
    debug_assert_eq!(base + n, mask.len());
    let pooled_mask = max_pool(&mask, layout.pool_factor);
    PackedCondition {
        view_index: frame.view_index,
        layout: *layout,
        normalization: *norm,
        grid,
        mask,
        pooled_mask,
    }
}

fn check_packed_dims(layout: &PackLayout, grid_dims: (usize, usize), what: &str) -> Result<()> {
    if grid_dims != (layout.width, layout.packed_height()) {
        return Err(Error::MalformedLayout(format!(
            "{what} is {}x{}, layout expects {}x{}",
            grid_dims.0,
            grid_dims.1,
            layout.width,
            layout.packed_height()
        )));
    }
    Ok(())
}

/// Inverse of [`pack_condition`].
pub fn unpack_condition(packed: &PackedCondition) -> Result<ConditionFrame> {
    let layout = &packed.layout;
    layout.validate().map_err(|e| Error::MalformedLayout(e.to_string()))?;
    check_packed_dims(layout, packed.grid.dims(), "grid")?;
    check_packed_dims(layout, packed.mask.dims(), "mask")?;
    let (w, h) = (layout.width, layout.frame_height);
    let n = w * h;
    let base = layout.depth_row() * w;
    let m = packed.mask.as_slice();
    let g = packed.grid.as_slice();

    let placeholder = &m[n..base];
    if placeholder.iter().any(|&v| v != 0.0) || g[n..base].iter().flatten().any(|&v| v != 0.0) {
        return Err(Error::MalformedLayout("placeholder rows are not constant".into()));
    }
    if m[..n] != m[base..] {
        return Err(Error::MalformedLayout(
            "RGB and depth mask regions differ".into(),
        ));
    }
    if m[..n].iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::MalformedLayout("mask is not binary".into()));
    }

    let mask: Vec<bool> = m[..n].iter().map(|&v| v == 1.0).collect();
    let depth: Vec<f64> = (0..n)
        .map(|i| {
            if mask[i] {
                packed.normalization.denormalize(g[base + i][0])
            } else {
                0.0
            }
        })
        .collect();
    Ok(ConditionFrame {
        view_index: packed.view_index,
        partial_rgb: Grid::from_vec(w, h, g[..n].to_vec())?,
        partial_depth: DepthMap::new(w, h, depth)?,
        mask: Grid::from_vec(w, h, mask)?,
    })
}

/// Packs a complete frame (model input or output). Invalid depth becomes NaN.
pub fn pack_frame(frame: &RgbdFrame, layout: &PackLayout, norm: &DepthNormalization) -> Result<Grid<Rgb>> {
    if frame.rgb.dims() != (layout.width, layout.frame_height) {
        return Err(Error::DimensionMismatch(format!(
            "frame is {}x{}, layout expects {}x{}",
            frame.width(),
            frame.height(),
            layout.width,
            layout.frame_height
        )));
    }
    Ok(pack_regions(layout, &frame.rgb, |i| frame.depth.at(i), norm, f32::NAN))
}

/// Inverse of [`pack_frame`]. Colors are clamped to `[0, 1]`; non-finite
/// depth cells come back invalid.
pub fn unpack_frame(grid: &Grid<Rgb>, layout: &PackLayout, norm: &DepthNormalization) -> Result<RgbdFrame> {
    check_packed_dims(layout, grid.dims(), "frame")?;
    let (w, h) = (layout.width, layout.frame_height);
    let n = w * h;
    let base = layout.depth_row() * w;
    let g = grid.as_slice();
    let rgb: Vec<Rgb> = g[..n].iter().map(|&c| clamp_rgb(c)).collect();
    let depth: Vec<f64> = g[base..base + n]
        .iter()
        .map(|c| {
            let v = c[0];
            if v.is_finite() {
                norm.denormalize(v)
            } else {
                f64::NAN
            }
        })
        .collect();
    RgbdFrame::new(Grid::from_vec(w, h, rgb)?, DepthMap::new(w, h, depth)?)
}
