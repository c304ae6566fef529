//! Depth alignment for annotating videos with consistent metric depth.
//!
//! Two steps: a masked least-squares fit of `scale / d_src + bias` to
//! `1 / d_ref` in disparity space, then a metric rescale given by the ratio
//! of inter-quantile ranges of a metric estimate and the relative depth.
//! The rescale applies to both depth and camera translation, so the
//! unprojected scene changes by a similarity transform only.

use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::image::{DepthMap, Mask};

pub const DEFAULT_QUANTILE_LO: f64 = 0.2;
pub const DEFAULT_QUANTILE_HI: f64 = 0.8;

/// Relative threshold on the centered design-matrix column below which the
/// fit is considered rank deficient.
const COLLINEAR_TOLERANCE: f64 = 1e-12;

/// Neumaier-compensated accumulator. Summation order is fixed by the caller,
/// so results do not depend on threading.
#[derive(Clone, Copy, Debug, Default)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSolution {
    pub scale: f64,
    /// Disparity offset in 1/m.
    pub bias: f64,
    /// Root-mean-square disparity error over the pixels used.
    pub residual: f64,
    pub valid_count: usize,
}

impl AlignmentSolution {
    /// `1 / (scale / d + bias)`; pixels whose aligned disparity is not
    /// positive become invalid.
    pub fn apply(&self, d_src: &DepthMap) -> DepthMap {
        let values = d_src
            .raw()
            .iter()
            .map(|&d| {
                if d <= 0.0 {
                    return 0.0;
                }
                let disp = self.scale / d + self.bias;
                if disp > 0.0 {
                    1.0 / disp
                } else {
                    0.0
                }
            })
            .collect();
        DepthMap::new(d_src.width(), d_src.height(), values).expect("same size")
    }

    /// Masked sum of squared disparity errors for arbitrary parameters.
    pub fn objective(scale: f64, bias: f64, pairs: &[(f64, f64)]) -> f64 {
        let mut acc = KahanSum::default();
        for &(x, y) in pairs {
            let r = scale * x + bias - y;
            acc.add(r * r);
        }
        acc.value()
    }
}

/// Disparity pairs `(1/d_src, 1/d_ref)` at masked pixels valid in both maps.
pub fn disparity_pairs(d_src: &DepthMap, d_ref: &DepthMap, mask: &Mask) -> Result<Vec<(f64, f64)>> {
    if d_src.dims() != d_ref.dims() || d_src.dims() != mask.dims() {
        return Err(Error::DimensionMismatch(format!(
            "source {:?}, reference {:?} and mask {:?} must agree",
            d_src.dims(),
            d_ref.dims(),
            mask.dims()
        )));
    }
    Ok(mask
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .filter_map(|(i, _)| Some((1.0 / d_src.at(i)?, 1.0 / d_ref.at(i)?)))
        .collect())
}

/// Closed-form least squares on disparity pairs.
pub fn solve_disparity_pairs(pairs: &[(f64, f64)]) -> Result<AlignmentSolution> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "disparity alignment needs at least 2 valid masked pixels, got {n}"
        )));
    }
    let (mut sx, mut sy) = (KahanSum::default(), KahanSum::default());
    for &(x, y) in pairs {
        sx.add(x);
        sy.add(y);
    }
    let nf = n as f64;
    let (mx, my) = (sx.value() / nf, sy.value() / nf);

    let (mut sxx, mut sxy, mut raw_xx) = (KahanSum::default(), KahanSum::default(), KahanSum::default());
    for &(x, y) in pairs {
        let dx = x - mx;
        sxx.add(dx * dx);
        sxy.add(dx * (y - my));
        raw_xx.add(x * x);
    }
    let (sxx, sxy) = (sxx.value(), sxy.value());
    if !(sxx > COLLINEAR_TOLERANCE * raw_xx.value()) {
        return Err(Error::Degenerate(
            "source disparity is constant over the mask; scale and bias are not identifiable".into(),
        ));
    }
    let scale = sxy / sxx;
    let bias = my - scale * mx;
    let residual = (AlignmentSolution::objective(scale, bias, pairs) / nf).sqrt();
    if !(scale.is_finite() && bias.is_finite()) {
        return Err(Error::Degenerate("alignment produced non-finite parameters".into()));
    }
    Ok(AlignmentSolution {
        scale,
        bias,
        residual,
        valid_count: n,
    })
}

/// Fits `scale / d_src + bias ≈ 1 / d_ref` over masked pixels valid in both.
pub fn align_disparity(d_src: &DepthMap, d_ref: &DepthMap, mask: &Mask) -> Result<AlignmentSolution> {
    solve_disparity_pairs(&disparity_pairs(d_src, d_ref, mask)?)
}

/// One fit pooled over several frames.
pub fn align_disparity_pooled(frames: &[(&DepthMap, &DepthMap, &Mask)]) -> Result<AlignmentSolution> {
    let mut pairs = Vec::new();
    for (s, r, m) in frames {
        pairs.extend(disparity_pairs(s, r, m)?);
    }
    solve_disparity_pairs(&pairs)
}

/// Quantile with linear interpolation between the closest order
/// statistics: `h = (n - 1) p`, `q = x[⌊h⌋] + (h - ⌊h⌋)(x[⌊h⌋+1] - x[⌊h⌋])`.
/// Reorders `values`.
pub fn quantile(values: &mut [f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("quantile level {p} outside [0, 1]")));
    }
    let h = (values.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut a, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || rest.is_empty() {
        return Ok(a);
    }
    let b = rest.iter().copied().min_by(f64::total_cmp).expect("non-empty");
    Ok(a + frac * (b - a))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricScale {
    pub s_metric: f64,
    pub quantile_lo: f64,
    pub quantile_hi: f64,
}

impl MetricScale {
    pub fn new(s_metric: f64) -> Result<Self> {
        if !(s_metric > 0.0 && s_metric.is_finite()) {
            return Err(Error::InvalidInput(format!("metric scale must be positive, got {s_metric}")));
        }
        Ok(Self {
            s_metric,
            quantile_lo: DEFAULT_QUANTILE_LO,
            quantile_hi: DEFAULT_QUANTILE_HI,
        })
    }
}

fn inter_quantile_range(values: &mut [f64], lo: f64, hi: f64) -> Result<f64> {
    let q_hi = quantile(values, hi)?;
    let q_lo = quantile(values, lo)?;
    Ok(q_hi - q_lo)
}

/// Ratio of inter-quantile ranges, metric over relative, across every valid
/// pixel of the given maps.
pub fn metric_scale_pooled(
    relative: &[&DepthMap],
    metric: &[&DepthMap],
    quantile_lo: f64,
    quantile_hi: f64,
) -> Result<MetricScale> {
    if !(0.0 <= quantile_lo && quantile_lo < quantile_hi && quantile_hi <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "quantile levels must satisfy 0 <= lo < hi <= 1, got {quantile_lo}, {quantile_hi}"
        )));
    }
    let mut rel: Vec<f64> = relative.iter().flat_map(|m| m.valid_values()).collect();
    let mut met: Vec<f64> = metric.iter().flat_map(|m| m.valid_values()).collect();
    if rel.is_empty() || met.is_empty() {
        return Err(Error::Degenerate("metric scale needs valid pixels in both inputs".into()));
    }
    let denom = inter_quantile_range(&mut rel, quantile_lo, quantile_hi)?;
    if !(denom > 0.0) {
        return Err(Error::Degenerate(
            "relative depth has zero inter-quantile range".into(),
        ));
    }
    let num = inter_quantile_range(&mut met, quantile_lo, quantile_hi)?;
    let s_metric = num / denom;
    if !(s_metric > 0.0) {
        return Err(Error::Degenerate(
            "metric depth has zero inter-quantile range".into(),
        ));
    }
    Ok(MetricScale {
        s_metric,
        quantile_lo,
        quantile_hi,
    })
}

/// Metric scale of one frame with the default 0.2/0.8 quantiles.
pub fn metric_scale(relative: &DepthMap, metric: &DepthMap) -> Result<MetricScale> {
    metric_scale_pooled(&[relative], &[metric], DEFAULT_QUANTILE_LO, DEFAULT_QUANTILE_HI)
}

/// Scales depth and camera translation together.
pub fn apply_metric(depth: &DepthMap, pose: &CameraPose, s: &MetricScale) -> (DepthMap, CameraPose) {
    (depth.scaled(s.s_metric), pose.with_scaled_translation(s.s_metric))
}
