//! Row-major pixel grids: color images, depth maps and masks.

use crate::error::{Error, Result};

/// Linear RGB triple, nominally in `[0, 1]`.
pub type Rgb = [f32; 3];

/// Dense row-major grid. Pixel `(x, y)` lives at `y * width + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "grid {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[self.index(x, y)]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        let i = self.index(x, y);
        &mut self.data[i]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

pub type ColorImage = Grid<Rgb>;
pub type Mask = Grid<bool>;

impl Mask {
    pub fn count(&self) -> usize {
        self.as_slice().iter().filter(|&&m| m).count()
    }
}

/// Metric z-depth in meters. Non-finite and non-positive inputs are stored
/// as `0.0` and read back as invalid (sky, holes).
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    grid: Grid<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let mut grid = Grid::from_vec(width, height, values)?;
        for v in grid.as_mut_slice() {
            if !(v.is_finite() && *v > 0.0) {
                *v = 0.0;
            }
        }
        Ok(Self { grid })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            grid: Grid::filled(width, height, 0.0),
        }
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height])
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Depth at flat index `i`, `None` when invalid.
    #[inline]
    pub fn at(&self, i: usize) -> Option<f64> {
        let v = self.grid.as_slice()[i];
        (v > 0.0).then_some(v)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.at(self.grid.index(x, y))
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.grid.as_slice()[i] > 0.0
    }

    /// Raw storage; invalid pixels read `0.0`.
    pub fn raw(&self) -> &[f64] {
        self.grid.as_slice()
    }

    pub fn set(&mut self, x: usize, y: usize, depth: Option<f64>) {
        let v = match depth {
            Some(d) if d.is_finite() && d > 0.0 => d,
            _ => 0.0,
        };
        *self.grid.get_mut(x, y) = v;
    }

    pub fn valid_mask(&self) -> Mask {
        self.grid.map(|&v| v > 0.0)
    }

    pub fn valid_count(&self) -> usize {
        self.grid.as_slice().iter().filter(|&&v| v > 0.0).count()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.grid.as_slice().iter().copied().filter(|&v| v > 0.0)
    }

    /// Multiplies every valid depth by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid.map(|&v| if v > 0.0 { v * s } else { 0.0 }),
        }
    }
}

/// Color plus depth of one frame, same dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    pub rgb: ColorImage,
    pub depth: DepthMap,
}

impl RgbdFrame {
    pub fn new(rgb: ColorImage, depth: DepthMap) -> Result<Self> {
        if rgb.dims() != depth.dims() {
            return Err(Error::DimensionMismatch(format!(
                "rgb is {}x{} but depth is {}x{}",
                rgb.width(),
                rgb.height(),
                depth.width(),
                depth.height()
            )));
        }
        if let Some(c) = rgb
            .as_slice()
            .iter()
            .flatten()
            .find(|c| !(0.0..=1.0).contains(*c))
        {
            return Err(Error::InvalidInput(format!(
                "color channel {c} outside [0, 1]"
            )));
        }
        Ok(Self { rgb, depth })
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }
}

/// Clamps each channel into `[0, 1]`; NaN becomes 0.
pub fn clamp_rgb(c: Rgb) -> Rgb {
    c.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_invalid_encoding() {
        let d = DepthMap::new(2, 2, vec![1.0, -1.0, f64::NAN, f64::INFINITY]).unwrap();
        assert_eq!(d.at(0), Some(1.0));
        assert_eq!(d.valid_count(), 1);
        assert_eq!(d.raw(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn grid_length_checked() {
        assert!(Grid::from_vec(2, 2, vec![0u8; 3]).is_err());
    }

    #[test]
    fn frame_rejects_out_of_range_color() {
        let rgb = Grid::filled(1, 1, [1.5f32, 0.0, 0.0]);
        let depth = DepthMap::constant(1, 1, 1.0).unwrap();
        assert!(matches!(
            RgbdFrame::new(rgb, depth),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn frame_rejects_dimension_mismatch() {
        let rgb = Grid::filled(2, 1, [0.0f32; 3]);
        let depth = DepthMap::constant(1, 1, 1.0).unwrap();
        assert!(matches!(
            RgbdFrame::new(rgb, depth),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
