//! Intensity grids and multi-frame raster stacks.

use crate::error::{Error, Result};

/// Field of view edge of the reference instrument, in µm.
pub const FOV_UM: f64 = 20.0;
/// Pixels per field-of-view edge for the reference instrument.
pub const FOV_PX: usize = 256;
/// Default pixel pitch, 20 µm over 256 px.
pub const DEFAULT_PIXEL_PITCH_UM: f64 = FOV_UM / FOV_PX as f64;

/// Single-channel floating point image, row-major, with physical pixel pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixel_pitch_um: f64,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixel_pitch_um: f64, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        if !(pixel_pitch_um > 0.0 && pixel_pitch_um.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "pixel pitch must be positive, got {pixel_pitch_um}"
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "non-finite sample at ({}, {})",
                i % width,
                i / width
            )));
        }
        Ok(Self {
            width,
            height,
            pixel_pitch_um,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, pixel_pitch_um: f64, value: f64) -> Result<Self> {
        Self::new(width, height, pixel_pitch_um, vec![value; width * height])
    }

    /// Builds an image from a closure over `(x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        pixel_pitch_um: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, pixel_pitch_um, data)
    }

    /// Same geometry, new samples. Used by filters whose output is finite by construction.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            width: self.width,
            height: self.height,
            pixel_pitch_um: self.pixel_pitch_um,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_pitch_um(&self) -> f64 {
        self.pixel_pitch_um
    }

    pub fn set_pixel_pitch_um(&mut self, pitch: f64) -> Result<()> {
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "pixel pitch must be positive, got {pitch}"
            )));
        }
        self.pixel_pitch_um = pitch;
        Ok(())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Multiplies every sample by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.pixel_pitch_um,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Co-registered frames of one field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterStack {
    frames: Vec<Image>,
}

impl RasterStack {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidImage("raster stack needs at least one frame".into()))?;
        let dims = first.dims();
        let pitch = first.pixel_pitch_um();
        for (i, f) in frames.iter().enumerate().skip(1) {
            if f.dims() != dims {
                return Err(Error::InvalidImage(format!(
                    "frame {i} is {}x{}, expected {}x{}",
                    f.width(),
                    f.height(),
                    dims.0,
                    dims.1
                )));
            }
            if f.pixel_pitch_um() != pitch {
                return Err(Error::InvalidImage(format!(
                    "frame {i} pixel pitch {} differs from {pitch}",
                    f.pixel_pitch_um()
                )));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn pixel_pitch_um(&self) -> f64 {
        self.frames[0].pixel_pitch_um()
    }

    pub fn set_pixel_pitch_um(&mut self, pitch: f64) -> Result<()> {
        for f in &mut self.frames {
            f.set_pixel_pitch_um(pitch)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pitch_matches_field_of_view() {
        assert_eq!(DEFAULT_PIXEL_PITCH_UM, 0.078125);
        assert_eq!(FOV_PX as f64 * DEFAULT_PIXEL_PITCH_UM, FOV_UM);
    }

    #[test]
    fn rejects_bad_images() {
        assert!(Image::new(2, 2, 1.0, vec![0.0; 3]).is_err());
        assert!(Image::new(2, 1, 0.0, vec![0.0; 2]).is_err());
        assert!(Image::new(2, 1, 1.0, vec![0.0, f64::NAN]).is_err());
        assert!(Image::new(0, 1, 1.0, vec![]).is_err());
    }

    #[test]
    fn stack_requires_matching_frames() {
        let a = Image::filled(4, 4, 1.0, 0.0).unwrap();
        let b = Image::filled(4, 3, 1.0, 0.0).unwrap();
        assert!(RasterStack::new(vec![]).is_err());
        assert!(RasterStack::new(vec![a.clone(), b]).is_err());
        assert_eq!(RasterStack::new(vec![a.clone(), a]).unwrap().len(), 2);
    }
}
