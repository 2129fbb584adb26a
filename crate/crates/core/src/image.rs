//! RGB floating-point raster, bounding boxes, and PNG/JPEG codecs.
//!
//! Pixels are stored as `f64` intensities in `[0, 1]`, row-major with the
//! three channels interleaved. Quantization to 8 bits happens only when an
//! image is encoded.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Creates an image filled with one colour. Components are clamped to `[0, 1]`.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let px = rgb.map(clamp_unit);
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for _ in 0..width * height {
            data.extend_from_slice(&px);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Wraps interleaved RGB data. Values are clamped to `[0, 1]`; NaN maps to 0.
    pub fn from_vec(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * CHANNELS {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} RGB image needs {} values, got {}",
                width,
                height,
                width * height * CHANNELS,
                data.len()
            )));
        }
        data.iter_mut().for_each(|v| *v = clamp_unit(*v));
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    /// Sets one pixel, clamping each component to `[0, 1]`.
    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[i + c] = clamp_unit(v);
        }
    }

    /// Decodes a PNG or JPEG file. Each 8-bit channel value `v` maps to `v / 255`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let format = ::image::guess_format(bytes)
            .map_err(|_| Error::UnsupportedFormat("unrecognized image header".into()))?;
        if !matches!(
            format,
            ::image::ImageFormat::Png | ::image::ImageFormat::Jpeg
        ) {
            return Err(Error::UnsupportedFormat(format!("{format:?}")));
        }
        let img = ::image::load_from_memory_with_format(bytes, format)
            .map_err(|e| Error::Codec(e.to_string()))?;
        if img.width() == 0 || img.height() == 0 {
            return Err(Error::ZeroDimension {
                width: img.width(),
                height: img.height(),
            });
        }
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data,
        })
    }

    /// Quantizes to 8 bits per channel: round half up, clamped to `[0, 255]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let raw =
            ::image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
                .expect("buffer length matches dimensions");
        let mut out = Cursor::new(Vec::new());
        raw.write_to(&mut out, ::image::ImageFormat::Png)
            .map_err(|e| Error::Codec(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// 8-bit quantization used at encode time.
#[inline]
pub fn quantize(v: f64) -> u8 {
    let scaled = (v * 255.0 + 0.5).floor();
    if scaled.is_nan() {
        0
    } else {
        scaled.clamp(0.0, 255.0) as u8
    }
}

#[inline]
fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension {
            width: width as u32,
            height: height as u32,
        });
    }
    Ok(())
}

/// Axis-aligned pixel rectangle: left `x`, top `y`, width `w`, height `h`.
///
/// Serialized as the array `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl From<[usize; 4]> for BBox {
    fn from([x, y, w, h]: [usize; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const MIN_SIDE: usize = 3;

    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        BBox { x, y, w, h }
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn same_size(&self, other: &BBox) -> bool {
        self.w == other.w && self.h == other.h
    }

    /// Checks the standalone shape invariant (`w, h >= 3`).
    pub fn validate_shape(&self) -> Result<()> {
        if self.w < Self::MIN_SIDE || self.h < Self::MIN_SIDE {
            return Err(self.invalid(format!(
                "sides must be at least {}, got {}x{}",
                Self::MIN_SIDE,
                self.w,
                self.h
            )));
        }
        Ok(())
    }

    /// True when the box lies fully inside a `width x height` image.
    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    /// Checks the shape invariant plus the existence of a one-pixel exterior
    /// ring inside a `width x height` image.
    pub fn validate_in(&self, width: usize, height: usize) -> Result<()> {
        self.validate_shape()?;
        if self.x < 1 || self.y < 1 || self.right() + 1 > width || self.bottom() + 1 > height {
            return Err(self.invalid(format!(
                "exterior ring must lie inside the {width}x{height} image"
            )));
        }
        Ok(())
    }

    fn invalid(&self, reason: String) -> Error {
        Error::InvalidBBox {
            bbox: *self,
            reason,
        }
    }
}
