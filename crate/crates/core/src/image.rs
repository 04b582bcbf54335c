//! Image containers, colour conversion and 8-bit frame I/O.
//!
//! All rasters are row-major with interleaved channels, so the sample for
//! pixel `(x, y)` and channel `c` lives at `(y * width + x) * channels + c`.
//! Intensities are display-referred and normalized to `[0, 1]`; no
//! linearization happens before restoration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Raster dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
        }
    }

    pub const fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub const fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ensure_same(&self, other: &Shape, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::Shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }

    fn ensure_rgb(&self, what: &str) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::Shape(format!(
                "{what} needs 3 channels, got {}",
                self.channels
            )));
        }
        Ok(())
    }
}

fn check_len(shape: &Shape, len: usize) -> Result<()> {
    if shape.len() != len {
        return Err(Error::Shape(format!(
            "buffer of {len} samples does not match {}x{}x{}",
            shape.width, shape.height, shape.channels
        )));
    }
    Ok(())
}

/// Unconstrained H×W×C raster of finite values.
///
/// Carries signed quantities: prediction errors, raw predictor logits and
/// gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    shape: Shape,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        check_len(&shape, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        Ok(Self { shape, data })
    }

    /// For data that is finite by construction.
    pub(crate) fn from_finite(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(shape.len(), data.len(), "raster length");
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { shape, data }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.shape.width + x) * self.shape.channels + c]
    }
}

/// H×W×C raster of intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Builds an image, rejecting samples that are non-finite or outside `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(width, height, channels);
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("expected 1 or 3 channels, got {channels}")));
        }
        check_len(&shape, data.len())?;
        if let Some(i) = data
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::Domain(format!(
                "sample {} at index {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds an image by clamping every sample into `[0, 1]`.
    pub fn from_clamped(shape: Shape, mut data: Vec<f64>) -> Result<Self> {
        check_len(&shape, data.len())?;
        for v in &mut data {
            if !v.is_finite() {
                return Err(Error::Domain("non-finite sample".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(shape.width, shape.height, shape.channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        let value = value.clamp(0.0, 1.0);
        Self {
            shape: Shape::new(width, height, channels),
            data: vec![value; width * height * channels],
        }
    }

    /// Builds an image from a per-sample closure; results are clamped.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(x, y, c);
                    data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
                }
            }
        }
        Self {
            shape: Shape::new(width, height, channels),
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.shape.width + x) * self.shape.channels + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let ch = self.shape.channels;
        let i = (y * self.shape.width + x) * ch;
        &self.data[i..i + ch]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.shape.channels)
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            shape: self.shape,
            data: self.data.clone(),
        }
    }

    /// Per-pixel minimum over channels.
    pub fn channel_min(&self) -> ScalarField {
        let data = self
            .pixels()
            .map(|p| p.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        ScalarField {
            width: self.shape.width,
            height: self.shape.height,
            data,
        }
    }

    /// ITU-R BT.601 luma; single-channel images are returned as is.
    pub fn luma(&self) -> ScalarField {
        let data = if self.shape.channels == 1 {
            self.data.clone()
        } else {
            self.pixels()
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect()
        };
        ScalarField {
            width: self.shape.width,
            height: self.shape.height,
            data,
        }
    }
}

/// H×W single-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(&Shape::new(width, height, 1), data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Single-channel image view of the field, clamped into `[0, 1]`.
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y))
    }

    pub fn ensure_matches(&self, shape: &Shape, what: &str) -> Result<()> {
        if self.width != shape.width || self.height != shape.height {
            return Err(Error::Shape(format!(
                "{what}: field {}x{} vs raster {}x{}",
                self.width, self.height, shape.width, shape.height
            )));
        }
        Ok(())
    }
}

/// CIE 1976 L*a*b* colour relative to the D65 white.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabPixel {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabPixel {
    pub const fn new(l: f64, a: f64, b: f64) -> Self {
        Self { l, a, b }
    }
}

/// Row-major raster of Lab pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<LabPixel>,
}

pub(crate) const XYZ_FROM_RGB: [[f64; 3]; 3] = [
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
];
pub(crate) const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

pub(crate) fn srgb_decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

/// Converts one sRGB-encoded colour to L*a*b*.
pub fn srgb_pixel_to_lab(rgb: [f64; 3]) -> LabPixel {
    let lin = rgb.map(srgb_decode);
    let mut f = [0.0; 3];
    for (i, row) in XYZ_FROM_RGB.iter().enumerate() {
        let xyz = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
        f[i] = lab_f(xyz / D65_WHITE[i]);
    }
    LabPixel {
        l: (116.0 * f[1] - 16.0).max(0.0),
        a: 500.0 * (f[0] - f[1]),
        b: 200.0 * (f[1] - f[2]),
    }
}

/// Converts a 3-channel sRGB image to L*a*b*.
pub fn srgb_to_lab(img: &ImageBuffer) -> Result<LabImage> {
    img.shape().ensure_rgb("srgb_to_lab")?;
    Ok(LabImage {
        width: img.width(),
        height: img.height(),
        pixels: img
            .pixels()
            .map(|p| srgb_pixel_to_lab([p[0], p[1], p[2]]))
            .collect(),
    })
}

/// Bilinear resize using pixel-centre alignment and edge clamping.
pub fn resize_bilinear(img: &ImageBuffer, width: usize, height: usize) -> Result<ImageBuffer> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!(
            "resize target must be non-empty, got {width}x{height}"
        )));
    }
    if width == img.width() && height == img.height() {
        return Ok(img.clone());
    }
    let ch = img.channels();
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let xs = taps(width, img.width());
    let ys = taps(height, img.height());
    let mut data = Vec::with_capacity(width * height * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
                let bottom = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    ImageBuffer::from_clamped(Shape::new(width, height, ch), data)
}

/// Loads an 8-bit RGB or grayscale PNG/PPM frame.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let reader = ::image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| match e {
        ::image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let (width, height, channels, raw) = match decoded {
        ::image::DynamicImage::ImageLuma8(buf) => (buf.width(), buf.height(), 1, buf.into_raw()),
        ::image::DynamicImage::ImageRgb8(buf) => (buf.width(), buf.height(), 3, buf.into_raw()),
        other => {
            return Err(Error::Format(format!(
                "{}: expected 8-bit RGB or grayscale, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    ImageBuffer::new(
        width as usize,
        height as usize,
        channels,
        raw.into_iter().map(|b| b as f64 / 255.0).collect(),
    )
}

/// Quantizes a normalized intensity to a byte, rounding half to even.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

/// Writes an image as 8-bit PNG, or binary PPM/PGM when the extension is `.ppm`/`.pgm`.
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let color = match img.channels() {
        1 => ::image::ExtendedColorType::L8,
        _ => ::image::ExtendedColorType::Rgb8,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let format = match ext.as_deref() {
        Some("ppm") | Some("pgm") | Some("pnm") => ::image::ImageFormat::Pnm,
        _ => ::image::ImageFormat::Png,
    };
    ::image::save_buffer_with_format(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        color,
        format,
    )
    .map_err(|e| match e {
        ::image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}
