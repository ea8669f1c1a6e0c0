//! Raster buffers and deterministic PNG decoding.

use std::path::Path;

use image::{imageops::FilterType, ColorType, DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

/// BT.601 luma weights for R, G and B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A decoded raster, stored as row-major interleaved samples in `[0, 255]`.
///
/// Samples are kept as `f64` so that derived planes (luminance, resampled
/// images) share the same type as decoded 8-bit data.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, data: &[u8]) -> Result<Self> {
        Self::new(width, height, channels, data.iter().map(|&v| f64::from(v)).collect())
    }

    /// Builds a buffer by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(width, height, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Applies `f` to every sample, keeping the geometry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Single-channel BT.601 luminance. Gray inputs are returned unchanged.
    pub fn to_luminance(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let [wr, wg, wb] = LUMA_WEIGHTS;
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| wr * px[0] + wg * px[1] + wb * px[2])
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Quantizes samples back to 8 bits (round half away from zero, clamped).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()
    }

    fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        let bytes = self.to_u8();
        if self.channels == 1 {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("length checked"))
        } else {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("length checked"))
        }
    }

    /// Bicubic (Catmull-Rom) resampling to `width x height`. Samples are
    /// quantized to 8 bits first, matching what an on-disk resize would see.
    pub fn resize_bicubic(&self, width: usize, height: usize) -> Result<ImageBuffer> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("cannot resize to {width}x{height}")));
        }
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let resized = self
            .to_dynamic()
            .resize_exact(width as u32, height as u32, FilterType::CatmullRom);
        let channels = self.channels;
        let bytes = if channels == 1 {
            resized.into_luma8().into_raw()
        } else {
            resized.into_rgb8().into_raw()
        };
        ImageBuffer::from_u8(width, height, channels, &bytes)
    }

    /// Writes the buffer as an 8-bit PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_dynamic()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })
    }
}

/// Decodes an 8-bit PNG. Alpha channels are dropped; 16-bit data is refused.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded.color() {
        ColorType::L8 | ColorType::La8 => ImageBuffer::from_u8(w, h, 1, decoded.into_luma8().as_raw()),
        ColorType::Rgb8 | ColorType::Rgba8 => ImageBuffer::from_u8(w, h, 3, decoded.into_rgb8().as_raw()),
        other => Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            detail: format!("{other:?}"),
        }),
    }
}

/// Free-function form of [`ImageBuffer::to_luminance`].
pub fn to_luminance(img: &ImageBuffer) -> ImageBuffer {
    img.to_luminance()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer as RawBuffer, Rgb};

    #[test]
    fn rejects_bad_geometry() {
        assert!(ImageBuffer::new(0, 1, 1, vec![]).is_err());
        assert!(ImageBuffer::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageBuffer::new(2, 2, 3, vec![0.0; 11]).is_err());
    }

    #[test]
    fn black_png_decodes_to_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.png");
        RgbImage::new(2, 2).save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.dims(), (2, 2, 3));
        assert_eq!(img.data(), &[0.0; 12]);
    }

    #[test]
    fn white_pixel_decodes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        RgbImage::from_pixel(1, 1, Rgb([255, 255, 255])).save(&path).unwrap();
        assert_eq!(load_image(&path).unwrap().data(), &[255.0, 255.0, 255.0]);
    }

    #[test]
    fn sixteen_bit_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let raw: RawBuffer<Rgb<u16>, Vec<u16>> = RawBuffer::from_pixel(2, 2, Rgb([1000, 0, 0]));
        raw.save(&path).unwrap();
        assert!(matches!(load_image(&path), Err(Error::UnsupportedBitDepth { .. })));
    }

    #[test]
    fn corrupt_file_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        std::fs::write(&path, b"\x89PNG\r\n\x1a\nnot really").unwrap();
        assert!(matches!(load_image(&path), Err(Error::Decode { .. })));
    }

    #[test]
    fn decode_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grad.png");
        ImageBuffer::from_fn(7, 5, 3, |x, y, c| ((x * 31 + y * 17 + c * 5) % 256) as f64)
            .unwrap()
            .save_png(&path)
            .unwrap();
        assert_eq!(load_image(&path).unwrap(), load_image(&path).unwrap());
    }

    #[test]
    fn luminance_values() {
        let gray = ImageBuffer::from_u8(2, 1, 1, &[3, 200]).unwrap();
        assert_eq!(gray.to_luminance(), gray);

        let white = ImageBuffer::from_u8(1, 1, 3, &[255, 255, 255]).unwrap();
        assert!((white.to_luminance().data()[0] - 255.0).abs() < 1e-12);

        let red = ImageBuffer::from_u8(1, 1, 3, &[255, 0, 0]).unwrap();
        assert!((red.to_luminance().data()[0] - 76.245).abs() < 1e-9);
    }

    #[test]
    fn resize_keeps_constant_images_constant() {
        let img = ImageBuffer::filled(10, 6, 3, 90.0).unwrap();
        let out = img.resize_bicubic(17, 4).unwrap();
        assert_eq!(out.dims(), (17, 4, 3));
        assert!(out.data().iter().all(|&v| v == 90.0));
    }

    proptest::proptest! {
        #[test]
        fn luminance_is_convex(r in 0u8..=255, g in 0u8..=255, b in 0u8..=255) {
            let y = ImageBuffer::from_u8(1, 1, 3, &[r, g, b]).unwrap().to_luminance().data()[0];
            let lo = f64::from(r.min(g).min(b));
            let hi = f64::from(r.max(g).max(b));
            proptest::prop_assert!(y >= lo - 1e-9 && y <= hi + 1e-9);
        }
    }
}
