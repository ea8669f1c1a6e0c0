//! Gradient magnitude similarity deviation (GMSD) and mean (GMSM).

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Stability constant for 8-bit data.
pub const GMS_C: f64 = 170.0;

/// Gradient-magnitude similarity map on the 2x-downsampled planes.
pub fn gms_map(a: &ImageBuffer, b: &ImageBuffer) -> Result<Vec<f64>> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    if a.channels() != 1 {
        return Err(Error::NotGray(a.channels()));
    }
    let (w, h, ga) = gradient_magnitude(a);
    let (_, _, gb) = gradient_magnitude(b);
    debug_assert_eq!(ga.len(), w * h);
    Ok(ga
        .iter()
        .zip(&gb)
        .map(|(&m1, &m2)| (2.0 * m1 * m2 + GMS_C) / (m1 * m1 + m2 * m2 + GMS_C))
        .collect())
}

/// Standard deviation (N - 1 normalization) of the GMS map; 0 is a perfect match.
pub fn gmsd(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let map = gms_map(a, b)?;
    let n = map.len() as f64;
    if map.len() < 2 {
        return Ok(0.0);
    }
    let mean = map.iter().sum::<f64>() / n;
    let ss: f64 = map.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((ss / (n - 1.0)).sqrt())
}

/// Mean of the GMS map; 1 is a perfect match.
pub fn gmsm(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let map = gms_map(a, b)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// 2x2 mean then stride-2 sampling (zero padding past the edge), followed by
/// Prewitt gradients with zero padding. Returns `(width, height, magnitude)`.
fn gradient_magnitude(img: &ImageBuffer) -> (usize, usize, Vec<f64>) {
    let (iw, ih) = (img.width(), img.height());
    let px = |x: usize, y: usize| {
        if x < iw && y < ih {
            img.get(x, y, 0)
        } else {
            0.0
        }
    };
    let w = iw.div_ceil(2);
    let h = ih.div_ceil(2);
    let mut down = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (2 * x, 2 * y);
            down.push((px(sx, sy) + px(sx + 1, sy) + px(sx, sy + 1) + px(sx + 1, sy + 1)) / 4.0);
        }
    }
    let d = |x: isize, y: isize| {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            down[y as usize * w + x as usize]
        } else {
            0.0
        }
    };
    let mut mag = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for k in -1..=1 {
                gx += d(x + 1, y + k) - d(x - 1, y + k);
                gy += d(x + k, y + 1) - d(x + k, y - 1);
            }
            gx /= 3.0;
            gy /= 3.0;
            mag.push((gx * gx + gy * gy).sqrt());
        }
    }
    (w, h, mag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images() {
        let a = ImageBuffer::from_fn(33, 20, 1, |x, y, _| ((x * x + 3 * y) % 256) as f64).unwrap();
        assert_eq!(gmsd(&a, &a).unwrap(), 0.0);
        assert!((gmsm(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_images() {
        let z = ImageBuffer::filled(16, 16, 1, 0.0).unwrap();
        assert!(gms_map(&z, &z).unwrap().iter().all(|&v| v == 1.0));
        assert_eq!(gmsd(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn range() {
        let a = ImageBuffer::from_fn(30, 30, 1, |x, _, _| (x * 8) as f64).unwrap();
        let b = ImageBuffer::from_fn(30, 30, 1, |_, y, _| (y * 8) as f64).unwrap();
        let m = gmsm(&a, &b).unwrap();
        assert!((-1.0..=1.0).contains(&m));
        assert!(gmsd(&a, &b).unwrap() > 0.0);
    }
}
