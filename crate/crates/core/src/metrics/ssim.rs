//! SSIM and five-scale MS-SSIM on luminance planes.
//!
//! Local statistics use an 11-tap Gaussian window (sigma 1.5) evaluated over
//! the "valid" region only, and MS-SSIM downsamples with a 2x2 box filter
//! under symmetric padding, matching the reference MATLAB implementations.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Standard MS-SSIM exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Minimum short side for five dyadic scales with an 11-tap window.
pub const MS_SSIM_MIN_SIDE: usize = 176;

#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub window_size: usize,
    pub sigma: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
            window_size: 11,
            sigma: 1.5,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        let ok =
            self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0 && self.sigma > 0.0 && self.window_size >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad SSIM parameters {self:?}")))
        }
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps. The 2-D window is their outer product,
    /// which sums to one.
    pub fn window_1d(&self) -> Vec<f64> {
        let n = self.window_size;
        let center = (n as f64 - 1.0) / 2.0;
        let taps: Vec<f64> = (0..n)
            .map(|i| {
                let d = i as f64 - center;
                (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }
}

/// Row-major scalar plane.
#[derive(Debug, Clone)]
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_gray(img: &ImageBuffer) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.data().to_vec(),
        }
    }

    fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Separable correlation with `taps`, keeping only fully covered positions.
    fn filter_valid(&self, taps: &[f64]) -> Plane {
        let n = taps.len();
        let out_w = self.width + 1 - n;
        let out_h = self.height + 1 - n;
        let mut horiz = vec![0.0; out_w * self.height];
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            for x in 0..out_w {
                horiz[y * out_w + x] = taps.iter().zip(&row[x..x + n]).map(|(t, v)| t * v).sum();
            }
        }
        let mut out = vec![0.0; out_w * out_h];
        for y in 0..out_h {
            for (k, &t) in taps.iter().enumerate() {
                let src = &horiz[(y + k) * out_w..(y + k + 1) * out_w];
                let dst = &mut out[y * out_w..(y + 1) * out_w];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += t * s;
                }
            }
        }
        Plane {
            width: out_w,
            height: out_h,
            data: out,
        }
    }

    /// 2x2 box average followed by taking every other sample, with symmetric
    /// padding on odd trailing rows/columns.
    fn downsample(&self) -> Plane {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let at = |x: usize, y: usize| {
            let x = x.min(self.width - 1);
            let y = y.min(self.height - 1);
            self.data[y * self.width + x]
        };
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (2 * x, 2 * y);
                data.push((at(sx, sy) + at(sx + 1, sy) + at(sx, sy + 1) + at(sx + 1, sy + 1)) / 4.0);
            }
        }
        Plane {
            width: w,
            height: h,
            data,
        }
    }
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_and_cs(a: &Plane, b: &Plane, p: &SsimParams) -> (f64, f64) {
    let taps = p.window_1d();
    let (c1, c2) = (p.c1(), p.c2());
    let mu_a = a.filter_valid(&taps);
    let mu_b = b.filter_valid(&taps);
    let aa = a.zip_map(a, |x, y| x * y).filter_valid(&taps);
    let bb = b.zip_map(b, |x, y| x * y).filter_valid(&taps);
    let ab = a.zip_map(b, |x, y| x * y).filter_valid(&taps);

    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let var_a = aa.data[i] - ma * ma;
        let var_b = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    let n = mu_a.data.len() as f64;
    (ssim_sum / n, cs_sum / n)
}

fn check_pair(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    if a.channels() != 1 {
        return Err(Error::NotGray(a.channels()));
    }
    Ok(())
}

/// Mean structural similarity of two gray images of equal size.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, p: &SsimParams) -> Result<f64> {
    p.validate()?;
    check_pair(a, b)?;
    if a.width() < p.window_size || a.height() < p.window_size {
        return Err(Error::TooSmall {
            width: a.width(),
            height: a.height(),
            requirement: format!("SSIM needs at least {0}x{0}", p.window_size),
        });
    }
    Ok(ssim_and_cs(&Plane::from_gray(a), &Plane::from_gray(b), p).0)
}

/// Five-scale MS-SSIM. Negative per-scale terms are clamped to zero before
/// exponentiation so the product stays real.
pub fn ms_ssim(a: &ImageBuffer, b: &ImageBuffer, p: &SsimParams) -> Result<f64> {
    p.validate()?;
    check_pair(a, b)?;
    let min_side = p.window_size << (MS_SSIM_WEIGHTS.len() - 1);
    let min_side = min_side.max(MS_SSIM_MIN_SIDE);
    if a.width().min(a.height()) < min_side {
        return Err(Error::TooSmall {
            width: a.width(),
            height: a.height(),
            requirement: format!("MS-SSIM needs a short side of at least {min_side}"),
        });
    }
    let mut pa = Plane::from_gray(a);
    let mut pb = Plane::from_gray(b);
    let last = MS_SSIM_WEIGHTS.len() - 1;
    let mut product = 1.0;
    for (level, &weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (s, cs) = ssim_and_cs(&pa, &pb, p);
        let term = if level == last { s } else { cs };
        product *= term.max(0.0).powf(weight);
        if level < last {
            pa = pa.downsample();
            pb = pb.downsample();
        }
    }
    Ok(product)
}
