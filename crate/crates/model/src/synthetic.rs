//! Procedural image tasks with exactly known scores.

use harmony_core::ImageBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::train::Sample;

fn textured<R: Rng>(rng: &mut R, size: usize, level: f64, amplitude: f64) -> ImageBuffer {
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.08..0.08));
    let fx = rng.random_range(0.1..0.8);
    let fy = rng.random_range(0.1..0.8);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise: Vec<f64> = (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    ImageBuffer::from_fn(size, size, 3, |x, y, c| {
        let wave = (fx * x as f64 + fy * y as f64 + phase).sin();
        let v = level + tint[c] + amplitude * (0.8 * wave + 0.2 * noise[y * size + x]);
        (255.0 * v).round().clamp(0.0, 255.0)
    })
    .expect("positive dimensions")
}

fn mean_brightness(img: &ImageBuffer) -> f64 {
    img.data().iter().sum::<f64>() / (img.data().len() as f64 * 255.0)
}

fn luminance_std(img: &ImageBuffer) -> f64 {
    let y = img.to_luminance();
    let d = y.data();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    (d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d.len() as f64).sqrt()
}

/// Score of a brightness-task image: `round(100 · mean_brightness)`.
pub fn brightness_score(img: &ImageBuffer) -> f64 {
    (100.0 * mean_brightness(img)).round()
}

/// Score of a contrast-task image: luminance standard deviation, scaled so
/// that a spread of 64 grey levels maps to 100.
pub fn contrast_score(img: &ImageBuffer) -> f64 {
    (100.0 * luminance_std(img) / 64.0).round().clamp(0.0, 100.0)
}

/// Images of random brightness, tint and texture scored by mean brightness.
pub fn brightness_task(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let level = rng.random_range(0.1..0.9);
            let amp = rng.random_range(0.02..0.12);
            let image = textured(&mut rng, size, level, amp);
            let mos = brightness_score(&image);
            Sample {
                image,
                reference: None,
                mos,
            }
        })
        .collect()
}

/// Mid-grey images of random contrast scored by luminance spread.
pub fn contrast_task(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let level = rng.random_range(0.4..0.6);
            let amp = rng.random_range(0.0..0.3);
            let image = textured(&mut rng, size, level, amp);
            let mos = contrast_score(&image);
            Sample {
                image,
                reference: None,
                mos,
            }
        })
        .collect()
}
