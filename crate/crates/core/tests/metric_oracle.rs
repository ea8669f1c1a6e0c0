//! Full-reference metrics against values frozen from an independent
//! implementation (see fixtures/metric_pairs/make_fixtures.py).

use std::path::PathBuf;

use harmony_core::metrics::{self, Metric, SsimParams};
use harmony_core::{load_image, ImageBuffer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    pair: usize,
    mse: f64,
    psnr: f64,
    ssim: f64,
    ms_ssim: f64,
    gmsd: f64,
    gmsm: f64,
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/metric_pairs")
}

fn load_pair(k: usize) -> (ImageBuffer, ImageBuffer) {
    let dir = fixture_dir();
    (
        load_image(dir.join(format!("dist_{k}.png"))).unwrap(),
        load_image(dir.join(format!("ref_{k}.png"))).unwrap(),
    )
}

fn expected() -> Vec<Expected> {
    let text = std::fs::read_to_string(fixture_dir().join("expected.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn ten_pairs_match_oracle() {
    let cases = expected();
    assert_eq!(cases.len(), 10);
    for case in cases {
        let (dist, reference) = load_pair(case.pair);
        let want = [
            (Metric::Mse, case.mse),
            (Metric::Psnr, case.psnr),
            (Metric::Ssim, case.ssim),
            (Metric::MsSsim, case.ms_ssim),
            (Metric::Gmsd, case.gmsd),
            (Metric::Gmsm, case.gmsm),
        ];
        for (metric, value) in want {
            let got = metric.compute(&dist, &reference).unwrap();
            assert!(
                (got - value).abs() < 1e-6,
                "pair {} {metric}: got {got}, oracle {value}",
                case.pair
            );
        }
    }
}

#[test]
fn identity_is_exact() {
    let (img, _) = load_pair(3);
    let y = img.to_luminance();
    let p = SsimParams::default();
    assert_eq!(metrics::mse(&img, &img).unwrap(), 0.0);
    assert_eq!(metrics::psnr(&img, &img).unwrap(), f64::INFINITY);
    assert_eq!(metrics::ssim(&y, &y, &p).unwrap(), 1.0);
    assert!((metrics::ms_ssim(&y, &y, &p).unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(metrics::gmsd(&y, &y).unwrap(), 0.0);
    assert!((metrics::gmsm(&y, &y).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn symmetric_metrics() {
    let (a, b) = load_pair(1);
    let (ya, yb) = (a.to_luminance(), b.to_luminance());
    let p = SsimParams::default();
    assert_eq!(metrics::mse(&a, &b).unwrap(), metrics::mse(&b, &a).unwrap());
    let d = metrics::ssim(&ya, &yb, &p).unwrap() - metrics::ssim(&yb, &ya, &p).unwrap();
    assert!(d.abs() < 1e-12);
}

#[test]
fn constant_offset_ssim() {
    // Constant planes have zero variance, so SSIM reduces to the luminance
    // term (2 mu1 mu2 + C1) / (mu1^2 + mu2^2 + C1), evaluated here by hand.
    let a = ImageBuffer::filled(32, 32, 1, 100.0).unwrap();
    let b = ImageBuffer::filled(32, 32, 1, 110.0).unwrap();
    let c1 = (0.01f64 * 255.0).powi(2);
    let oracle = (2.0 * 100.0 * 110.0 + c1) / (100.0f64.powi(2) + 110.0f64.powi(2) + c1);
    let got = metrics::ssim(&a, &b, &SsimParams::default()).unwrap();
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
}

#[test]
fn ranges_hold_on_fixtures() {
    for k in 0..10 {
        let (a, b) = load_pair(k);
        let s = Metric::Ssim.compute(&a, &b).unwrap();
        let m = Metric::Gmsm.compute(&a, &b).unwrap();
        let d = Metric::Gmsd.compute(&a, &b).unwrap();
        assert!((-1.0..=1.0).contains(&s));
        assert!((-1.0..=1.0).contains(&m));
        assert!(d >= 0.0);
    }
}

#[test]
fn noise_monotonicity() {
    let (_, reference) = load_pair(0);
    let y = reference.to_luminance();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let noise: Vec<f64> = (0..y.data().len()).map(|_| unit.sample(&mut rng)).collect();

    let mut last_psnr = f64::INFINITY;
    let mut last_gmsd = 0.0;
    for sigma in [2.0, 5.0, 10.0, 20.0, 40.0] {
        let data: Vec<f64> = y.data().iter().zip(&noise).map(|(v, n)| v + sigma * n).collect();
        let noisy = ImageBuffer::new(y.width(), y.height(), 1, data).unwrap();
        let p = metrics::psnr(&y, &noisy).unwrap();
        let g = metrics::gmsd(&y, &noisy).unwrap();
        assert!(p < last_psnr, "psnr {p} !< {last_psnr}");
        assert!(g >= last_gmsd, "gmsd {g} < {last_gmsd}");
        last_psnr = p;
        last_gmsd = g;
    }
}
