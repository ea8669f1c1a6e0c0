//! One pass/fail line per primary acceptance criterion. Each check runs in
//! isolation, has its own time budget, and a panic counts as a failure.

// `ensure!` negates its condition so a NaN comparison fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use harmony_bench::evaluate::{evaluate, EvalOptions};
use harmony_bench::pipeline::{run_synthetic_pipeline, PipelineConfig};
use harmony_bench::split::{split_dataset, SplitOptions};
use harmony_bench::synth::{synthetic_manifest, RaterConfig, StudyConfig};
use harmony_core::correlation::{krcc, srcc, tau_b, PairedSample};
use harmony_core::metrics::{self, Metric, SsimParams};
use harmony_core::mos::{detect_outliers, run_pipeline, z_to_mos, CleaningConfig, Vote};
use harmony_core::records::read_ratings;
use harmony_core::{
    load_image, DatasetManifest, ImageBuffer, MetricScore, MosRecord, RatingRecord, Subset, TripletEntry,
};
use harmony_model::gradcheck::{grad_check, jitter};
use harmony_model::model::Stage;
use harmony_model::params::Group;
use harmony_model::synthetic::brightness_task;
use harmony_model::train::{encode_samples, train_encoded, StageSchedule};
use harmony_model::{HarmonyIqa, Mode, ModelConfig, Stages, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, u64);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- metrics

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

fn metric_oracles() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/metric_pairs");
    let cases: Vec<Expected> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure!(cases.len() == 10, "expected 10 fixture pairs, found {}", cases.len());
    let mut worst: f64 = 0.0;
    for c in &cases {
        let dist = load_image(dir.join(format!("dist_{}.png", c.pair))).map_err(|e| e.to_string())?;
        let reference = load_image(dir.join(format!("ref_{}.png", c.pair))).map_err(|e| e.to_string())?;
        for (m, want) in [
            (Metric::Mse, c.mse),
            (Metric::Psnr, c.psnr),
            (Metric::Ssim, c.ssim),
            (Metric::MsSsim, c.ms_ssim),
            (Metric::Gmsd, c.gmsd),
            (Metric::Gmsm, c.gmsm),
        ] {
            let got = m.compute(&dist, &reference).map_err(|e| e.to_string())?;
            let err = (got - want).abs();
            worst = worst.max(err);
            ensure!(err < 1e-6, "pair {} {}: {got} vs oracle {want}", c.pair, m.name());
        }
    }
    let img = load_image(dir.join("ref_0.png")).map_err(|e| e.to_string())?;
    let y = img.to_luminance();
    let p = SsimParams::default();
    ensure!(metrics::mse(&img, &img).unwrap() == 0.0, "MSE(x, x) != 0");
    ensure!(metrics::ssim(&y, &y, &p).unwrap() == 1.0, "SSIM(x, x) != 1");
    ensure!(metrics::gmsd(&y, &y).unwrap() == 0.0, "GMSD(x, x) != 0");
    Ok(format!("60 values, max |err| {worst:.1e} (tol 1e-6); identities exact"))
}

// ------------------------------------------------------------ correlation

fn counting_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let ties = v.iter().enumerate().filter(|&(j, &y)| j != i && y == x).count() as f64;
            1.0 + below + ties / 2.0
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn pairwise_tau(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut s, mut tx, mut ty) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            tx += (dx == 0.0) as i64;
            ty += (dy == 0.0) as i64;
            if dx != 0.0 && dy != 0.0 {
                s += if (dx > 0.0) == (dy > 0.0) { 1 } else { -1 };
            }
        }
    }
    tau_b((n * (n - 1) / 2) as i64, tx, ty, s).ok()
}

fn correlation_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=200);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            if rng.random_bool(0.5) {
                let k = rng.random_range(2..6);
                (0..n).map(|_| rng.random_range(0..k) as f64).collect()
            } else {
                (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
            }
        };
        let (x, y) = (draw(&mut rng), draw(&mut rng));
        let s = PairedSample::new(x.clone(), y.clone()).unwrap();
        let oracle_s = pearson(&counting_ranks(&x), &counting_ranks(&y));
        let oracle_k = pairwise_tau(&x, &y);
        match (srcc(&s).ok(), oracle_s, krcc(&s).ok(), oracle_k) {
            (Some(a), Some(b), Some(c), Some(d)) => {
                worst = worst.max((a - b).abs()).max((c - d).abs());
                compared += 1;
            }
            (None, None, None, None) => {}
            other => return Err(format!("definedness differs: {other:?}")),
        }
        // Monotone transforms leave ranks untouched.
        let ex: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let cube: Vec<f64> = y.iter().map(|v| v.powi(3)).collect();
        let t = PairedSample::new(ex, cube).unwrap();
        ensure!(srcc(&t).ok() == srcc(&s).ok(), "srcc changed under exp/cube");
        ensure!(krcc(&t).ok() == krcc(&s).ok(), "krcc changed under exp/cube");
    }
    ensure!(worst < 1e-12, "max deviation {worst:e}");
    Ok(format!(
        "200 vectors ({compared} defined), max |err| {worst:.1e} (tol 1e-12); exp/cube invariant"
    ))
}

// -------------------------------------------------------------------- MOS

fn vote(subject: &str, image: &str, rating: u8) -> RatingRecord {
    RatingRecord {
        subject_id: subject.into(),
        image_id: image.into(),
        session_id: "s".into(),
        rating,
        timestamp: "2024-01-01T00:00:00Z".into(),
    }
}

fn mos_pipeline() -> Outcome {
    let cfg = CleaningConfig::default();
    let two = [
        vote("s1", "A", 1),
        vote("s1", "B", 5),
        vote("s2", "A", 2),
        vote("s2", "B", 4),
    ];
    let out = run_pipeline(&two, &cfg).map_err(|e| e.to_string())?;
    let a = out.records.iter().find(|r| r.image_id == "A").unwrap().mos;
    ensure!((a - 38.215).abs() <= 1e-3, "2x2 fixture MOS(A) = {a}");
    for (z, want) in [(-3.0, 0.0), (0.0, 50.0), (3.0, 100.0)] {
        ensure!((z_to_mos(z) - want).abs() < 1e-12, "z {z} maps to {}", z_to_mos(z));
    }

    // 20 raters spread 5/10/5 per image, one extra rater off by two steps on
    // 4 of 40 images (10% > 5%), one regular rater off once.
    let mut ratings = Vec::new();
    let mut planted = BTreeSet::new();
    for j in 0..40usize {
        let image = format!("img{j:02}");
        for s in 0..20usize {
            let subject = format!("r{s:02}");
            let mut r = match (s + j) % 20 {
                0..=4 => 2,
                5..=14 => 3,
                _ => 4,
            };
            if s == 7 && j == 5 {
                r = 5;
                planted.insert((subject.clone(), image.clone()));
            }
            ratings.push(vote(&subject, &image, r));
        }
        let r = if j % 10 == 3 {
            planted.insert(("planted".to_string(), image.clone()));
            if j % 20 == 3 {
                5
            } else {
                1
            }
        } else {
            3
        };
        ratings.push(vote("planted", &image, r));
    }
    let votes: Vec<Vote> = ratings.iter().map(Vote::from).collect();
    ensure!(
        detect_outliers(&votes, &cfg) == planted,
        "outlier set differs from the planted one"
    );
    let out = run_pipeline(&ratings, &cfg).map_err(|e| e.to_string())?;
    ensure!(
        out.summary.rejected_subjects == vec!["planted".to_string()],
        "rejected {:?}",
        out.summary.rejected_subjects
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (subjects, images) = (rng.random_range(2..7), rng.random_range(2..12));
        let mut votes = Vec::new();
        for s in 0..subjects {
            for i in 0..images {
                votes.push(Vote {
                    subject_id: format!("s{s}"),
                    image_id: format!("i{i}"),
                    value: rng.random_range(1..=5) as f64,
                });
            }
        }
        if votes
            .iter()
            .filter(|v| v.subject_id == "s0")
            .map(|v| v.value as i64)
            .collect::<BTreeSet<_>>()
            .len()
            < 2
        {
            continue;
        }
        let (a, b) = (rng.random_range(0.2..5.0), rng.random_range(-10.0..10.0));
        let moved: Vec<Vote> = votes
            .iter()
            .map(|v| Vote {
                value: if v.subject_id == "s0" { a * v.value + b } else { v.value },
                ..v.clone()
            })
            .collect();
        let before = harmony_core::mos::compute_mos(&votes).records;
        let after = harmony_core::mos::compute_mos(&moved).records;
        for (x, y) in before.iter().zip(&after) {
            ensure!(
                (x.mos - y.mos).abs() < 1e-9,
                "affine change moved MOS {} -> {}",
                x.mos,
                y.mos
            );
        }
    }
    Ok(format!(
        "MOS(A) {a:.4} (38.215 ± 1e-3); endpoints exact; 5 planted outliers and 1 subject found; affine x100"
    ))
}

// ------------------------------------------------------------------ model

fn model_mechanism() -> Outcome {
    // (a) zero adapters change nothing.
    let mut m = HarmonyIqa::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let img = brightness_task(1, 32, 4).remove(0).image;
    let with = m.predict_score(&img, None).unwrap();
    let feats = m.encode_image(&img).unwrap();
    m.set_lora_enabled(false);
    ensure!(
        m.predict_score(&img, None).unwrap() == with,
        "zero adapters changed the score"
    );
    ensure!(
        m.encode_image(&img).unwrap() == feats,
        "zero adapters changed the tokens"
    );
    m.set_lora_enabled(true);

    // (b) merging nonzero adapters.
    jitter(&mut m, Group::Lora, 0.3, 8);
    let tv = m.encode_image(&img).unwrap();
    let seq = m.build_sequence(&tv, m.prompt_ids(), Mode::Nr, None).unwrap();
    let (l0, h0) = m.llm_forward(&seq).unwrap();
    m.merge_lora();
    let (l1, h1) = m.llm_forward(&seq).unwrap();
    let merge_err = l0.max_abs_diff(&l1).max(h0.max_abs_diff(&h1));
    ensure!(merge_err < 1e-8, "merge deviates by {merge_err:e}");

    // (c) gradient checks.
    let mut t = HarmonyIqa::new(ModelConfig::tiny()).unwrap();
    jitter(&mut t, Group::Lora, 0.2, 5);
    let sample = encode_samples(&t, &brightness_task(1, 8, 1)).unwrap().remove(0);
    let mut worst_grad: f64 = 0.0;
    for (group, stage) in [
        (Group::Projector, Stage::Two),
        (Group::Lora, Stage::One),
        (Group::Lora, Stage::Two),
        (Group::ScoreDecoder, Stage::Two),
        (Group::LmHead, Stage::One),
    ] {
        let r = grad_check(&mut t, &sample, stage, group, 60, 9).map_err(|e| e.to_string())?;
        ensure!(r.checked > 0, "{group:?}: nothing checked");
        worst_grad = worst_grad.max(r.max_rel_error);
    }
    ensure!(worst_grad < 1e-4, "grad check relative error {worst_grad:e}");

    // (d) frozen weights after training.
    let mut f = HarmonyIqa::new(ModelConfig::tiny()).unwrap();
    let frozen = |m: &HarmonyIqa| -> Vec<Vec<u64>> {
        m.store()
            .iter()
            .filter(|(_, p)| p.group.is_frozen())
            .map(|(_, p)| p.value.data().iter().map(|x| x.to_bits()).collect())
            .collect()
    };
    let before = frozen(&f);
    let data = encode_samples(&f, &brightness_task(8, 8, 6)).unwrap();
    let quick = TrainConfig {
        stage1: StageSchedule {
            epochs: 1,
            lr: 0.05,
            lr_decay: 1.0,
        },
        stage2: StageSchedule {
            epochs: 1,
            lr: 0.05,
            lr_decay: 1.0,
        },
        ..TrainConfig::default()
    };
    train_encoded(&mut f, &data, &[], &quick, Stages::Both).map_err(|e| e.to_string())?;
    ensure!(frozen(&f) == before, "a frozen weight moved");

    // (e) the brightness task.
    let mut model = HarmonyIqa::new(ModelConfig::default()).unwrap();
    let train = encode_samples(&model, &brightness_task(500, 32, 1)).unwrap();
    let test = encode_samples(&model, &brightness_task(100, 32, 2)).unwrap();
    let cfg = TrainConfig::default();
    train_encoded(&mut model, &train, &test, &cfg, Stages::One).map_err(|e| e.to_string())?;
    let text: Vec<f64> = test
        .iter()
        .map(|s| model.text_score(&s.features, None).unwrap())
        .collect();
    train_encoded(&mut model, &train, &test, &cfg, Stages::Two).map_err(|e| e.to_string())?;
    let pred: Vec<f64> = test
        .iter()
        .map(|s| model.score_from_features(&s.features, None).unwrap())
        .collect();
    let mos: Vec<f64> = test.iter().map(|s| s.mos).collect();
    let mse = |p: &[f64]| p.iter().zip(&mos).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / mos.len() as f64;
    let rho = srcc(&PairedSample::new(pred.clone(), mos.clone()).unwrap()).unwrap();
    let (mse2, mse1) = (mse(&pred), mse(&text));
    ensure!(rho >= 0.9, "held-out SRCC {rho:.4} < 0.9");
    ensure!(mse2 < mse1, "decoder MSE {mse2:.3} not below text MSE {mse1:.3}");
    Ok(format!(
        "zero-adapter exact; merge {merge_err:.1e}; grad {worst_grad:.1e}; frozen bit-identical; SRCC {rho:.4}, MSE {mse2:.2} < text {mse1:.2}"
    ))
}

// ---------------------------------------------------------------- harness

fn harness() -> Outcome {
    let m = synthetic_manifest(150);
    let split = split_dataset(&m, 17, SplitOptions::default()).map_err(|e| e.to_string())?;
    let test = split.test_set();
    let mut per: std::collections::BTreeMap<&str, (usize, usize)> = Default::default();
    for e in &m.entries {
        let slot = per.entry(e.iha_name.as_str()).or_default();
        if test.contains(e.image_id.as_str()) {
            slot.1 += 1;
        } else {
            slot.0 += 1;
        }
    }
    ensure!(
        per.len() == 9 && per.values().all(|c| *c == (120, 30)),
        "per-IHA counts {per:?}"
    );
    ensure!(
        (split.train_ids.len(), split.test_ids.len()) == (1080, 270),
        "totals {}/{}",
        split.train_ids.len(),
        split.test_ids.len()
    );

    let mos: Vec<MosRecord> = m
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| MosRecord {
            image_id: e.image_id.clone(),
            mos: ((i * 7919) % 1000) as f64 / 10.0,
            n_valid: 21,
            n_removed: 0,
        })
        .collect();
    let scores: Vec<MetricScore> = mos
        .iter()
        .map(|r| MetricScore {
            metric_name: "self".into(),
            image_id: r.image_id.clone(),
            value: r.mos,
            higher_is_better: true,
        })
        .collect();
    let report = evaluate(&scores, &mos, &split, &EvalOptions::default()).map_err(|e| e.to_string())?;
    for subset in ["all", "NGIHA", "GIHA"] {
        let c = report.get("self", subset).ok_or("missing cell")?;
        for v in [c.srcc, c.krcc, c.plcc] {
            ensure!(v.is_some_and(|v| (v - 1.0).abs() < 1e-12), "{subset}: {c:?}");
        }
    }

    let cfg = PipelineConfig {
        study: StudyConfig {
            composites: 20,
            image_size: 48,
            seed: 9,
        },
        raters: RaterConfig {
            seed: 9,
            ..RaterConfig::default()
        },
        split_seed: 9,
        ..PipelineConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_synthetic_pipeline(a.path(), &cfg).map_err(|e| e.to_string())?;
    let rb = run_synthetic_pipeline(b.path(), &cfg).map_err(|e| e.to_string())?;
    let mut bytes = 0;
    for (x, y) in ra.all().iter().zip(rb.all()) {
        let (bx, by) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        ensure!(bx == by, "{} differs between runs", x.display());
        bytes += bx.len();
    }
    Ok(format!(
        "120/30 per IHA, 1080/270 total; self-correlation 1.0 in 9 cells; 8 artifacts ({bytes} bytes) identical"
    ))
}

// -------------------------------------------------------- rating service

fn service_manifest(dir: &std::path::Path, n: usize) -> DatasetManifest {
    let img = ImageBuffer::filled(8, 8, 3, 100.0).unwrap();
    img.save_png(dir.join("x.png")).unwrap();
    let entries = (0..n)
        .map(|i| TripletEntry {
            image_id: format!("img{i:02}"),
            harmonized_path: "x.png".into(),
            composite_path: "x.png".into(),
            reference_path: "x.png".into(),
            iha_name: "PCT".into(),
            subset: Subset::Ngiha,
        })
        .collect();
    DatasetManifest::new(entries, dir).unwrap()
}

fn rating_service() -> Outcome {
    use harmony_service::{router, ManualClock, RatingService, ServiceConfig};
    use serde_json::{json, Value};

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ratings.csv");
    let clock = Arc::new(ManualClock::new(chrono_start()));
    let svc = RatingService::open(
        ServiceConfig::new(service_manifest(dir.path(), 20), &csv, 3),
        clock.clone(),
    )
    .map_err(|e| e.to_string())?;
    let app = router(Arc::new(svc), None);
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(async move { axum_serve(listener, app).await });
        let http = reqwest::Client::new();
        let post = |url: String, body: Value| {
            let http = http.clone();
            async move { http.post(url).json(&body).send().await.unwrap() }
        };

        let s: Value = post(format!("{base}/api/session"), json!({"subject_id": "annotator1"}))
            .await
            .json()
            .await
            .unwrap();
        let sid = s["session_id"].as_str().unwrap().to_string();
        let mut resent = 0;
        loop {
            let next: Value = http
                .get(format!("{base}/api/session/{sid}/next"))
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            if next["done"] == true {
                break;
            }
            let body = json!({"image_id": next["image_id"], "rating": 1 + (resent % 5)});
            let first = post(format!("{base}/api/session/{sid}/rating"), body.clone()).await;
            ensure!(first.status() == 200, "submit returned {}", first.status());
            let again = post(format!("{base}/api/session/{sid}/rating"), body).await;
            ensure!(again.status() == 200, "resend returned {}", again.status());
            resent += 1;
        }
        let rows = read_ratings(&csv).map_err(|e| e.to_string())?;
        ensure!(rows.len() == 20, "{} rows after 20 ratings and 20 resends", rows.len());
        run_pipeline(&rows, &CleaningConfig::default()).map_err(|e| e.to_string())?;

        let late: Value = post(format!("{base}/api/session"), json!({"subject_id": "annotator2"}))
            .await
            .json()
            .await
            .unwrap();
        let sid2 = late["session_id"].as_str().unwrap().to_string();
        let next: Value = http
            .get(format!("{base}/api/session/{sid2}/next"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        clock.advance(chrono::Duration::minutes(31));
        let blocked = post(
            format!("{base}/api/session/{sid2}/rating"),
            json!({"image_id": next["image_id"], "rating": 3}),
        )
        .await;
        ensure!(blocked.status() == 410, "expired submit returned {}", blocked.status());
        ensure!(read_ratings(&csv).unwrap().len() == 20, "expired submit was written");
        Ok(format!(
            "20 rows after {resent} duplicate resends; parses into MOS; expired session answers 410"
        ))
    })
}

fn chrono_start() -> chrono::DateTime<chrono::Utc> {
    use chrono::TimeZone;
    chrono::Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap()
}

async fn axum_serve(listener: tokio::net::TcpListener, app: axum::Router) {
    harmony_service::serve(listener, app).await.unwrap()
}

// ------------------------------------------------------------------- main

fn main() {
    let criteria: [Criterion; 6] = [
        ("metric oracle suite", metric_oracles, 30),
        ("correlation oracle suite", correlation_oracles, 10),
        ("MOS pipeline", mos_pipeline, 10),
        ("toy model mechanism", model_mechanism, 600),
        ("harness", harness, 60),
        ("rating service", rating_service, 30),
    ];
    let mut out = std::io::stdout().lock();
    let mut failures = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > Duration::from_secs(budget) => Err(format!("took {elapsed:.1?}, budget {budget}s")),
            r => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        failures += result.is_err() as usize;
        writeln!(
            out,
            "{tag} {name} [{:.1}s / {budget}s]: {detail}",
            elapsed.as_secs_f64()
        )
        .unwrap();
    }
    writeln!(out, "{} of 6 primary criteria passed", 6 - failures).unwrap();
    if failures > 0 {
        std::process::exit(1);
    }
}
