use harmony_bench::evaluate::{correlate, evaluate, undefined_primary_cells, EvalOptions};
use harmony_bench::render::{render_markdown, render_report, UNDEFINED};
use harmony_bench::split::{split_dataset, SplitOptions, SplitSpec};
use harmony_bench::synth::synthetic_manifest;
use harmony_bench::BenchError;
use harmony_core::correlation::PlccFit;
use harmony_core::{EvalReport, MetricScore, MosRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mos_records(ids: &[String], mut f: impl FnMut(usize) -> f64) -> Vec<MosRecord> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| MosRecord {
            image_id: id.clone(),
            mos: f(i),
            n_valid: 20,
            n_removed: 1,
        })
        .collect()
}

fn scores(name: &str, hib: bool, mos: &[MosRecord], f: impl Fn(f64) -> f64) -> Vec<MetricScore> {
    mos.iter()
        .map(|m| MetricScore {
            metric_name: name.into(),
            image_id: m.image_id.clone(),
            value: f(m.mos),
            higher_is_better: hib,
        })
        .collect()
}

fn setup() -> (SplitSpec, Vec<MosRecord>) {
    let m = synthetic_manifest(150);
    let split = split_dataset(&m, 11, SplitOptions::default()).unwrap();
    let ids: Vec<String> = m.entries.iter().map(|e| e.image_id.clone()).collect();
    let mos = mos_records(&ids, |i| ((i * 37) % 1000) as f64 / 10.0);
    (split, mos)
}

#[test]
fn mos_against_itself_is_perfect_in_every_column() {
    let (split, mos) = setup();
    let s = scores("oracle", true, &mos, |m| m);
    let report = evaluate(&s, &mos, &split, &EvalOptions::default()).unwrap();
    for subset in ["all", "NGIHA", "GIHA"] {
        let c = report.get("oracle", subset).unwrap();
        assert_eq!(c.srcc, Some(1.0), "{subset}");
        assert_eq!(c.krcc, Some(1.0));
        assert!((c.plcc.unwrap() - 1.0).abs() < 1e-12);
        assert!(!c.negated);
    }
    assert_eq!(report.get("oracle", "all").unwrap().n, 270);
    assert_eq!(report.get("oracle", "NGIHA").unwrap().n, 150);
    assert_eq!(report.get("oracle", "GIHA").unwrap().n, 120);
}

#[test]
fn negated_mos_as_higher_is_better_is_minus_one() {
    let (split, mos) = setup();
    let s = scores("anti", true, &mos, |m| -m);
    let report = evaluate(&s, &mos, &split, &EvalOptions::default()).unwrap();
    let c = report.get("anti", "all").unwrap();
    assert_eq!(c.srcc, Some(-1.0));
    assert_eq!(c.krcc, Some(-1.0));
}

#[test]
fn lower_is_better_metrics_are_flipped_and_flagged() {
    let (split, mos) = setup();
    let s = scores("distance", false, &mos, |m| 100.0 - m);
    let report = evaluate(&s, &mos, &split, &EvalOptions::default()).unwrap();
    let c = report.get("distance", "all").unwrap();
    assert_eq!(c.srcc, Some(1.0));
    assert!(c.negated);
}

#[test]
fn random_scores_are_uncorrelated() {
    let (split, mos) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise: Vec<f64> = (0..mos.len()).map(|_| rng.random::<f64>()).collect();
    let s: Vec<MetricScore> = mos
        .iter()
        .zip(&noise)
        .map(|(m, v)| MetricScore {
            metric_name: "random".into(),
            image_id: m.image_id.clone(),
            value: *v,
            higher_is_better: true,
        })
        .collect();
    let report = evaluate(&s, &mos, &split, &EvalOptions::default()).unwrap();
    let c = report.get("random", "all").unwrap();
    assert_eq!(c.n, 270);
    assert!(c.srcc.unwrap().abs() < 0.2, "{:?}", c.srcc);
}

#[test]
fn missing_scores_and_empty_test_sets_are_errors() {
    let (split, mos) = setup();
    let mut s = scores("partial", true, &mos, |m| m);
    let dropped = split.test_ids[3].clone();
    s.retain(|x| x.image_id != dropped);
    match evaluate(&s, &mos, &split, &EvalOptions::default()) {
        Err(BenchError::MissingPairs { ids, .. }) => assert_eq!(ids, vec![dropped]),
        other => panic!("expected MissingPairs, got {other:?}"),
    }
    let mut empty = split.clone();
    empty.test_ids.clear();
    assert!(matches!(
        evaluate(&scores("x", true, &mos, |m| m), &mos, &empty, &EvalOptions::default()),
        Err(BenchError::EmptyTestSet)
    ));
}

#[test]
fn tiny_cells_are_undefined_and_render_as_dash() {
    let cell = correlate(vec![1.0], vec![2.0], PlccFit::Raw);
    assert_eq!((cell.srcc, cell.krcc, cell.plcc, cell.n), (None, None, None, 1));
    let constant = correlate(vec![3.0; 5], vec![1.0, 2.0, 3.0, 4.0, 5.0], PlccFit::Raw);
    assert_eq!(constant.srcc, None);

    let mut report = EvalReport::default();
    report.insert("flat", "all", constant);
    let md = render_markdown(&report);
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines.len(), 3, "{md}");
    assert!(lines[0].starts_with("| Metric"));
    assert!(lines[2].contains(UNDEFINED));
    assert_eq!(undefined_primary_cells(&report), vec!["flat".to_string()]);
}

#[test]
fn report_json_round_trips_with_one_row_per_metric() {
    let (split, mos) = setup();
    let mut s = scores("oracle", true, &mos, |m| m);
    s.extend(scores("half", true, &mos, |m| (m / 2.0).floor()));
    let report = evaluate(
        &s,
        &mos,
        &split,
        &EvalOptions {
            fit: PlccFit::Logistic4,
            ..Default::default()
        },
    )
    .unwrap();
    let (md, json) = render_report(&report).unwrap();
    assert_eq!(md.lines().count(), 4);
    assert_eq!(EvalReport::from_json(&json).unwrap(), report);
    assert!(undefined_primary_cells(&report).is_empty());
    assert_eq!(report.get("half", "all").unwrap().plcc_fit, PlccFit::Logistic4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Declaring a metric lower-is-better and negating its values gives the
    /// same coefficients.
    #[test]
    fn orientation_is_consistent(values in prop::collection::vec(-1e3f64..1e3, 20..60), seed in any::<u64>()) {
        let m = synthetic_manifest(5);
        let ids: Vec<String> = m.entries.iter().map(|e| e.image_id.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mos = mos_records(&ids, |_| rng.random_range(0.0..100.0));
        let split = SplitSpec::all_test(&m);
        let val = |i: usize| values[i % values.len()];
        let up: Vec<MetricScore> = ids.iter().enumerate().map(|(i, id)| MetricScore {
            metric_name: "m".into(), image_id: id.clone(), value: val(i), higher_is_better: true,
        }).collect();
        let down: Vec<MetricScore> = ids.iter().enumerate().map(|(i, id)| MetricScore {
            metric_name: "m".into(), image_id: id.clone(), value: -val(i), higher_is_better: false,
        }).collect();
        let a = evaluate(&up, &mos, &split, &EvalOptions::default()).unwrap();
        let b = evaluate(&down, &mos, &split, &EvalOptions::default()).unwrap();
        for s in ["all", "NGIHA", "GIHA"] {
            let (x, y) = (a.get("m", s).unwrap(), b.get("m", s).unwrap());
            prop_assert_eq!(x.srcc, y.srcc);
            prop_assert_eq!(x.krcc, y.krcc);
            prop_assert_eq!(x.plcc, y.plcc);
        }
    }
}
