use harmony_bench::cross::{cross_eval, cross_eval_split, cross_label, CrossEvalConfig, Dataset};
use harmony_bench::evaluate::{evaluate, EvalOptions};
use harmony_bench::scorer::{predict_scores, train_model};
use harmony_bench::split::{split_dataset, SplitOptions};
use harmony_bench::synth::{generate_task, Task};
use harmony_bench::BenchError;
use harmony_model::{ModelConfig, Stages, TrainConfig};

fn quick() -> CrossEvalConfig {
    let mut train = TrainConfig::default();
    train.stage1.epochs = 2;
    train.stage2.epochs = 4;
    CrossEvalConfig {
        model: ModelConfig::tiny(),
        train,
        ..CrossEvalConfig::default()
    }
}

fn task(root: &std::path::Path, name: &str, kind: Task, n: usize, seed: u64) -> Dataset {
    let dir = root.join(name);
    generate_task(&dir, kind, n, 8, seed).unwrap();
    Dataset::load(&dir).unwrap()
}

#[test]
fn brightness_to_contrast_gives_finite_coefficients() {
    let root = tempfile::tempdir().unwrap();
    let a = task(root.path(), "brightness", Task::Brightness, 60, 1);
    let b = task(root.path(), "contrast", Task::Contrast, 45, 2);
    let report = cross_eval(&a, &b, &quick()).unwrap();
    let label = cross_label("brightness", "contrast");
    assert_eq!(label, "brightness/contrast");
    let c = report.get(&label, "all").unwrap();
    assert_eq!(c.n, 45);
    for v in [c.srcc, c.krcc, c.plcc] {
        let v = v.expect("defined");
        assert!(v.is_finite() && (-1.0..=1.0).contains(&v));
    }
    assert!(report.get(&label, "NGIHA").is_some() && report.get(&label, "GIHA").is_some());
}

#[test]
fn same_dataset_with_split_matches_plain_evaluation() {
    let root = tempfile::tempdir().unwrap();
    let data = task(root.path(), "bright", Task::Brightness, 45, 5);
    let split = split_dataset(&data.manifest, 2, SplitOptions::default()).unwrap();
    let cfg = quick();
    let via_cross = cross_eval_split(&data, &split, &cfg).unwrap();

    let train_ids = split.train_set();
    let test_ids = split.test_set();
    let (model, _) = train_model(
        &data.manifest,
        &data.mos,
        Some(&train_ids),
        None,
        cfg.model.clone(),
        &cfg.train,
        Stages::Both,
    )
    .unwrap();
    let scores = predict_scores(
        &model,
        &data.manifest,
        Some(&test_ids),
        &cross_label("bright", "bright"),
    )
    .unwrap();
    let direct = evaluate(&scores, &data.mos, &split, &EvalOptions::default()).unwrap();
    assert_eq!(via_cross, direct);
    assert_eq!(via_cross.get("bright/bright", "all").unwrap().n, test_ids.len());
}

#[test]
fn empty_test_dataset_is_an_error() {
    let root = tempfile::tempdir().unwrap();
    let a = task(root.path(), "a", Task::Brightness, 20, 1);
    let mut b = a.clone();
    b.manifest = harmony_core::DatasetManifest::new(Vec::new(), ".").unwrap();
    b.mos.clear();
    assert!(matches!(cross_eval(&a, &b, &quick()), Err(BenchError::EmptyTestSet)));
}
