//! Trains the scorer on the synthetic brightness task and prints held-out accuracy.
//!
//! `cargo run --release -p harmony-model --example brightness [n_train] [n_test]`

use std::time::Instant;

use harmony_core::correlation::{srcc, PairedSample};
use harmony_model::synthetic::brightness_task;
use harmony_model::train::{encode_samples, train_encoded};
use harmony_model::{HarmonyIqa, ModelConfig, Stages, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let n_train = args.first().copied().unwrap_or(500);
    let n_test = args.get(1).copied().unwrap_or(100);

    let start = Instant::now();
    let mut model = HarmonyIqa::new(ModelConfig::default())?;
    let train = encode_samples(&model, &brightness_task(n_train, 32, 1))?;
    let test = encode_samples(&model, &brightness_task(n_test, 32, 2))?;
    println!("encoded in {:.1?}", start.elapsed());

    let cfg = TrainConfig::default();
    let h1 = train_encoded(&mut model, &train, &test, &cfg, Stages::One)?;
    for e in &h1.epochs {
        println!(
            "stage 1 epoch {}: train {:.4} val {:?}",
            e.epoch, e.train_loss, e.val_loss
        );
    }
    let text: Vec<f64> = test
        .iter()
        .map(|s| model.text_score(&s.features, None))
        .collect::<Result<_, _>>()?;
    println!("stage 1 done at {:.1?}", start.elapsed());

    let h2 = train_encoded(&mut model, &train, &test, &cfg, Stages::Two)?;
    for e in &h2.epochs {
        println!(
            "stage 2 epoch {}: train {:.5} val {:?} srcc {:?}",
            e.epoch, e.train_loss, e.val_loss, e.val_srcc
        );
    }
    let pred: Vec<f64> = test
        .iter()
        .map(|s| model.score_from_features(&s.features, None))
        .collect::<Result<_, _>>()?;
    let mos: Vec<f64> = test.iter().map(|s| s.mos).collect();
    let mse = |p: &[f64]| p.iter().zip(&mos).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / mos.len() as f64;
    println!("stage-1 text MSE {:.3}", mse(&text));
    println!("stage-2 decoder MSE {:.3}", mse(&pred));
    println!("stage-2 SRCC {:.4}", srcc(&PairedSample::new(pred, mos)?)?);
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
