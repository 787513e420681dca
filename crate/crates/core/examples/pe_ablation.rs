//! Trains CircTestNet on the quadrant task with and without position
//! embeddings and prints test accuracy.
//!
//! `cargo run --release -p parcnet --example pe_ablation [epochs]`

use std::time::Instant;

use parcnet::model::{build_model, ModelConfig};
use parcnet::trainer::{evaluate, quadrant_dataset, train, TrainConfig};

fn main() -> parcnet::Result<()> {
    let epochs = std::env::args().nth(1).map_or(30, |s| s.parse().expect("epochs"));
    let all = quadrant_dataset(5000, 16, 2024)?;
    let (train_set, test_set) = all.split(4000)?;
    let cfg = TrainConfig { epochs, ..TrainConfig::desk() };
    for use_pe in [true, false] {
        let start = Instant::now();
        let mut model = build_model(ModelConfig::circtestnet(use_pe), 0)?;
        let mut last = 0.0;
        let ck = train(&mut model, &cfg, &train_set, |r| {
            last = r.loss;
            Ok(())
        })?;
        let acc = evaluate(&model, model.params(), &test_set, 250)?;
        let ema_acc = evaluate(&model, ck.ema.as_ref().expect("ema"), &test_set, 250)?;
        println!(
            "use_pe={use_pe}: final loss {last:.4}, test acc {acc:.4}, ema acc {ema_acc:.4}, {:.1}s",
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
