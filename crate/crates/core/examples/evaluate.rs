//! Train a supervised baseline and a self-trained model, then score both on
//! the held-out target images and report relative Dice.
//!
//! cargo run --release --example evaluate

use tist::data::{generate_synthetic, make_folds, SynthConfig};
use tist::model::ModelConfig;
use tist::report::{evaluate, relative_dice, table_markdown, ClassSelection};
use tist::trainer::{train, Method, RunOptions, TrainConfig, TrainData};

fn main() -> tist::Result<()> {
    run()
}

pub fn run() -> tist::Result<()> {
    let synth = SynthConfig { source_count: 16, target_count: 16, height: 32, width: 32, ..Default::default() };
    let (source, target) = generate_synthetic(&synth, 1)?;
    let split = &make_folds(&source, &target, 4, 1)?[0];
    let data = TrainData::from_split(&source, &target, split)?;

    let mut rows = Vec::new();
    let mut baseline = None;
    for method in [Method::Supervised, Method::Tist] {
        let cfg = TrainConfig {
            method,
            epochs: 4,
            lr: 0.003,
            model: ModelConfig { base_width: 4, ..Default::default() },
            ..Default::default()
        };
        let model = train(&cfg, &data, &RunOptions { eval_final_only: true, ..Default::default() })?.model;
        let result = evaluate(&model, &data.target_test, ClassSelection::Foreground)?;
        let dice = 100.0 * result.mean;
        println!("{method}: mean {dice:.2}, pooled {:.2}, per class {:.3?}", 100.0 * result.pooled_mean, result.per_class);
        if let Some(b) = baseline {
            println!("relative to supervised: {:+.2}", relative_dice(dice, b));
        } else {
            baseline = Some(dice);
        }
        rows.push((method.to_string(), vec![Some(dice)]));
    }
    print!("{}", table_markdown(&["target".to_string()], &rows, "supervised"));
    Ok(())
}
