//! Train a small model with two-view self-training on synthetic data and
//! print the per-epoch history. Pass `--method st` or `--method supervised`
//! to compare.
//!
//! cargo run --release --example train_tist -- [--method tist] [OUT_DIR]

use std::path::{Path, PathBuf};

use tist::data::{generate_synthetic, make_folds, SynthConfig};
use tist::model::ModelConfig;
use tist::trainer::{train, Method, RunOptions, TrainConfig, TrainData};

fn main() -> tist::Result<()> {
    let mut method = Method::Tist;
    let mut out = std::env::temp_dir().join("tist_train_example");
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--method" => method = args.next().unwrap_or_default().parse()?,
            other => out = PathBuf::from(other),
        }
    }

    run(method, &out)
}

pub fn run(method: Method, out: &Path) -> tist::Result<()> {
    let synth = SynthConfig { source_count: 16, target_count: 16, height: 32, width: 32, ..Default::default() };
    let (source, target) = generate_synthetic(&synth, 0)?;
    let split = &make_folds(&source, &target, 4, 0)?[0];
    let data = TrainData::from_split(&source, &target, split)?;

    let cfg = TrainConfig {
        method,
        epochs: 6,
        lr: 0.003,
        model: ModelConfig { base_width: 4, ..Default::default() },
        ..Default::default()
    };
    let outcome = train(&cfg, &data, &RunOptions { out_dir: Some(out.to_path_buf()), ..Default::default() })?;
    println!("epoch  lambda  sup     ps      kept   target  source");
    for r in &outcome.history.epochs {
        println!(
            "{:>5}  {:.4}  {:.4}  {:.4}  {:.3}  {:.3}   {:.3}",
            r.epoch,
            r.lambda,
            r.sup_loss,
            r.ps_loss,
            r.retained_fraction,
            r.target_dice.unwrap_or(f64::NAN),
            r.source_dice.unwrap_or(f64::NAN)
        );
    }
    println!("run directory: {}", out.display());
    Ok(())
}
