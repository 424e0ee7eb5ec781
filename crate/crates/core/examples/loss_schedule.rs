//! Ramp-up weight and learning-rate schedules, and the loss terms on a toy
//! prediction.
//!
//! cargo run --example loss_schedule

use tist::losses::{lambda_at, overall_loss, pseudo_supervised_loss, supervised_loss, LossWeights, RampSchedule};
use tist::pseudolabel::{tist_pseudo_labels, ProbabilityMap};
use tist::trainer::TrainConfig;
use tist::LabelMap;

fn main() -> tist::Result<()> {
    run()
}

pub fn run() -> tist::Result<()> {
    let cfg = TrainConfig::default();
    let ramp = RampSchedule::new(cfg.epochs)?;
    println!("epoch  lambda    lr");
    for e in (0..=cfg.epochs).step_by(5) {
        println!("{e:>5}  {:.5}  {:.2e}", lambda_at(&ramp, e)?, cfg.lr_at(e));
    }

    let probs = ProbabilityMap::from_pixels(
        2,
        2,
        &[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.05, 0.95]],
    )?;
    let truth = LabelMap::new(2, 2, vec![0, 1, 1, 1])?;
    let sup = supervised_loss(std::slice::from_ref(&probs), &[&truth], &LossWeights::default())?;
    let pseudo = tist_pseudo_labels(&probs, &probs, 0.85)?;
    let ps = pseudo_supervised_loss(std::slice::from_ref(&probs), &[&pseudo.labels])?;
    let lam = lambda_at(&ramp, cfg.epochs / 2)?;
    println!("sup {:.4}  ps {:.4}  lambda {lam:.4}  total {:.4}", sup.value, ps.value, overall_loss(sup.value, ps.value, lam));
    Ok(())
}
