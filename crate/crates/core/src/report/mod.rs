//! Dice scoring, fold aggregation, relative Dice and report emission.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::image::{LabelMap, IGNORE_INDEX};
use crate::model::SegmentationNetwork;
use crate::real::Real;

pub mod sweep;

pub use sweep::{sweep_report, SweepPoint, SweepReport, SweepStatus};



/// `2|P ∩ G| / (|P| + |G|)` for one class; 1 when both sets are empty.
/// Pixels whose ground truth is [`IGNORE_INDEX`] belong to neither set.
///
/// # Panics
///
/// If the maps differ in shape.
pub fn dice_score(pred: &LabelMap, gt: &LabelMap, class_id: u8) -> f64 {
    let (inter, p, g) = dice_counts(pred, gt, class_id);
    dice_from_counts(inter, p, g)
}

fn dice_from_counts(inter: usize, p: usize, g: usize) -> f64 {
    if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    }
}

/// `(|P ∩ G|, |P|, |G|)`.
fn dice_counts(pred: &LabelMap, gt: &LabelMap, class_id: u8) -> (usize, usize, usize) {
    assert_eq!(
        (pred.height(), pred.width()),
        (gt.height(), gt.width()),
        "prediction and ground truth differ in shape"
    );
    let (mut inter, mut p, mut g) = (0, 0, 0);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        if b == IGNORE_INDEX {
            continue;
        }
        let (ia, ib) = (a == class_id, b == class_id);
        p += ia as usize;
        g += ib as usize;
        inter += (ia && ib) as usize;
    }
    (inter, p, g)
}

/// Method Dice minus baseline Dice, both in percent.
pub fn relative_dice(method_dice: f64, supervised_dice: f64) -> f64 {
    method_dice - supervised_dice
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceResult {
    /// Class ids that were scored, in order.
    pub classes: Vec<u8>,
    /// Per-image Dice averaged over images, one entry per scored class.
    pub per_class: Vec<f64>,
    /// Mean over scored classes.
    pub mean: f64,
    /// Dice over all pixels of the set at once.
    pub pooled_per_class: Vec<f64>,
    pub pooled_mean: f64,
    pub n_images: usize,
    /// Classes absent from both prediction and ground truth everywhere.
    pub absent: Vec<u8>,
    /// Images skipped because every ground-truth pixel is ignored.
    pub skipped: Vec<String>,
}

/// Which classes are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassSelection {
    /// Every class except 0.
    #[default]
    Foreground,
    All,
}

/// Scores `(id, prediction, ground truth)` triples.
pub fn dice_over_set(
    items: &[(String, LabelMap, LabelMap)],
    num_classes: usize,
    selection: ClassSelection,
) -> Result<DiceResult> {
    ensure!(num_classes >= 2, InvalidInput, "need at least two classes");
    let first = match selection {
        ClassSelection::Foreground => 1,
        ClassSelection::All => 0,
    };
    let classes: Vec<u8> = (first..num_classes as u8).collect();
    let mut skipped = Vec::new();
    let mut per_image_sum = vec![0.0; classes.len()];
    let mut pooled = vec![(0usize, 0usize, 0usize); classes.len()];
    let mut n_images = 0;
    for (id, pred, gt) in items {
        ensure!(
            (pred.height(), pred.width()) == (gt.height(), gt.width()),
            InvalidInput,
            "image `{id}`: prediction and ground truth differ in shape"
        );
        if gt.is_all_ignored() {
            log::warn!("image `{id}` has no scorable pixels; excluded from Dice");
            skipped.push(id.clone());
            continue;
        }
        n_images += 1;
        for (k, &c) in classes.iter().enumerate() {
            let (i, p, g) = dice_counts(pred, gt, c);
            per_image_sum[k] += dice_from_counts(i, p, g);
            pooled[k].0 += i;
            pooled[k].1 += p;
            pooled[k].2 += g;
        }
    }
    ensure!(n_images > 0, InvalidInput, "no scorable images");
    let per_class: Vec<f64> = per_image_sum.iter().map(|s| s / n_images as f64).collect();
    let pooled_per_class: Vec<f64> = pooled.iter().map(|&(i, p, g)| dice_from_counts(i, p, g)).collect();
    let absent: Vec<u8> = classes
        .iter()
        .zip(&pooled)
        .filter(|(_, &(_, p, g))| p + g == 0)
        .map(|(&c, _)| c)
        .collect();
    let present = |v: &[f64]| -> f64 {
        let kept: Vec<f64> = classes
            .iter()
            .zip(v)
            .filter(|(c, _)| !absent.contains(c))
            .map(|(_, &d)| d)
            .collect();
        if kept.is_empty() {
            1.0
        } else {
            kept.iter().sum::<f64>() / kept.len() as f64
        }
    };
    Ok(DiceResult {
        mean: present(&per_class),
        pooled_mean: present(&pooled_per_class),
        classes,
        per_class,
        pooled_per_class,
        n_images,
        absent,
        skipped,
    })
}

/// Predicts every labelled sample of `dataset` and scores it.
pub fn evaluate<T: Real, N: SegmentationNetwork<T>>(
    net: &N,
    dataset: &Dataset,
    selection: ClassSelection,
) -> Result<DiceResult> {
    let classes = net.config().num_classes;
    let mut items = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let gt = s.label()?;
        if let Some(&v) = gt.distinct_values().iter().find(|&&v| v != IGNORE_INDEX && v as usize >= classes) {
            return Err(crate::Error::InvalidInput(format!(
                "sample `{}` has class {v} but the model predicts {classes} classes",
                s.id
            )));
        }
        let probs = net.predict_probs(std::slice::from_ref(&s.image))?;
        items.push((s.id.clone(), probs[0].argmax_map(), gt.clone()));
    }
    dice_over_set(&items, classes, selection)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub n_folds: usize,
    pub mean: f64,
    pub std: f64,
    pub per_class_mean: Vec<f64>,
    pub per_class_std: Vec<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation across folds.
pub fn aggregate_folds(results: &[DiceResult]) -> Result<FoldSummary> {
    ensure!(!results.is_empty(), InvalidInput, "no fold results to aggregate");
    let k = results[0].per_class.len();
    ensure!(
        results.iter().all(|r| r.per_class.len() == k),
        InvalidInput,
        "fold results score different class sets"
    );
    let means: Vec<f64> = results.iter().map(|r| r.mean).collect();
    let (mean, std) = mean_std(&means);
    let (per_class_mean, per_class_std) = (0..k)
        .map(|c| mean_std(&results.iter().map(|r| r.per_class[c]).collect::<Vec<_>>()))
        .unzip();
    Ok(FoldSummary {
        n_folds: results.len(),
        mean,
        std,
        per_class_mean,
        per_class_std,
    })
}

/// Markdown table with one row per method and one column per task, Dice in
/// percent, each non-baseline cell followed by its relative Dice, plus an
/// average-relative column recomputed from the cells.
pub fn table_markdown(tasks: &[String], rows: &[(String, Vec<Option<f64>>)], baseline: &str) -> String {
    let base = rows.iter().find(|(m, _)| m == baseline).map(|(_, v)| v.clone());
    let mut out = String::from("| Method |");
    for t in tasks {
        out.push_str(&format!(" {t} |"));
    }
    out.push_str(" Avg. Rel. |\n|---|");
    out.push_str(&"---|".repeat(tasks.len() + 1));
    out.push('\n');
    for (method, cells) in rows {
        out.push_str(&format!("| {method} |"));
        let mut rels = Vec::new();
        for (i, cell) in cells.iter().enumerate() {
            match cell {
                None => out.push_str(" n/a |"),
                Some(d) => {
                    let b = base.as_ref().and_then(|b| b.get(i).copied().flatten());
                    match b {
                        Some(b) if method != baseline => {
                            let r = relative_dice(*d, b);
                            rels.push(r);
                            out.push_str(&format!(" {d:.2} ({r:+.2}) |"));
                        }
                        _ => out.push_str(&format!(" {d:.2} |")),
                    }
                }
            }
        }
        if rels.is_empty() {
            out.push_str(" - |\n");
        } else {
            out.push_str(&format!(" {:+.2} |\n", rels.iter().sum::<f64>() / rels.len() as f64));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(rows: &[&[u8]]) -> LabelMap {
        LabelMap::new(rows.len(), rows[0].len(), rows.concat()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = lm(&[&[1, 1, 0], &[0, 0, 0]]);
        let b = lm(&[&[0, 1, 1], &[0, 0, 0]]);
        let c = lm(&[&[0, 0, 0], &[1, 1, 0]]);
        assert_eq!(dice_score(&a, &a, 1), 1.0);
        assert_eq!(dice_score(&a, &c, 1), 0.0);
        assert_eq!(dice_score(&a, &b, 1), 0.5);
        assert_eq!(dice_score(&a, &b, 7), 1.0);
    }

    #[test]
    fn ignored_ground_truth_is_excluded() {
        let pred = lm(&[&[1, 1, 1]]);
        let gt = lm(&[&[1, IGNORE_INDEX, 1]]);
        assert_eq!(dice_score(&pred, &gt, 1), 1.0);
    }

    #[test]
    fn relative_dice_examples() {
        assert!((relative_dice(37.69, 15.42) - 22.27).abs() < 1e-9);
        assert!((relative_dice(50.93, 22.87) - 28.06).abs() < 1e-9);
        assert_eq!(relative_dice(41.0, 41.0), 0.0);
        assert_eq!(relative_dice(3.0, 5.0), -relative_dice(5.0, 3.0));
    }

    #[test]
    fn set_level_dice_flags_absent_classes_and_skips_ignored_images() {
        let items = vec![
            ("a".to_string(), lm(&[&[1, 0]]), lm(&[&[1, 0]])),
            ("b".to_string(), lm(&[&[1, 1]]), lm(&[&[1, 0]])),
            ("c".to_string(), lm(&[&[1, 1]]), lm(&[&[IGNORE_INDEX, IGNORE_INDEX]])),
        ];
        let r = dice_over_set(&items, 3, ClassSelection::Foreground).unwrap();
        assert_eq!(r.classes, vec![1, 2]);
        assert_eq!(r.n_images, 2);
        assert_eq!(r.skipped, vec!["c".to_string()]);
        assert_eq!(r.absent, vec![2]);
        let per_image = (1.0 + 2.0 / 3.0) / 2.0;
        assert!((r.per_class[0] - per_image).abs() < 1e-12);
        assert!((r.mean - per_image).abs() < 1e-12);
        assert!((r.pooled_per_class[0] - 4.0 / 5.0).abs() < 1e-12);
    }

    fn result(mean: f64) -> DiceResult {
        DiceResult {
            classes: vec![1],
            per_class: vec![mean],
            mean,
            pooled_per_class: vec![mean],
            pooled_mean: mean,
            n_images: 1,
            absent: vec![],
            skipped: vec![],
        }
    }

    #[test]
    fn fold_aggregation() {
        let one = aggregate_folds(&[result(0.7)]).unwrap();
        assert_eq!((one.mean, one.std), (0.7, 0.0));
        let two = aggregate_folds(&[result(0.4), result(0.6)]).unwrap();
        assert!((two.mean - 0.5).abs() < 1e-15);
        let four = [0.31, 0.77, 0.52, 0.64];
        let s = aggregate_folds(&four.map(result)).unwrap();
        let rev: f64 = four.iter().rev().fold(0.0, |a, b| a + b) / 4.0;
        assert!((s.mean - rev).abs() < 1e-15);
        let shuffled = aggregate_folds(&[0.64, 0.31, 0.52, 0.77].map(result)).unwrap();
        assert!((shuffled.mean - s.mean).abs() < 1e-15 && (shuffled.std - s.std).abs() < 1e-15);
        assert!(aggregate_folds(&[]).is_err());
    }

    #[test]
    fn markdown_table_shows_relative_dice() {
        let tasks = vec!["shift".to_string()];
        let rows = vec![
            ("Supervised".to_string(), vec![Some(15.42)]),
            ("TI-ST".to_string(), vec![Some(37.69)]),
        ];
        let md = table_markdown(&tasks, &rows, "Supervised");
        assert!(md.contains("| TI-ST | 37.69 (+22.27) | +22.27 |"), "{md}");
        assert!(md.contains("| Supervised | 15.42 | - |"), "{md}");
    }
}
