//! Two-view pseudo-label filtering next to single-view filtering on a
//! hand-made pair of predictions.
//!
//! cargo run --example pseudo_labels

use tist::pseudolabel::{st_pseudo_labels, tist_pseudo_labels, ProbabilityMap};
use tist::IGNORE_INDEX;

fn show(name: &str, labels: &[u8], w: usize) {
    println!("{name}:");
    for row in labels.chunks(w) {
        let cells: Vec<String> = row
            .iter()
            .map(|&l| if l == IGNORE_INDEX { ".".into() } else { l.to_string() })
            .collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> tist::Result<()> {
    run()
}

pub fn run() -> tist::Result<()> {
    let (h, w) = (4, 6);
    let tau = 0.85;
    // Transformed view: confident everywhere except the last column.
    let transformed: Vec<Vec<f64>> = (0..h * w)
        .map(|p| match p % w {
            0..=2 => vec![0.95, 0.05],
            5 => vec![0.6, 0.4],
            _ => vec![0.1, 0.9],
        })
        .collect();
    // Original view: agrees on the left, wavers in the middle columns.
    let original: Vec<Vec<f64>> = (0..h * w)
        .map(|p| match p % w {
            0..=2 => vec![0.97, 0.03],
            3 => vec![0.5, 0.5],
            _ => vec![0.05, 0.95],
        })
        .collect();
    let a = ProbabilityMap::from_pixels(h, w, &original)?;
    let b = ProbabilityMap::from_pixels(h, w, &transformed)?;

    let st = st_pseudo_labels(&b, tau)?;
    let ti = tist_pseudo_labels(&a, &b, tau)?;
    show("single view", st.labels.labels().data(), w);
    show("two views", ti.labels.labels().data(), w);
    println!("retained: single {:.2}, two-view {:.2}", st.mask.fraction(), ti.mask.fraction());
    assert!(ti.mask.is_subset_of(&st.mask));
    Ok(())
}
