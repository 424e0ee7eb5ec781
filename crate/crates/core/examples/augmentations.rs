//! Sample spatial and photometric transforms and save before/after images.
//! The label follows the spatial transform and ignores the photometric one.
//!
//! cargo run --example augmentations -- [OUT_DIR]

use std::path::{Path, PathBuf};

use tist::augment::{apply_nonspatial, apply_spatial, sample_nonspatial, sample_spatial, AugmentConfig};
use tist::data::{generate_synthetic, SynthConfig};
use tist::pseudolabel::save_preview;
use tist::rng::derive_rng;

fn main() -> tist::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("tist_augmentations"));
    run(&out)
}

pub fn run(out: &Path) -> tist::Result<()> {
    std::fs::create_dir_all(out).map_err(|e| tist::Error::io(out, e))?;

    let synth = SynthConfig { source_count: 1, target_count: 1, height: 64, width: 64, ..Default::default() };
    let (source, _) = generate_synthetic(&synth, 3)?;
    let sample = &source.samples[0];
    let label = sample.label()?;
    let cfg = AugmentConfig::default();
    let mut rng = derive_rng(11, &[]);

    save_preview(&sample.image, label, &out.join("original.png"))?;
    for i in 0..4 {
        let g = sample_spatial(&mut rng, &cfg, 64, 64)?;
        let f = sample_nonspatial(&mut rng, &cfg);
        let (img, lab) = apply_spatial(&sample.image, label, &g)?;
        let img = apply_nonspatial(&img, &f)?;
        println!("view {i}: {g:?}\n        {f:?}");
        save_preview(&img, &lab, &out.join(format!("view_{i}.png")))?;

        // Photometric only: geometry and hence labels are unchanged.
        let photo = apply_nonspatial(&sample.image, &f)?;
        assert_eq!(photo.shape(), sample.image.shape());
    }
    println!("previews in {}", out.display());
    Ok(())
}
