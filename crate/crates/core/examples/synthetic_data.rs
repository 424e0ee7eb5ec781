//! Render a small source/target pair, report the domain gap and write both
//! sets in the folder layout the loader reads.
//!
//! cargo run --example synthetic_data -- [OUT_DIR]

use std::path::{Path, PathBuf};

use tist::data::{export_folder, generate_synthetic, load_folder_dataset, Domain, DomainShift, FolderLayout, SynthConfig};

fn main() -> tist::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("tist_synthetic_data"));
    run(&out)
}

pub fn run(root: &Path) -> tist::Result<()> {
    let cfg = SynthConfig {
        source_count: 8,
        target_count: 8,
        height: 64,
        width: 64,
        ..Default::default()
    };
    let (source, target) = generate_synthetic(&cfg, 7)?;
    println!("source channel means {:.3?}", source.channel_means());
    println!("target channel means {:.3?}", target.channel_means());

    let (s0, t0) = generate_synthetic(&SynthConfig { shift: DomainShift::NONE, ..cfg.clone() }, 7)?;
    println!("without shift: {:.3?} vs {:.3?}", s0.channel_means(), t0.channel_means());

    let layout = FolderLayout::default();
    export_folder(&source, &root.join("source"), &layout)?;
    export_folder(&target, &root.join("target"), &layout)?;
    let back = load_folder_dataset(&root.join("target"), &layout, Domain::Target)?;
    assert_eq!(back.len(), target.len());
    println!("wrote {} + {} samples under {}", source.len(), back.len(), root.display());
    Ok(())
}
