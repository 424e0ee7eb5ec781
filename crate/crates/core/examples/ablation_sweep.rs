//! Run a miniature threshold sweep through the same entry point as
//! `tist ablate` and print the generated report.
//!
//! cargo run --release --example ablation_sweep -- [OUT_DIR]

use std::path::{Path, PathBuf};

use tist::cli::{cmd_ablate, AblateArgs, ExperimentArgs};

const CONFIG: &str = r#"
[data]
kind = "synthetic"
[data.synth]
source_count = 8
target_count = 8
height = 16
width = 16

[train]
epochs = 2
batch_size = 2
[train.model]
base_width = 2
"#;

fn main() -> tist::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("tist_ablation_sweep"));
    run(&out)
}

pub fn run(out: &Path) -> tist::Result<()> {
    std::fs::create_dir_all(out).map_err(|e| tist::Error::io(out, e))?;
    let config = out.join("tiny.toml");
    std::fs::write(&config, CONFIG).map_err(|e| tist::Error::io(&config, e))?;

    let status = cmd_ablate(&AblateArgs {
        exp: ExperimentArgs { config: Some(config), eval_final_only: true, ..Default::default() },
        methods: vec!["st".into(), "tist".into()],
        taus: vec![0.8, 0.9],
        fractions: vec![0.5, 1.0],
        seeds: vec![0],
        out: Some(out.join("sweep")),
        force: true,
    })?;
    println!("{status:?}");
    let md = out.join("sweep/report/report.md");
    println!("{}", std::fs::read_to_string(&md).map_err(|e| tist::Error::io(&md, e))?);
    Ok(())
}
