//! Per-attribute accuracy with and without the cross-attention blocks,
//! trained from identical seeds.

use vlm_par::io::synthetic::{generate_to_dir, two_region_spec};
use vlm_par::pipeline::{cmd_ablate, RunConfig};

fn main() -> vlm_par::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    generate_to_dir(&two_region_spec(120, 32, 8, 10), dir.path().join("train"))?;
    generate_to_dir(&two_region_spec(120, 32, 8, 11), dir.path().join("heldout"))?;

    let mut config = RunConfig { seed: 1, ..RunConfig::default() };
    config.train.epochs = 20;
    config.train.learning_rate = 1e-3;
    config.paths.dataset = Some("train".into());
    let path = dir.path().join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).expect("json")).expect("write config");

    let report = cmd_ablate(&path, &dir.path().join("heldout"), &dir.path().join("ablation"))?;
    print!("{}", report.to_csv());
    Ok(())
}
