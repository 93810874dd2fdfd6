//! Train on a 200-sample synthetic set and evaluate on a held-out set.

use vlm_par::config::Ablation;
use vlm_par::io::synthetic::{generate_to_dir, two_region_spec};
use vlm_par::io::Dataset;
use vlm_par::pipeline::{train_session, RunConfig, Session};
use vlm_par::training::evaluate;

fn main() -> vlm_par::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    generate_to_dir(&two_region_spec(200, 32, 8, 200), dir.path().join("train"))?;
    generate_to_dir(&two_region_spec(200, 32, 8, 201), dir.path().join("heldout"))?;

    let mut config = RunConfig { seed: 1, ..RunConfig::default() };
    config.model.encoder_seed = 7;
    config.train.epochs = 30;
    config.train.learning_rate = 1e-3;
    config.paths.dataset = Some("train".into());
    let session = Session::new(config, dir.path());

    let outcome = train_session(&session, None)?;
    for r in outcome.history.iter().step_by(5) {
        println!("epoch {:>3}  loss {:.4}  mA {:.3}  F1 {:.3}", r.epoch, r.loss, r.mean_accuracy, r.f1);
    }

    let cfg = session.model_config(session.attributes(None)?)?;
    let encoders = session.encoders(&cfg)?;
    let heldout = session.features(&Dataset::load(dir.path().join("heldout"))?, &cfg, &encoders, false)?;
    let report = evaluate(&outcome.params, &heldout, &cfg, Ablation::Full)?;
    print!("held-out\n{}", report.to_csv());
    Ok(())
}
