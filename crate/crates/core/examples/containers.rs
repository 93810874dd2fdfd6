//! Write trainable weights to a container and read them back bitwise.

use vlm_par::config::{Ablation, AttributeSpec, EncoderConfig, ModelConfig};
use vlm_par::io::TensorContainer;
use vlm_par::model::TrainableParams;

fn main() -> vlm_par::Result<()> {
    let attrs = vec![AttributeSpec { name: "hat".into(), prompt: "a hat".into(), num_classes: 2 }];
    let cfg = ModelConfig::new(EncoderConfig::default(), 4, attrs)?;
    let params = TrainableParams::init(&cfg, 3);

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("weights.vlmw");
    params.to_container(Ablation::Full)?.save(&path)?;
    let loaded = TensorContainer::load(&path)?;
    for (name, t) in loaded.iter() {
        println!("{name:<16} {:?}", t.shape());
    }
    let (back, ablation) = TrainableParams::from_container(&cfg, &loaded)?;
    let resaved = back.to_container(ablation)?.to_bytes();
    println!("ablation {}, re-saved bytes identical: {}", ablation.as_str(), resaved == std::fs::read(&path).expect("read"));
    Ok(())
}
