//! Analytic gradients of the fusion and head parameters against central
//! finite differences on random features.

use vlm_par::config::{Ablation, AttributeSpec, EncoderConfig, LossConfig, ModelConfig};
use vlm_par::pipeline::gradcheck_model;

fn main() -> vlm_par::Result<()> {
    let enc = EncoderConfig { d_model: 8, num_heads: 2, patch_size: 8, image_hw: 16, max_tokens: 3, ..EncoderConfig::default() };
    let attrs = vec![
        AttributeSpec { name: "hat".into(), prompt: "a hat".into(), num_classes: 2 },
        AttributeSpec { name: "color".into(), prompt: "upper color".into(), num_classes: 3 },
    ];
    let cfg = ModelConfig::new(enc, 2, attrs)?;
    let report = gradcheck_model(&cfg, &LossConfig::default(), 0, Ablation::Full, false)?;
    for g in &report.groups {
        println!("{:<18} {:>4} entries  rel {:.2e}  abs {:.2e}", g.name, g.checked, g.max_rel_error, g.max_abs_error);
    }
    println!("passes at 1e-4: {}", report.passes(1e-4));
    Ok(())
}
