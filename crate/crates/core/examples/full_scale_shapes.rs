//! Forward shapes at full model width: 224-pixel images, 16-pixel patches,
//! d_model 768 and 8 fusion heads. One encoder layer keeps it quick.

use vlm_par::encoders::{text_forward, vision_forward, EncoderWeights};
use vlm_par::fusion::{cross_attention_forward, FusionWeights};
use vlm_par::rng::Prng;
use vlm_par::{AttributeSpec, EncoderConfig, ModelConfig, Tensor};

fn main() -> vlm_par::Result<()> {
    let enc = EncoderConfig { num_layers: 1, vocab_size: 64, ..EncoderConfig::base() };
    let attrs = vec![AttributeSpec { name: "hat".into(), prompt: "a hat".into(), num_classes: 2 }];
    let cfg = ModelConfig::new(enc.clone(), 8, attrs)?;
    let w = EncoderWeights::seeded(&enc, 1)?;
    let v = vision_forward(&Tensor::full(&[224, 224, 3], 0.5), &enc, &w.vision)?;
    let text = text_forward(&[1, 2, 3, 4], &enc, &w.text)?;
    let h = cross_attention_forward(&v.f_img, &text, &FusionWeights::init(768, &mut Prng::new(2)), 8, cfg.layer_norm_eps)?;
    println!("patches N = {}", enc.num_patches());
    println!("head width d_k = {}", cfg.head_dim());
    println!("f_img {:?}, f_text {:?}, h_i {:?}", v.f_img.shape(), text.shape(), h.shape());
    Ok(())
}
