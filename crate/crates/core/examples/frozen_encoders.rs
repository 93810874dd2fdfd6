//! Run the frozen vision and text encoders on one image and one prompt.

use vlm_par::encoders::{patchify, tokenize, EncoderWeights, Vocab};
use vlm_par::model::FrozenEncoders;
use vlm_par::{EncoderConfig, Tensor};

fn main() -> vlm_par::Result<()> {
    let cfg = EncoderConfig::default();
    let weights = EncoderWeights::seeded(&cfg, 7)?;
    println!("encoder checksum {}", weights.checksum());

    let prompt = "What color is the person's hat?";
    let vocab = Vocab::from_texts(&[prompt]);
    let ids = tokenize(prompt, &vocab, cfg.max_tokens)?;
    println!("tokens {:?}", ids.iter().map(|&i| vocab.token(i).unwrap()).collect::<Vec<_>>());

    let image = Tensor::new(
        vec![cfg.image_hw, cfg.image_hw, 3],
        (0..cfg.image_hw * cfg.image_hw * 3).map(|i| (i % 17) as f64 / 16.0).collect(),
    )?;
    println!("patches {:?}", patchify(&image, cfg.patch_size)?.shape());

    let enc = FrozenEncoders::new(weights, vocab)?;
    let img = enc.encode_image(&image)?;
    let text = enc.encode_prompt(prompt)?;
    println!("cls {:?}  f_img {:?}  f_text {:?}", img.cls.shape(), img.f_img.shape(), text.shape());
    Ok(())
}
