//! Cosine alignment between the image class embedding and each prompt.

use vlm_par::encoders::{EncoderWeights, Vocab};
use vlm_par::io::synthetic::{generate_synthetic, two_region_spec};
use vlm_par::model::{zero_shot_scores, FrozenEncoders};
use vlm_par::EncoderConfig;

fn main() -> vlm_par::Result<()> {
    let cfg = EncoderConfig::default();
    let ds = generate_synthetic(&two_region_spec(4, cfg.image_hw, cfg.patch_size, 5))?;
    let prompts: Vec<&str> = ds.attributes.iter().map(|a| a.prompt.as_str()).collect();
    let enc = FrozenEncoders::new(EncoderWeights::seeded(&cfg, 7)?, Vocab::from_texts(&prompts))?;
    let features = enc.extract(&ds)?;
    for (id, row) in features.ids.iter().zip(zero_shot_scores(&features)?) {
        for s in row {
            println!("{id}  {:<6} {:+.4}", ds.attributes[s.attribute].name, s.score);
        }
    }
    Ok(())
}
