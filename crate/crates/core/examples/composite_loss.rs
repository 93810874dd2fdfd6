//! The per-attribute loss as the true-class probability varies.

use vlm_par::heads::attribute_loss;
use vlm_par::{LossConfig, Tensor};

fn main() -> vlm_par::Result<()> {
    let cfg = LossConfig::default();
    let ce_only = LossConfig { lambda_focal: 0.0, smoothing: 0.0, ..cfg.clone() };
    let focal_only = LossConfig { lambda_ce: 0.0, ..cfg.clone() };
    println!("{:>5} {:>10} {:>10} {:>10}", "p_y", "combined", "ce", "focal");
    for i in 1..10 {
        let py = i as f64 / 10.0;
        let p = Tensor::vector(vec![py, 1.0 - py]);
        println!(
            "{py:>5.1} {:>10.5} {:>10.5} {:>10.5}",
            attribute_loss(&p, 0, &cfg)?,
            attribute_loss(&p, 0, &ce_only)?,
            attribute_loss(&p, 0, &focal_only)?
        );
    }
    Ok(())
}
