//! One attribute's cross-attention block: image patches query prompt tokens.

use vlm_par::fusion::{cross_attention_trace, FusionWeights};
use vlm_par::rng::{seeded_normal, Prng};

fn main() -> vlm_par::Result<()> {
    let (n, t, d, heads) = (6, 4, 16, 2);
    let f_img = seeded_normal(&[n, d], 1, 1.0);
    let f_text = seeded_normal(&[t, d], 2, 1.0);
    let w = FusionWeights::init(d, &mut Prng::new(3));
    let trace = cross_attention_trace(&f_img, &f_text, &w, heads, 1e-5)?;

    for (h, a) in trace.weights.iter().enumerate() {
        println!("head {h} attention over {t} prompt tokens:");
        for r in 0..n {
            let row: Vec<String> = a.row(r).iter().map(|x| format!("{x:.3}")).collect();
            println!("  patch {r}: [{}]  sum {:.12}", row.join(", "), a.row(r).iter().sum::<f64>());
        }
    }
    println!("fused features {:?}", trace.output.shape());
    Ok(())
}
