//! Label-based mA and F1 from class predictions, with the flagging rule for
//! undefined terms.

use vlm_par::metrics::MetricsReport;
use vlm_par::AttributeSpec;

fn main() -> vlm_par::Result<()> {
    let specs = vec![
        AttributeSpec { name: "hat".into(), prompt: "hat".into(), num_classes: 2 },
        AttributeSpec { name: "bag".into(), prompt: "bag".into(), num_classes: 2 },
        AttributeSpec { name: "color".into(), prompt: "color".into(), num_classes: 3 },
    ];
    let labels = vec![vec![1, 0, 0], vec![0, 0, 1], vec![1, 0, 2], vec![0, 0, 1]];
    let preds = vec![vec![1, 0, 0], vec![1, 0, 1], vec![1, 1, 1], vec![0, 0, 1]];
    let report = MetricsReport::from_classes(&preds, &labels, &specs)?;
    print!("{}", report.to_csv());
    println!("flagged columns: {:?}", report.flagged);
    Ok(())
}
