//! Fake-quantize a synthetic outlier MLP at INT2, INT4 and INT8, with and
//! without splitting, and compare output error.

use splitquant::eval::{evaluate, generate_outlier_mlp, generate_teacher_dataset, Precision};
use splitquant::quant::QuantConfig;
use splitquant::transform::{apply_splitquant, TransformConfig};

fn main() -> splitquant::Result<()> {
    let g = generate_outlier_mlp(7, 3, 64, 0.01, 50.0)?;
    let d = generate_teacher_dataset(&g, 7, 256)?;
    let split = apply_splitquant(&g, &TransformConfig::weights_only())?;
    println!(
        "{} layers before splitting, {} after",
        g.layers.len(),
        split.graph.layers.len()
    );
    println!("bits  baseline acc   mse          split acc   mse");
    for bits in [2, 4, 8] {
        let precision = Precision::FakeQuant {
            config: QuantConfig::with_bits(bits)?.weights_only(true),
            calibration: &[],
        };
        let base = evaluate(&g, &d, &precision, None)?;
        let ours = evaluate(&split.graph, &d, &precision, Some(&g))?;
        println!(
            "{bits:>4}  {:>12.3}   {:<11.4e}  {:>9.3}   {:.4e}",
            base.metrics.accuracy, base.metrics.error.mse, ours.metrics.accuracy, ours.metrics.error.mse
        );
    }
    Ok(())
}
