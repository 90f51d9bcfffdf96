//! One large outlier stretches the quantization range and collapses every
//! other value onto the same integer.

use splitquant::quant::{calibrate, compute_qparams, dequantize, quantize, CalibMethod};
use splitquant::tensor::Tensor;

fn show(label: &str, values: Vec<f32>) -> splitquant::Result<()> {
    let t = Tensor::vector(values)?;
    let range = calibrate([&t], CalibMethod::MinMax)?;
    let qp = compute_qparams(&range, -10, 10, false)?;
    let q = quantize(&t, &qp);
    println!("{label}");
    println!(
        "  range  [{}, {}]  scale {:e}  zero point {}",
        range.beta, range.alpha, qp.scale, qp.zero_point
    );
    println!("  input  {:?}", t.data());
    println!("  int    {:?}", q.data);
    println!("  back   {:?}", dequantize(&q, &qp).data());
    Ok(())
}

fn main() -> splitquant::Result<()> {
    show("evenly spread", vec![-1000.0, -500.0, 0.0, 500.0, 1000.0])?;
    show("one outlier", vec![-1000.0, -500.0, 0.0, 500.0, 1e30])
}
