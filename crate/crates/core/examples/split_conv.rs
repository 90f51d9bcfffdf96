//! Split a convolution with a few outlier kernel weights.

use splitquant::ir::{execute, Graph, Layer, TensorMap};
use splitquant::tensor::Tensor;
use splitquant::transform::split_conv;

fn main() -> splitquant::Result<()> {
    let mut w: Vec<f32> = (0..18).map(|i| ((i * 7 % 11) as f32 - 5.0) * 0.1).collect();
    w[4] = 30.0;
    w[13] = -25.0;
    let weight = Tensor::new(vec![2, 1, 3, 3], w)?;
    let bias = Tensor::vector(vec![0.2, -0.1])?;
    let g = Graph::chain(
        "img",
        &[1, 4, 4],
        vec![Layer::conv2d("conv", "img", weight, Some(bias), 1, 1)],
        "conv",
    );

    let r = split_conv(&g, "conv", 0)?;
    let plan = r.plan.expect("split");
    for part in &plan.parts {
        let (lo, hi) = r.graph.layer(part).unwrap().weight().unwrap().min_max();
        println!("{part}: weight range [{lo}, {hi}]");
    }

    let img = Tensor::new(vec![1, 4, 4], (0..16).map(|i| i as f32 / 8.0 - 1.0).collect())?;
    let x = TensorMap::from([("img".to_string(), img)]);
    let (a, b) = (execute(&g, &x)?, execute(&r.graph, &x)?);
    let diff = a["conv"]
        .data()
        .iter()
        .zip(b["conv"].data())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f32::max);
    println!("max output difference {diff:e}");
    Ok(())
}
