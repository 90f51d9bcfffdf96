//! Fold an inference-mode BatchNorm into the linear layer feeding it.

use splitquant::ir::{execute, Graph, Layer, TensorMap};
use splitquant::tensor::Tensor;
use splitquant::transform::fold_batchnorm;

fn main() -> splitquant::Result<()> {
    let v = |d: &[f32]| Tensor::vector(d.to_vec());
    let g = Graph::chain(
        "x",
        &[2],
        vec![
            Layer::linear(
                "fc",
                "x",
                Tensor::new(vec![2, 2], vec![1.0, 2.0, -3.0, 0.5])?,
                Some(v(&[0.0, 1.0])?),
            ),
            Layer::batchnorm(
                "bn",
                "fc",
                v(&[2.0, 0.5])?,
                v(&[1.0, -1.0])?,
                v(&[0.5, 0.0])?,
                v(&[4.0, 1.0])?,
                1e-5,
            ),
        ],
        "bn",
    );
    let folded = fold_batchnorm(&g)?;
    println!("folded {:?}", folded.folded);
    let fc = folded.graph.layer("fc").unwrap();
    println!(
        "weight {:?} bias {:?}",
        fc.weight().unwrap().data(),
        fc.bias().unwrap().data()
    );

    let x = TensorMap::from([("x".to_string(), v(&[0.3, -1.2])?)]);
    println!("before {:?}", execute(&g, &x)?["bn"].data());
    println!("after  {:?}", execute(&folded.graph, &x)?["bn"].data());
    Ok(())
}
