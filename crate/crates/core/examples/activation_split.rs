//! Split a GELU into three chunks along the last axis and concatenate them.

use splitquant::ir::{execute, Graph, Layer, Op, TensorMap};
use splitquant::tensor::Tensor;
use splitquant::transform::{chunk_lengths, split_activation};

fn main() -> splitquant::Result<()> {
    let g = Graph::chain("x", &[7], vec![Layer::new("act", Op::Gelu, &["x"])], "act");
    let r = split_activation(&g, "act")?;
    println!("chunks {:?}", chunk_lengths(7));
    for l in &r.graph.layers {
        println!("  {} {} <- {}", l.id, l.op.kind_name(), l.inputs.join(", "));
    }
    let x = TensorMap::from([(
        "x".to_string(),
        Tensor::vector(vec![-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0])?,
    )]);
    let (a, b) = (execute(&g, &x)?, execute(&r.graph, &x)?);
    println!("bit-identical: {}", a["act"] == b["act"]);
    Ok(())
}
