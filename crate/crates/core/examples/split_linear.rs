//! Split a linear layer into three cluster layers joined by additions and
//! check that the outputs do not change.

use splitquant::ir::{execute, Graph, Layer, TensorMap};
use splitquant::tensor::Tensor;
use splitquant::transform::{split_linear, SplitMode};

fn main() -> splitquant::Result<()> {
    let weight = Tensor::new(vec![2, 2], vec![-8.9, 0.3, 19.2, -0.1])?;
    let bias = Tensor::vector(vec![0.05, 7.5])?;
    let g = Graph::chain("x", &[2], vec![Layer::linear("fc", "x", weight, Some(bias))], "fc");

    let r = split_linear(&g, "fc", 0)?;
    let plan = r.plan.expect("layer has several distinct values");
    if let SplitMode::WeightCluster(ws) = &plan.mode {
        println!("original range {:?}", ws.original_range);
        for (part, range) in plan.parts.iter().zip(&ws.cluster_ranges) {
            let l = r.graph.layer(part).unwrap();
            println!(
                "{part}: cluster {range:?} weight {:?} bias {:?}",
                l.weight().unwrap().data(),
                l.bias().map(|b| b.data())
            );
        }
    }

    let x = TensorMap::from([("x".to_string(), Tensor::vector(vec![1.5, -2.0])?)]);
    println!("before {:?}", execute(&g, &x)?["fc"].data());
    println!("after  {:?}", execute(&r.graph, &x)?["fc"].data());
    Ok(())
}
