use std::collections::BTreeMap;

use super::{Graph, Layer, Op, BETA, BIAS, GAMMA, RUNNING_MEAN, RUNNING_VAR, WEIGHT};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Named tensors, used for both graph inputs and graph outputs.
pub type TensorMap = BTreeMap<String, Tensor>;

/// Runs the graph in topological order and returns its named outputs.
pub fn execute(g: &Graph, inputs: &TensorMap) -> Result<TensorMap> {
    execute_with(g, inputs, &mut |_, t| Ok(t))
}

/// Like [`execute`], but every layer result passes through `hook` before
/// downstream layers see it. The hook may observe or replace the tensor.
pub fn execute_with(
    g: &Graph,
    inputs: &TensorMap,
    hook: &mut dyn FnMut(&Layer, Tensor) -> Result<Tensor>,
) -> Result<TensorMap> {
    let mut values: BTreeMap<&str, Tensor> = BTreeMap::new();
    for gi in &g.inputs {
        let t = inputs
            .get(&gi.name)
            .ok_or_else(|| Error::MissingInput(gi.name.clone()))?;
        if t.shape() != gi.shape.as_slice() {
            return Err(Error::dim(
                "execute",
                format!("input `{}` has shape {:?}, expected {:?}", gi.name, t.shape(), gi.shape),
            ));
        }
        values.insert(gi.name.as_str(), t.clone());
    }
    for idx in g.topo_order()? {
        let layer = &g.layers[idx];
        let args = layer
            .inputs
            .iter()
            .map(|src| {
                values
                    .get(src.as_str())
                    .ok_or_else(|| Error::arg(format!("unknown input `{src}`")).at_node(&layer.id))
            })
            .collect::<Result<Vec<&Tensor>>>()?;
        let out = eval_layer(layer, &args).map_err(|e| e.at_node(&layer.id))?;
        let out = hook(layer, out).map_err(|e| e.at_node(&layer.id))?;
        values.insert(layer.id.as_str(), out);
    }
    g.outputs
        .iter()
        .map(|o| {
            values
                .get(o.source.as_str())
                .map(|t| (o.name.clone(), t.clone()))
                .ok_or_else(|| Error::arg(format!("output `{}` has unknown source `{}`", o.name, o.source)))
        })
        .collect()
}

fn single<'a>(layer: &Layer, args: &[&'a Tensor]) -> Result<&'a Tensor> {
    match args {
        [x] => Ok(x),
        _ => Err(Error::arg(format!(
            "{} takes exactly one input, got {}",
            layer.op.kind_name(),
            args.len()
        ))),
    }
}

/// Evaluates one layer on already-computed input tensors.
pub fn eval_layer(layer: &Layer, args: &[&Tensor]) -> Result<Tensor> {
    match layer.op {
        Op::Linear => tensor::linear(single(layer, args)?, layer.param(WEIGHT)?, layer.params.get(BIAS)),
        Op::Conv2d { stride, padding } => tensor::conv2d(
            single(layer, args)?,
            layer.param(WEIGHT)?,
            layer.params.get(BIAS),
            stride,
            padding,
        ),
        Op::Relu => Ok(tensor::relu(single(layer, args)?)),
        Op::Gelu => Ok(tensor::gelu(single(layer, args)?)),
        Op::BatchNorm { eps } => tensor::batch_norm(
            single(layer, args)?,
            layer.param(GAMMA)?,
            layer.param(BETA)?,
            layer.param(RUNNING_MEAN)?,
            layer.param(RUNNING_VAR)?,
            eps,
        ),
        Op::Add => {
            let (first, rest) = match args {
                [first, rest @ ..] if !rest.is_empty() => (first, rest),
                _ => return Err(Error::arg("add needs at least two inputs")),
            };
            rest.iter()
                .try_fold((*first).clone(), |acc, t| tensor::elementwise_add(&acc, t))
        }
        Op::Concat { axis } => tensor::concat(args, axis),
        Op::Slice { axis, start, len } => tensor::slice(single(layer, args)?, axis, start, len),
    }
}
