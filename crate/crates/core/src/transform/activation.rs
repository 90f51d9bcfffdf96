use super::{unique_id, Rewrite, SkipReason, SplitMode, SplitPlan};
use crate::error::{Error, Result};
use crate::ir::{infer_shapes, Graph, Layer, Op};

/// Chunk lengths for a last axis of length `n`, largest first.
pub fn chunk_lengths(n: usize) -> Vec<usize> {
    let l0 = n.div_ceil(3);
    let l1 = (n - l0).div_ceil(2);
    let l2 = n - l0 - l1;
    [l0, l1, l2].into_iter().filter(|&l| l > 0).collect()
}

/// Replaces a ReLU or GELU with three slices of its last axis, one activation
/// per slice and a concat.
pub fn split_activation(g: &Graph, layer_id: &str) -> Result<Rewrite> {
    let pos = g
        .position(layer_id)
        .ok_or_else(|| Error::arg(format!("no layer `{layer_id}`")))?;
    let layer = &g.layers[pos];
    if !layer.op.is_activation() {
        return Err(Error::Kind {
            layer: layer_id.into(),
            expected: "relu or gelu",
            found: layer.op.kind_name().into(),
        });
    }
    let shapes = infer_shapes(g)?;
    let n = *shapes[layer_id].last().expect("shapes are non-empty");
    if n < 3 {
        return Ok(Rewrite::skipped(g, layer_id, SkipReason::TooShort(n)));
    }
    let lengths = chunk_lengths(n);
    let input = layer.inputs[0].as_str();

    let names = ["lo", "mid", "hi"];
    let slice_ids: Vec<String> = (0..3).map(|i| format!("{layer_id}.s{i}")).collect();
    let act_ids: Vec<String> = names.iter().map(|s| format!("{layer_id}.{s}")).collect();
    let cat_id = format!("{layer_id}.cat");
    for id in slice_ids.iter().chain(&act_ids).chain([&cat_id]) {
        unique_id(g, id)?;
    }

    let tag = |mut l: Layer| {
        l.split_from = Some(layer_id.into());
        l
    };
    let mut new_layers = Vec::with_capacity(7);
    let mut start = 0;
    for (i, &len) in lengths.iter().enumerate() {
        new_layers.push(tag(Layer::new(
            &slice_ids[i],
            Op::Slice { axis: -1, start, len },
            &[input],
        )));
        start += len;
    }
    for i in 0..3 {
        new_layers.push(tag(Layer::new(&act_ids[i], layer.op, &[&slice_ids[i]])));
    }
    let act_refs: Vec<&str> = act_ids.iter().map(String::as_str).collect();
    new_layers.push(tag(Layer::new(&cat_id, Op::Concat { axis: -1 }, &act_refs)));

    let mut out = g.clone();
    out.layers.splice(pos..=pos, new_layers);
    out.redirect(layer_id, &cat_id, &[]);
    Ok(Rewrite {
        graph: out,
        plan: Some(SplitPlan {
            target: layer_id.into(),
            kind: layer.op.kind_name().into(),
            output: cat_id,
            parts: act_ids,
            mode: SplitMode::ActivationChunk { lengths },
        }),
        skipped: None,
    })
}
