use super::{unique_id, Rewrite, SkipReason, SplitMode, SplitPlan, WeightSplit};
use crate::cluster::kmeans_1d;
use crate::error::{Error, Result};
use crate::ir::{Graph, Layer, Op, BIAS, WEIGHT};
use crate::tensor::Tensor;

/// Number of clusters a weight layer is split into.
pub const SPLIT_COUNT: usize = 3;

/// Id suffixes for the split parts, lowest cluster first.
pub(crate) fn part_suffixes(k: usize) -> &'static [&'static str] {
    match k {
        3 => &["lo", "mid", "hi"],
        2 => &["lo", "hi"],
        _ => &["lo"],
    }
}

/// Splits a Linear layer into up to three Linear layers by clustering its
/// weight and bias scalars jointly, then sums them with Add nodes.
pub fn split_linear(g: &Graph, layer_id: &str, seed: u64) -> Result<Rewrite> {
    split_weight_layer(g, layer_id, seed, "linear")
}

/// Conv2d counterpart of [`split_linear`]; kernel shapes are kept by zero
/// injection.
pub fn split_conv(g: &Graph, layer_id: &str, seed: u64) -> Result<Rewrite> {
    split_weight_layer(g, layer_id, seed, "conv2d")
}

fn split_weight_layer(g: &Graph, layer_id: &str, seed: u64, expected: &'static str) -> Result<Rewrite> {
    let pos = g
        .position(layer_id)
        .ok_or_else(|| Error::arg(format!("no layer `{layer_id}`")))?;
    let layer = &g.layers[pos];
    if layer.op.kind_name() != expected {
        return Err(Error::Kind {
            layer: layer_id.into(),
            expected,
            found: layer.op.kind_name().into(),
        });
    }
    let weight = layer.param(WEIGHT)?;
    let bias = layer.bias();
    let n_weight = weight.numel();
    let mut values = weight.data().to_vec();
    if let Some(b) = bias {
        values.extend_from_slice(b.data());
    }
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo == hi {
        return Ok(Rewrite::skipped(g, layer_id, SkipReason::SingleValue));
    }

    let assignment = kmeans_1d(&values, SPLIT_COUNT, seed).map_err(|e| e.at_node(layer_id))?;
    let k = assignment.k;
    let (w_labels, b_labels) = assignment.labels.split_at(n_weight);
    let suffixes = part_suffixes(k);
    let part_ids: Vec<String> = suffixes.iter().map(|s| format!("{layer_id}.{s}")).collect();
    let add_ids: Vec<String> = (0..k - 1).map(|i| format!("{layer_id}.add{i}")).collect();
    for id in part_ids.iter().chain(&add_ids) {
        unique_id(g, id)?;
    }

    let mut parts = Vec::with_capacity(k);
    let mut materialized = Vec::with_capacity(k);
    for (j, id) in part_ids.iter().enumerate() {
        let mask = |t: &Tensor, labels: &[usize]| {
            let data = t
                .data()
                .iter()
                .zip(labels)
                .map(|(&v, &l)| if l == j { v } else { 0.0 })
                .collect();
            Tensor::new(t.shape().to_vec(), data).expect("same shape")
        };
        let mut part = Layer {
            id: id.clone(),
            op: layer.op,
            inputs: layer.inputs.clone(),
            params: Default::default(),
            split_from: Some(layer_id.into()),
        };
        let w = mask(weight, w_labels);
        let mut range = w.min_max();
        part.params.insert(WEIGHT.into(), w);
        if let Some(b) = bias {
            if b_labels.contains(&j) {
                let bj = mask(b, b_labels);
                let (blo, bhi) = bj.min_max();
                range = (range.0.min(blo), range.1.max(bhi));
                part.params.insert(BIAS.into(), bj);
            }
        }
        materialized.push(range);
        parts.push(part);
    }

    let mut adds = Vec::with_capacity(k - 1);
    let mut acc = part_ids[0].clone();
    for (i, add_id) in add_ids.iter().enumerate() {
        let mut add = Layer::new(add_id.clone(), Op::Add, &[&acc, &part_ids[i + 1]]);
        add.split_from = Some(layer_id.into());
        adds.push(add);
        acc = add_id.clone();
    }
    let output_id = acc;

    let mut out = g.clone();
    out.layers.splice(pos..=pos, parts.into_iter().chain(adds));
    out.redirect(layer_id, &output_id, &[]);

    let plan = SplitPlan {
        target: layer_id.into(),
        kind: layer.op.kind_name().into(),
        output: output_id,
        parts: part_ids,
        mode: SplitMode::WeightCluster(WeightSplit {
            original_range: (lo, hi),
            cluster_ranges: assignment.ranges(&values),
            cluster_sizes: assignment.sizes(),
            materialized_ranges: materialized,
            bias_owners: (0..k).filter(|j| b_labels.contains(j)).collect(),
            assignment: assignment.into(),
        }),
    };
    Ok(Rewrite {
        graph: out,
        plan: Some(plan),
        skipped: None,
    })
}
