use super::{SkipDiagnostic, SkipReason};
use crate::error::Result;
use crate::ir::{Graph, Layer, Op, BETA, BIAS, GAMMA, RUNNING_MEAN, RUNNING_VAR, WEIGHT};
use crate::tensor::Tensor;

/// Result of [`fold_batchnorm`].
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub graph: Graph,
    /// `(batchnorm, producer)` pairs that were folded.
    pub folded: Vec<(String, String)>,
    pub skipped: Vec<SkipDiagnostic>,
}

/// Folds every inference-mode BatchNorm into the Linear or Conv2d producing
/// its input, when that producer feeds nothing else.
pub fn fold_batchnorm(g: &Graph) -> Result<FoldOutcome> {
    let mut graph = g.clone();
    let mut folded = Vec::new();
    let mut skipped = Vec::new();
    for idx in g.topo_order()? {
        let bn = &g.layers[idx];
        let Op::BatchNorm { eps } = bn.op else {
            continue;
        };
        let skip = |reason| SkipDiagnostic {
            layer: bn.id.clone(),
            reason,
        };
        let producer_id = &bn.inputs[0];
        let Some(pos) = graph.position(producer_id) else {
            skipped.push(skip(SkipReason::NotFoldable("input is not a layer".into())));
            continue;
        };
        let producer = &graph.layers[pos];
        if !producer.op.is_weight_layer() {
            skipped.push(skip(SkipReason::NotFoldable(format!(
                "input `{producer_id}` is {}",
                producer.op.kind_name()
            ))));
            continue;
        }
        if graph.consumers(producer_id).len() != 1 || graph.is_output_source(producer_id) {
            skipped.push(skip(SkipReason::SharedProducer(producer_id.clone())));
            continue;
        }
        match folded_params(producer, bn, eps)? {
            Some((w, b)) => {
                let p = &mut graph.layers[pos];
                p.params.insert(WEIGHT.into(), w);
                p.params.insert(BIAS.into(), b);
            }
            None => {
                skipped.push(skip(SkipReason::NotFoldable("channel count mismatch".into())));
                continue;
            }
        }
        let bn_id = bn.id.clone();
        graph.layers.retain(|l| l.id != bn_id);
        graph.redirect(&bn_id, producer_id, &[]);
        folded.push((bn_id, producer_id.clone()));
    }
    Ok(FoldOutcome { graph, folded, skipped })
}

fn folded_params(producer: &Layer, bn: &Layer, eps: f32) -> Result<Option<(Tensor, Tensor)>> {
    let w = producer.param(WEIGHT)?;
    let out_ch = w.shape()[0];
    let [gamma, beta, mean, var] = [GAMMA, BETA, RUNNING_MEAN, RUNNING_VAR].map(|p| bn.param(p));
    let (gamma, beta, mean, var) = (gamma?, beta?, mean?, var?);
    if [gamma, beta, mean, var].iter().any(|t| t.shape() != [out_ch]) {
        return Ok(None);
    }
    let scale: Vec<f64> = (0..out_ch)
        .map(|c| f64::from(gamma.data()[c]) / (f64::from(var.data()[c]) + f64::from(eps)).sqrt())
        .collect();
    let per_ch = w.numel() / out_ch;
    let wd = w
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (scale[i / per_ch] * f64::from(v)) as f32)
        .collect();
    let bias = producer.bias().map(|b| b.data().to_vec()).unwrap_or(vec![0.0; out_ch]);
    let bd = (0..out_ch)
        .map(|c| (scale[c] * (f64::from(bias[c]) - f64::from(mean.data()[c])) + f64::from(beta.data()[c])) as f32)
        .collect();
    Ok(Some((Tensor::new(w.shape().to_vec(), wd)?, Tensor::vector(bd)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{execute, TensorMap};

    fn v(d: &[f32]) -> Tensor {
        Tensor::vector(d.to_vec()).unwrap()
    }

    #[test]
    fn scalar_fold() {
        let fc = Layer::linear("fc", "x", Tensor::new(vec![1, 1], vec![2.0]).unwrap(), Some(v(&[0.0])));
        let bn = Layer::batchnorm("bn", "fc", v(&[3.0]), v(&[1.0]), v(&[0.0]), v(&[1.0]), 0.0);
        let g = Graph::chain("x", &[1], vec![fc, bn], "bn");
        let out = fold_batchnorm(&g).unwrap();
        let fc = out.graph.layer("fc").unwrap();
        assert_eq!(fc.weight().unwrap().data(), &[6.0]);
        assert_eq!(fc.bias().unwrap().data(), &[1.0]);
        assert!(out.graph.layer("bn").is_none());
        assert_eq!(out.graph.outputs[0].source, "fc");
        assert_eq!(out.graph.outputs[0].name, "bn");
        assert_eq!(out.folded, vec![("bn".to_string(), "fc".to_string())]);
    }

    #[test]
    fn identity_normalization_keeps_params() {
        let w = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.5, 0.25, -7.0]).unwrap();
        let b = v(&[0.1, -0.2]);
        let fc = Layer::linear("fc", "x", w.clone(), Some(b.clone()));
        let bn = Layer::batchnorm(
            "bn",
            "fc",
            v(&[1.0, 1.0]),
            v(&[0.0, 0.0]),
            v(&[0.0, 0.0]),
            v(&[1.0, 1.0]),
            0.0,
        );
        let g = Graph::chain("x", &[3], vec![fc, bn], "bn");
        let out = fold_batchnorm(&g).unwrap();
        let fc = out.graph.layer("fc").unwrap();
        assert_eq!(fc.weight().unwrap(), &w);
        assert_eq!(fc.bias().unwrap(), &b);
    }

    #[test]
    fn conv_fold_matches() {
        let w = Tensor::new(vec![2, 1, 2, 2], (0..8).map(|i| i as f32 * 0.3 - 1.0).collect()).unwrap();
        let conv = Layer::conv2d("c", "x", w, None, 1, 0);
        let bn = Layer::batchnorm(
            "bn",
            "c",
            v(&[1.5, -0.5]),
            v(&[0.2, 0.3]),
            v(&[0.1, -0.4]),
            v(&[2.0, 0.5]),
            1e-5,
        );
        let relu = Layer::new("r", Op::Relu, &["bn"]);
        let g = Graph::chain("x", &[1, 3, 3], vec![conv, bn, relu], "r");
        let out = fold_batchnorm(&g).unwrap();
        assert_eq!(out.graph.layer("r").unwrap().inputs, vec!["c"]);
        let x = TensorMap::from([(
            "x".to_string(),
            Tensor::new(vec![1, 3, 3], (0..9).map(|i| (i as f32).sin()).collect()).unwrap(),
        )]);
        let a = execute(&g, &x).unwrap();
        let b = execute(&out.graph, &x).unwrap();
        for (p, q) in a["r"].data().iter().zip(b["r"].data()) {
            assert!((p - q).abs() <= 1e-5 * p.abs().max(1.0), "{p} {q}");
        }
    }

    #[test]
    fn shared_producer_is_skipped() {
        let fc = Layer::linear("fc", "x", Tensor::new(vec![1, 1], vec![2.0]).unwrap(), None);
        let bn = Layer::batchnorm("bn", "fc", v(&[3.0]), v(&[1.0]), v(&[0.0]), v(&[1.0]), 0.0);
        let add = Layer::new("sum", Op::Add, &["fc", "bn"]);
        let g = Graph::chain("x", &[1], vec![fc, bn, add], "sum");
        let out = fold_batchnorm(&g).unwrap();
        assert_eq!(out.graph, g);
        assert_eq!(out.skipped[0].reason, SkipReason::SharedProducer("fc".into()));
    }

    #[test]
    fn non_weight_producer_is_skipped() {
        let relu = Layer::new("r", Op::Relu, &["x"]);
        let bn = Layer::batchnorm("bn", "r", v(&[3.0]), v(&[1.0]), v(&[0.0]), v(&[1.0]), 0.0);
        let g = Graph::chain("x", &[1], vec![relu, bn], "bn");
        let out = fold_batchnorm(&g).unwrap();
        assert_eq!(out.graph, g);
        assert!(matches!(out.skipped[0].reason, SkipReason::NotFoldable(_)));
    }
}
