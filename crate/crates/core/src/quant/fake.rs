//! Simulated quantization of a whole graph.
//!
//! Calibration runs the FP32 graph once per calibration input and records a
//! per-tensor range for the output of every Linear, Conv2d, ReLU and GELU
//! layer. Evaluation then replaces every weight and bias with its
//! fake-quantized copy and, unless the config is weights-only, fake-quantizes
//! each recorded layer output before downstream layers consume it.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{fake_quantize, CalibMethod, CalibRange, QuantConfig, QuantParams, RangeObserver};
use crate::error::{Error, Result};
use crate::ir::{execute_with, Graph, Layer, TensorMap, BIAS, WEIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Weight,
    Bias,
    Activation,
}

/// One quantized tensor of the model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantEntry {
    pub layer: String,
    pub role: TensorRole,
    pub range: CalibRange,
    pub params: QuantParams,
}

/// A graph whose parameters are already fake-quantized, plus the activation
/// quantizers to apply at run time.
#[derive(Debug, Clone)]
pub struct CalibratedModel {
    graph: Graph,
    activations: BTreeMap<String, QuantParams>,
    entries: Vec<QuantEntry>,
    config: QuantConfig,
}

fn quantizes_output(l: &Layer) -> bool {
    l.op.is_weight_layer() || l.op.is_activation()
}

/// Calibrates `g` under `cfg`. `calibration` may be empty only when
/// `cfg.weights_only` is set.
pub fn calibrate_model(g: &Graph, cfg: &QuantConfig, calibration: &[TensorMap]) -> Result<CalibratedModel> {
    let mut entries = Vec::new();
    let mut graph = g.clone();
    for layer in graph.layers.iter_mut().filter(|l| l.op.is_weight_layer()) {
        for (name, role) in [(WEIGHT, TensorRole::Weight), (BIAS, TensorRole::Bias)] {
            let Some(t) = layer.params.get_mut(name) else {
                continue;
            };
            let (lo, hi) = t.min_max();
            let range = CalibRange::new(lo, hi, CalibMethod::MinMax).map_err(|e| e.at_node(&layer.id))?;
            let params = cfg.params_for(&range).map_err(|e| e.at_node(&layer.id))?;
            *t = fake_quantize(t, &params);
            entries.push(QuantEntry {
                layer: layer.id.clone(),
                role,
                range,
                params,
            });
        }
    }

    let mut activations = BTreeMap::new();
    if !cfg.weights_only {
        if calibration.is_empty() {
            return Err(Error::Calibration(
                "activation quantization needs at least one calibration input".into(),
            ));
        }
        let mut observers: BTreeMap<String, RangeObserver> = BTreeMap::new();
        for inputs in calibration {
            crate::ir::execute_with(g, inputs, &mut |layer, t| {
                if quantizes_output(layer) {
                    observers
                        .entry(layer.id.clone())
                        .or_insert_with(|| RangeObserver::new(cfg.activation_calibration))
                        .observe(&t);
                }
                Ok(t)
            })?;
        }
        for idx in g.topo_order()? {
            let id = &g.layers[idx].id;
            let Some(obs) = observers.get(id) else {
                continue;
            };
            let range = obs.range().map_err(|e| e.at_node(id))?;
            let params = cfg.params_for(&range).map_err(|e| e.at_node(id))?;
            activations.insert(id.clone(), params);
            entries.push(QuantEntry {
                layer: id.clone(),
                role: TensorRole::Activation,
                range,
                params,
            });
        }
    }
    Ok(CalibratedModel {
        graph,
        activations,
        entries,
        config: *cfg,
    })
}

impl CalibratedModel {
    pub fn run(&self, inputs: &TensorMap) -> Result<TensorMap> {
        execute_with(&self.graph, inputs, &mut |layer, t| {
            Ok(match self.activations.get(&layer.id) {
                Some(qp) => fake_quantize(&t, qp),
                None => t,
            })
        })
    }

    /// The graph with fake-quantized weights and biases.
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Every quantized tensor: parameters in layer order, then activations in
    /// topological order.
    pub fn entries(&self) -> &[QuantEntry] {
        &self.entries
    }

    pub fn config(&self) -> &QuantConfig {
        &self.config
    }
}

/// Calibrates on `calibration`, then runs every input in `eval` through the
/// fake-quantized graph.
pub fn fake_quant_execute(
    g: &Graph,
    cfg: &QuantConfig,
    calibration: &[TensorMap],
    eval: &[TensorMap],
) -> Result<Vec<TensorMap>> {
    let model = calibrate_model(g, cfg, calibration)?;
    eval.iter().map(|x| model.run(x)).collect()
}
