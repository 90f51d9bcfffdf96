//! Quantization-quality metrics, evaluation reports, synthetic models and
//! datasets, and the baseline-versus-split experiment harness.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ir::{execute, Graph, TensorMap};
use crate::quant::{calibrate_model, QuantConfig, TensorRole};
use crate::tensor::Tensor;
use crate::transform::{SplitMode, SplitPlan};

mod dataset;
mod experiment;
mod generate;

pub use dataset::{load_dataset, save_dataset, LabeledDataset};
pub use experiment::{
    aggregate, format_table, run_experiment, run_sweep, ExperimentConfig, ExperimentResult, TableRow,
};
pub use generate::{
    generate_outlier_mlp, generate_teacher_dataset, random_inputs, random_model, MAX_DEPTH, MAX_OUTLIER_FRACTION,
    MLP_CLASSES,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutputError {
    pub mse: f64,
    pub max_abs: f64,
    /// `None` when the candidate matches the reference exactly.
    pub sqnr_db: Option<f64>,
}

/// Error of `candidate` against `reference`, pooled over every scalar of
/// every tensor pair.
pub fn output_error(reference: &[Tensor], candidate: &[Tensor]) -> Result<OutputError> {
    if reference.len() != candidate.len() {
        return Err(Error::dim(
            "output_error",
            format!("{} reference tensors, {} candidates", reference.len(), candidate.len()),
        ));
    }
    let (mut signal, mut noise, mut max_abs, mut n) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for (r, c) in reference.iter().zip(candidate) {
        if r.shape() != c.shape() {
            return Err(Error::dim(
                "output_error",
                format!("shapes {:?} and {:?} differ", r.shape(), c.shape()),
            ));
        }
        for (&a, &b) in r.data().iter().zip(c.data()) {
            let (a, b) = (f64::from(a), f64::from(b));
            signal += a * a;
            noise += (a - b) * (a - b);
            max_abs = max_abs.max((a - b).abs());
        }
        n += r.numel();
    }
    Ok(OutputError {
        mse: if n == 0 { 0.0 } else { noise / n as f64 },
        max_abs,
        sqnr_db: (noise > 0.0).then(|| 10.0 * (signal / noise).log10()),
    })
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &Tensor) -> Result<usize> {
    if logits.rank() != 1 {
        return Err(Error::dim(
            "argmax",
            format!("expected class logits of rank 1, got {:?}", logits.shape()),
        ));
    }
    let mut best = 0;
    for (i, &v) in logits.data().iter().enumerate() {
        if v > logits.data()[best] {
            best = i;
        }
    }
    Ok(best)
}

/// How a graph is executed for evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Precision<'a> {
    Fp32,
    FakeQuant {
        config: QuantConfig,
        calibration: &'a [TensorMap],
    },
}

fn dataset_inputs(g: &Graph, d: &LabeledDataset) -> Result<Vec<TensorMap>> {
    if d.is_empty() {
        return Err(Error::arg("dataset is empty"));
    }
    let [input] = g.inputs.as_slice() else {
        return Err(Error::arg("graph must have exactly one input"));
    };
    Ok(d.features
        .iter()
        .map(|x| TensorMap::from([(input.name.clone(), x.clone())]))
        .collect())
}

struct Run {
    outputs: Vec<Tensor>,
    layers: Vec<LayerReport>,
}

fn run(g: &Graph, inputs: &[TensorMap], precision: &Precision) -> Result<Run> {
    let out = generate::single_output(g)?.to_string();
    let pick = |mut m: TensorMap| m.remove(&out).expect("executor returns every output");
    match precision {
        Precision::Fp32 => Ok(Run {
            outputs: inputs.iter().map(|x| execute(g, x).map(pick)).collect::<Result<_>>()?,
            layers: Vec::new(),
        }),
        Precision::FakeQuant { config, calibration } => {
            let model = calibrate_model(g, config, calibration)?;
            let layers = model
                .entries()
                .iter()
                .map(|e| LayerReport {
                    layer: e.layer.clone(),
                    role: e.role,
                    beta: e.range.beta,
                    alpha: e.range.alpha,
                    width: e.range.width(),
                    scale: e.params.scale,
                    zero_point: e.params.zero_point,
                    degenerate: e.params.degenerate,
                    split_from: g.layer(&e.layer).and_then(|l| l.split_from.clone()),
                    cluster_range: None,
                })
                .collect();
            Ok(Run {
                outputs: inputs.iter().map(|x| model.run(x).map(pick)).collect::<Result<_>>()?,
                layers,
            })
        }
    }
}

/// Fraction of samples whose argmax output equals the label.
pub fn accuracy(g: &Graph, d: &LabeledDataset, precision: &Precision) -> Result<f64> {
    let outputs = run(g, &dataset_inputs(g, d)?, precision)?.outputs;
    score(&outputs, &d.labels)
}

fn score(outputs: &[Tensor], labels: &[usize]) -> Result<f64> {
    let mut correct = 0;
    for (o, &l) in outputs.iter().zip(labels) {
        if argmax(o)? == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Quantizer of one tensor in an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer: String,
    pub role: TensorRole,
    pub beta: f32,
    pub alpha: f32,
    /// `alpha - beta`: the range the quantizer has to cover.
    pub width: f64,
    pub scale: f32,
    pub zero_point: i32,
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_from: Option<String>,
    /// Range of the cluster this split layer owns, before zero injection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_range: Option<(f32, f32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    #[serde(flatten)]
    pub error: OutputError,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// `fp32`, `weights_only` or `weights_and_activations`.
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantConfig>,
    pub dataset: String,
    pub samples: usize,
    pub metrics: Metrics,
    pub layers: Vec<LayerReport>,
}

impl EvalReport {
    /// Fills `cluster_range` for weight entries of layers created by `plans`.
    pub fn attach_splits(&mut self, plans: &[SplitPlan]) {
        for plan in plans {
            let SplitMode::WeightCluster(ws) = &plan.mode else {
                continue;
            };
            for (j, part) in plan.parts.iter().enumerate() {
                for l in self
                    .layers
                    .iter_mut()
                    .filter(|l| &l.layer == part && l.role != TensorRole::Activation)
                {
                    l.cluster_range = ws.cluster_ranges.get(j).copied();
                }
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report is serializable")
    }
}

/// Mode label used in reports.
pub fn mode_name(precision: &Precision) -> &'static str {
    match precision {
        Precision::Fp32 => "fp32",
        Precision::FakeQuant { config, .. } if config.weights_only => "weights_only",
        Precision::FakeQuant { .. } => "weights_and_activations",
    }
}

/// Runs `g` on `d` under `precision` and compares the outputs with the FP32
/// outputs of `reference` (defaults to `g`).
pub fn evaluate(g: &Graph, d: &LabeledDataset, precision: &Precision, reference: Option<&Graph>) -> Result<EvalReport> {
    let inputs = dataset_inputs(g, d)?;
    let refs = run(reference.unwrap_or(g), &inputs, &Precision::Fp32)?.outputs;
    let got = run(g, &inputs, precision)?;
    let config = match precision {
        Precision::Fp32 => None,
        Precision::FakeQuant { config, .. } => Some(*config),
    };
    Ok(EvalReport {
        mode: mode_name(precision).into(),
        bits: config.and_then(|c| c.bits()),
        quant: config,
        dataset: d.source.clone(),
        samples: d.len(),
        metrics: Metrics {
            accuracy: score(&got.outputs, &d.labels)?,
            error: output_error(&refs, &got.outputs)?,
        },
        layers: got.layers,
    })
}
