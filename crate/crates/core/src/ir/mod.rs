//! Graph IR for feed-forward models.
//!
//! A [`Graph`] is a DAG of [`Layer`]s. Layer inputs reference either a graph
//! input name or another layer id; graph outputs are named aliases of layer
//! ids so that rewrites can re-point them without changing what callers see.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub mod exec;
pub mod format;
pub mod validate;

pub use exec::{execute, execute_with, TensorMap};
pub use format::{load_model, save_model};
pub use validate::{infer_shapes, validate, Diagnostic, Rule};

pub const WEIGHT: &str = "weight";
pub const BIAS: &str = "bias";
pub const GAMMA: &str = "gamma";
pub const BETA: &str = "beta";
pub const RUNNING_MEAN: &str = "running_mean";
pub const RUNNING_VAR: &str = "running_var";

/// Operation performed by a layer, with its kind-specific attributes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Linear,
    Conv2d { stride: usize, padding: usize },
    Relu,
    Gelu,
    BatchNorm { eps: f32 },
    Add,
    Concat { axis: isize },
    Slice { axis: isize, start: usize, len: usize },
}

impl Op {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Op::Linear => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu => "relu",
            Op::Gelu => "gelu",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Add => "add",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
        }
    }

    /// Layers carrying weight/bias tensors that the quantizer treats as weights.
    pub fn is_weight_layer(&self) -> bool {
        matches!(self, Op::Linear | Op::Conv2d { .. })
    }

    pub fn is_activation(&self) -> bool {
        matches!(self, Op::Relu | Op::Gelu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub id: String,
    pub op: Op,
    pub inputs: Vec<String>,
    pub params: BTreeMap<String, Tensor>,
    /// Id of the layer this one was generated from by a split rewrite.
    pub split_from: Option<String>,
}

impl Layer {
    pub fn new(id: impl Into<String>, op: Op, inputs: &[&str]) -> Self {
        Self {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            params: BTreeMap::new(),
            split_from: None,
        }
    }

    pub fn with_param(mut self, name: &str, t: Tensor) -> Self {
        self.params.insert(name.to_string(), t);
        self
    }

    pub fn linear(id: &str, input: &str, weight: Tensor, bias: Option<Tensor>) -> Self {
        let l = Self::new(id, Op::Linear, &[input]).with_param(WEIGHT, weight);
        match bias {
            Some(b) => l.with_param(BIAS, b),
            None => l,
        }
    }

    pub fn conv2d(id: &str, input: &str, weight: Tensor, bias: Option<Tensor>, stride: usize, padding: usize) -> Self {
        let l = Self::new(id, Op::Conv2d { stride, padding }, &[input]).with_param(WEIGHT, weight);
        match bias {
            Some(b) => l.with_param(BIAS, b),
            None => l,
        }
    }

    pub fn batchnorm(id: &str, input: &str, gamma: Tensor, beta: Tensor, mean: Tensor, var: Tensor, eps: f32) -> Self {
        Self::new(id, Op::BatchNorm { eps }, &[input])
            .with_param(GAMMA, gamma)
            .with_param(BETA, beta)
            .with_param(RUNNING_MEAN, mean)
            .with_param(RUNNING_VAR, var)
    }

    pub fn weight(&self) -> Option<&Tensor> {
        self.params.get(WEIGHT)
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.params.get(BIAS)
    }

    pub(crate) fn param(&self, name: &'static str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| {
            Error::arg(format!(
                "{} layer `{}` has no `{name}` parameter",
                self.op.kind_name(),
                self.id
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphInput {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphOutput {
    pub name: String,
    /// Layer id (or graph input name) producing this output.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub inputs: Vec<GraphInput>,
    pub layers: Vec<Layer>,
    pub outputs: Vec<GraphOutput>,
}

impl Graph {
    pub fn new(inputs: Vec<GraphInput>, layers: Vec<Layer>, outputs: Vec<GraphOutput>) -> Self {
        Self {
            inputs,
            layers,
            outputs,
        }
    }

    /// Single-input, single-output graph; the output is named after its source layer.
    pub fn chain(input: &str, shape: &[usize], layers: Vec<Layer>, output: &str) -> Self {
        Self::new(
            vec![GraphInput {
                name: input.into(),
                shape: shape.to_vec(),
            }],
            layers,
            vec![GraphOutput {
                name: output.into(),
                source: output.into(),
            }],
        )
    }

    pub fn layer(&self, id: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub(crate) fn position(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    /// Ids of layers reading `id`, once per layer.
    pub fn consumers(&self, id: &str) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| l.inputs.iter().any(|i| i == id))
            .map(|l| l.id.as_str())
            .collect()
    }

    pub fn is_output_source(&self, id: &str) -> bool {
        self.outputs.iter().any(|o| o.source == id)
    }

    /// Points every reference to `old` (layer inputs and graph outputs) at `new`,
    /// except inside the layers listed in `keep`.
    pub(crate) fn redirect(&mut self, old: &str, new: &str, keep: &[&str]) {
        for l in &mut self.layers {
            if keep.contains(&l.id.as_str()) {
                continue;
            }
            for i in &mut l.inputs {
                if i == old {
                    *i = new.to_string();
                }
            }
        }
        for o in &mut self.outputs {
            if o.source == old {
                o.source = new.to_string();
            }
        }
    }

    /// Layer indices in a deterministic topological order (ties broken by
    /// position in `layers`).
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let index: HashMap<&str, usize> = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.as_str(), i))
            .collect();
        let n = self.layers.len();
        let mut indegree = vec![0usize; n];
        let mut dependents = vec![Vec::new(); n];
        for (i, l) in self.layers.iter().enumerate() {
            for src in &l.inputs {
                if let Some(&j) = index.get(src.as_str()) {
                    indegree[i] += 1;
                    dependents[j].push(i);
                }
            }
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &d in &dependents[i] {
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.insert(d);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n)
                .filter(|i| indegree[*i] > 0)
                .map(|i| Diagnostic::new(&self.layers[i].id, Rule::Cycle))
                .collect();
            return Err(Error::Invalid(stuck));
        }
        Ok(order)
    }
}
