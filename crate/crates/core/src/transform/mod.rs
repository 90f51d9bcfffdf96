//! Function-preserving graph rewrites.
//!
//! A weight layer is split into up to three copies of itself, each keeping
//! only the weight and bias scalars of one k-means cluster (zeros elsewhere),
//! and the copies are summed with `Add` nodes. An activation layer is split
//! into three chunks of its last axis and re-joined with `Concat`. BatchNorm
//! folding runs first so normalization parameters are never clustered.
//!
//! Generated layers carry `split_from`, so running the pipeline again leaves
//! them alone.

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};
use crate::ir::{validate, Graph};

mod activation;
mod batchnorm;
mod weights;

pub use activation::{chunk_lengths, split_activation};
pub use batchnorm::{fold_batchnorm, FoldOutcome};
pub use weights::{split_conv, split_linear, SPLIT_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub split_weights: bool,
    pub split_activations: bool,
    pub fold_batchnorm: bool,
    pub kmeans_seed: u64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            split_weights: true,
            split_activations: true,
            fold_batchnorm: true,
            kmeans_seed: 0,
        }
    }
}

impl TransformConfig {
    /// Every pass disabled.
    pub fn none() -> Self {
        Self {
            split_weights: false,
            split_activations: false,
            fold_batchnorm: false,
            kmeans_seed: 0,
        }
    }

    /// Fold and split weights, leave activations whole.
    pub fn weights_only() -> Self {
        Self {
            split_activations: false,
            ..Self::default()
        }
    }
}

/// Cluster statistics of one weight-layer split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSplit {
    /// `(min, max)` over the original weight and bias scalars.
    pub original_range: (f32, f32),
    /// `(min, max)` over the scalars assigned to each cluster.
    pub cluster_ranges: Vec<(f32, f32)>,
    pub cluster_sizes: Vec<usize>,
    /// `(min, max)` of each split layer's tensors, injected zeros included.
    pub materialized_ranges: Vec<(f32, f32)>,
    /// Clusters that received at least one bias scalar.
    pub bias_owners: Vec<usize>,
    #[serde(flatten)]
    pub assignment: Assignment,
}

/// [`ClusterAssignment`] without per-scalar labels for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub k: usize,
    pub centroids: Vec<f64>,
    pub objective: f64,
    #[serde(skip)]
    pub labels: Vec<usize>,
}

impl From<ClusterAssignment> for Assignment {
    fn from(a: ClusterAssignment) -> Self {
        Self {
            k: a.k,
            centroids: a.centroids,
            objective: a.objective,
            labels: a.labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    WeightCluster(WeightSplit),
    ActivationChunk { lengths: Vec<usize> },
}

/// One applied split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitPlan {
    pub target: String,
    pub kind: String,
    /// Layer now producing the target's value.
    pub output: String,
    /// Ids of the split copies, lowest cluster or first chunk first.
    pub parts: Vec<String>,
    #[serde(flatten)]
    pub mode: SplitMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum SkipReason {
    /// Every weight and bias scalar has the same value.
    SingleValue,
    /// Activation's last axis is shorter than three.
    TooShort(usize),
    /// The layer was produced by an earlier split.
    AlreadySplit,
    /// BatchNorm producer has other consumers or is a graph output.
    SharedProducer(String),
    NotFoldable(String),
    /// The rewrite failed; the graph was left as it was.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkipDiagnostic {
    pub layer: String,
    pub reason: SkipReason,
}

/// Output of a single-layer rewrite: either a new graph and its plan, or the
/// unchanged graph and the reason it was left alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Rewrite {
    pub graph: Graph,
    pub plan: Option<SplitPlan>,
    pub skipped: Option<SkipDiagnostic>,
}

impl Rewrite {
    fn skipped(g: &Graph, layer: &str, reason: SkipReason) -> Self {
        Self {
            graph: g.clone(),
            plan: None,
            skipped: Some(SkipDiagnostic {
                layer: layer.into(),
                reason,
            }),
        }
    }
}

fn unique_id(g: &Graph, id: &str) -> Result<()> {
    if g.layer(id).is_some() || g.inputs.iter().any(|i| i.name == id) {
        return Err(Error::arg(format!("generated id `{id}` already exists")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformOutcome {
    pub graph: Graph,
    pub plans: Vec<SplitPlan>,
    /// `(batchnorm, producer)` pairs.
    pub folded: Vec<(String, String)>,
    pub skipped: Vec<SkipDiagnostic>,
}

/// Folds BatchNorm, splits every Linear and Conv2d, then every ReLU and GELU,
/// as enabled in `cfg`. Each pass visits layers in topological order.
pub fn apply_splitquant(g: &Graph, cfg: &TransformConfig) -> Result<TransformOutcome> {
    let diags = validate(g);
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    let mut out = TransformOutcome {
        graph: g.clone(),
        plans: Vec::new(),
        folded: Vec::new(),
        skipped: Vec::new(),
    };
    if cfg.fold_batchnorm {
        let f = fold_batchnorm(g)?;
        out.graph = f.graph;
        out.folded = f.folded;
        out.skipped = f.skipped;
    }
    if cfg.split_weights {
        run_pass(
            &mut out,
            |l| l.op.is_weight_layer(),
            |g, id, kind| match kind {
                "linear" => split_linear(g, id, cfg.kmeans_seed),
                _ => split_conv(g, id, cfg.kmeans_seed),
            },
        )?;
    }
    if cfg.split_activations {
        run_pass(&mut out, |l| l.op.is_activation(), |g, id, _| split_activation(g, id))?;
    }
    Ok(out)
}

fn run_pass(
    out: &mut TransformOutcome,
    select: impl Fn(&crate::ir::Layer) -> bool,
    split: impl Fn(&Graph, &str, &str) -> Result<Rewrite>,
) -> Result<()> {
    let targets: Vec<(String, &'static str, bool)> = out
        .graph
        .topo_order()?
        .into_iter()
        .map(|i| &out.graph.layers[i])
        .filter(|l| select(l))
        .map(|l| (l.id.clone(), l.op.kind_name(), l.split_from.is_some()))
        .collect();
    for (id, kind, generated) in targets {
        if generated {
            out.skipped.push(SkipDiagnostic {
                layer: id,
                reason: SkipReason::AlreadySplit,
            });
            continue;
        }
        match split(&out.graph, &id, kind) {
            Ok(r) => {
                out.graph = r.graph;
                out.plans.extend(r.plan);
                out.skipped.extend(r.skipped);
            }
            Err(e) => out.skipped.push(SkipDiagnostic {
                layer: id,
                reason: SkipReason::Failed(e.to_string()),
            }),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct FoldEntry<'a> {
    batchnorm: &'a str,
    into: &'a str,
}

#[derive(Debug, Clone, Serialize)]
struct Report<'a> {
    config: &'a TransformConfig,
    layers_before: usize,
    layers_after: usize,
    folded: Vec<FoldEntry<'a>>,
    splits: &'a [SplitPlan],
    skipped: &'a [SkipDiagnostic],
}

impl TransformOutcome {
    /// TOML report of what was folded, split and skipped.
    pub fn report(&self, original: &Graph, cfg: &TransformConfig) -> String {
        let r = Report {
            config: cfg,
            layers_before: original.layers.len(),
            layers_after: self.graph.layers.len(),
            folded: self
                .folded
                .iter()
                .map(|(b, p)| FoldEntry { batchnorm: b, into: p })
                .collect(),
            splits: &self.plans,
            skipped: &self.skipped,
        };
        toml::to_string(&r).expect("report is serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{execute, Layer, Op, TensorMap};
    use crate::tensor::Tensor;

    fn v(d: &[f32]) -> Tensor {
        Tensor::vector(d.to_vec()).unwrap()
    }

    fn two_by_two_relu() -> Graph {
        let w = Tensor::new(vec![2, 2], vec![-5.0, 0.1, 0.2, 9.0]).unwrap();
        Graph::chain(
            "x",
            &[2],
            vec![
                Layer::linear("fc", "x", w, Some(v(&[-4.0, 10.0]))),
                Layer::new("act", Op::Relu, &["fc"]),
            ],
            "act",
        )
    }

    #[test]
    fn all_off_is_identity() {
        let g = two_by_two_relu();
        let out = apply_splitquant(&g, &TransformConfig::none()).unwrap();
        assert_eq!(out.graph, g);
        assert!(out.plans.is_empty() && out.skipped.is_empty());
    }

    #[test]
    fn full_config_on_small_model() {
        let g = two_by_two_relu();
        let out = apply_splitquant(&g, &TransformConfig::default()).unwrap();
        assert_eq!(out.plans.len(), 1);
        assert_eq!(out.plans[0].target, "fc");
        assert_eq!(
            out.skipped,
            vec![SkipDiagnostic {
                layer: "act".into(),
                reason: SkipReason::TooShort(2),
            }]
        );
        let x = TensorMap::from([("x".to_string(), v(&[1.0, 1.0]))]);
        let a = execute(&g, &x).unwrap();
        let b = execute(&out.graph, &x).unwrap();
        for (p, q) in a["act"].data().iter().zip(b["act"].data()) {
            assert!((p - q).abs() <= 1e-5 * p.abs().max(1.0));
        }
    }

    #[test]
    fn weights_only_leaves_gelu() {
        let w = Tensor::new(vec![4, 4], (0..16).map(|i| (i as f32 - 7.5) * 0.4).collect()).unwrap();
        let g = Graph::chain(
            "x",
            &[4],
            vec![Layer::linear("fc", "x", w, None), Layer::new("act", Op::Gelu, &["fc"])],
            "act",
        );
        let out = apply_splitquant(&g, &TransformConfig::weights_only()).unwrap();
        let kinds: Vec<_> = out.graph.layers.iter().map(|l| l.op.kind_name()).collect();
        assert_eq!(kinds, ["linear", "linear", "linear", "add", "add", "gelu"]);
    }

    #[test]
    fn second_application_is_a_no_op() {
        let g = two_by_two_relu();
        let cfg = TransformConfig::default();
        let once = apply_splitquant(&g, &cfg).unwrap();
        let twice = apply_splitquant(&once.graph, &cfg).unwrap();
        assert_eq!(twice.graph, once.graph);
        assert!(twice.plans.is_empty());
        assert!(twice.skipped.iter().any(|s| s.reason == SkipReason::AlreadySplit));
    }

    #[test]
    fn invalid_graph_is_rejected() {
        let g = Graph::chain("x", &[2], vec![Layer::new("act", Op::Relu, &["nope"])], "act");
        assert!(matches!(
            apply_splitquant(&g, &TransformConfig::default()),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn report_is_toml() {
        let g = two_by_two_relu();
        let cfg = TransformConfig::default();
        let out = apply_splitquant(&g, &cfg).unwrap();
        let text = out.report(&g, &cfg);
        let parsed: toml::Table = toml::from_str(&text).unwrap();
        let split = &parsed["splits"].as_array().unwrap()[0];
        assert_eq!(split["target"].as_str(), Some("fc"));
        assert_eq!(split["mode"].as_str(), Some("weight_cluster"));
        assert_eq!(split["centroids"].as_array().unwrap().len(), 3);
        assert_eq!(
            parsed["skipped"].as_array().unwrap()[0]["reason"]["kind"].as_str(),
            Some("too_short")
        );
    }
}
