use std::collections::{BTreeMap, HashSet};
use std::fmt;

use super::{Graph, Layer, Op, BETA, GAMMA, RUNNING_MEAN, RUNNING_VAR, WEIGHT};
use crate::error::{Error, Result};
use crate::tensor::{batchnorm_channel_axis, resolve_axis};

/// Invariant violated by a node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    DuplicateId,
    /// Ids may not be empty or contain `/` (reserved by the tensor directory).
    InvalidId,
    UnknownInput(String),
    UnknownOutput(String),
    Cycle,
    Arity {
        expected: &'static str,
        found: usize,
    },
    MissingParam(&'static str),
    ParamShape(String),
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub node: String,
    pub rule: Rule,
}

impl Diagnostic {
    pub fn new(node: &str, rule: Rule) -> Self {
        Self {
            node: node.to_string(),
            rule,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: ", self.node)?;
        match &self.rule {
            Rule::DuplicateId => write!(f, "id defined more than once"),
            Rule::InvalidId => write!(f, "id must be non-empty and must not contain '/'"),
            Rule::UnknownInput(src) => write!(f, "references unknown input `{src}`"),
            Rule::UnknownOutput(src) => write!(f, "graph output references unknown `{src}`"),
            Rule::Cycle => write!(f, "part of a cycle"),
            Rule::Arity { expected, found } => write!(f, "expects {expected} inputs, has {found}"),
            Rule::MissingParam(p) => write!(f, "missing parameter `{p}`"),
            Rule::ParamShape(msg) => write!(f, "parameter shape: {msg}"),
            Rule::Shape(msg) => write!(f, "shape: {msg}"),
        }
    }
}

/// Checks every structural invariant of `g`. Returns an empty list iff the
/// graph is well-formed; shape propagation only runs when the structure is sound.
pub fn validate(g: &Graph) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut names: HashSet<&str> = HashSet::new();
    for gi in &g.inputs {
        if !names.insert(&gi.name) {
            diags.push(Diagnostic::new(&gi.name, Rule::DuplicateId));
        }
        if gi.shape.is_empty() || gi.shape.contains(&0) {
            diags.push(Diagnostic::new(
                &gi.name,
                Rule::Shape(format!("input shape {:?} must have positive dimensions", gi.shape)),
            ));
        }
    }
    for l in &g.layers {
        if l.id.is_empty() || l.id.contains('/') {
            diags.push(Diagnostic::new(&l.id, Rule::InvalidId));
        }
        if !names.insert(&l.id) {
            diags.push(Diagnostic::new(&l.id, Rule::DuplicateId));
        }
    }
    for l in &g.layers {
        for src in &l.inputs {
            if !names.contains(src.as_str()) {
                diags.push(Diagnostic::new(&l.id, Rule::UnknownInput(src.clone())));
            }
        }
        check_layer(l, &mut diags);
    }
    for o in &g.outputs {
        if !names.contains(o.source.as_str()) {
            diags.push(Diagnostic::new(&o.name, Rule::UnknownOutput(o.source.clone())));
        }
    }
    if let Err(Error::Invalid(cycle)) = g.topo_order() {
        diags.extend(cycle);
    }
    if diags.is_empty() {
        if let Err(e) = infer_shapes(g) {
            let (node, msg) = match e {
                Error::Node { node, source } => (node, source.to_string()),
                other => (String::new(), other.to_string()),
            };
            diags.push(Diagnostic::new(&node, Rule::Shape(msg)));
        }
    }
    diags
}

fn check_layer(l: &Layer, diags: &mut Vec<Diagnostic>) {
    let n = l.inputs.len();
    let arity_ok = match l.op {
        Op::Add => n >= 2,
        Op::Concat { .. } => n >= 1,
        _ => n == 1,
    };
    if !arity_ok {
        let expected = match l.op {
            Op::Add => "at least 2",
            Op::Concat { .. } => "at least 1",
            _ => "exactly 1",
        };
        diags.push(Diagnostic::new(&l.id, Rule::Arity { expected, found: n }));
    }
    let shape_issue =
        |diags: &mut Vec<Diagnostic>, msg: String| diags.push(Diagnostic::new(&l.id, Rule::ParamShape(msg)));
    match l.op {
        Op::Linear | Op::Conv2d { .. } => {
            let want_rank = if l.op == Op::Linear { 2 } else { 4 };
            match l.weight() {
                None => {
                    diags.push(Diagnostic::new(&l.id, Rule::MissingParam(WEIGHT)));
                    return;
                }
                Some(w) if w.rank() != want_rank => {
                    shape_issue(diags, format!("weight must be {want_rank}-D, got {:?}", w.shape()));
                }
                Some(w) => {
                    if let Some(b) = l.bias() {
                        if b.shape() != [w.shape()[0]] {
                            shape_issue(
                                diags,
                                format!(
                                    "bias {:?} must be [{}] to match weight {:?}",
                                    b.shape(),
                                    w.shape()[0],
                                    w.shape()
                                ),
                            );
                        }
                    }
                }
            }
        }
        Op::BatchNorm { eps } => {
            let mut len = None;
            for p in [GAMMA, BETA, RUNNING_MEAN, RUNNING_VAR] {
                match l.params.get(p) {
                    None => diags.push(Diagnostic::new(&l.id, Rule::MissingParam(p))),
                    Some(t) if t.rank() != 1 => {
                        diags.push(Diagnostic::new(
                            &l.id,
                            Rule::ParamShape(format!("{p} must be 1-D, got {:?}", t.shape())),
                        ));
                    }
                    Some(t) => match len {
                        None => len = Some(t.numel()),
                        Some(c) if c != t.numel() => diags.push(Diagnostic::new(
                            &l.id,
                            Rule::ParamShape(format!("{p} has {} channels, expected {c}", t.numel())),
                        )),
                        _ => {}
                    },
                }
            }
            if eps.is_nan() || eps < 0.0 {
                diags.push(Diagnostic::new(
                    &l.id,
                    Rule::ParamShape(format!("epsilon {eps} must be >= 0")),
                ));
            }
        }
        Op::Slice { len: 0, .. } => {
            diags.push(Diagnostic::new(
                &l.id,
                Rule::Shape("slice length must be positive".into()),
            ));
        }
        _ => {}
    }
    if let Op::Conv2d { stride: 0, .. } = l.op {
        diags.push(Diagnostic::new(&l.id, Rule::Shape("stride must be at least 1".into())));
    }
}

/// Output shape of every graph input and layer, keyed by name.
pub fn infer_shapes(g: &Graph) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut shapes: BTreeMap<String, Vec<usize>> =
        g.inputs.iter().map(|gi| (gi.name.clone(), gi.shape.clone())).collect();
    for idx in g.topo_order()? {
        let l = &g.layers[idx];
        let args = l
            .inputs
            .iter()
            .map(|src| {
                shapes
                    .get(src)
                    .cloned()
                    .ok_or_else(|| Error::arg(format!("unknown input `{src}`")).at_node(&l.id))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = layer_shape(l, &args).map_err(|e| e.at_node(&l.id))?;
        shapes.insert(l.id.clone(), out);
    }
    Ok(shapes)
}

fn layer_shape(l: &Layer, args: &[Vec<usize>]) -> Result<Vec<usize>> {
    let one = || -> Result<&Vec<usize>> {
        match args {
            [x] => Ok(x),
            _ => Err(Error::arg(format!("{} takes exactly one input", l.op.kind_name()))),
        }
    };
    match l.op {
        Op::Linear => {
            let x = one()?;
            let w = l.param(WEIGHT)?.shape();
            match x.as_slice() {
                [n] if *n == w[1] => Ok(vec![w[0]]),
                [r, n] if *n == w[1] => Ok(vec![*r, w[0]]),
                _ => Err(Error::dim("linear", format!("input {x:?} does not match weight {w:?}"))),
            }
        }
        Op::Conv2d { stride, padding } => {
            let x = one()?;
            let w = l.param(WEIGHT)?.shape();
            let [c, h, wd] = x[..] else {
                return Err(Error::dim("conv2d", format!("input must be [C, H, W], got {x:?}")));
            };
            if stride == 0 || c != w[1] || w[2] > h + 2 * padding || w[3] > wd + 2 * padding {
                return Err(Error::dim(
                    "conv2d",
                    format!("input {x:?} incompatible with weight {w:?}"),
                ));
            }
            Ok(vec![
                w[0],
                (h + 2 * padding - w[2]) / stride + 1,
                (wd + 2 * padding - w[3]) / stride + 1,
            ])
        }
        Op::Relu | Op::Gelu => Ok(one()?.clone()),
        Op::BatchNorm { .. } => {
            let x = one()?;
            let c = l.param(GAMMA)?.numel();
            if x[batchnorm_channel_axis(x.len())] != c {
                return Err(Error::dim(
                    "batchnorm",
                    format!("input {x:?} does not have {c} channels"),
                ));
            }
            Ok(x.clone())
        }
        Op::Add => {
            let first = &args[0];
            if args.iter().any(|a| a != first) {
                return Err(Error::dim("add", format!("input shapes differ: {args:?}")));
            }
            Ok(first.clone())
        }
        Op::Concat { axis } => {
            let first = args.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
            let ax = resolve_axis(axis, first.len())?;
            let mut out = first.clone();
            for a in &args[1..] {
                let ok = a.len() == first.len() && a.iter().zip(first).enumerate().all(|(i, (x, y))| i == ax || x == y);
                if !ok {
                    return Err(Error::dim("concat", format!("shapes {args:?} incompatible")));
                }
                out[ax] += a[ax];
            }
            Ok(out)
        }
        Op::Slice { axis, start, len } => {
            let x = one()?;
            let ax = resolve_axis(axis, x.len())?;
            if len == 0 || start + len > x[ax] {
                return Err(Error::dim("slice", format!("[{start}, {}) outside {x:?}", start + len)));
            }
            let mut out = x.clone();
            out[ax] = len;
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{GraphOutput, Layer};
    use crate::tensor::Tensor;

    fn linear(id: &str, input: &str, out: usize, inp: usize) -> Layer {
        Layer::linear(
            id,
            input,
            Tensor::zeros(&[out, inp]).unwrap(),
            Some(Tensor::zeros(&[out]).unwrap()),
        )
    }

    #[test]
    fn well_formed_linear_model() {
        let g = Graph::chain(
            "x",
            &[4],
            vec![linear("fc1", "x", 3, 4), Layer::new("act", Op::Relu, &["fc1"])],
            "act",
        );
        assert_eq!(validate(&g), vec![]);
    }

    #[test]
    fn cycle_is_reported() {
        let g = Graph::chain(
            "x",
            &[2],
            vec![Layer::new("a", Op::Add, &["b", "x"]), Layer::new("b", Op::Relu, &["a"])],
            "b",
        );
        let diags = validate(&g);
        assert!(
            diags.iter().any(|d| d.rule == Rule::Cycle && d.node == "a"),
            "{diags:?}"
        );
    }

    #[test]
    fn linear_with_3d_weight() {
        let l = Layer::linear("fc", "x", Tensor::zeros(&[2, 2, 2]).unwrap(), None);
        let g = Graph::chain("x", &[2], vec![l], "fc");
        let diags = validate(&g);
        assert!(
            matches!(&diags[..], [Diagnostic { node, rule: Rule::ParamShape(_) }] if node == "fc"),
            "{diags:?}"
        );
    }

    #[test]
    fn structural_rules() {
        let mut g = Graph::chain("x", &[4], vec![linear("fc", "x", 2, 4), linear("fc", "y", 2, 4)], "fc");
        g.outputs.push(GraphOutput {
            name: "z".into(),
            source: "nope".into(),
        });
        g.layers.push(Layer::new("sum", Op::Add, &["fc"]));
        g.layers.push(Layer::new("bad/id", Op::Relu, &["fc"]));
        let rules: Vec<Rule> = validate(&g).into_iter().map(|d| d.rule).collect();
        assert!(rules.contains(&Rule::DuplicateId));
        assert!(rules.contains(&Rule::UnknownInput("y".into())));
        assert!(rules.contains(&Rule::UnknownOutput("nope".into())));
        assert!(rules.contains(&Rule::Arity {
            expected: "at least 2",
            found: 1
        }));
        assert!(rules.contains(&Rule::InvalidId));
    }

    #[test]
    fn batchnorm_params_checked() {
        let v = |n| Tensor::zeros(&[n]).unwrap();
        let bn = Layer::batchnorm("bn", "x", v(3), v(3), v(2), v(3), 1e-5);
        let g = Graph::chain("x", &[3], vec![bn], "bn");
        let diags = validate(&g);
        assert!(
            matches!(
                &diags[..],
                [Diagnostic {
                    rule: Rule::ParamShape(_),
                    ..
                }]
            ),
            "{diags:?}"
        );
    }

    #[test]
    fn shape_mismatch_found_by_propagation() {
        let g = Graph::chain("x", &[5], vec![linear("fc", "x", 2, 4)], "fc");
        let diags = validate(&g);
        assert!(
            matches!(&diags[..], [Diagnostic { node, rule: Rule::Shape(_) }] if node == "fc"),
            "{diags:?}"
        );
    }

    #[test]
    fn shapes_propagate() {
        let conv = Layer::conv2d("c", "x", Tensor::zeros(&[4, 2, 3, 3]).unwrap(), None, 2, 1);
        let g = Graph::chain(
            "x",
            &[2, 7, 7],
            vec![
                conv,
                Layer::new(
                    "s",
                    Op::Slice {
                        axis: -1,
                        start: 1,
                        len: 2,
                    },
                    &["c"],
                ),
            ],
            "s",
        );
        let shapes = infer_shapes(&g).unwrap();
        assert_eq!(shapes["c"], vec![4, 4, 4]);
        assert_eq!(shapes["s"], vec![4, 4, 2]);
    }
}
