use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{argmax, LabeledDataset};
use crate::error::{Error, Result};
use crate::ir::{execute, Graph, GraphInput, GraphOutput, Layer, Op, TensorMap};
use crate::tensor::Tensor;

/// Class count of [`generate_outlier_mlp`] models.
pub const MLP_CLASSES: usize = 10;
pub const MAX_DEPTH: usize = 6;
pub const MAX_OUTLIER_FRACTION: f64 = 0.1;

const MODEL_STREAM: u64 = 0;
const DATASET_STREAM: u64 = 1;
const INPUT_STREAM: u64 = 2;
const CORPUS_STREAM: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal(rng: &mut impl Rng, shape: &[usize], std: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * std).collect();
    Tensor::new(shape.to_vec(), data).expect("generator shapes are non-empty")
}

fn uniform(rng: &mut impl Rng, n: usize, lo: f32, hi: f32) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("n > 0")
}

/// Multiplies `⌊fraction · numel⌋` distinct, randomly chosen scalars by `scale`.
fn inject_outliers(rng: &mut impl Rng, t: Tensor, fraction: f64, scale: f32) -> Tensor {
    let count = (fraction * t.numel() as f64).floor() as usize;
    let shape = t.shape().to_vec();
    let mut data = t.into_data();
    for i in sample(rng, data.len(), count) {
        data[i] *= scale;
    }
    Tensor::new(shape, data).expect("shape unchanged")
}

/// Linear/GELU classifier `x: [width] -> logits: [10]` with standard-normal
/// weights and biases, where a fraction of each weight matrix is scaled up.
pub fn generate_outlier_mlp(
    seed: u64,
    depth: usize,
    width: usize,
    outlier_fraction: f64,
    outlier_scale: f32,
) -> Result<Graph> {
    if !(1..=MAX_DEPTH).contains(&depth) {
        return Err(Error::arg(format!("depth {depth} must lie in 1..={MAX_DEPTH}")));
    }
    if width == 0 {
        return Err(Error::arg("width must be positive"));
    }
    if !(0.0..=MAX_OUTLIER_FRACTION).contains(&outlier_fraction) {
        return Err(Error::arg(format!(
            "outlier fraction {outlier_fraction} must lie in [0, {MAX_OUTLIER_FRACTION}]"
        )));
    }
    if !outlier_scale.is_finite() {
        return Err(Error::arg("outlier scale must be finite"));
    }
    let mut rng = rng(seed, MODEL_STREAM);
    let mut layers = Vec::with_capacity(2 * depth - 1);
    let mut prev = "x".to_string();
    for i in 0..depth {
        let out = if i + 1 == depth { MLP_CLASSES } else { width };
        let w = normal(&mut rng, &[out, width], 1.0);
        let w = inject_outliers(&mut rng, w, outlier_fraction, outlier_scale);
        let b = normal(&mut rng, &[out], 1.0);
        let id = format!("fc{i}");
        layers.push(Layer::linear(&id, &prev, w, Some(b)));
        prev = id;
        if i + 1 < depth {
            let act = format!("act{i}");
            layers.push(Layer::new(&act, Op::Gelu, &[&prev]));
            prev = act;
        }
    }
    Ok(Graph::new(
        vec![GraphInput {
            name: "x".into(),
            shape: vec![width],
        }],
        layers,
        vec![GraphOutput {
            name: "logits".into(),
            source: prev,
        }],
    ))
}

/// `n` standard-normal input maps for `g`.
pub fn random_inputs(g: &Graph, seed: u64, n: usize) -> Vec<TensorMap> {
    let mut rng = rng(seed, INPUT_STREAM);
    (0..n)
        .map(|_| {
            g.inputs
                .iter()
                .map(|i| (i.name.clone(), normal(&mut rng, &i.shape, 1.0)))
                .collect()
        })
        .collect()
}

/// Standard-normal inputs labelled by the argmax of `g`'s FP32 output.
pub fn generate_teacher_dataset(g: &Graph, seed: u64, n_samples: usize) -> Result<LabeledDataset> {
    if n_samples == 0 {
        return Err(Error::arg("a dataset needs at least one sample"));
    }
    let [input] = g.inputs.as_slice() else {
        return Err(Error::arg("teacher graph must have exactly one input"));
    };
    let output = single_output(g)?;
    let mut rng = rng(seed, DATASET_STREAM);
    let mut features = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    let mut classes = 0;
    for _ in 0..n_samples {
        let x = normal(&mut rng, &input.shape, 1.0);
        let out = execute(g, &TensorMap::from([(input.name.clone(), x.clone())]))?;
        let logits = &out[output];
        classes = logits.numel();
        labels.push(argmax(logits)?);
        features.push(x);
    }
    LabeledDataset::new(features, labels, classes, format!("teacher:seed={seed}"))
}

pub(crate) fn single_output(g: &Graph) -> Result<&str> {
    match g.outputs.as_slice() {
        [o] => Ok(&o.name),
        _ => Err(Error::arg("graph must have exactly one output")),
    }
}

/// Random feed-forward model for equivalence testing: up to six layers drawn
/// from Linear, Conv2d, BatchNorm, ReLU and GELU, at most 64 wide, with
/// occasional outlier weights.
pub fn random_model(seed: u64) -> Graph {
    let mut rng = rng(seed, CORPUS_STREAM);
    let budget = rng.random_range(1..=MAX_DEPTH);
    if rng.random_bool(0.5) {
        random_mlp(&mut rng, budget)
    } else {
        random_convnet(&mut rng, budget)
    }
}

fn maybe_outliers(rng: &mut ChaCha8Rng, w: Tensor) -> Tensor {
    if rng.random_bool(0.5) {
        let fraction = rng.random_range(0.0..0.05);
        let scale = rng.random_range(5.0..50.0);
        inject_outliers(rng, w, fraction, scale)
    } else {
        w
    }
}

fn random_bn(rng: &mut ChaCha8Rng, id: &str, input: &str, c: usize) -> Layer {
    let gamma = uniform(rng, c, 0.5, 1.5);
    let beta = normal(rng, &[c], 0.5);
    let mean = normal(rng, &[c], 0.5);
    let var = uniform(rng, c, 0.5, 2.0);
    Layer::batchnorm(id, input, gamma, beta, mean, var, 1e-5)
}

fn random_activation(rng: &mut ChaCha8Rng, id: &str, input: &str) -> Layer {
    let op = if rng.random_bool(0.5) { Op::Relu } else { Op::Gelu };
    Layer::new(id, op, &[input])
}

/// Appends weight-layer blocks (weight, optional BN, optional activation)
/// until `budget` layers exist.
fn blocks(
    rng: &mut ChaCha8Rng,
    budget: usize,
    mut weight_layer: impl FnMut(&mut ChaCha8Rng, &str, &str) -> (Layer, usize),
) -> (Vec<Layer>, String) {
    let mut layers = Vec::new();
    let mut prev = "x".to_string();
    let mut i = 0;
    while layers.len() < budget {
        let id = format!("l{i}");
        let (layer, channels) = weight_layer(rng, &id, &prev);
        layers.push(layer);
        prev = id;
        if layers.len() < budget && rng.random_bool(0.4) {
            let id = format!("bn{i}");
            layers.push(random_bn(rng, &id, &prev, channels));
            prev = id;
        }
        if layers.len() < budget && rng.random_bool(0.7) {
            let id = format!("act{i}");
            layers.push(random_activation(rng, &id, &prev));
            prev = id;
        }
        i += 1;
    }
    (layers, prev)
}

fn random_mlp(rng: &mut ChaCha8Rng, budget: usize) -> Graph {
    let input = rng.random_range(1..=64);
    let mut width = input;
    let (layers, out) = blocks(rng, budget, |rng, id, prev| {
        let out = rng.random_range(1..=64);
        let w = normal(rng, &[out, width], 1.0 / (width as f32).sqrt());
        let w = maybe_outliers(rng, w);
        let b = rng.random_bool(0.7).then(|| normal(rng, &[out], 0.5));
        width = out;
        (Layer::linear(id, prev, w, b), out)
    });
    Graph::chain("x", &[input], layers, &out)
}

fn random_convnet(rng: &mut ChaCha8Rng, budget: usize) -> Graph {
    let c0 = rng.random_range(1..=4);
    let (h0, w0) = (rng.random_range(3..=10), rng.random_range(3..=10));
    let (mut c, mut h, mut w) = (c0, h0, w0);
    let (layers, out) = blocks(rng, budget, |rng, id, prev| {
        let out_c = rng.random_range(1..=8);
        let padding = rng.random_range(0..=1);
        let k = rng.random_range(1..=3.min(h + 2 * padding).min(w + 2 * padding));
        let stride = if h.min(w) >= 6 { rng.random_range(1..=2) } else { 1 };
        let fan_in = (c * k * k) as f32;
        let weight = normal(rng, &[out_c, c, k, k], 1.0 / fan_in.sqrt());
        let weight = maybe_outliers(rng, weight);
        let bias = rng.random_bool(0.7).then(|| normal(rng, &[out_c], 0.5));
        c = out_c;
        h = (h + 2 * padding - k) / stride + 1;
        w = (w + 2 * padding - k) / stride + 1;
        (Layer::conv2d(id, prev, weight, bias, stride, padding), out_c)
    });
    Graph::chain("x", &[c0, h0, w0], layers, &out)
}
