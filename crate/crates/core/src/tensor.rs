//! Dense FP32 tensors and the kernels the graph executor runs.
//!
//! Tensors are immutable row-major values. Every kernel is a pure function
//! and reduction loops always run innermost-index-ascending, so a given
//! build produces bit-identical results run to run.

use std::fmt;

use crate::error::{Error, Result};

/// Dense rank-N FP32 array, row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " {:?}..", &self.data[..SHOWN])
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} must be non-empty with positive dimensions"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Rank-1 tensor holding `data`.
    pub fn vector(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; numel])
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same shape, each element transformed by `f`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `(min, max)` over all elements.
    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Reinterpret with a new shape of equal element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }
}

/// Storage type of a tensor: FP32 or a signed integer grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Fp32,
    Int2,
    Int4,
    Int8,
    /// Arbitrary signed range `qmin < qmax`.
    IntRange {
        qmin: i32,
        qmax: i32,
    },
}

impl DType {
    /// Integer type for a supported bit-width (2, 4 or 8).
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            2 => Ok(DType::Int2),
            4 => Ok(DType::Int4),
            8 => Ok(DType::Int8),
            other => Err(Error::arg(format!(
                "unsupported bit-width {other} (supported: 2, 4, 8)"
            ))),
        }
    }

    /// Integer range `[-2^(b-1), 2^(b-1)-1]`, or `None` for FP32.
    pub fn int_range(self) -> Option<(i32, i32)> {
        let signed = |b: u32| (-(1i32 << (b - 1)), (1i32 << (b - 1)) - 1);
        match self {
            DType::Fp32 => None,
            DType::Int2 => Some(signed(2)),
            DType::Int4 => Some(signed(4)),
            DType::Int8 => Some(signed(8)),
            DType::IntRange { qmin, qmax } => Some((qmin, qmax)),
        }
    }
}

pub(crate) fn resolve_axis(axis: isize, rank: usize) -> Result<usize> {
    let r = rank as isize;
    let resolved = if axis < 0 { axis + r } else { axis };
    if resolved < 0 || resolved >= r {
        return Err(Error::dim("axis", format!("axis {axis} out of range for rank {rank}")));
    }
    Ok(resolved as usize)
}

/// Matrix product `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::dim(
            "matmul",
            format!("cannot multiply {:?} by {:?}", a.shape, b.shape),
        ));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for p in 0..k {
                acc += a.data[i * k + p] * b.data[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Fully connected layer `y = x·Wᵀ + b` for `x` of shape `[in]` or `[rows, in]`
/// and `weight` of shape `[out, in]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    if weight.rank() != 2 {
        return Err(Error::dim(
            "linear",
            format!("weight must be 2-D, got {:?}", weight.shape),
        ));
    }
    let (out_f, in_f) = (weight.shape[0], weight.shape[1]);
    let rows = match x.shape.as_slice() {
        [n] if *n == in_f => 1,
        [r, n] if *n == in_f => *r,
        _ => {
            return Err(Error::dim(
                "linear",
                format!("input {:?} does not match weight {:?}", x.shape, weight.shape),
            ))
        }
    };
    if let Some(b) = bias {
        if b.shape != [out_f] {
            return Err(Error::dim(
                "linear",
                format!("bias {:?} does not match {out_f} outputs", b.shape),
            ));
        }
    }
    let mut out = Vec::with_capacity(rows * out_f);
    for r in 0..rows {
        let xr = &x.data[r * in_f..(r + 1) * in_f];
        for o in 0..out_f {
            let wr = &weight.data[o * in_f..(o + 1) * in_f];
            let mut acc = 0.0f32;
            for (xv, wv) in xr.iter().zip(wr) {
                acc += xv * wv;
            }
            if let Some(b) = bias {
                acc += b.data[o];
            }
            out.push(acc);
        }
    }
    let shape = if x.rank() == 1 { vec![out_f] } else { vec![rows, out_f] };
    Tensor::new(shape, out)
}

/// 2-D cross-correlation over a `[C_in, H, W]` input with a
/// `[C_out, C_in, kh, kw]` kernel and symmetric zero padding.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let [c_in, h, w] = input.shape[..] else {
        return Err(Error::dim(
            "conv2d",
            format!("input must be [C, H, W], got {:?}", input.shape),
        ));
    };
    let [c_out, wc_in, kh, kw] = weight.shape[..] else {
        return Err(Error::dim(
            "conv2d",
            format!("weight must be 4-D, got {:?}", weight.shape),
        ));
    };
    if stride == 0 {
        return Err(Error::dim("conv2d", "stride must be at least 1"));
    }
    if wc_in != c_in {
        return Err(Error::dim(
            "conv2d",
            format!(
                "input {:?} has {c_in} channels, weight {:?} expects {wc_in}",
                input.shape, weight.shape
            ),
        ));
    }
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if kh > ph || kw > pw {
        return Err(Error::dim(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {ph}x{pw}"),
        ));
    }
    if let Some(b) = bias {
        if b.shape != [c_out] {
            return Err(Error::dim(
                "conv2d",
                format!("bias {:?} does not match {c_out} output channels", b.shape),
            ));
        }
    }
    let oh = (ph - kh) / stride + 1;
    let ow = (pw - kw) / stride + 1;
    let mut out = Vec::with_capacity(c_out * oh * ow);
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ci in 0..c_in {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xv = input.data[(ci * h + iy as usize) * w + ix as usize];
                            let wv = weight.data[((co * c_in + ci) * kh + ky) * kw + kx];
                            acc += xv * wv;
                        }
                    }
                }
                if let Some(b) = bias {
                    acc += b.data[co];
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

pub fn elementwise_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::dim(
            "add",
            format!("shapes {:?} and {:?} differ", a.shape, b.shape),
        ));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape.clone(), data)
}

/// Number of elements before `axis`, the axis length, and elements after it.
fn split_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Joins `parts` along `axis`; all other dimensions must agree.
pub fn concat(parts: &[&Tensor], axis: isize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat", "needs at least one input"))?;
    let ax = resolve_axis(axis, first.rank())?;
    for p in &parts[1..] {
        let compatible = p.rank() == first.rank()
            && p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(i, (a, b))| i == ax || a == b);
        if !compatible {
            return Err(Error::dim(
                "concat",
                format!(
                    "shape {:?} incompatible with {:?} along axis {ax}",
                    p.shape, first.shape
                ),
            ));
        }
    }
    let total: usize = parts.iter().map(|p| p.shape[ax]).sum();
    let mut shape = first.shape.clone();
    shape[ax] = total;
    let (outer, _, inner) = split_dims(&first.shape, ax);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let run = p.shape[ax] * inner;
            data.extend_from_slice(&p.data[o * run..(o + 1) * run]);
        }
    }
    Tensor::new(shape, data)
}

/// `len` entries of `t` along `axis`, starting at `start`.
pub fn slice(t: &Tensor, axis: isize, start: usize, len: usize) -> Result<Tensor> {
    let ax = resolve_axis(axis, t.rank())?;
    let (outer, n, inner) = split_dims(&t.shape, ax);
    if len == 0 || start + len > n {
        return Err(Error::dim(
            "slice",
            format!("range [{start}, {}) outside axis {ax} of length {n}", start + len),
        ));
    }
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * n * inner;
        data.extend_from_slice(&t.data[base + start * inner..base + (start + len) * inner]);
    }
    let mut shape = t.shape.clone();
    shape[ax] = len;
    Tensor::new(shape, data)
}

pub fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

/// Exact GELU, `0.5·x·(1 + erf(x/√2))`, evaluated in f64 and rounded once to f32.
pub fn gelu(t: &Tensor) -> Tensor {
    t.map(|v| {
        let x = f64::from(v);
        (0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))) as f32
    })
}

/// Channel axis used by batch normalization: axis 0 for `[C, H, W]` feature
/// maps, the last axis for `[C]` and `[rows, C]`.
pub fn batchnorm_channel_axis(rank: usize) -> usize {
    if rank == 3 {
        0
    } else {
        rank - 1
    }
}

/// Inference-mode batch normalization with running statistics.
pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &Tensor, var: &Tensor, eps: f32) -> Result<Tensor> {
    let ax = batchnorm_channel_axis(x.rank());
    let (outer, c, inner) = split_dims(&x.shape, ax);
    for (name, p) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", mean),
        ("running_var", var),
    ] {
        if p.shape != [c] {
            return Err(Error::dim(
                "batchnorm",
                format!(
                    "{name} {:?} does not match {c} channels of input {:?}",
                    p.shape, x.shape
                ),
            ));
        }
    }
    let mut data = Vec::with_capacity(x.numel());
    for o in 0..outer {
        for ch in 0..c {
            let inv = f64::from(gamma.data[ch]) / (f64::from(var.data[ch]) + f64::from(eps)).sqrt();
            let mu = f64::from(mean.data[ch]);
            let b = f64::from(beta.data[ch]);
            let base = (o * c + ch) * inner;
            for &v in &x.data[base..base + inner] {
                data.push(((f64::from(v) - mu) * inv + b) as f32);
            }
        }
    }
    Tensor::new(x.shape.clone(), data)
}
