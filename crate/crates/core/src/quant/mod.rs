//! Affine and symmetric integer quantization.
//!
//! A floating-point range `[β, α]` maps onto the integer grid `[qmin, qmax]`
//! through a scale and an integer zero-point:
//!
//! ```text
//! S = (qmax - qmin) / (α - β)
//! Z = qmin - INT(S·β)
//! Q(x) = clamp(INT(S·x) + Z, qmin, qmax)
//! x̂    = (Q(x) - Z) / S
//! ```
//!
//! `INT` rounds to nearest with ties away from zero. Symmetric mode first
//! widens the range to `±max(|α|, |β|)` and fixes `Z = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

mod calib;
mod fake;

pub use calib::{calibrate, percentile, CalibMethod, CalibRange, RangeObserver};
pub use fake::{calibrate_model, fake_quant_execute, CalibratedModel, QuantEntry, TensorRole};

/// Round to nearest, ties away from zero.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Parameters of one per-tensor quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantParams {
    pub qmin: i32,
    pub qmax: i32,
    pub scale: f32,
    pub zero_point: i32,
    pub symmetric: bool,
    /// The calibration range was a single point (`α == β`).
    pub degenerate: bool,
}

/// Quantization settings for a whole model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantConfig {
    pub qmin: i32,
    pub qmax: i32,
    pub symmetric: bool,
    /// Range method for activations. Weights and biases always use min-max.
    pub activation_calibration: CalibMethod,
    pub weights_only: bool,
}

impl QuantConfig {
    /// Asymmetric min-max quantization of weights and activations at `bits`
    /// (2, 4 or 8).
    pub fn with_bits(bits: u32) -> Result<Self> {
        let (qmin, qmax) = DType::from_bits(bits)?.int_range().expect("integer dtype");
        Ok(Self {
            qmin,
            qmax,
            symmetric: false,
            activation_calibration: CalibMethod::MinMax,
            weights_only: false,
        })
    }

    pub fn with_range(qmin: i32, qmax: i32) -> Result<Self> {
        if qmin >= qmax {
            return Err(Error::arg(format!("integer range [{qmin}, {qmax}] is empty")));
        }
        Ok(Self {
            qmin,
            qmax,
            ..Self::with_bits(8)?
        })
    }

    pub fn symmetric(mut self, on: bool) -> Self {
        self.symmetric = on;
        self
    }

    pub fn weights_only(mut self, on: bool) -> Self {
        self.weights_only = on;
        self
    }

    pub fn activation_calibration(mut self, method: CalibMethod) -> Self {
        self.activation_calibration = method;
        self
    }

    /// `Some(b)` when the integer range is the signed `b`-bit range.
    pub fn bits(&self) -> Option<u32> {
        [2, 4, 8]
            .into_iter()
            .find(|&b| DType::from_bits(b).ok().and_then(DType::int_range) == Some((self.qmin, self.qmax)))
    }

    pub fn params_for(&self, range: &CalibRange) -> Result<QuantParams> {
        compute_qparams(range, self.qmin, self.qmax, self.symmetric)
    }
}

/// Scale and zero-point for `range` on the integer grid `[qmin, qmax]`.
///
/// A single-point range (`α == β`) cannot define a scale; it is flagged as
/// degenerate and gets `S = 1/|β|` (or `S = 1` when `β == 0`), which maps the
/// constant exactly onto `qmin`.
pub fn compute_qparams(range: &CalibRange, qmin: i32, qmax: i32, symmetric: bool) -> Result<QuantParams> {
    if qmin >= qmax {
        return Err(Error::arg(format!("integer range [{qmin}, {qmax}] is empty")));
    }
    let (mut beta, mut alpha) = (f64::from(range.beta), f64::from(range.alpha));
    if !(beta.is_finite() && alpha.is_finite()) || alpha < beta {
        return Err(Error::arg(format!("invalid calibration range [{beta}, {alpha}]")));
    }
    if symmetric {
        let m = alpha.abs().max(beta.abs());
        (beta, alpha) = (-m, m);
    }
    let steps = f64::from(qmax) - f64::from(qmin);
    let degenerate = alpha == beta;
    let scale = if degenerate {
        let s = (1.0 / beta.abs()) as f32;
        if beta == 0.0 || !s.is_finite() || s == 0.0 {
            1.0
        } else {
            s
        }
    } else {
        let s = (steps / (alpha - beta)) as f32;
        if !s.is_finite() || s == 0.0 {
            return Err(Error::arg(format!("range [{beta}, {alpha}] gives a scale outside f32")));
        }
        s
    };
    let zero_point = if symmetric {
        0
    } else {
        let z = f64::from(qmin) - round_half_away(f64::from(scale) * beta);
        z.clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i32
    };
    Ok(QuantParams {
        qmin,
        qmax,
        scale,
        zero_point,
        symmetric,
        degenerate,
    })
}

/// Integer tensor produced by [`quantize`]; values are held in `i32`
/// regardless of bit-width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i32>,
}

pub fn quantize_value(x: f32, qp: &QuantParams) -> i32 {
    let q = round_half_away(f64::from(qp.scale) * f64::from(x)) + f64::from(qp.zero_point);
    q.clamp(f64::from(qp.qmin), f64::from(qp.qmax)) as i32
}

pub fn dequantize_value(q: i32, qp: &QuantParams) -> f32 {
    ((f64::from(q) - f64::from(qp.zero_point)) / f64::from(qp.scale)) as f32
}

pub fn quantize(x: &Tensor, qp: &QuantParams) -> QTensor {
    QTensor {
        shape: x.shape().to_vec(),
        data: x.data().iter().map(|&v| quantize_value(v, qp)).collect(),
    }
}

pub fn dequantize(q: &QTensor, qp: &QuantParams) -> Tensor {
    let data = q.data.iter().map(|&v| dequantize_value(v, qp)).collect();
    Tensor::new(q.shape.clone(), data).expect("QTensor shape is valid")
}

/// `dequantize(quantize(x))`.
pub fn fake_quantize(x: &Tensor, qp: &QuantParams) -> Tensor {
    x.map(|v| dequantize_value(quantize_value(v, qp), qp))
}
