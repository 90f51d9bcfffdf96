use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a calibration range is derived from observed values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", content = "p", rename_all = "snake_case")]
pub enum CalibMethod {
    MinMax,
    /// Clip both tails: `[P(100 - p), P(p)]`, with `p` in `(50, 100]`.
    Percentile(f64),
}

impl CalibMethod {
    pub fn percentile(p: f64) -> Result<Self> {
        if !(p > 50.0 && p <= 100.0) {
            return Err(Error::arg(format!("percentile {p} must lie in (50, 100]")));
        }
        Ok(CalibMethod::Percentile(p))
    }
}

/// Clipping range `[beta, alpha]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibRange {
    pub beta: f32,
    pub alpha: f32,
    pub method: CalibMethod,
}

impl CalibRange {
    pub fn new(beta: f32, alpha: f32, method: CalibMethod) -> Result<Self> {
        if alpha.is_nan() || beta.is_nan() || alpha < beta {
            return Err(Error::arg(format!(
                "calibration range needs alpha >= beta, got [{beta}, {alpha}]"
            )));
        }
        Ok(Self { beta, alpha, method })
    }

    pub fn width(&self) -> f64 {
        f64::from(self.alpha) - f64::from(self.beta)
    }
}

/// `p`-th percentile of sorted values, linearly interpolated between ranks.
pub fn percentile(sorted: &[f32], p: f64) -> f32 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let frac = h - lo as f64;
    let (a, b) = (f64::from(sorted[lo]), f64::from(sorted[lo + 1]));
    (a + frac * (b - a)) as f32
}

/// Accumulates scalars for one tensor across calibration batches.
#[derive(Debug, Clone)]
pub struct RangeObserver {
    method: CalibMethod,
    min: f32,
    max: f32,
    seen: usize,
    pooled: Vec<f32>,
}

impl RangeObserver {
    pub fn new(method: CalibMethod) -> Self {
        Self {
            method,
            min: f32::INFINITY,
            max: f32::NEG_INFINITY,
            seen: 0,
            pooled: Vec::new(),
        }
    }

    pub fn observe(&mut self, t: &Tensor) {
        let (lo, hi) = t.min_max();
        self.min = self.min.min(lo);
        self.max = self.max.max(hi);
        self.seen += t.numel();
        if let CalibMethod::Percentile(_) = self.method {
            self.pooled.extend_from_slice(t.data());
        }
    }

    pub fn range(&self) -> Result<CalibRange> {
        if self.seen == 0 {
            return Err(Error::Calibration("no values observed".into()));
        }
        match self.method {
            CalibMethod::MinMax => CalibRange::new(self.min, self.max, self.method),
            CalibMethod::Percentile(p) => {
                let mut s = self.pooled.clone();
                s.sort_by(f32::total_cmp);
                CalibRange::new(percentile(&s, 100.0 - p), percentile(&s, p), self.method)
            }
        }
    }
}

/// Range over every scalar of every tensor in `values`.
pub fn calibrate<'a>(values: impl IntoIterator<Item = &'a Tensor>, method: CalibMethod) -> Result<CalibRange> {
    if let CalibMethod::Percentile(p) = method {
        CalibMethod::percentile(p)?;
    }
    let mut obs = RangeObserver::new(method);
    for t in values {
        obs.observe(t);
    }
    obs.range()
}
