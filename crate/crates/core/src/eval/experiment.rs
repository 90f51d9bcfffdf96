use serde::{Deserialize, Serialize};

use super::{accuracy, evaluate, generate_outlier_mlp, generate_teacher_dataset, random_inputs, EvalReport, Precision};
use crate::error::{Error, Result};
use crate::quant::QuantConfig;
use crate::transform::{apply_splitquant, TransformConfig};

/// One baseline-versus-split comparison on a synthetic outlier MLP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub bits: u32,
    /// Quantize parameters only and leave activations unsplit.
    pub weights_only: bool,
    pub depth: usize,
    pub width: usize,
    pub outlier_fraction: f64,
    pub outlier_scale: f32,
    pub eval_samples: usize,
    pub calibration_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            bits: 2,
            weights_only: true,
            depth: 3,
            width: 64,
            outlier_fraction: 0.01,
            outlier_scale: 50.0,
            eval_samples: 256,
            calibration_samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub acc_fp32: f64,
    /// FP32 accuracy of the split graph; equals `acc_fp32` when the rewrite
    /// preserves the function.
    pub acc_split_fp32: f64,
    pub acc_baseline: f64,
    pub acc_splitquant: f64,
    pub mse_baseline: f64,
    pub mse_splitquant: f64,
    pub split_layers: usize,
    pub baseline: EvalReport,
    pub splitquant: EvalReport,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    Ok(run_sweep(cfg, &[cfg.bits])?.remove(0))
}

/// Runs `cfg` once per bit-width, sharing the model, dataset, calibration
/// inputs and split graph across bit-widths.
pub fn run_sweep(cfg: &ExperimentConfig, bits: &[u32]) -> Result<Vec<ExperimentResult>> {
    if bits.is_empty() {
        return Err(Error::arg("no bit-widths given"));
    }
    if cfg.eval_samples == 0 || (!cfg.weights_only && cfg.calibration_samples == 0) {
        return Err(Error::arg("evaluation and calibration sample counts must be positive"));
    }
    let quant = bits
        .iter()
        .map(|&b| Ok(QuantConfig::with_bits(b)?.weights_only(cfg.weights_only)))
        .collect::<Result<Vec<_>>>()?;
    let g = generate_outlier_mlp(cfg.seed, cfg.depth, cfg.width, cfg.outlier_fraction, cfg.outlier_scale)?;
    let d = generate_teacher_dataset(&g, cfg.seed, cfg.eval_samples)?;
    let calibration = if cfg.weights_only {
        Vec::new()
    } else {
        random_inputs(&g, cfg.seed, cfg.calibration_samples)
    };
    let tcfg = TransformConfig {
        kmeans_seed: cfg.seed,
        ..if cfg.weights_only {
            TransformConfig::weights_only()
        } else {
            TransformConfig::default()
        }
    };
    let split = apply_splitquant(&g, &tcfg)?;
    let acc_fp32 = accuracy(&g, &d, &Precision::Fp32)?;
    let acc_split_fp32 = accuracy(&split.graph, &d, &Precision::Fp32)?;

    quant
        .into_iter()
        .zip(bits)
        .map(|(q, &b)| {
            let precision = Precision::FakeQuant {
                config: q,
                calibration: &calibration,
            };
            let baseline = evaluate(&g, &d, &precision, None)?;
            let mut splitquant = evaluate(&split.graph, &d, &precision, Some(&g))?;
            splitquant.attach_splits(&split.plans);
            Ok(ExperimentResult {
                config: ExperimentConfig { bits: b, ..*cfg },
                acc_fp32,
                acc_split_fp32,
                acc_baseline: baseline.metrics.accuracy,
                acc_splitquant: splitquant.metrics.accuracy,
                mse_baseline: baseline.metrics.error.mse,
                mse_splitquant: splitquant.metrics.error.mse,
                split_layers: split.plans.len(),
                baseline,
                splitquant,
            })
        })
        .collect()
}

/// Mean results for one bit-width over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub bits: u32,
    pub runs: usize,
    pub acc_fp32: f64,
    pub acc_baseline: f64,
    pub acc_splitquant: f64,
    /// `acc_splitquant - acc_baseline`.
    pub diff: f64,
    pub mse_baseline: f64,
    pub mse_splitquant: f64,
}

/// Averages results per bit-width, rows in ascending bit order.
pub fn aggregate(results: &[ExperimentResult]) -> Vec<TableRow> {
    let mut bits: Vec<u32> = results.iter().map(|r| r.config.bits).collect();
    bits.sort_unstable();
    bits.dedup();
    bits.into_iter()
        .map(|b| {
            let rs: Vec<_> = results.iter().filter(|r| r.config.bits == b).collect();
            let mean = |f: &dyn Fn(&ExperimentResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
            let (base, split) = (mean(&|r| r.acc_baseline), mean(&|r| r.acc_splitquant));
            TableRow {
                bits: b,
                runs: rs.len(),
                acc_fp32: mean(&|r| r.acc_fp32),
                acc_baseline: base,
                acc_splitquant: split,
                diff: split - base,
                mse_baseline: mean(&|r| r.mse_baseline),
                mse_splitquant: mean(&|r| r.mse_splitquant),
            }
        })
        .collect()
}

/// Plain-text table with accuracies in percent.
pub fn format_table(rows: &[TableRow]) -> String {
    let mut s = format!(
        "{:>4}  {:>4}  {:>8}  {:>8}  {:>10}  {:>7}  {:>12}  {:>14}\n",
        "bits", "runs", "fp32", "baseline", "splitquant", "diff", "mse_baseline", "mse_splitquant"
    );
    for r in rows {
        s += &format!(
            "{:>4}  {:>4}  {:>8.2}  {:>8.2}  {:>10.2}  {:>+7.2}  {:>12.4e}  {:>14.4e}\n",
            r.bits,
            r.runs,
            100.0 * r.acc_fp32,
            100.0 * r.acc_baseline,
            100.0 * r.acc_splitquant,
            100.0 * r.diff,
            r.mse_baseline,
            r.mse_splitquant
        );
    }
    s
}
