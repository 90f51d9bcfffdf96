//! Command-line front end.
//!
//! Reports go to standard output and files are written only at explicit
//! `--out` paths. Errors map onto the exit codes in [`exit_code`].

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::eval::{
    aggregate, evaluate, format_table, generate_outlier_mlp, generate_teacher_dataset, load_dataset, random_inputs,
    run_sweep, save_dataset, ExperimentConfig, LabeledDataset, Precision, TableRow,
};
use crate::ir::{infer_shapes, load_model, save_model, validate, Graph};
use crate::quant::{calibrate_model, CalibMethod, QuantConfig};
use crate::transform::{apply_splitquant, TransformConfig};

pub const EXIT_ARGUMENT: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_PARSE: u8 = 4;
pub const EXIT_VALIDATION: u8 = 5;
pub const EXIT_NUMERIC: u8 = 6;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  invalid argument or unsupported option
  3  file could not be read or written
  4  model, dataset or config file could not be parsed
  5  graph failed validation or shapes do not fit
  6  calibration or other numeric failure";

#[derive(Debug, Parser)]
#[command(name = "splitquant", version, about = "Split layers by weight cluster and measure low-bit quantization", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fold BatchNorm and split weight and activation layers.
    Transform(TransformArgs),
    /// Fake-quantize a model and report quantizer ranges and output error.
    Quantize(EvalArgs),
    /// Classification accuracy and output error, quantized or FP32.
    Eval(EvalArgs),
    /// Baseline versus split comparison on synthetic outlier models.
    Experiment(ExperimentArgs),
    /// Print a model's layers, parameter ranges and inferred shapes.
    Inspect(InspectArgs),
    /// Write a synthetic outlier MLP and optionally its teacher dataset.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// Model manifest to read.
    pub model: PathBuf,
    /// Manifest path for the transformed model.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_split_weights: bool,
    #[arg(long)]
    pub no_split_activations: bool,
    #[arg(long)]
    pub no_fold_batchnorm: bool,
    /// Leave activation layers unsplit.
    #[arg(long)]
    pub weights_only: bool,
    /// k-means seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with a `[transform]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuantArgs {
    /// Signed integer bit-width: 2, 4 or 8.
    #[arg(long, conflicts_with = "qrange")]
    pub bits: Option<u32>,
    /// Explicit integer range as `QMIN,QMAX`.
    #[arg(long, value_parser = parse_qrange, allow_hyphen_values = true)]
    pub qrange: Option<(i32, i32)>,
    #[arg(long)]
    pub symmetric: bool,
    /// Quantize weights and biases only.
    #[arg(long)]
    pub weights_only: bool,
    /// Percentile for activation ranges, in (50, 100].
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Random inputs used to calibrate activation ranges.
    #[arg(long)]
    pub calibration_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub model: PathBuf,
    /// Labeled dataset manifest.
    #[arg(long, conflicts_with_all = ["teacher_seed", "samples"])]
    pub dataset: Option<PathBuf>,
    /// Label random inputs with the model's own FP32 predictions.
    #[arg(long)]
    pub teacher_seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Skip quantization.
    #[arg(long)]
    pub fp32: bool,
    #[command(flatten)]
    pub quant: QuantArgs,
    /// Seed for calibration inputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the fake-quantized model here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file with a `[quant]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Comma-separated bit-widths.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    pub bits: Vec<u32>,
    /// Also quantize activations and split activation layers.
    #[arg(long)]
    pub activations: bool,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub outlier_fraction: Option<f64>,
    #[arg(long)]
    pub outlier_scale: Option<f32>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Print per-seed results and the table as TOML.
    #[arg(long)]
    pub toml: bool,
    /// TOML file with an `[experiment]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Manifest path for the model.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 0.01)]
    pub outlier_fraction: f64,
    #[arg(long, default_value_t = 50.0)]
    pub outlier_scale: f32,
    /// Also write a teacher-labeled dataset here.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
}

fn parse_qrange(s: &str) -> std::result::Result<(i32, i32), String> {
    let (a, b) = s.split_once(',').ok_or("expected QMIN,QMAX")?;
    let a = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

/// Optional config file; every table and key may be omitted.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    transform: Option<TransformConfig>,
    quant: Option<QuantSection>,
    experiment: Option<ExperimentConfig>,
}

#[derive(Debug, Default, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct QuantSection {
    bits: Option<u32>,
    qmin: Option<i32>,
    qmax: Option<i32>,
    symmetric: Option<bool>,
    weights_only: Option<bool>,
    percentile: Option<f64>,
    calibration_samples: Option<usize>,
}

fn read_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| FormatError::Manifest(format!("{}: {e}", path.display())).into())
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => EXIT_ARGUMENT,
        Error::Io { .. } => EXIT_IO,
        Error::Format(_) => EXIT_PARSE,
        Error::Invalid(_) | Error::MissingInput(_) | Error::Dimension { .. } | Error::Kind { .. } => EXIT_VALIDATION,
        Error::Calibration(_) => EXIT_NUMERIC,
        Error::Node { source, .. } => exit_code(source),
    }
}

/// Parses `args` (program name first) and runs the command, writing reports
/// to `out`. Returns the process exit status.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code() as u8;
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Transform(a) => cmd_transform(&a, out),
        Command::Quantize(a) => cmd_eval(&a, true, out),
        Command::Eval(a) => cmd_eval(&a, false, out),
        Command::Experiment(a) => cmd_experiment(&a, out),
        Command::Inspect(a) => cmd_inspect(&a, out),
        Command::Generate(a) => cmd_generate(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn load_valid(path: &Path) -> Result<Graph> {
    let g = load_model(path)?;
    let diags = validate(&g);
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    Ok(g)
}

fn cmd_transform(a: &TransformArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = read_config(a.config.as_deref())?.transform.unwrap_or_default();
    cfg.split_weights &= !a.no_split_weights;
    cfg.split_activations &= !(a.no_split_activations || a.weights_only);
    cfg.fold_batchnorm &= !a.no_fold_batchnorm;
    if let Some(s) = a.seed {
        cfg.kmeans_seed = s;
    }
    let g = load_valid(&a.model)?;
    let outcome = apply_splitquant(&g, &cfg)?;
    save_model(&outcome.graph, &a.out)?;
    emit(out, &outcome.report(&g, &cfg))
}

fn quant_config(a: &QuantArgs, file: Option<QuantSection>) -> Result<(QuantConfig, usize)> {
    let f = file.unwrap_or_default();
    let mut cfg = match (a.bits, a.qrange, f.bits, f.qmin.zip(f.qmax)) {
        (Some(b), _, _, _) => QuantConfig::with_bits(b)?,
        (None, Some((lo, hi)), _, _) => QuantConfig::with_range(lo, hi)?,
        (None, None, Some(b), _) => QuantConfig::with_bits(b)?,
        (None, None, None, Some((lo, hi))) => QuantConfig::with_range(lo, hi)?,
        _ => QuantConfig::with_bits(8)?,
    };
    cfg = cfg
        .symmetric(a.symmetric || f.symmetric.unwrap_or(false))
        .weights_only(a.weights_only || f.weights_only.unwrap_or(false));
    if let Some(p) = a.percentile.or(f.percentile) {
        cfg = cfg.activation_calibration(CalibMethod::percentile(p)?);
    }
    let samples = a.calibration_samples.or(f.calibration_samples).unwrap_or(64);
    Ok((cfg, samples))
}

fn eval_dataset(a: &EvalArgs, g: &Graph) -> Result<LabeledDataset> {
    match (&a.dataset, a.teacher_seed) {
        (Some(p), _) => load_dataset(p),
        (None, Some(seed)) => generate_teacher_dataset(g, seed, a.samples.unwrap_or(256)),
        (None, None) => Err(Error::arg("give --dataset or --teacher-seed")),
    }
}

fn cmd_eval(a: &EvalArgs, quantize: bool, out: &mut dyn Write) -> Result<()> {
    if quantize && a.fp32 {
        return Err(Error::arg("--fp32 applies to eval only"));
    }
    let (cfg, calib_n) = quant_config(&a.quant, read_config(a.config.as_deref())?.quant)?;
    let g = load_valid(&a.model)?;
    let d = eval_dataset(a, &g)?;
    let calibration = if cfg.weights_only {
        Vec::new()
    } else {
        random_inputs(&g, a.seed, calib_n)
    };
    let precision = if a.fp32 {
        Precision::Fp32
    } else {
        Precision::FakeQuant {
            config: cfg,
            calibration: &calibration,
        }
    };
    let report = evaluate(&g, &d, &precision, None)?;
    if let Some(path) = &a.out {
        if a.fp32 {
            return Err(Error::arg("--out needs a quantized run"));
        }
        save_model(calibrate_model(&g, &cfg, &calibration)?.graph(), path)?;
    }
    emit(out, &report.to_toml())
}

#[derive(Serialize)]
struct ExperimentDoc<'a> {
    bits: &'a [u32],
    seeds: &'a [u64],
    config: ExperimentConfig,
    table: Vec<TableRow>,
    runs: Vec<RunRow>,
}

#[derive(Serialize)]
struct RunRow {
    seed: u64,
    bits: u32,
    acc_fp32: f64,
    acc_baseline: f64,
    acc_splitquant: f64,
    mse_baseline: f64,
    mse_splitquant: f64,
}

fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write) -> Result<()> {
    if a.seeds.is_empty() || a.bits.is_empty() {
        return Err(Error::arg("seed and bit-width lists must be non-empty"));
    }
    let mut base = read_config(a.config.as_deref())?.experiment.unwrap_or_default();
    base.weights_only &= !a.activations;
    base.depth = a.depth.unwrap_or(base.depth);
    base.width = a.width.unwrap_or(base.width);
    base.outlier_fraction = a.outlier_fraction.unwrap_or(base.outlier_fraction);
    base.outlier_scale = a.outlier_scale.unwrap_or(base.outlier_scale);
    base.eval_samples = a.samples.unwrap_or(base.eval_samples);

    let mut results = Vec::new();
    for &seed in &a.seeds {
        results.extend(run_sweep(&ExperimentConfig { seed, ..base }, &a.bits)?);
    }
    let table = aggregate(&results);
    if a.toml {
        let doc = ExperimentDoc {
            bits: &a.bits,
            seeds: &a.seeds,
            config: base,
            table,
            runs: results
                .iter()
                .map(|r| RunRow {
                    seed: r.config.seed,
                    bits: r.config.bits,
                    acc_fp32: r.acc_fp32,
                    acc_baseline: r.acc_baseline,
                    acc_splitquant: r.acc_splitquant,
                    mse_baseline: r.mse_baseline,
                    mse_splitquant: r.mse_splitquant,
                })
                .collect(),
        };
        emit(out, &toml::to_string(&doc).expect("serializable"))
    } else {
        let mode = if base.weights_only {
            "weights only"
        } else {
            "weights and activations"
        };
        emit(
            out,
            &format!(
                "# {mode}; depth {} width {} outliers {} x{}; {} samples; seeds {:?}\n{}",
                base.depth,
                base.width,
                base.outlier_fraction,
                base.outlier_scale,
                base.eval_samples,
                a.seeds,
                format_table(&table)
            ),
        )
    }
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let g = load_model(&a.model)?;
    let diags = validate(&g);
    let mut s = String::new();
    for i in &g.inputs {
        s += &format!("input  {} {:?}\n", i.name, i.shape);
    }
    let shapes = if diags.is_empty() { infer_shapes(&g).ok() } else { None };
    for l in &g.layers {
        s += &format!("layer  {} {} <- {}", l.id, l.op.kind_name(), l.inputs.join(", "));
        if let Some(shape) = shapes.as_ref().and_then(|m| m.get(&l.id)) {
            s += &format!(" -> {shape:?}");
        }
        if let Some(src) = &l.split_from {
            s += &format!(" (split from {src})");
        }
        s += "\n";
        for (name, t) in &l.params {
            let (lo, hi) = t.min_max();
            s += &format!("         {name} {:?} [{lo}, {hi}]\n", t.shape());
        }
    }
    for o in &g.outputs {
        s += &format!("output {} = {}\n", o.name, o.source);
    }
    for d in &diags {
        s += &format!("invalid: {d}\n");
    }
    emit(out, &s)?;
    if diags.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(diags))
    }
}

fn cmd_generate(a: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let g = generate_outlier_mlp(a.seed, a.depth, a.width, a.outlier_fraction, a.outlier_scale)?;
    save_model(&g, &a.out)?;
    let mut s = format!("model = {:?}\n", a.out.display().to_string());
    if let Some(path) = &a.dataset {
        save_dataset(&generate_teacher_dataset(&g, a.seed, a.samples)?, path)?;
        s += &format!("dataset = {:?}\n", path.display().to_string());
    }
    emit(out, &s)
}
