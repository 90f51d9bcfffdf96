//! Acceptance gate: runs every criterion and prints one PASS/FAIL line each.
//! Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use splitquant::cluster::{brute_force_kmeans_1d, kmeans_1d};
use splitquant::eval::{aggregate, random_inputs, random_model, run_sweep, ExperimentConfig};
use splitquant::ir::{execute, format, Graph, TensorMap};
use splitquant::quant::{
    calibrate, compute_qparams, dequantize_value, quantize, quantize_value, CalibMethod, CalibRange, QuantConfig,
};
use splitquant::tensor::Tensor;
use splitquant::transform::{apply_splitquant, SplitMode, TransformConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODELS: u64 = 100;
const INPUTS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn range(beta: f32, alpha: f32) -> CalibRange {
    CalibRange::new(beta, alpha, CalibMethod::MinMax).unwrap()
}

fn worked_examples() -> Outcome {
    let qp = compute_qparams(&range(-1000.0, 1000.0), -10, 10, false).unwrap();
    let even = quantize(&Tensor::vector(vec![-1000.0, -500.0, 0.0, 500.0, 1000.0]).unwrap(), &qp).data;
    let qp = compute_qparams(&range(-1000.0, 1e30), -10, 10, false).unwrap();
    let outlier = quantize(&Tensor::vector(vec![-1000.0, -500.0, 0.0, 500.0, 1e30]).unwrap(), &qp).data;
    outcome(
        even == [-10, -5, 0, 5, 10] && outlier == [-10, -10, -10, -10, 10],
        format!("{even:?} and {outlier:?}"),
    )
}

fn outputs(g: &Graph, inputs: &[TensorMap]) -> Vec<Vec<f32>> {
    inputs
        .iter()
        .map(|x| {
            execute(g, x)
                .unwrap()
                .into_values()
                .flat_map(Tensor::into_data)
                .collect()
        })
        .collect()
}

/// `max |a - b| / (max |a| + 1e-12)` pooled over all inputs.
fn relative_error(a: &[Vec<f32>], b: &[Vec<f32>]) -> f64 {
    let (mut diff, mut mag) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.len(), y.len());
        for (&p, &q) in x.iter().zip(y) {
            diff = diff.max((f64::from(p) - f64::from(q)).abs());
            mag = mag.max(f64::from(p).abs());
        }
    }
    diff / (mag + 1e-12)
}

struct Corpus {
    models: Vec<Graph>,
    split: Vec<Graph>,
}

fn function_preservation(corpus: &mut Corpus) -> (Outcome, Outcome) {
    let configs = [
        ("full", TransformConfig::default()),
        ("weights", TransformConfig::weights_only()),
        (
            "fold",
            TransformConfig {
                fold_batchnorm: true,
                ..TransformConfig::none()
            },
        ),
    ];
    let act_only = TransformConfig {
        split_activations: true,
        ..TransformConfig::none()
    };
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut inexact = 0;
    let (mut three_way, mut narrower, mut finer, mut single) = (0, 0, 0, 0);
    for seed in 0..MODELS {
        let g = random_model(seed);
        let inputs = random_inputs(&g, seed, INPUTS);
        let reference = outputs(&g, &inputs);
        for (name, cfg) in &configs {
            let cfg = TransformConfig {
                kmeans_seed: seed,
                ..*cfg
            };
            let out = apply_splitquant(&g, &cfg).unwrap();
            let err = relative_error(&reference, &outputs(&out.graph, &inputs));
            if err > worst {
                worst = err;
                worst_at = format!("model {seed}, {name}");
            }
            if *name == "full" {
                for plan in &out.plans {
                    let SplitMode::WeightCluster(ws) = &plan.mode else {
                        continue;
                    };
                    if ws.assignment.k != 3 {
                        continue;
                    }
                    three_way += 1;
                    let (lo, hi) = ws.original_range;
                    let width = hi - lo;
                    let all_narrower = ws.cluster_ranges.iter().all(|(a, b)| b - a < width);
                    narrower += usize::from(all_narrower);
                    // A single-value cluster has no scale to compare; its one
                    // value has to round-trip to within the f32 rounding of 1/|v|.
                    let scales_up = [2, 4, 8].iter().all(|&bits| {
                        let cfg = QuantConfig::with_bits(bits).unwrap();
                        let base = cfg.params_for(&range(lo, hi)).unwrap().scale;
                        ws.cluster_ranges.iter().all(|&(a, b)| {
                            let qp = cfg.params_for(&range(a, b)).unwrap();
                            if a == b {
                                single += 1;
                                let back = dequantize_value(quantize_value(a, &qp), &qp);
                                f64::from((back - a).abs()) <= f32_ulp(a)
                            } else {
                                qp.scale > base
                            }
                        })
                    });
                    finer += usize::from(scales_up);
                }
                corpus.split.push(out.graph);
            }
        }
        let act = apply_splitquant(&g, &act_only).unwrap();
        if outputs(&act.graph, &inputs) != reference {
            inexact += 1;
        }
        corpus.models.push(g);
    }
    let preserved = outcome(
        worst <= 1e-5 && inexact == 0,
        format!(
            "{MODELS} models x {INPUTS} inputs; worst relative error {worst:.2e} ({worst_at}); activation-only splits not bit-exact: {inexact}"
        ),
    );
    let resolution = outcome(
        three_way > 0 && narrower == three_way && finer == three_way,
        format!(
            "{three_way} three-way weight splits; narrower cluster ranges {narrower}; finer resolution at 2/4/8 bits {finer} ({single} single-value cluster checks)"
        ),
    );
    (preserved, resolution)
}

#[allow(clippy::approx_constant)]
// Optimal objectives from an exhaustive search over contiguous partitions of
// the sorted inputs (full label enumeration agrees for n <= 10).
const FIXTURES: [(&[f32], f64); 20] = [
    (&[-5.0, -4.0, 0.1, 0.2, 9.0, 10.0], 1.0050000001490116),
    (&[-1.0, 0.0, 1.0, 5.0], 0.5),
    (&[2.0, 2.0, 2.0, 7.0, 7.0], 0.0),
    (&[0.5, 0.5, 0.5, 0.5], 0.0),
    (
        &[
            1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0, 18.0, 19.0,
            20.0, 21.0, 22.0, 23.0, 24.0, 25.0, 26.0, 27.0, 28.0, 29.0, 30.0, 31.0, 32.0,
        ],
        302.5,
    ),
    (&[-0.25, 0.75, 3.5], 0.0),
    (
        &[-0.211, -0.518, 0.15, -1.79, 0.284, -0.322, -0.726, 0.099],
        0.17243342843445164,
    ),
    (
        &[
            -1.951, -0.158, -0.731, 0.41, 0.442, -0.928, -0.933, -1.47, -0.788, 0.319, 0.857, 0.229,
        ],
        0.6893373077841235,
    ),
    (
        &[
            0.035, -0.867, 0.196, -0.816, 0.24, -0.203, 0.856, 0.202, 1.369, -0.408, 0.756, 0.225, 1.697, -1.962,
            0.874, -1.024,
        ],
        1.907427975759679,
    ),
    (
        &[
            -0.869, -0.018, -1.511, -1.195, -0.506, -0.322, -1.904, -0.874, -0.146, -0.132, -0.662, -0.004, -0.513,
            1.173, -0.809, 0.059, -0.49, 0.855, -0.972, 0.877,
        ],
        1.6623491257356233,
    ),
    (
        &[
            -1.195, -1.367, -0.548, 0.092, -1.521, -0.504, -0.004, -0.036, 0.876, 0.784, 0.333, 0.913, 0.94, -1.109,
            2.185, -0.049, -0.606, 0.6, -0.489, 0.627, -1.201, 0.725, -1.264, 0.376,
        ],
        3.123943588386208,
    ),
    (
        &[
            -0.213, -0.501, 0.153, -0.575, -0.772, 0.395, 1.931, -0.998, 1.155, 1.082, -1.12, 0.19, 0.524, -0.911,
            1.079, 0.878, 1.698, 0.39, 0.946, 1.812, 0.203, -0.5, -1.451, 0.286, -1.267, 1.098, 0.147, 0.811,
        ],
        2.7848263875470813,
    ),
    (
        &[
            0.163, 1.238, -0.456, 0.05, 1.4, -1.258, 0.193, 0.975, -1.064, -0.7, -1.25, 1.181, -0.189, -0.315, -1.413,
            -1.064, 0.927, -0.189, -0.401, 0.792, -0.906, 1.613, -0.368, -0.513, -0.265, 0.037, 0.701, -0.699, -0.824,
            0.038, 0.339, 0.877,
        ],
        2.18946116791898,
    ),
    (
        &[-0.477, 48.351, -1.02, 1.386, -54.604, -0.086, 0.195, 1.013, 1.46, 0.049],
        5.600716133793833,
    ),
    (
        &[
            0.327, -0.237, 0.572, -0.952, -1.098, 1.283, 53.202, 0.561, -0.702, 0.592, 0.447, 1.233, 0.233, -1.615,
            -10.813, -0.027, 0.792, -0.248, -1.058, 1.15,
        ],
        12.83301846663654,
    ),
    (
        &[
            -1.097, -0.664, 0.919, -1.349, 0.968, 0.023, -0.152, 0.866, -0.424, 0.056, 1.635, -0.845, 1.822, -1.686,
            -0.856, 0.901, -0.663, -0.318, 39.479, 0.958, 0.49, -27.067, 0.628, 0.154, 1.179, 0.39, -0.796, -0.125,
            -1.552, 0.629, 0.447, 0.019,
        ],
        24.528004974910463,
    ),
    (
        &[
            -9.659, -10.092, -9.94, -9.427, -9.683, -10.799, -9.817, -10.468, -1.112, 0.58, -0.743, -0.158, 0.624,
            0.352, -0.031, -0.444, 10.148, 9.966, 10.411, 10.194, 10.365, 9.248, 9.57, 10.08,
        ],
        5.318785319161028,
    ),
    (
        &[
            -40.41, -35.86, 19.67, 50.27, -16.67, -26.88, -14.45, 63.18, 18.74, -98.38, 52.88, 18.36, -78.3, -64.4,
            94.33, -79.23, -65.18, 28.35, -45.27, -80.9, -95.77, -48.61, 50.82, -98.88, 90.89, -44.24, 65.27, 85.89,
            26.67, -90.32,
        ],
        11864.865499521176,
    ),
    (
        &[
            -0.5, 0.5, -1.5, 0.5, -1.0, -1.0, 0.5, 0.5, -0.5, -0.5, -1.0, -1.0, -1.0, 1.5, 1.0, -1.0, -0.5, 0.0, 1.0,
            1.5, -1.0, 0.0, 0.0, 1.5, 0.5,
        ],
        1.83125,
    ),
    (
        &[
            0.336, 0.946, 0.891, 4.151, 3.441, 5.346, 1.339, 4.828, 1.216, 2.513, 4.644, 3.332, 2.292, 0.99, 0.418,
            1.397, 2.925, 0.151, 1.815, 2.055, 0.659, 0.319, 0.097, 1.401, 6.375, 1.029, 0.819, 1.901, 3.151, 1.645,
            0.829,
        ],
        9.517003787136444,
    ),
];

/// Checks every fixture at the default transform seed, then reports how often
/// other seeds stop in a local optimum.
fn kmeans_optimality() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut misses = 0;
    for (i, (values, expected)) in FIXTURES.iter().enumerate() {
        let dp = brute_force_kmeans_1d(values, 3).unwrap().objective;
        let got = kmeans_1d(values, 3, 0).unwrap().objective;
        let err = (got - expected).abs().max((dp - expected).abs());
        worst = worst.max(err);
        if err > 1e-9 {
            failures.push(format!("set {i}: {got} vs {expected}"));
        }
        misses += (1..1000)
            .filter(|&seed| (kmeans_1d(values, 3, seed).unwrap().objective - expected).abs() > 1e-9)
            .count();
    }
    let mut detail = format!(
        "20 sets at seed 0; worst objective gap {worst:.1e}; seeds 1..999 miss the optimum in {misses}/19980 runs"
    );
    if !failures.is_empty() {
        detail += &format!("; {failures:?}");
    }
    outcome(failures.is_empty(), detail)
}

fn experiment_analogue() -> Outcome {
    let seeds = 100;
    let mut results = Vec::new();
    for seed in 0..seeds {
        let cfg = ExperimentConfig {
            seed,
            ..Default::default()
        };
        results.extend(run_sweep(&cfg, &[2, 4, 8]).unwrap());
    }
    let wins = results
        .iter()
        .filter(|r| r.config.bits == 2 && r.mse_splitquant < r.mse_baseline)
        .count();
    let rows = aggregate(&results);
    let int2 = &rows[0];
    let diffs: Vec<f64> = rows.iter().map(|r| r.diff).collect();
    let mse_gaps: Vec<f64> = rows.iter().map(|r| r.mse_baseline - r.mse_splitquant).collect();
    let acc_ok = int2.acc_splitquant >= int2.acc_baseline;
    let shrinking = diffs.windows(2).all(|w| w[0] >= w[1]);
    let mse_shrinking = mse_gaps.windows(2).all(|w| w[0] >= w[1]);
    outcome(
        wins >= 95 && acc_ok && shrinking,
        format!(
            "INT2 mse wins {wins}/{seeds} (need 95); INT2 mean acc {:.4} vs {:.4}; accuracy gain INT2/4/8 {:+.4} {:+.4} {:+.4} (shrinking: {shrinking}); mse reduction {:.3e} {:.3e} {:.3e} (shrinking: {mse_shrinking})",
            int2.acc_splitquant, int2.acc_baseline, diffs[0], diffs[1], diffs[2], mse_gaps[0], mse_gaps[1], mse_gaps[2]
        ),
    )
}

fn f32_ulp(x: f32) -> f64 {
    let x = x.abs();
    f64::from(f32::from_bits(x.to_bits() + 1) - x)
}

fn quantizer_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures: Vec<String> = Vec::new();
    let mut fail = |what: &str, i: usize| {
        if failures.len() < 5 {
            failures.push(format!("{what} at case {i}"));
        }
    };
    let mut bitwidth_checked = 0;
    for i in 0..1000 {
        let beta: f32 = rng.random_range(-1000.0..1000.0);
        let width: f32 = 10f32.powf(rng.random_range(-3.0..3.0));
        let alpha = beta + width;
        let bits = [2, 4, 8][i % 3];
        let cfg = QuantConfig::with_bits(bits).unwrap();
        let qp = cfg.params_for(&range(beta, alpha)).unwrap();

        let mut xs: Vec<f32> = (0..64).map(|_| rng.random_range(beta..=alpha)).collect();
        xs.extend([beta, alpha]);
        xs.sort_by(f32::total_cmp);
        if xs
            .windows(2)
            .any(|w| quantize_value(w[0], &qp) > quantize_value(w[1], &qp))
        {
            fail("monotonicity", i);
        }
        let bound = 0.5 / f64::from(qp.scale) + f32_ulp(beta.abs().max(alpha.abs()));
        if xs
            .iter()
            .any(|&x| (f64::from(dequantize_value(quantize_value(x, &qp), &qp)) - f64::from(x)).abs() > bound)
        {
            fail("half-step bound", i);
        }
        if cfg.symmetric(true).params_for(&range(beta, alpha)).unwrap().zero_point != 0 {
            fail("symmetric zero-point", i);
        }
        let t = Tensor::vector(xs.clone()).unwrap();
        let mm = calibrate([&t], CalibMethod::MinMax).unwrap();
        let p100 = calibrate([&t], CalibMethod::Percentile(100.0)).unwrap();
        if (mm.beta, mm.alpha) != (p100.beta, p100.alpha) {
            fail("percentile(100) vs min-max", i);
        }
        if mm.alpha > mm.beta {
            let mse = |bits: u32| {
                let qp = QuantConfig::with_bits(bits).unwrap().params_for(&mm).unwrap();
                xs.iter()
                    .map(|&x| {
                        let d = f64::from(dequantize_value(quantize_value(x, &qp), &qp)) - f64::from(x);
                        d * d
                    })
                    .sum::<f64>()
                    / xs.len() as f64
            };
            let (m2, m4, m8) = (mse(2), mse(4), mse(8));
            bitwidth_checked += 1;
            if !(m2 >= m4 && m4 >= m8) {
                fail("bit-width mse ordering", i);
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "1000 random ranges ({bitwidth_checked} with bit-width ordering){}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {failures:?}")
            }
        ),
    )
}

fn format_round_trip(corpus: &Corpus) -> Outcome {
    let mut bad = Vec::new();
    for (i, g) in corpus.models.iter().chain(&corpus.split).enumerate() {
        let (text, blob) = format::encode_model(g, "m.bin").unwrap();
        let back = format::decode_model(&text, &blob).unwrap();
        let (text2, blob2) = format::encode_model(&back, "m.bin").unwrap();
        let same_bits = g.layers.iter().zip(&back.layers).all(|(a, b)| {
            a.params.len() == b.params.len()
                && a.params.iter().zip(&b.params).all(|((na, ta), (nb, tb))| {
                    na == nb
                        && ta.shape() == tb.shape()
                        && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
                })
        });
        let inputs = random_inputs(g, i as u64, 10);
        let same_out = inputs.iter().all(|x| {
            let (a, b) = (execute(g, x).unwrap(), execute(&back, x).unwrap());
            a.len() == b.len()
                && a.iter().zip(&b).all(|((ka, ta), (kb, tb))| {
                    ka == kb && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
                })
        });
        if !(same_bits && same_out && blob == blob2 && text == text2 && &back == g) {
            bad.push(i);
        }
    }
    let n = corpus.models.len() + corpus.split.len();
    outcome(
        bad.is_empty(),
        format!("{n} models (original and split); mismatches {bad:?}"),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |n: usize, name: &str, start: Instant, o: Outcome| {
        all &= o.pass;
        println!(
            "criterion {n} {}: {name} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    };
    let t = Instant::now();
    report(1, "worked quantization examples", t, worked_examples());

    let t = Instant::now();
    let mut corpus = Corpus {
        models: Vec::new(),
        split: Vec::new(),
    };
    let (preserved, resolution) = function_preservation(&mut corpus);
    report(2, "function preservation", t, preserved);
    report(3, "split cluster ranges are narrower", t, resolution);

    let t = Instant::now();
    report(4, "k-means matches the exact optimum", t, kmeans_optimality());

    let t = Instant::now();
    report(5, "INT2 outlier experiment", t, experiment_analogue());

    let t = Instant::now();
    report(6, "quantizer properties", t, quantizer_properties());

    let t = Instant::now();
    report(7, "format round trip", t, format_round_trip(&corpus));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
