//! Baseline versus split accuracy over several seeds and bit-widths.
//!
//! Usage: `cargo run --release --example experiment_table -- [seeds] [--activations]`

use splitquant::eval::{aggregate, format_table, run_sweep, ExperimentConfig};

fn main() -> splitquant::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.iter().find_map(|a| a.parse().ok()).unwrap_or(10);
    let weights_only = !args.iter().any(|a| a == "--activations");

    let mut results = Vec::new();
    for seed in 0..seeds {
        let cfg = ExperimentConfig {
            seed,
            weights_only,
            ..Default::default()
        };
        results.extend(run_sweep(&cfg, &[2, 4, 8])?);
    }
    let wins = results
        .iter()
        .filter(|r| r.config.bits == 2 && r.mse_splitquant < r.mse_baseline)
        .count();
    print!("{}", format_table(&aggregate(&results)));
    println!("INT2 seeds with lower output MSE after splitting: {wins}/{seeds}");
    Ok(())
}
