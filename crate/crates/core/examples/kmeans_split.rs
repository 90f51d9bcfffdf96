//! Partition a layer's scalars into lower, middle and upper clusters and
//! compare with the exact optimum.

use splitquant::cluster::{brute_force_kmeans_1d, kmeans_1d};

fn main() -> splitquant::Result<()> {
    let values = [-5.0, -4.0, 0.1, 0.2, 9.0, 10.0, 0.15, -0.05, 48.0];
    let fit = kmeans_1d(&values, 3, 0)?;
    let exact = brute_force_kmeans_1d(&values, 3)?;
    for (j, (lo, hi)) in fit.ranges(&values).into_iter().enumerate() {
        let members: Vec<f32> = values
            .iter()
            .zip(&fit.labels)
            .filter(|(_, &l)| l == j)
            .map(|(&v, _)| v)
            .collect();
        println!(
            "cluster {j}: centroid {:>8.3}  range [{lo}, {hi}]  {members:?}",
            fit.centroids[j]
        );
    }
    println!("objective {:.6}  exact optimum {:.6}", fit.objective, exact.objective);
    Ok(())
}
