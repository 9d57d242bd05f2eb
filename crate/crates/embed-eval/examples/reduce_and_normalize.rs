//! Fit PCA and a random orthonormal projection on one blob set, compare
//! how much variance each keeps, then L2-normalize the reduced rows.
//!
//!     cargo run --example reduce_and_normalize

use embed_eval::training::make_blobs;
use embed_eval::transforms::{apply_projection, fit_pca, fit_random_projection, l2_normalize};

fn total_energy(m: &embed_eval::FeatureMatrix) -> f64 {
    // Sum of squared entries after removing the column means.
    let n = m.n_rows();
    let mut means = vec![0.0; m.n_dims()];
    for row in m.iter_rows() {
        for (s, v) in means.iter_mut().zip(row) {
            *s += v;
        }
    }
    for s in means.iter_mut() {
        *s /= n as f64;
    }
    m.iter_rows()
        .map(|row| {
            row.iter()
                .zip(&means)
                .map(|(v, mu)| (v - mu) * (v - mu))
                .sum::<f64>()
        })
        .sum()
}

fn main() {
    let data = make_blobs(10, 30, 32, 1.0, 4.0, 7).unwrap();
    let features = &data.features;
    println!(
        "blobs: {} rows x {} dims",
        features.n_rows(),
        features.n_dims()
    );

    let out_dims = 4;
    let pca = fit_pca(features, out_dims).unwrap();
    let reduced = apply_projection(&pca, features).unwrap();

    let variances = pca.explained_variances.as_ref().unwrap();
    let kept: f64 = variances.iter().sum();
    println!("\npca to {} dims", out_dims);
    println!("  explained variances: {:?}", variances);
    println!(
        "  energy kept: {:.1}%",
        100.0 * total_energy(&reduced) / total_energy(features)
    );

    let random = fit_random_projection(features.n_dims(), out_dims, 99).unwrap();
    let reduced_rand = apply_projection(&random, features).unwrap();
    println!("\nrandom orthonormal projection to {} dims", out_dims);
    println!(
        "  energy kept: {:.1}% (pca keeps at least this much by construction)",
        100.0 * total_energy(&reduced_rand) / total_energy(features)
    );
    let _ = kept;

    let normalized = l2_normalize(&reduced);
    let norms: Vec<f64> = normalized
        .iter_rows()
        .take(3)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    println!("\nfirst row norms after l2: {:?}", norms);
}
