//! The probability-invariant-shift metric: distances that ignore every
//! feature displacement a softmax classifier cannot see.
//!
//!     cargo run --example invariant_shift

use embed_eval::metrics::{invariant_shift_basis, softmax, DEFAULT_RANK_TOLERANCE};
use embed_eval::FeatureMatrix;
use rand::Rng;
use rand::SeedableRng;

fn main() {
    // A 2-class classifier over 3 features: W = [[1,0,0],[0,1,0]].
    let w = FeatureMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
    let metric = invariant_shift_basis(&w, DEFAULT_RANK_TOLERANCE).unwrap();

    println!(
        "W is {} x {}; invariant subspace has dimension {} (D - C + 1)",
        metric.n_classes(),
        metric.n_dims(),
        metric.s_basis().len()
    );

    // Moving along the invariant subspace changes the feature vector but
    // not the classifier output.
    let x = [0.7, -0.2, 0.4];
    let shift = [2.0, 2.0, -5.0]; // 2 * pinv_dir + null component
    let moved: Vec<f64> = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
    println!("\nsoftmax(x)       = {:?}", softmax(&metric.logits(&x)));
    println!("softmax(x+shift) = {:?}", softmax(&metric.logits(&moved)));
    println!(
        "metric distance(x, x+shift) = {:.2e} (plain euclidean: {:.3})",
        metric.distance(&x, &moved).unwrap(),
        shift.iter().map(|v| v * v).sum::<f64>().sqrt()
    );

    // Projecting the invariant directions out once turns the metric into
    // ordinary Euclidean geometry.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let m = FeatureMatrix::from_rows(&rows).unwrap();
    let projected = metric.project_out(&m).unwrap();
    let a = metric.distance(m.row(0), m.row(1)).unwrap();
    let b = euclid(projected.row(0), projected.row(1));
    println!(
        "\nmetric distance {:.6} == euclidean-after-projection {:.6}",
        a, b
    );
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
