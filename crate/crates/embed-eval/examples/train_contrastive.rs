//! Train a contrastive pair embedder on classes it will never be tested
//! on, and watch it learn to ignore nuisance dimensions.
//!
//! The data has 8 informative dimensions (tight class blobs) plus 16 loud
//! noise dimensions shared by every class. Euclidean retrieval in the raw
//! space drowns in that noise; a linear embedding trained on half the
//! classes learns to suppress it, and the fix transfers to the other half.
//!
//!     cargo run --example train_contrastive

use embed_eval::dataio::{class_disjoint_split, LabeledDataset, SplitSpec};
use embed_eval::retrieval::{recall_at_k, RetrievalMetric};
use embed_eval::training::{init_contrastive, make_blobs, train_contrastive, TrainConfig};
use embed_eval::FeatureMatrix;
use rand::SeedableRng;
use rand_distr::Distribution;

fn main() {
    let blobs = make_blobs(12, 40, 8, 1.0, 3.0, 31).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let rows: Vec<Vec<f64>> = blobs
        .features
        .iter_rows()
        .map(|r| {
            let mut v = r.to_vec();
            for _ in 0..16 {
                let x: f64 = rand_distr::StandardNormal.sample(&mut rng);
                v.push(x * 8.0);
            }
            v
        })
        .collect();
    let data = LabeledDataset::new(
        FeatureMatrix::from_rows(&rows).unwrap(),
        blobs.labels.clone(),
        None,
    )
    .unwrap();

    let (train, test) = class_disjoint_split(&data, &SplitSpec::FirstHalfClasses).unwrap();
    println!(
        "24 dims (8 informative + 16 nuisance); train {} rows / {} classes, \
         test {} rows / {} unseen classes",
        train.n_rows(),
        train.classes().len(),
        test.n_rows(),
        test.classes().len()
    );

    let model = init_contrastive(24, 8, 1.0, 4).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-4,
        epochs: 120,
        batch_size: 64,
        seed: 5,
        ..TrainConfig::default()
    };
    let (trained, losses) = train_contrastive(model, &train, &config).unwrap();
    println!(
        "pair loss: first epoch {:.1}, last epoch {:.2}",
        losses[0],
        losses.last().unwrap()
    );

    let ks = [1, 2, 4];
    let raw = recall_at_k(
        &test.features,
        &test.labels,
        &ks,
        RetrievalMetric::Euclidean,
    )
    .unwrap();
    let embedded = trained.extract_features(&test.features).unwrap();
    let learned = recall_at_k(&embedded, &test.labels, &ks, RetrievalMetric::Euclidean).unwrap();

    println!("\nrecall@{:?} on the unseen classes", ks);
    println!("  raw 24-dim space:     {:?}", rounded(&raw.recall_at));
    println!("  learned 8-dim space:  {:?}", rounded(&learned.recall_at));
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
