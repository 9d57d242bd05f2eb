//! Recall@K self-retrieval under the Euclidean and cosine distances,
//! with and without L2 normalization.
//!
//!     cargo run --example retrieval_recall

use embed_eval::retrieval::{recall_at_k, RetrievalMetric};
use embed_eval::training::make_blobs;
use embed_eval::transforms::l2_normalize;

fn main() {
    // Moderate noise so the metrics can actually disagree.
    let data = make_blobs(8, 40, 24, 2.5, 3.0, 23).unwrap();
    let ks = [1, 2, 4, 8];

    let raw_euclid = recall_at_k(
        &data.features,
        &data.labels,
        &ks,
        RetrievalMetric::Euclidean,
    )
    .unwrap();
    let raw_cosine =
        recall_at_k(&data.features, &data.labels, &ks, RetrievalMetric::Cosine).unwrap();
    let normalized = l2_normalize(&data.features);
    let norm_euclid =
        recall_at_k(&normalized, &data.labels, &ks, RetrievalMetric::Euclidean).unwrap();

    println!("{} queries, K = {:?}\n", raw_euclid.n_queries, ks);
    println!("raw + euclidean   {:?}", rounded(&raw_euclid.recall_at));
    println!("raw + cosine      {:?}", rounded(&raw_cosine.recall_at));
    println!("l2  + euclidean   {:?}", rounded(&norm_euclid.recall_at));
    println!(
        "\ncosine ignores vector length, so it matches Euclidean retrieval \
         on the normalized copy: {}",
        if raw_cosine.recall_at == norm_euclid.recall_at {
            "identical recall, as expected"
        } else {
            "unexpected difference"
        }
    );
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
