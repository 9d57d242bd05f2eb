//! Train a bottlenecked softmax classifier on synthetic blobs and watch
//! the loss fall and the bottleneck features organize.
//!
//!     cargo run --example train_softmax

use embed_eval::clustering::clustering_eval;
use embed_eval::training::{init_model, make_blobs, train_softmax, SoftmaxVariant, TrainConfig};

fn main() {
    let data = make_blobs(6, 50, 32, 1.0, 6.0, 13).unwrap();
    let model = init_model(SoftmaxVariant::Fcr1, 32, 8, 6, 1).unwrap();
    let config = TrainConfig {
        learning_rate: 0.02,
        epochs: 25,
        batch_size: 32,
        seed: 2,
        ..TrainConfig::default()
    };

    let (trained, losses) = train_softmax(model, &data, &config).unwrap();
    println!("epoch loss trace (every 5th):");
    for (i, loss) in losses.iter().enumerate().step_by(5) {
        println!("  epoch {:>2}: {:.4}", i, loss);
    }
    println!("  final   : {:.4}", losses.last().unwrap());

    let correct = (0..data.n_rows())
        .filter(|&i| trained.predict_class(data.features.row(i)).unwrap() == data.labels[i])
        .count();
    println!(
        "\ntraining accuracy: {}/{} = {:.3}",
        correct,
        data.n_rows(),
        correct as f64 / data.n_rows() as f64
    );

    // The 8-dim bottleneck output is the embedding the pipeline evaluates.
    let embedded = trained.extract_features(&data.features).unwrap();
    let eval = clustering_eval(&embedded, &data.labels, 6, 10, 3).unwrap();
    println!(
        "bottleneck features: {} dims, k-means NMI {:.4} (raw input: {} dims)",
        embedded.n_dims(),
        eval.nmi_mean,
        data.features.n_dims()
    );
}
