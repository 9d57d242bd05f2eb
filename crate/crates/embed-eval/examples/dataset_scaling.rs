//! How evaluation scores move as the training set shrinks: the same
//! method over a ladder of per-class subsampling fractions.
//!
//!     cargo run --example dataset_scaling

use embed_eval::experiment::{
    emit_table, run_experiment, DataSource, DistanceChoice, EvalParams, ExperimentConfig,
    MethodConfig, Normalization, ReductionChoice, SplitConfig, TableAxis, TrainParams, TrainerKind,
};

fn main() {
    let config = ExperimentConfig {
        version: 1,
        seed: 17,
        data: DataSource::Blobs {
            n_classes: 10,
            samples_per_class: 40,
            dims: 24,
            cluster_std: 1.5,
            separation: 3.5,
        },
        split: SplitConfig::FirstHalfClasses,
        fractions: vec![0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0],
        methods: vec![MethodConfig {
            name: Some("fcr1+l2".into()),
            trainer: TrainerKind::Fcr1,
            reduction: ReductionChoice::Identity,
            dims: vec![8],
            normalization: Normalization::L2,
            distance: DistanceChoice::Euclidean,
            checkpoint: None,
            w_file: None,
            b_file: None,
        }],
        evaluation: EvalParams {
            kmeans_runs: 10,
            recall_ks: vec![1],
        },
        training: TrainParams {
            learning_rate: 0.02,
            epochs: 20,
            batch_size: 32,
            ..TrainParams::default()
        },
        normalize_before_reduce: false,
    };

    let report = run_experiment(&config).unwrap();
    print!("{}", emit_table(&report, TableAxis::Fraction).unwrap());

    println!("\ntrain rows per fraction:");
    for cell in &report.cells {
        println!("  {:>4}: {} rows", cell.fraction, cell.train_rows);
    }
    println!("\nevery class keeps at least one sample, even at 5%.");
}
