//! The whole experiment runner in one program: synthesize data, compare
//! a trained bottleneck method against PCA on precomputed features, and
//! print the report as a plot-ready table.
//!
//!     cargo run --example full_pipeline

use embed_eval::experiment::{
    emit_table, run_experiment, DataSource, DistanceChoice, EvalParams, ExperimentConfig,
    MethodConfig, Normalization, ReductionChoice, SplitConfig, TableAxis, TrainParams, TrainerKind,
};

fn main() {
    let method = |trainer, reduction, dims: Vec<usize>| MethodConfig {
        name: None,
        trainer,
        reduction,
        dims,
        normalization: Normalization::L2,
        distance: DistanceChoice::Euclidean,
        checkpoint: None,
        w_file: None,
        b_file: None,
    };

    let config = ExperimentConfig {
        version: 1,
        seed: 42,
        data: DataSource::Blobs {
            n_classes: 12,
            samples_per_class: 30,
            dims: 32,
            cluster_std: 1.5,
            separation: 4.0,
        },
        split: SplitConfig::FirstHalfClasses,
        fractions: vec![1.0],
        methods: vec![
            method(TrainerKind::Precomputed, ReductionChoice::Pca, vec![8]),
            method(TrainerKind::Fcr1, ReductionChoice::Identity, vec![8]),
        ],
        evaluation: EvalParams {
            kmeans_runs: 20,
            recall_ks: vec![1, 2, 4],
        },
        training: TrainParams {
            learning_rate: 0.02,
            epochs: 25,
            batch_size: 32,
            ..TrainParams::default()
        },
        normalize_before_reduce: false,
    };

    let report = run_experiment(&config).unwrap();
    println!(
        "pipeline: {} | nmi: {} | {} cells\n",
        report.pipeline_order,
        report.nmi_variant,
        report.cells.len()
    );
    print!("{}", emit_table(&report, TableAxis::Dims).unwrap());

    for cell in &report.cells {
        println!(
            "\n{}: trained on {} rows, evaluated in {:.2}s",
            cell.method, cell.train_rows, cell.wall_clock_seconds
        );
    }
}
