//! Thin command-line front end over the library. Every subcommand maps
//! onto one library entry point; all policy lives in the library.
//!
//! Exit codes: 0 success, 2 config/validation error (including argument
//! parsing), 3 data-format or i/o error, 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use embed_eval::clustering::{clustering_eval_with, NmiVariant};
use embed_eval::dataio::{
    load_features, load_labels, save_features, save_labels, subsample_per_class, FeatureFormat,
    LabeledDataset,
};
use embed_eval::experiment::{
    emit_table, run_experiment, run_training, EvalReport, ExperimentConfig, TableAxis,
    TrainRunConfig,
};
use embed_eval::metrics::{invariant_shift_basis, DEFAULT_RANK_TOLERANCE};
use embed_eval::retrieval::{recall_at_k, RetrievalMetric};
use embed_eval::training::{make_blobs, save_checkpoint, Checkpoint};
use embed_eval::transforms::{
    apply_projection, fit_pca, fit_random_projection, save_projection, Projection,
};
use embed_eval::{Error, Result};

#[derive(Parser)]
#[command(
    name = "embed-eval",
    version,
    about = "Feature evaluation pipeline: reduce, normalize, cluster, retrieve, train"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReduceKind {
    Pca,
    Random,
    Identity,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    Cosine,
    Invariant,
}

#[derive(Clone, Copy, ValueEnum)]
enum NmiArg {
    Arithmetic,
    Geometric,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Dims,
    Fraction,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment config and emit a JSON report.
    Run {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a projection on one feature file and apply it to another.
    Reduce {
        /// Features to transform.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: ReduceKind,
        /// Output dimensionality.
        #[arg(long)]
        dims: usize,
        /// Features the projection is fitted on; defaults to --in.
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Seed for the random kind (accepted everywhere, used there).
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also store the fitted projection as a sidecar file.
        #[arg(long)]
        projection_out: Option<PathBuf>,
    },
    /// Repeated k-means against ground-truth labels; prints NMI stats.
    Cluster {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        runs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "arithmetic")]
        nmi: NmiArg,
    },
    /// Recall@K self-retrieval; prints per-K recall.
    Retrieve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Comma-separated K values, e.g. 1,2,4,8.
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        #[arg(long, value_enum, default_value = "euclidean")]
        metric: MetricArg,
        /// Classifier output matrix (C x D), required for --metric invariant.
        #[arg(long)]
        w: Option<PathBuf>,
        /// Optional bias row for --w; shape-checked only.
        #[arg(long)]
        b: Option<PathBuf>,
    },
    /// Train one model from a training config; writes a checkpoint.
    Train {
        /// Training config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint destination.
        #[arg(long)]
        out: PathBuf,
        /// Also export the softmax output matrix W (binary features).
        #[arg(long)]
        w_out: Option<PathBuf>,
        /// Also export the softmax bias b (binary features, one row).
        #[arg(long)]
        b_out: Option<PathBuf>,
    },
    /// Keep a per-class fraction of rows.
    Subsample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
    },
    /// Synthesize Gaussian class blobs as feature + label files.
    MakeBlobs {
        #[arg(long)]
        n_classes: usize,
        #[arg(long)]
        samples_per_class: usize,
        #[arg(long)]
        dims: usize,
        #[arg(long)]
        cluster_std: f64,
        #[arg(long)]
        separation: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
    },
    /// Flatten a JSON report into plot-ready CSV.
    Table {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Prints to stdout, treating a closed pipe (e.g. `| head`) as success.
fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    match stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
    {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(Error::io("<stdout>", e)),
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => print_stdout(&format!("{}\n", text)),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out } => {
            let config = ExperimentConfig::from_path(&config)?;
            let report = run_experiment(&config)?;
            write_or_print(&out, &report.to_json_string()?)
        }
        Command::Reduce {
            input,
            kind,
            dims,
            fit,
            seed,
            out,
            projection_out,
        } => {
            let m = load_features(&input, FeatureFormat::from_path(&input))?;
            let fit_m = match &fit {
                Some(path) => load_features(path, FeatureFormat::from_path(path))?,
                None => m.clone(),
            };
            let projection = match kind {
                ReduceKind::Pca => fit_pca(&fit_m, dims)?,
                ReduceKind::Random => fit_random_projection(fit_m.n_dims(), dims, seed)?,
                ReduceKind::Identity => {
                    if dims != fit_m.n_dims() {
                        return Err(Error::Invalid(format!(
                            "identity keeps {} dims; got --dims {}",
                            fit_m.n_dims(),
                            dims
                        )));
                    }
                    Projection::identity(dims)?
                }
            };
            let reduced = apply_projection(&projection, &m)?;
            save_features(&out, &reduced, FeatureFormat::from_path(&out))?;
            if let Some(path) = &projection_out {
                save_projection(path, &projection)?;
            }
            eprintln!(
                "reduced {} rows: {} -> {} dims",
                reduced.n_rows(),
                m.n_dims(),
                reduced.n_dims()
            );
            Ok(())
        }
        Command::Cluster {
            input,
            labels,
            k,
            runs,
            seed,
            nmi,
        } => {
            let m = load_features(&input, FeatureFormat::from_path(&input))?;
            let l = load_labels(&labels, m.n_rows())?;
            let variant = match nmi {
                NmiArg::Arithmetic => NmiVariant::Arithmetic,
                NmiArg::Geometric => NmiVariant::Geometric,
            };
            let eval = clustering_eval_with(&m, &l, k, runs, seed, variant)?;
            write_or_print(
                &None,
                &serde_json::to_string_pretty(&eval)
                    .map_err(|e| Error::Invalid(format!("serialization error: {}", e)))?,
            )
        }
        Command::Retrieve {
            input,
            labels,
            ks,
            metric,
            w,
            b,
        } => {
            let m = load_features(&input, FeatureFormat::from_path(&input))?;
            let l = load_labels(&labels, m.n_rows())?;
            let inv = match metric {
                MetricArg::Invariant => {
                    let w_path =
                        w.ok_or_else(|| Error::Invalid("--metric invariant requires --w".into()))?;
                    let w_m = load_features(&w_path, FeatureFormat::from_path(&w_path))?;
                    if let Some(b_path) = &b {
                        let b_m = load_features(b_path, FeatureFormat::from_path(b_path))?;
                        let entries = b_m.n_rows() * b_m.n_dims();
                        if (b_m.n_rows() != 1 && b_m.n_dims() != 1) || entries != w_m.n_rows() {
                            return Err(Error::Invalid(format!(
                                "--b has {} entries but --w has {} rows",
                                entries,
                                w_m.n_rows()
                            )));
                        }
                    }
                    Some(invariant_shift_basis(&w_m, DEFAULT_RANK_TOLERANCE)?)
                }
                _ => None,
            };
            let retrieval_metric = match (&metric, &inv) {
                (MetricArg::Euclidean, _) => RetrievalMetric::Euclidean,
                (MetricArg::Cosine, _) => RetrievalMetric::Cosine,
                (MetricArg::Invariant, Some(inv)) => RetrievalMetric::InvariantShift(inv),
                (MetricArg::Invariant, None) => unreachable!("built above"),
            };
            let eval = recall_at_k(&m, &l, &ks, retrieval_metric)?;
            write_or_print(
                &None,
                &serde_json::to_string_pretty(&eval)
                    .map_err(|e| Error::Invalid(format!("serialization error: {}", e)))?,
            )
        }
        Command::Train {
            config,
            out,
            w_out,
            b_out,
        } => {
            let config = TrainRunConfig::from_path(&config)?;
            let (ckpt, losses) = run_training(&config)?;
            save_checkpoint(&out, &ckpt)?;
            if w_out.is_some() || b_out.is_some() {
                let model = match &ckpt {
                    Checkpoint::Softmax(m) => m,
                    Checkpoint::Contrastive(_) => {
                        return Err(Error::Invalid(
                            "--w-out/--b-out need a softmax model; this config trains a \
                             contrastive one"
                                .into(),
                        ))
                    }
                };
                let (w, b) = model.output_layer()?;
                if let Some(path) = &w_out {
                    save_features(path, &w, FeatureFormat::from_path(path))?;
                }
                if let Some(path) = &b_out {
                    save_features(path, &b, FeatureFormat::from_path(path))?;
                }
            }
            write_or_print(
                &None,
                &serde_json::to_string_pretty(&serde_json::json!({ "epoch_losses": losses }))
                    .map_err(|e| Error::Invalid(format!("serialization error: {}", e)))?,
            )
        }
        Command::Subsample {
            input,
            labels,
            fraction,
            seed,
            out,
            out_labels,
        } => {
            let m = load_features(&input, FeatureFormat::from_path(&input))?;
            let l = load_labels(&labels, m.n_rows())?;
            let data = LabeledDataset::new(m, l, None)?;
            let kept = subsample_per_class(&data, fraction, seed)?;
            save_features(&out, &kept.features, FeatureFormat::from_path(&out))?;
            save_labels(&out_labels, &kept.labels)?;
            eprintln!("kept {} of {} rows", kept.n_rows(), data.n_rows());
            Ok(())
        }
        Command::MakeBlobs {
            n_classes,
            samples_per_class,
            dims,
            cluster_std,
            separation,
            seed,
            out,
            out_labels,
        } => {
            let data = make_blobs(
                n_classes,
                samples_per_class,
                dims,
                cluster_std,
                separation,
                seed,
            )?;
            save_features(&out, &data.features, FeatureFormat::from_path(&out))?;
            save_labels(&out_labels, &data.labels)?;
            eprintln!(
                "wrote {} rows x {} dims across {} classes",
                data.n_rows(),
                data.features.n_dims(),
                n_classes
            );
            Ok(())
        }
        Command::Table { report, axis, out } => {
            let report = EvalReport::from_path(&report)?;
            let axis = match axis {
                AxisArg::Dims => TableAxis::Dims,
                AxisArg::Fraction => TableAxis::Fraction,
            };
            let csv = emit_table(&report, axis)?;
            match &out {
                Some(path) => std::fs::write(path, &csv).map_err(|e| Error::io(path, e)),
                None => print_stdout(&csv),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            let code = match &e {
                Error::Invalid(_) => 2,
                Error::Format(_) | Error::Io { .. } => 3,
                Error::Numeric(_) => 4,
            };
            ExitCode::from(code)
        }
    }
}
