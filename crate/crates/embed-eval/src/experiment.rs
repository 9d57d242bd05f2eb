//! Experiment runner: a JSON config in, a JSON report out.
//!
//! A config names a data source (feature/label files or a synthetic blob
//! generator), a class-disjoint split, a list of training-set fractions,
//! and a list of methods. Each method optionally trains a model, extracts
//! eval-mode features, fits a reduction on the train split, applies it to
//! the test split, optionally L2-normalizes, and then scores the test
//! features with repeated k-means NMI and Recall@K. Every (method, dims,
//! fraction) combination produces exactly one report cell.
//!
//! The pipeline order is fixed to reduce-then-normalize unless the config
//! sets `normalize_before_reduce`; the report records which order ran.
//! Clustering always runs Euclidean k-means on the final features, except
//! that invariant-shift methods first project the invariant subspace out
//! (which makes Euclidean geometry agree with the metric); retrieval uses
//! the method's configured distance directly.
//!
//! Reports are pure functions of (config, input files) except for the
//! per-cell `wall_clock_seconds` fields.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clustering::{clustering_eval_with, ClusteringEval, NmiVariant};
use crate::dataio::{
    class_disjoint_split, load_features, load_labels, subsample_per_class, FeatureFormat,
    LabeledDataset, SplitSpec,
};
use crate::metrics::{invariant_shift_basis, InvariantShiftMetric, DEFAULT_RANK_TOLERANCE};
use crate::retrieval::{recall_at_k, RetrievalEval, RetrievalMetric};
use crate::training::{
    init_contrastive, init_model, load_checkpoint, mix_seed, train_contrastive, train_softmax,
    Checkpoint, SoftmaxVariant, TrainConfig,
};
use crate::transforms::{apply_projection, fit_pca, fit_random_projection, l2_normalize};
use crate::{Error, FeatureMatrix, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

/// Where the labeled features come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    /// Feature and label files on disk. `format` is "binary" or "csv";
    /// omitted, it is inferred from the feature file extension.
    Files {
        features: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        format: Option<String>,
    },
    /// Synthetic Gaussian class blobs, generated from the config seed.
    Blobs {
        n_classes: usize,
        samples_per_class: usize,
        dims: usize,
        cluster_std: f64,
        separation: f64,
    },
}

/// How classes divide into the train and test sides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitConfig {
    /// First half of the sorted class ids trains, the rest evaluates.
    FirstHalfClasses,
    Explicit {
        train_classes: Vec<usize>,
        test_classes: Vec<usize>,
    },
}

impl SplitConfig {
    fn to_spec(&self) -> SplitSpec {
        match self {
            SplitConfig::FirstHalfClasses => SplitSpec::FirstHalfClasses,
            SplitConfig::Explicit {
                train_classes,
                test_classes,
            } => SplitSpec::Explicit {
                train_classes: train_classes.clone(),
                test_classes: test_classes.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainerKind {
    /// The input features are already the embedding; no training.
    Precomputed,
    /// Softmax classifier on the raw features (extraction is identity).
    SoftmaxPlain,
    /// Softmax with a bottleneck layer; `dims` sets the bottleneck width.
    Fcr1,
    /// Bottleneck plus train-time dropout.
    Fcr2,
    /// Contrastive pair embedder; `dims` sets the embedding width.
    Contrastive,
}

impl TrainerKind {
    pub fn name(&self) -> &'static str {
        match self {
            TrainerKind::Precomputed => "precomputed",
            TrainerKind::SoftmaxPlain => "softmax-plain",
            TrainerKind::Fcr1 => "fcr1",
            TrainerKind::Fcr2 => "fcr2",
            TrainerKind::Contrastive => "contrastive",
        }
    }

    fn is_bottleneck(&self) -> bool {
        matches!(
            self,
            TrainerKind::Fcr1 | TrainerKind::Fcr2 | TrainerKind::Contrastive
        )
    }

    fn softmax_variant(&self) -> Option<SoftmaxVariant> {
        match self {
            TrainerKind::SoftmaxPlain => Some(SoftmaxVariant::Plain),
            TrainerKind::Fcr1 => Some(SoftmaxVariant::Fcr1),
            TrainerKind::Fcr2 => Some(SoftmaxVariant::Fcr2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReductionChoice {
    #[default]
    Identity,
    Pca,
    Random,
}

impl ReductionChoice {
    pub fn name(&self) -> &'static str {
        match self {
            ReductionChoice::Identity => "identity",
            ReductionChoice::Pca => "pca",
            ReductionChoice::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    None,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceChoice {
    #[default]
    Euclidean,
    Cosine,
    InvariantShift,
}

impl DistanceChoice {
    pub fn name(&self) -> &'static str {
        match self {
            DistanceChoice::Euclidean => "euclidean",
            DistanceChoice::Cosine => "cosine",
            DistanceChoice::InvariantShift => "invariant-shift",
        }
    }
}

/// One method row of the comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    /// Report label; derived from the other fields when omitted.
    #[serde(default)]
    pub name: Option<String>,
    pub trainer: TrainerKind,
    #[serde(default)]
    pub reduction: ReductionChoice,
    /// Target dimensionalities: reduction output dims, or the bottleneck
    /// width for trainer methods. Empty means "input dimensionality"
    /// (identity reduction only).
    #[serde(default)]
    pub dims: Vec<usize>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub distance: DistanceChoice,
    /// Softmax model checkpoint supplying W for invariant-shift distance
    /// with the precomputed trainer.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Alternative W source: a C x D feature file.
    #[serde(default)]
    pub w_file: Option<PathBuf>,
    /// Optional bias file paired with `w_file`; checked for shape, not
    /// used by the metric (the invariant subspace does not depend on b).
    #[serde(default)]
    pub b_file: Option<PathBuf>,
}

impl MethodConfig {
    /// The report label: explicit name, or trainer plus the non-default
    /// pipeline stages joined with "+".
    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let mut parts = vec![self.trainer.name().to_string()];
        if self.reduction != ReductionChoice::Identity {
            parts.push(self.reduction.name().to_string());
        }
        if self.normalization == Normalization::L2 {
            parts.push("l2".to_string());
        }
        if self.distance != DistanceChoice::Euclidean {
            parts.push(self.distance.name().to_string());
        }
        parts.join("+")
    }
}

fn default_kmeans_runs() -> usize {
    crate::clustering::DEFAULT_KMEANS_RUNS
}

fn default_recall_ks() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

/// Evaluation knobs shared by every cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    #[serde(default = "default_kmeans_runs")]
    pub kmeans_runs: usize,
    #[serde(default = "default_recall_ks")]
    pub recall_ks: Vec<usize>,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            kmeans_runs: default_kmeans_runs(),
            recall_ks: default_recall_ks(),
        }
    }
}

fn default_learning_rate() -> f64 {
    0.01
}

fn default_momentum() -> f64 {
    crate::training::DEFAULT_MOMENTUM
}

fn default_batch_size() -> usize {
    crate::training::DEFAULT_BATCH_SIZE
}

fn default_epochs() -> usize {
    30
}

fn default_lr_multiplier() -> f64 {
    crate::training::DEFAULT_LR_MULTIPLIER
}

fn default_dropout_rate() -> f64 {
    crate::training::DEFAULT_DROPOUT_RATE
}

fn default_margin() -> f64 {
    crate::training::DEFAULT_MARGIN
}

/// Trainer hyperparameters shared by every trained method.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr_multiplier")]
    pub lr_multiplier_new_layers: f64,
    #[serde(default = "default_dropout_rate")]
    pub dropout_rate: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: default_learning_rate(),
            momentum: default_momentum(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            lr_multiplier_new_layers: default_lr_multiplier(),
            dropout_rate: default_dropout_rate(),
            margin: default_margin(),
        }
    }
}

fn default_fractions() -> Vec<f64> {
    vec![1.0]
}

/// The experiment description: a single versioned JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub data: DataSource,
    pub split: SplitConfig,
    /// Training-set fractions; the test split is never subsampled.
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub evaluation: EvalParams,
    #[serde(default)]
    pub training: TrainParams,
    /// Ablation switch: L2-normalize before fitting/applying the
    /// reduction instead of after it.
    #[serde(default)]
    pub normalize_before_reduce: bool,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("config parse error: {}", e)))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Structural validation; dimensionality checks that need the data
    /// happen inside [`run_experiment`].
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Invalid(format!(
                "version: unsupported config version {} (expected {})",
                self.version, CONFIG_VERSION
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Invalid(
                "methods: at least one method required".into(),
            ));
        }
        if self.fractions.is_empty() {
            return Err(Error::Invalid("fractions: must be non-empty".into()));
        }
        for (i, &f) in self.fractions.iter().enumerate() {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Invalid(format!(
                    "fractions[{}]: must lie in (0, 1], got {}",
                    i, f
                )));
            }
        }
        if self.evaluation.kmeans_runs == 0 {
            return Err(Error::Invalid(
                "evaluation.kmeans_runs: must be >= 1".into(),
            ));
        }
        if self.evaluation.recall_ks.is_empty() {
            return Err(Error::Invalid(
                "evaluation.recall_ks: must be non-empty".into(),
            ));
        }
        for (i, &k) in self.evaluation.recall_ks.iter().enumerate() {
            if k == 0 {
                return Err(Error::Invalid(format!(
                    "evaluation.recall_ks[{}]: K must be >= 1",
                    i
                )));
            }
        }
        let t = &self.training;
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!(
                "training.learning_rate: must be finite and >= 0, got {}",
                t.learning_rate
            )));
        }
        if !(t.momentum >= 0.0 && t.momentum < 1.0) {
            return Err(Error::Invalid(format!(
                "training.momentum: must lie in [0, 1), got {}",
                t.momentum
            )));
        }
        if t.batch_size == 0 {
            return Err(Error::Invalid("training.batch_size: must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&t.dropout_rate) {
            return Err(Error::Invalid(format!(
                "training.dropout_rate: must lie in [0, 1), got {}",
                t.dropout_rate
            )));
        }
        if !(t.margin > 0.0 && t.margin.is_finite()) {
            return Err(Error::Invalid(format!(
                "training.margin: must be > 0, got {}",
                t.margin
            )));
        }
        if !(t.lr_multiplier_new_layers > 0.0 && t.lr_multiplier_new_layers.is_finite()) {
            return Err(Error::Invalid(format!(
                "training.lr_multiplier_new_layers: must be finite and > 0, got {}",
                t.lr_multiplier_new_layers
            )));
        }
        if let DataSource::Blobs {
            n_classes,
            samples_per_class,
            dims,
            cluster_std,
            separation,
        } = &self.data
        {
            if *n_classes == 0 || *samples_per_class == 0 || *dims == 0 {
                return Err(Error::Invalid(
                    "data: blob counts must all be positive".into(),
                ));
            }
            if !(*cluster_std >= 0.0 && cluster_std.is_finite()) || !separation.is_finite() {
                return Err(Error::Invalid(
                    "data: cluster_std must be >= 0 and separation finite".into(),
                ));
            }
        }
        if let SplitConfig::Explicit {
            train_classes,
            test_classes,
        } = &self.split
        {
            if train_classes.is_empty() || test_classes.is_empty() {
                return Err(Error::Invalid(
                    "split: explicit class lists must both be non-empty".into(),
                ));
            }
        }

        for (i, m) in self.methods.iter().enumerate() {
            for (j, &d) in m.dims.iter().enumerate() {
                if d == 0 {
                    return Err(Error::Invalid(format!(
                        "methods[{}].dims[{}]: must be >= 1",
                        i, j
                    )));
                }
            }
            if m.trainer.is_bottleneck() {
                if m.dims.is_empty() {
                    return Err(Error::Invalid(format!(
                        "methods[{}].dims: trainer \"{}\" needs explicit bottleneck \
                         dimensionalities",
                        i,
                        m.trainer.name()
                    )));
                }
                if m.reduction != ReductionChoice::Identity {
                    return Err(Error::Invalid(format!(
                        "methods[{}].reduction: trainer \"{}\" reduces via its bottleneck; \
                         reduction must be \"identity\"",
                        i,
                        m.trainer.name()
                    )));
                }
            }
            if m.checkpoint.is_some() && m.w_file.is_some() {
                return Err(Error::Invalid(format!(
                    "methods[{}]: give either \"checkpoint\" or \"w_file\", not both",
                    i
                )));
            }
            if m.b_file.is_some() && m.w_file.is_none() {
                return Err(Error::Invalid(format!(
                    "methods[{}].b_file: only meaningful alongside \"w_file\"",
                    i
                )));
            }
            if m.distance == DistanceChoice::InvariantShift {
                if m.normalization != Normalization::None {
                    return Err(Error::Invalid(format!(
                        "methods[{}].normalization: distance \"invariant-shift\" requires \
                         \"none\" (normalization breaks shift invariance)",
                        i
                    )));
                }
                if m.reduction != ReductionChoice::Identity {
                    return Err(Error::Invalid(format!(
                        "methods[{}].reduction: distance \"invariant-shift\" requires \
                         \"identity\" (the metric lives in the classifier's input space)",
                        i
                    )));
                }
                match m.trainer {
                    TrainerKind::Contrastive => {
                        return Err(Error::Invalid(format!(
                            "methods[{}].distance: \"invariant-shift\" needs a softmax output \
                             matrix; the contrastive trainer has none",
                            i
                        )));
                    }
                    TrainerKind::Precomputed => {
                        if m.checkpoint.is_none() && m.w_file.is_none() {
                            return Err(Error::Invalid(format!(
                                "methods[{}]: distance \"invariant-shift\" with trainer \
                                 \"precomputed\" requires \"checkpoint\" or \"w_file\"",
                                i
                            )));
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// One evaluated (method, dims, fraction) combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportCell {
    pub method: String,
    pub dims: usize,
    pub fraction: f64,
    /// Rows actually trained on (after subsampling); 0 for precomputed.
    pub train_rows: usize,
    pub clustering: ClusteringEval,
    pub retrieval: RetrievalEval,
    pub wall_clock_seconds: f64,
}

/// Everything a run produces, serializable as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub library_version: String,
    pub nmi_variant: String,
    pub recall_definition: String,
    pub pipeline_order: String,
    pub config: ExperimentConfig,
    pub cells: Vec<ReportCell>,
}

impl EvalReport {
    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Invalid(format!("report serialization error: {}", e)))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report parse error: {}", e)))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

// Seed-derivation tags: one namespace per consumer so cell seeds never
// collide across purposes.
const SEED_SUBSAMPLE: u64 = 1 << 56;
const SEED_INIT: u64 = 2 << 56;
const SEED_TRAIN: u64 = 3 << 56;
const SEED_PROJECTION: u64 = 4 << 56;
const SEED_CLUSTER: u64 = 5 << 56;

fn cell_tag(method_i: usize, dims_i: usize, fraction_i: usize) -> u64 {
    ((method_i as u64) << 32) | ((dims_i as u64) << 16) | (fraction_i as u64)
}

fn load_source(config: &ExperimentConfig) -> Result<LabeledDataset> {
    match &config.data {
        DataSource::Files {
            features,
            labels,
            format,
        } => {
            let fmt = match format.as_deref() {
                None => FeatureFormat::from_path(features),
                Some("binary") => FeatureFormat::Binary,
                Some("csv") => FeatureFormat::Csv,
                Some(other) => {
                    return Err(Error::Invalid(format!(
                        "data.format: expected \"binary\" or \"csv\", got \"{}\"",
                        other
                    )))
                }
            };
            let m = load_features(features, fmt)?;
            let l = load_labels(labels, m.n_rows())?;
            LabeledDataset::new(m, l, None)
        }
        DataSource::Blobs {
            n_classes,
            samples_per_class,
            dims,
            cluster_std,
            separation,
        } => crate::training::make_blobs(
            *n_classes,
            *samples_per_class,
            *dims,
            *cluster_std,
            *separation,
            config.seed,
        ),
    }
}

/// The dims values a method actually evaluates, validated against the
/// input dimensionality.
fn effective_dims(method: &MethodConfig, index: usize, d_in: usize) -> Result<Vec<usize>> {
    if method.dims.is_empty() {
        return Ok(vec![d_in]);
    }
    for (j, &d) in method.dims.iter().enumerate() {
        if d > d_in {
            return Err(Error::Invalid(format!(
                "methods[{}].dims[{}]: {} exceeds input dimensionality {}",
                index, j, d, d_in
            )));
        }
        let identity_fixed =
            method.reduction == ReductionChoice::Identity && !method.trainer.is_bottleneck();
        if identity_fixed && d != d_in {
            return Err(Error::Invalid(format!(
                "methods[{}].dims[{}]: identity reduction keeps {} dims; got {}",
                index, j, d_in, d
            )));
        }
    }
    Ok(method.dims.clone())
}

/// Relabels classes to contiguous 0..C-1 (required by the softmax
/// trainer; class-disjoint test splits keep their original ids).
fn relabel_contiguous(ds: &LabeledDataset) -> Result<(LabeledDataset, usize)> {
    let classes = ds.classes();
    let map: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let labels: Vec<usize> = ds.labels.iter().map(|l| map[l]).collect();
    let relabeled = LabeledDataset::new(ds.features.clone(), labels, Some(ds.ids.clone()))?;
    Ok((relabeled, classes.len()))
}

/// W for the invariant-shift metric of a precomputed method.
fn load_w_matrix(method: &MethodConfig, index: usize) -> Result<FeatureMatrix> {
    if let Some(ckpt_path) = &method.checkpoint {
        match load_checkpoint(ckpt_path)? {
            Checkpoint::Softmax(m) => {
                let (w, _) = m.output_layer()?;
                Ok(w)
            }
            Checkpoint::Contrastive(_) => Err(Error::Invalid(format!(
                "methods[{}].checkpoint: holds a contrastive model; invariant-shift needs a \
                 softmax output matrix",
                index
            ))),
        }
    } else if let Some(w_path) = &method.w_file {
        let w = load_features(w_path, FeatureFormat::from_path(w_path))?;
        if let Some(b_path) = &method.b_file {
            let b = load_features(b_path, FeatureFormat::from_path(b_path))?;
            let entries = b.n_rows() * b.n_dims();
            if (b.n_rows() != 1 && b.n_dims() != 1) || entries != w.n_rows() {
                return Err(Error::Invalid(format!(
                    "methods[{}].b_file: {} bias entries for {} classifier rows",
                    index,
                    entries,
                    w.n_rows()
                )));
            }
        }
        Ok(w)
    } else {
        Err(Error::Invalid(format!(
            "methods[{}]: no W source for invariant-shift distance",
            index
        )))
    }
}

struct CellOutput {
    train_rows: usize,
    clustering: ClusteringEval,
    retrieval: RetrievalEval,
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    config: &ExperimentConfig,
    method: &MethodConfig,
    method_i: usize,
    dims: usize,
    dims_i: usize,
    fraction_i: usize,
    train: &LabeledDataset,
    test: &LabeledDataset,
    k: usize,
) -> Result<CellOutput> {
    let tag = cell_tag(method_i, dims_i, fraction_i);
    let tp = &config.training;

    // Stage 1: train if requested, then extract eval-mode features.
    let mut trained_w: Option<FeatureMatrix> = None;
    let mut train_rows = 0;
    let (mut train_feats, mut test_feats) = match method.trainer {
        TrainerKind::Precomputed => (train.features.clone(), test.features.clone()),
        TrainerKind::SoftmaxPlain | TrainerKind::Fcr1 | TrainerKind::Fcr2 => {
            let variant = method.trainer.softmax_variant().unwrap();
            let d_in = train.features.n_dims();
            let m = if variant == SoftmaxVariant::Plain {
                d_in
            } else {
                dims
            };
            let (relabeled, c_train) = relabel_contiguous(train)?;
            train_rows = relabeled.n_rows();
            let mut model = init_model(
                variant,
                d_in,
                m,
                c_train,
                mix_seed(config.seed, SEED_INIT | tag),
            )?;
            model.dropout_rate = tp.dropout_rate;
            let tc = TrainConfig {
                learning_rate: tp.learning_rate,
                momentum: tp.momentum,
                batch_size: tp.batch_size,
                epochs: tp.epochs,
                seed: mix_seed(config.seed, SEED_TRAIN | tag),
                lr_multiplier_new_layers: tp.lr_multiplier_new_layers,
            };
            let (model, _losses) = train_softmax(model, &relabeled, &tc)?;
            let (w, _) = model.output_layer()?;
            trained_w = Some(w);
            (
                model.extract_features(&train.features)?,
                model.extract_features(&test.features)?,
            )
        }
        TrainerKind::Contrastive => {
            let d_in = train.features.n_dims();
            let (relabeled, _) = relabel_contiguous(train)?;
            train_rows = relabeled.n_rows();
            let model = init_contrastive(
                d_in,
                dims,
                tp.margin,
                mix_seed(config.seed, SEED_INIT | tag),
            )?;
            let tc = TrainConfig {
                learning_rate: tp.learning_rate,
                momentum: tp.momentum,
                batch_size: tp.batch_size,
                epochs: tp.epochs,
                seed: mix_seed(config.seed, SEED_TRAIN | tag),
                lr_multiplier_new_layers: tp.lr_multiplier_new_layers,
            };
            let (model, _losses) = train_contrastive(model, &relabeled, &tc)?;
            (
                model.extract_features(&train.features)?,
                model.extract_features(&test.features)?,
            )
        }
    };

    // Stage 2: reduction fit on train, applied to test; L2 before or
    // after per the config order.
    let l2_wanted = method.normalization == Normalization::L2;
    if config.normalize_before_reduce && l2_wanted {
        train_feats = l2_normalize(&train_feats);
        test_feats = l2_normalize(&test_feats);
    }
    match method.reduction {
        ReductionChoice::Identity => {}
        ReductionChoice::Pca => {
            let p = fit_pca(&train_feats, dims)?;
            test_feats = apply_projection(&p, &test_feats)?;
        }
        ReductionChoice::Random => {
            let p = fit_random_projection(
                train_feats.n_dims(),
                dims,
                mix_seed(config.seed, SEED_PROJECTION | tag),
            )?;
            test_feats = apply_projection(&p, &test_feats)?;
        }
    }
    if !config.normalize_before_reduce && l2_wanted {
        test_feats = l2_normalize(&test_feats);
    }

    // Stage 3: the invariant-shift metric, if configured.
    let inv_metric: Option<InvariantShiftMetric> = match method.distance {
        DistanceChoice::InvariantShift => {
            let w = match trained_w {
                Some(w) => w,
                None => load_w_matrix(method, method_i)?,
            };
            Some(invariant_shift_basis(&w, DEFAULT_RANK_TOLERANCE)?)
        }
        _ => None,
    };

    // Stage 4: clustering on the final features (projected off the
    // invariant subspace when the metric is in play, which makes
    // Euclidean k-means agree with the metric), then retrieval with the
    // configured distance.
    let cluster_feats = match &inv_metric {
        Some(metric) => metric.project_out(&test_feats)?,
        None => test_feats.clone(),
    };
    let clustering = clustering_eval_with(
        &cluster_feats,
        &test.labels,
        k,
        config.evaluation.kmeans_runs,
        mix_seed(config.seed, SEED_CLUSTER | tag),
        NmiVariant::Arithmetic,
    )?;
    let retrieval_metric = match (&method.distance, &inv_metric) {
        (DistanceChoice::Euclidean, _) => RetrievalMetric::Euclidean,
        (DistanceChoice::Cosine, _) => RetrievalMetric::Cosine,
        (DistanceChoice::InvariantShift, Some(metric)) => RetrievalMetric::InvariantShift(metric),
        (DistanceChoice::InvariantShift, None) => unreachable!("metric built above"),
    };
    let retrieval = recall_at_k(
        &test_feats,
        &test.labels,
        &config.evaluation.recall_ks,
        retrieval_metric,
    )?;

    Ok(CellOutput {
        train_rows,
        clustering,
        retrieval,
    })
}

/// Runs the full pipeline: load or synthesize data, split by class, and
/// evaluate every (method, dims, fraction) cell. Deterministic per
/// (config, input files) except the wall-clock fields.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport> {
    config.validate()?;
    let data = load_source(config)?;
    let d_in = data.features.n_dims();
    let (train_all, test) = class_disjoint_split(&data, &config.split.to_spec())?;
    let k = test.classes().len();

    let mut cells = Vec::new();
    for (mi, method) in config.methods.iter().enumerate() {
        let dims_list = effective_dims(method, mi, d_in)?;
        for (di, &dims) in dims_list.iter().enumerate() {
            for (fi, &fraction) in config.fractions.iter().enumerate() {
                let started = Instant::now();
                // The subsample depends only on the fraction, so every
                // method trains on the same reduced set.
                let train = subsample_per_class(
                    &train_all,
                    fraction,
                    mix_seed(config.seed, SEED_SUBSAMPLE | fi as u64),
                )?;
                let out = run_cell(config, method, mi, dims, di, fi, &train, &test, k)?;
                cells.push(ReportCell {
                    method: method.label(),
                    dims,
                    fraction,
                    train_rows: out.train_rows,
                    clustering: out.clustering,
                    retrieval: out.retrieval,
                    wall_clock_seconds: started.elapsed().as_secs_f64(),
                });
            }
        }
    }

    Ok(EvalReport {
        version: REPORT_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        nmi_variant: NmiVariant::Arithmetic.name().to_string(),
        recall_definition:
            "fraction of queries with a same-class neighbor among the K nearest, self excluded"
                .to_string(),
        pipeline_order: if config.normalize_before_reduce {
            "normalize-then-reduce"
        } else {
            "reduce-then-normalize"
        }
        .to_string(),
        config: config.clone(),
        cells,
    })
}

/// Standalone training description for the `train` subcommand: the whole
/// dataset trains one model (no split, no evaluation).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub version: u32,
    pub seed: u64,
    pub data: DataSource,
    pub trainer: TrainerKind,
    /// Bottleneck/embedding width; required for fcr1/fcr2/contrastive,
    /// ignored by softmax-plain.
    #[serde(default)]
    pub dims: Option<usize>,
    #[serde(default)]
    pub training: TrainParams,
}

impl TrainRunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("config parse error: {}", e)))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Invalid(format!(
                "version: unsupported config version {} (expected {})",
                self.version, CONFIG_VERSION
            )));
        }
        if self.trainer == TrainerKind::Precomputed {
            return Err(Error::Invalid(
                "trainer: \"precomputed\" has nothing to train".into(),
            ));
        }
        if self.trainer.is_bottleneck() && self.dims.is_none() {
            return Err(Error::Invalid(format!(
                "dims: trainer \"{}\" needs an explicit width",
                self.trainer.name()
            )));
        }
        if let Some(0) = self.dims {
            return Err(Error::Invalid("dims: must be >= 1".into()));
        }
        Ok(())
    }
}

/// Trains one model on the full dataset of a [`TrainRunConfig`]. Returns
/// the checkpoint and the per-epoch loss trace.
pub fn run_training(config: &TrainRunConfig) -> Result<(Checkpoint, Vec<f64>)> {
    config.validate()?;
    let shim = ExperimentConfig {
        version: CONFIG_VERSION,
        seed: config.seed,
        data: config.data.clone(),
        split: SplitConfig::FirstHalfClasses,
        fractions: default_fractions(),
        methods: vec![],
        evaluation: EvalParams::default(),
        training: config.training.clone(),
        normalize_before_reduce: false,
    };
    let data = load_source(&shim)?;
    let d_in = data.features.n_dims();
    let (relabeled, c) = relabel_contiguous(&data)?;
    let tp = &config.training;
    let tc = TrainConfig {
        learning_rate: tp.learning_rate,
        momentum: tp.momentum,
        batch_size: tp.batch_size,
        epochs: tp.epochs,
        seed: mix_seed(config.seed, SEED_TRAIN),
        lr_multiplier_new_layers: tp.lr_multiplier_new_layers,
    };
    match config.trainer {
        TrainerKind::Precomputed => unreachable!("rejected by validate"),
        TrainerKind::Contrastive => {
            let model = init_contrastive(
                d_in,
                config.dims.unwrap(),
                tp.margin,
                mix_seed(config.seed, SEED_INIT),
            )?;
            let (model, losses) = train_contrastive(model, &relabeled, &tc)?;
            Ok((Checkpoint::Contrastive(model), losses))
        }
        _ => {
            let variant = config.trainer.softmax_variant().unwrap();
            let m = if variant == SoftmaxVariant::Plain {
                d_in
            } else {
                config.dims.unwrap()
            };
            let mut model = init_model(variant, d_in, m, c, mix_seed(config.seed, SEED_INIT))?;
            model.dropout_rate = tp.dropout_rate;
            let (model, losses) = train_softmax(model, &relabeled, &tc)?;
            Ok((Checkpoint::Softmax(model), losses))
        }
    }
}

/// Which report column the table rows march along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableAxis {
    Dims,
    Fraction,
}

impl TableAxis {
    pub fn name(&self) -> &'static str {
        match self {
            TableAxis::Dims => "dims",
            TableAxis::Fraction => "fraction",
        }
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Flattens a report into plot-ready CSV: one row per cell with columns
/// method, dims, fraction, NMI mean/std, and each Recall@K, sorted by
/// method, then the chosen axis ascending, then the other axis. Metric
/// values are formatted with 4 decimal places.
pub fn emit_table(report: &EvalReport, axis: TableAxis) -> Result<String> {
    if report.cells.is_empty() {
        return Err(Error::Invalid("report contains no cells".into()));
    }
    let ks = &report.cells[0].retrieval.ks;
    for cell in &report.cells {
        if &cell.retrieval.ks != ks {
            return Err(Error::Invalid(
                "report cells disagree on evaluated K values".into(),
            ));
        }
    }

    let mut order: Vec<usize> = (0..report.cells.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&report.cells[a], &report.cells[b]);
        let primary = ca.method.cmp(&cb.method);
        let (axis_cmp, other_cmp) = match axis {
            TableAxis::Dims => (
                ca.dims.cmp(&cb.dims),
                ca.fraction.partial_cmp(&cb.fraction).unwrap(),
            ),
            TableAxis::Fraction => (
                ca.fraction.partial_cmp(&cb.fraction).unwrap(),
                ca.dims.cmp(&cb.dims),
            ),
        };
        primary.then(axis_cmp).then(other_cmp)
    });

    let mut out = String::from("method,dims,fraction,nmi_mean,nmi_std");
    for k in ks {
        out.push_str(&format!(",recall@{}", k));
    }
    out.push('\n');
    for &i in &order {
        let cell = &report.cells[i];
        out.push_str(&format!(
            "{},{},{},{:.4},{:.4}",
            csv_escape(&cell.method),
            cell.dims,
            cell.fraction,
            cell.clustering.nmi_mean,
            cell.clustering.nmi_std
        ));
        for r in &cell.retrieval.recall_at {
            out.push_str(&format!(",{:.4}", r));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_config(methods: Vec<MethodConfig>) -> ExperimentConfig {
        ExperimentConfig {
            version: 1,
            seed: 7,
            data: DataSource::Blobs {
                n_classes: 8,
                samples_per_class: 10,
                dims: 6,
                cluster_std: 0.5,
                separation: 10.0,
            },
            split: SplitConfig::FirstHalfClasses,
            fractions: vec![1.0],
            methods,
            evaluation: EvalParams {
                kmeans_runs: 5,
                recall_ks: vec![1, 2],
            },
            training: TrainParams {
                epochs: 10,
                ..TrainParams::default()
            },
            normalize_before_reduce: false,
        }
    }

    fn precomputed_method() -> MethodConfig {
        MethodConfig {
            name: None,
            trainer: TrainerKind::Precomputed,
            reduction: ReductionChoice::Identity,
            dims: vec![],
            normalization: Normalization::L2,
            distance: DistanceChoice::Euclidean,
            checkpoint: None,
            w_file: None,
            b_file: None,
        }
    }

    #[test]
    fn minimal_json_config_fills_defaults() {
        let text = r#"{
            "version": 1,
            "seed": 3,
            "data": {"source": "blobs", "n_classes": 4, "samples_per_class": 5,
                     "dims": 3, "cluster_std": 1.0, "separation": 5.0},
            "split": {"kind": "first-half-classes"},
            "methods": [{"trainer": "precomputed"}]
        }"#;
        let config = ExperimentConfig::from_json_str(text).unwrap();
        assert_eq!(config.fractions, vec![1.0]);
        assert_eq!(config.evaluation.kmeans_runs, 100);
        assert_eq!(config.evaluation.recall_ks, vec![1, 2, 4, 8]);
        assert_eq!(config.training.batch_size, 128);
        assert_eq!(config.methods[0].reduction, ReductionChoice::Identity);
        assert_eq!(config.methods[0].distance, DistanceChoice::Euclidean);
        config.validate().unwrap();
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let text = r#"{
            "version": 1, "seed": 3,
            "data": {"source": "blobs", "n_classes": 4, "samples_per_class": 5,
                     "dims": 3, "cluster_std": 1.0, "separation": 5.0},
            "split": {"kind": "first-half-classes"},
            "methods": [{"trainer": "precomputed"}],
            "metods": []
        }"#;
        assert!(ExperimentConfig::from_json_str(text).is_err());
    }

    #[test]
    fn validation_errors_carry_field_paths() {
        let mut config = blob_config(vec![precomputed_method()]);
        config.version = 2;
        assert!(config
            .validate()
            .unwrap_err()
            .to_string()
            .contains("version"));

        let mut config = blob_config(vec![]);
        config.methods = vec![];
        assert!(config
            .validate()
            .unwrap_err()
            .to_string()
            .contains("methods"));

        let mut config = blob_config(vec![precomputed_method()]);
        config.fractions = vec![0.5, 1.5];
        assert!(config
            .validate()
            .unwrap_err()
            .to_string()
            .contains("fractions[1]"));

        let mut method = precomputed_method();
        method.distance = DistanceChoice::InvariantShift;
        method.w_file = Some(PathBuf::from("w.emb1"));
        let config = blob_config(vec![method]);
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("methods[0].normalization"), "{err}");

        let mut method = precomputed_method();
        method.normalization = Normalization::None;
        method.distance = DistanceChoice::InvariantShift;
        let config = blob_config(vec![method]);
        let err = config.validate().unwrap_err().to_string();
        assert!(
            err.contains("checkpoint") && err.contains("w_file"),
            "{err}"
        );

        let mut method = precomputed_method();
        method.trainer = TrainerKind::Contrastive;
        method.dims = vec![4];
        method.normalization = Normalization::None;
        method.distance = DistanceChoice::InvariantShift;
        let config = blob_config(vec![method]);
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("methods[0].distance"), "{err}");

        let mut method = precomputed_method();
        method.trainer = TrainerKind::Fcr1;
        let config = blob_config(vec![method]);
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("methods[0].dims"), "{err}");

        let mut method = precomputed_method();
        method.trainer = TrainerKind::Fcr1;
        method.dims = vec![4];
        method.reduction = ReductionChoice::Pca;
        let config = blob_config(vec![method]);
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("methods[0].reduction"), "{err}");
    }

    #[test]
    fn separable_precomputed_run_is_perfect() {
        let config = blob_config(vec![precomputed_method()]);
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.cells.len(), 1);
        let cell = &report.cells[0];
        assert_eq!(cell.method, "precomputed+l2");
        assert_eq!(cell.dims, 6);
        assert_eq!(cell.train_rows, 0);
        assert_eq!(cell.clustering.k, 4);
        assert_eq!(cell.clustering.nmi_mean, 1.0);
        assert_eq!(cell.retrieval.recall_at[0], 1.0);
        assert_eq!(report.nmi_variant, "arithmetic");
        assert_eq!(report.pipeline_order, "reduce-then-normalize");
    }

    #[test]
    fn fractions_produce_one_cell_each_and_keep_every_class() {
        let mut config = blob_config(vec![precomputed_method(), {
            let mut m = precomputed_method();
            m.name = Some("plain-euclid".into());
            m.normalization = Normalization::None;
            m
        }]);
        config.data = DataSource::Blobs {
            n_classes: 8,
            samples_per_class: 20,
            dims: 6,
            cluster_std: 0.5,
            separation: 10.0,
        };
        config.fractions = vec![0.05, 1.0];
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.cells.len(), 4);
        for method in ["precomputed+l2", "plain-euclid"] {
            let fracs: Vec<f64> = report
                .cells
                .iter()
                .filter(|c| c.method == method)
                .map(|c| c.fraction)
                .collect();
            assert_eq!(fracs, vec![0.05, 1.0]);
        }
    }

    #[test]
    fn trained_cells_report_subsampled_row_counts() {
        let mut method = precomputed_method();
        method.trainer = TrainerKind::Fcr1;
        method.dims = vec![3];
        method.normalization = Normalization::L2;
        let mut config = blob_config(vec![method]);
        config.data = DataSource::Blobs {
            n_classes: 8,
            samples_per_class: 20,
            dims: 6,
            cluster_std: 0.5,
            separation: 10.0,
        };
        config.fractions = vec![0.05, 1.0];
        config.training.epochs = 3;
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.cells.len(), 2);
        // 4 train classes x 20 samples: 5% keeps round(1.0) = 1 per class.
        assert_eq!(report.cells[0].train_rows, 4);
        assert_eq!(report.cells[1].train_rows, 80);
        assert_eq!(report.cells[0].dims, 3);
    }

    #[test]
    fn trained_softmax_invariant_shift_runs_end_to_end() {
        let mut method = precomputed_method();
        method.trainer = TrainerKind::SoftmaxPlain;
        method.dims = vec![];
        method.normalization = Normalization::None;
        method.distance = DistanceChoice::InvariantShift;
        let config = blob_config(vec![method]);
        let report = run_experiment(&config).unwrap();
        let cell = &report.cells[0];
        assert_eq!(cell.method, "softmax-plain+invariant-shift");
        assert_eq!(cell.retrieval.metric, "invariant-shift");
        assert_eq!(cell.dims, 6);
        assert!(cell.train_rows > 0);
    }

    #[test]
    fn identity_dims_mismatch_is_rejected() {
        let mut method = precomputed_method();
        method.dims = vec![4];
        let config = blob_config(vec![method]);
        let err = run_experiment(&config).unwrap_err().to_string();
        assert!(err.contains("methods[0].dims[0]"), "{err}");
    }

    #[test]
    fn oversized_dims_are_rejected() {
        let mut method = precomputed_method();
        method.reduction = ReductionChoice::Pca;
        method.dims = vec![7];
        let config = blob_config(vec![method]);
        let err = run_experiment(&config).unwrap_err().to_string();
        assert!(err.contains("exceeds input dimensionality"), "{err}");
    }

    #[test]
    fn reports_round_trip_through_json() {
        let config = blob_config(vec![precomputed_method()]);
        let report = run_experiment(&config).unwrap();
        let text = report.to_json_string().unwrap();
        let back = EvalReport::from_json_str(&text).unwrap();
        assert_eq!(back.cells.len(), report.cells.len());
        assert_eq!(
            back.cells[0].clustering.nmi_mean,
            report.cells[0].clustering.nmi_mean
        );
        assert_eq!(
            back.cells[0].retrieval.recall_at,
            report.cells[0].retrieval.recall_at
        );
    }

    #[test]
    fn runs_are_deterministic_up_to_wall_clock() {
        let mut method = precomputed_method();
        method.reduction = ReductionChoice::Random;
        method.dims = vec![3];
        let config = blob_config(vec![method, precomputed_method()]);
        let mut a = run_experiment(&config).unwrap();
        let mut b = run_experiment(&config).unwrap();
        for cell in a.cells.iter_mut().chain(b.cells.iter_mut()) {
            cell.wall_clock_seconds = 0.0;
        }
        assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
    }

    #[test]
    fn table_sorts_by_method_then_axis() {
        let mut pca = precomputed_method();
        pca.reduction = ReductionChoice::Pca;
        pca.dims = vec![4, 2];
        let config = blob_config(vec![pca]);
        let report = run_experiment(&config).unwrap();
        let csv = emit_table(&report, TableAxis::Dims).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "method,dims,fraction,nmi_mean,nmi_std,recall@1,recall@2"
        );
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("precomputed+pca+l2,2,1,"));
        assert!(lines[2].starts_with("precomputed+pca+l2,4,1,"));
        // 4-decimal formatting contract.
        let first_nmi = lines[1].split(',').nth(3).unwrap();
        assert_eq!(
            first_nmi,
            format!("{:.4}", report.cells[1].clustering.nmi_mean)
        );
    }

    #[test]
    fn empty_report_cannot_be_tabled() {
        let config = blob_config(vec![precomputed_method()]);
        let mut report = run_experiment(&config).unwrap();
        report.cells.clear();
        assert!(emit_table(&report, TableAxis::Fraction).is_err());
    }

    #[test]
    fn standalone_training_produces_a_checkpoint() {
        let config = TrainRunConfig {
            version: 1,
            seed: 11,
            data: DataSource::Blobs {
                n_classes: 4,
                samples_per_class: 8,
                dims: 5,
                cluster_std: 0.5,
                separation: 8.0,
            },
            trainer: TrainerKind::Fcr1,
            dims: Some(3),
            training: TrainParams {
                epochs: 4,
                ..TrainParams::default()
            },
        };
        let (ckpt, losses) = run_training(&config).unwrap();
        assert_eq!(losses.len(), 4);
        match ckpt {
            Checkpoint::Softmax(m) => {
                assert_eq!(m.embed_dims(), 3);
                assert_eq!(m.n_classes(), 4);
            }
            _ => panic!("expected a softmax checkpoint"),
        }

        let mut bad = config.clone();
        bad.trainer = TrainerKind::Precomputed;
        assert!(bad.validate().is_err());
        let mut bad = config.clone();
        bad.dims = None;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn method_labels_compose_from_stages() {
        let mut m = precomputed_method();
        assert_eq!(m.label(), "precomputed+l2");
        m.normalization = Normalization::None;
        assert_eq!(m.label(), "precomputed");
        m.reduction = ReductionChoice::Pca;
        m.distance = DistanceChoice::Cosine;
        assert_eq!(m.label(), "precomputed+pca+cosine");
        m.name = Some("Table 2 row".into());
        assert_eq!(m.label(), "Table 2 row");
    }
}
