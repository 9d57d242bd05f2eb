//! Desk-scale trainers over pre-extracted feature vectors.
//!
//! Two model families:
//!
//! - [`SoftmaxModel`]: a linear softmax classifier, optionally preceded by
//!   a bottleneck layer that reduces d-dimensional inputs to m dimensions
//!   (`Fcr1`), or a bottleneck plus dropout (`Fcr2`). Evaluation features
//!   are read at the bottleneck output (or the raw input for `Plain`),
//!   always in eval mode.
//! - [`ContrastiveModel`]: a linear embedding trained on labeled pairs
//!   with the margin loss `same ? d^2 : max(0, margin - d)^2`.
//!
//! Optimization is plain mini-batch SGD with momentum. All randomness
//! (init, shuffling, dropout masks, pair sampling, blob synthesis) comes
//! from ChaCha8 generators seeded explicitly, so training is bit-for-bit
//! reproducible. Gradients are analytic; the test suite checks every path
//! against central finite differences.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataio::LabeledDataset;
use crate::linalg::dot;
use crate::metrics::softmax;
use crate::{Error, FeatureMatrix, Result};

pub const DEFAULT_DROPOUT_RATE: f64 = 0.5;
pub const DEFAULT_MARGIN: f64 = 1.0;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_LR_MULTIPLIER: f64 = 10.0;

/// Classifier architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftmaxVariant {
    /// Softmax head directly on the input features.
    Plain,
    /// Bottleneck layer (d -> m) before the head.
    Fcr1,
    /// Bottleneck layer followed by dropout (training time only).
    Fcr2,
}

impl SoftmaxVariant {
    pub fn name(&self) -> &'static str {
        match self {
            SoftmaxVariant::Plain => "plain",
            SoftmaxVariant::Fcr1 => "fcr1",
            SoftmaxVariant::Fcr2 => "fcr2",
        }
    }
}

/// Softmax classifier with an optional bottleneck.
///
/// Shapes: `reduce_w` is m x d and `reduce_b` has length m (both `None`
/// for `Plain`, where m == d); `out_w` is C x m and `out_b` has length C.
/// `dropout_rate` applies only to `Fcr2` in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    pub variant: SoftmaxVariant,
    pub reduce_w: Option<Vec<Vec<f64>>>,
    pub reduce_b: Option<Vec<f64>>,
    pub out_w: Vec<Vec<f64>>,
    pub out_b: Vec<f64>,
    pub dropout_rate: f64,
}

impl SoftmaxModel {
    pub fn in_dims(&self) -> usize {
        match &self.reduce_w {
            Some(a) => a[0].len(),
            None => self.out_w[0].len(),
        }
    }

    pub fn embed_dims(&self) -> usize {
        self.out_w[0].len()
    }

    pub fn n_classes(&self) -> usize {
        self.out_w.len()
    }

    /// Eval-mode class prediction: argmax of the logits (lowest index on
    /// ties).
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        let (_, logits) = forward_extract(self, x, false, 0)?;
        Ok(argmax(&logits))
    }

    /// Eval-mode embeddings for every row: the bottleneck output for FCR
    /// variants, the input itself for `Plain`. Never applies dropout.
    pub fn extract_features(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut out = Vec::with_capacity(m.n_rows() * self.embed_dims());
        for row in m.iter_rows() {
            let (embedding, _) = forward_extract(self, row, false, 0)?;
            out.extend(embedding);
        }
        FeatureMatrix::from_vec(m.n_rows(), self.embed_dims(), out)
    }

    /// The output layer as matrices: `W` (C x m) and `b` (1 x C).
    pub fn output_layer(&self) -> Result<(FeatureMatrix, FeatureMatrix)> {
        let w = FeatureMatrix::from_rows(&self.out_w)?;
        let b = FeatureMatrix::from_vec(1, self.out_b.len(), self.out_b.clone())?;
        Ok((w, b))
    }

    /// Writes `W` as a C x m feature file and `b` as a 1 x C feature file
    /// (binary format, f32 storage), for use by the invariant-shift
    /// constructor.
    pub fn export_output_layer(&self, w_path: &Path, b_path: &Path) -> Result<()> {
        let (w, b) = self.output_layer()?;
        crate::dataio::save_features(w_path, &w, crate::dataio::FeatureFormat::Binary)?;
        crate::dataio::save_features(b_path, &b, crate::dataio::FeatureFormat::Binary)
    }
}

/// Linear pair embedder `f(x) = L x + l` trained with the margin loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveModel {
    /// m x d embedding matrix.
    pub embed_w: Vec<Vec<f64>>,
    /// Length-m bias. The pair loss depends only on embedding
    /// differences, so this bias receives exactly zero gradient; it stays
    /// at its initial value under training.
    pub embed_b: Vec<f64>,
    pub margin: f64,
}

impl ContrastiveModel {
    pub fn in_dims(&self) -> usize {
        self.embed_w[0].len()
    }

    pub fn embed_dims(&self) -> usize {
        self.embed_w.len()
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dims() {
            return Err(Error::Invalid(format!(
                "input length {} does not match model dimensionality {}",
                x.len(),
                self.in_dims()
            )));
        }
        Ok(self
            .embed_w
            .iter()
            .zip(&self.embed_b)
            .map(|(row, b)| dot(row, x) + b)
            .collect())
    }

    /// Embeddings for every row.
    pub fn extract_features(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut out = Vec::with_capacity(m.n_rows() * self.embed_dims());
        for row in m.iter_rows() {
            out.extend(self.embed(row)?);
        }
        FeatureMatrix::from_vec(m.n_rows(), self.embed_dims(), out)
    }
}

/// SGD hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Base step size. Zero is allowed and performs no updates.
    pub learning_rate: f64,
    /// Momentum coefficient in [0, 1).
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Extra factor on the bottleneck layer's learning rate (FCR
    /// variants only): freshly added layers train faster than the
    /// inherited head.
    pub lr_multiplier_new_layers: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: DEFAULT_MOMENTUM,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 50,
            seed: 0,
            lr_multiplier_new_layers: DEFAULT_LR_MULTIPLIER,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::Invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be >= 1".into()));
        }
        if !(self.lr_multiplier_new_layers > 0.0 && self.lr_multiplier_new_layers.is_finite()) {
            return Err(Error::Invalid(format!(
                "lr_multiplier_new_layers must be finite and > 0, got {}",
                self.lr_multiplier_new_layers
            )));
        }
        Ok(())
    }
}

fn scaled_normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let scale = 1.0 / (cols as f64).sqrt();
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(rng);
                    v * scale
                })
                .collect()
        })
        .collect()
}

/// Seeded model initialization: weights from a normal scaled by
/// 1/sqrt(fan_in), biases zero. The bottleneck (if any) is drawn before
/// the output layer, so layer shapes fix the draw order.
pub fn init_model(
    variant: SoftmaxVariant,
    d: usize,
    m: usize,
    c: usize,
    seed: u64,
) -> Result<SoftmaxModel> {
    if d == 0 || m == 0 || c == 0 {
        return Err(Error::Invalid(format!(
            "dimensions must be positive, got d={}, m={}, c={}",
            d, m, c
        )));
    }
    if variant == SoftmaxVariant::Plain && m != d {
        return Err(Error::Invalid(format!(
            "plain variant has no bottleneck: m ({}) must equal d ({})",
            m, d
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (reduce_w, reduce_b) = match variant {
        SoftmaxVariant::Plain => (None, None),
        SoftmaxVariant::Fcr1 | SoftmaxVariant::Fcr2 => (
            Some(scaled_normal_matrix(m, d, &mut rng)),
            Some(vec![0.0; m]),
        ),
    };
    Ok(SoftmaxModel {
        variant,
        reduce_w,
        reduce_b,
        out_w: scaled_normal_matrix(c, m, &mut rng),
        out_b: vec![0.0; c],
        dropout_rate: DEFAULT_DROPOUT_RATE,
    })
}

/// Seeded contrastive model: `L` is m x d scaled-normal, bias zero.
pub fn init_contrastive(d: usize, m: usize, margin: f64, seed: u64) -> Result<ContrastiveModel> {
    if d == 0 || m == 0 {
        return Err(Error::Invalid(format!(
            "dimensions must be positive, got d={}, m={}",
            d, m
        )));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::Invalid(format!(
            "margin must be > 0, got {}",
            margin
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ContrastiveModel {
        embed_w: scaled_normal_matrix(m, d, &mut rng),
        embed_b: vec![0.0; m],
        margin,
    })
}

/// Multiplicative inverted-dropout mask: each entry is 0 with probability
/// `rate`, else `1/(1-rate)`, drawn from the ChaCha8 stream
/// `(seed, stream)`.
fn dropout_mask(rate: f64, len: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let keep_scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn forward_indexed(
    model: &SoftmaxModel,
    x: &[f64],
    train_mode: bool,
    dropout_seed: u64,
    stream: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != model.in_dims() {
        return Err(Error::Invalid(format!(
            "input length {} does not match model dimensionality {}",
            x.len(),
            model.in_dims()
        )));
    }
    let mut embedding: Vec<f64> = match (&model.reduce_w, &model.reduce_b) {
        (Some(a), Some(ab)) => a.iter().zip(ab).map(|(row, b)| dot(row, x) + b).collect(),
        _ => x.to_vec(),
    };
    if train_mode && model.variant == SoftmaxVariant::Fcr2 && model.dropout_rate > 0.0 {
        let mask = dropout_mask(model.dropout_rate, embedding.len(), dropout_seed, stream);
        for (e, s) in embedding.iter_mut().zip(&mask) {
            *e *= s;
        }
    }
    let logits: Vec<f64> = model
        .out_w
        .iter()
        .zip(&model.out_b)
        .map(|(row, b)| dot(row, &embedding) + b)
        .collect();
    Ok((embedding, logits))
}

/// One forward pass: returns the extracted embedding (bottleneck output or
/// raw input) and the logits `W e + b`.
///
/// In train mode an `Fcr2` model applies inverted dropout to the embedding
/// with a mask drawn from `dropout_seed`; the returned embedding is the
/// post-dropout one. Eval mode never drops. `Plain`/`Fcr1` ignore the
/// dropout arguments.
pub fn forward_extract(
    model: &SoftmaxModel,
    x: &[f64],
    train_mode: bool,
    dropout_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    forward_indexed(model, x, train_mode, dropout_seed, 0)
}

/// Parameter gradients for a [`SoftmaxModel`]; shapes mirror the model.
#[derive(Debug, Clone)]
pub struct SoftmaxGrads {
    pub reduce_w: Option<Vec<Vec<f64>>>,
    pub reduce_b: Option<Vec<f64>>,
    pub out_w: Vec<Vec<f64>>,
    pub out_b: Vec<f64>,
}

/// Mean cross-entropy over a batch and its exact analytic gradients.
///
/// In train mode, `Fcr2` dropout masks are fixed by `(dropout_seed,
/// position in batch)`, so repeated calls with the same batch and seed see
/// identical masks (which is what makes finite-difference checking
/// possible).
pub fn softmax_loss_grad(
    model: &SoftmaxModel,
    xs: &[&[f64]],
    targets: &[usize],
    train_mode: bool,
    dropout_seed: u64,
) -> Result<(f64, SoftmaxGrads)> {
    if xs.is_empty() {
        return Err(Error::Invalid("batch must be non-empty".into()));
    }
    if xs.len() != targets.len() {
        return Err(Error::Invalid(format!(
            "{} inputs but {} targets",
            xs.len(),
            targets.len()
        )));
    }
    let c = model.n_classes();
    let m = model.embed_dims();
    let d = model.in_dims();
    for &t in targets {
        if t >= c {
            return Err(Error::Invalid(format!(
                "target class {} out of range {}",
                t, c
            )));
        }
    }

    let has_bottleneck = model.reduce_w.is_some();
    let mut g_reduce_w = if has_bottleneck {
        Some(vec![vec![0.0; d]; m])
    } else {
        None
    };
    let mut g_reduce_b = if has_bottleneck {
        Some(vec![0.0; m])
    } else {
        None
    };
    let mut g_out_w = vec![vec![0.0; m]; c];
    let mut g_out_b = vec![0.0; c];
    let mut loss_sum = 0.0;

    for (i, (&x, &t)) in xs.iter().zip(targets).enumerate() {
        // Recompute the mask the forward pass will use so the backward
        // pass sees the same one.
        let mask =
            if train_mode && model.variant == SoftmaxVariant::Fcr2 && model.dropout_rate > 0.0 {
                Some(dropout_mask(model.dropout_rate, m, dropout_seed, i as u64))
            } else {
                None
            };
        let pre_dropout: Vec<f64> = match (&model.reduce_w, &model.reduce_b) {
            (Some(a), Some(ab)) => a.iter().zip(ab).map(|(row, b)| dot(row, x) + b).collect(),
            _ => x.to_vec(),
        };
        let h: Vec<f64> = match &mask {
            Some(s) => pre_dropout.iter().zip(s).map(|(e, m)| e * m).collect(),
            None => pre_dropout.clone(),
        };
        let logits: Vec<f64> = model
            .out_w
            .iter()
            .zip(&model.out_b)
            .map(|(row, b)| dot(row, &h) + b)
            .collect();
        let p = softmax(&logits);
        loss_sum += crate::metrics::cross_entropy(&p, t);

        // d loss / d logits = p - onehot(t).
        let mut du = p;
        du[t] -= 1.0;
        for (ci, &duc) in du.iter().enumerate() {
            g_out_b[ci] += duc;
            for (mi, &hv) in h.iter().enumerate() {
                g_out_w[ci][mi] += duc * hv;
            }
        }
        if let (Some(gw), Some(gb)) = (g_reduce_w.as_mut(), g_reduce_b.as_mut()) {
            // d loss / d h = W^T du, then back through the dropout scale.
            let mut dh = vec![0.0; m];
            for (ci, &duc) in du.iter().enumerate() {
                for (mi, &wv) in model.out_w[ci].iter().enumerate() {
                    dh[mi] += duc * wv;
                }
            }
            if let Some(s) = &mask {
                for (dv, sv) in dh.iter_mut().zip(s) {
                    *dv *= sv;
                }
            }
            for (mi, &dv) in dh.iter().enumerate() {
                gb[mi] += dv;
                for (di, &xv) in x.iter().enumerate() {
                    gw[mi][di] += dv * xv;
                }
            }
        }
    }

    let scale = 1.0 / xs.len() as f64;
    if let Some(gw) = g_reduce_w.as_mut() {
        for row in gw.iter_mut() {
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
    }
    if let Some(gb) = g_reduce_b.as_mut() {
        for v in gb.iter_mut() {
            *v *= scale;
        }
    }
    for row in g_out_w.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    for v in g_out_b.iter_mut() {
        *v *= scale;
    }

    Ok((
        loss_sum * scale,
        SoftmaxGrads {
            reduce_w: g_reduce_w,
            reduce_b: g_reduce_b,
            out_w: g_out_w,
            out_b: g_out_b,
        },
    ))
}

/// Parameter gradients for a [`ContrastiveModel`].
#[derive(Debug, Clone)]
pub struct ContrastiveGrads {
    pub embed_w: Vec<Vec<f64>>,
    /// Always exactly zero: the loss sees only embedding differences.
    pub embed_b: Vec<f64>,
}

/// Mean margin loss over a pair batch and its analytic gradients.
///
/// Per pair with embedding distance `dist`:
/// same class -> `dist^2`; different -> `max(0, margin - dist)^2`.
/// Dissimilar pairs at `dist >= margin` contribute exactly zero loss and
/// gradient; so does a coincident dissimilar pair (`dist == 0`), where the
/// hinge has no usable direction.
pub fn contrastive_loss_grad(
    model: &ContrastiveModel,
    pairs: &[(&[f64], &[f64], bool)],
) -> Result<(f64, ContrastiveGrads)> {
    if pairs.is_empty() {
        return Err(Error::Invalid("pair batch must be non-empty".into()));
    }
    let m = model.embed_dims();
    let d = model.in_dims();
    let mut g_w = vec![vec![0.0; d]; m];
    let g_b = vec![0.0; m];
    let mut loss_sum = 0.0;

    for &(xa, xb, same) in pairs {
        let ea = model.embed(xa)?;
        let eb = model.embed(xb)?;
        let diff: Vec<f64> = ea.iter().zip(&eb).map(|(a, b)| a - b).collect();
        let dist2: f64 = diff.iter().map(|v| v * v).sum();
        let dist = dist2.sqrt();

        // d loss / d diff, shared factor for both endpoint gradients.
        let ddiff_scale = if same {
            loss_sum += dist2;
            2.0
        } else if dist >= model.margin || dist == 0.0 {
            continue;
        } else {
            let gap = model.margin - dist;
            loss_sum += gap * gap;
            -2.0 * gap / dist
        };
        // d loss / d ea = scale * diff, d loss / d eb = -scale * diff;
        // dL = dea x xa + deb x xb, and the bias terms cancel exactly.
        for (mi, &dv) in diff.iter().enumerate() {
            let g = ddiff_scale * dv;
            for (di, (&av, &bv)) in xa.iter().zip(xb).enumerate() {
                g_w[mi][di] += g * (av - bv);
            }
        }
    }

    let scale = 1.0 / pairs.len() as f64;
    for row in g_w.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok((
        loss_sum * scale,
        ContrastiveGrads {
            embed_w: g_w,
            embed_b: g_b,
        },
    ))
}

/// SplitMix64 finalizer: decorrelates per-step seeds derived from the
/// config seed.
pub(crate) fn mix_seed(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn sgd_update(param: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

fn check_contiguous_classes(data: &LabeledDataset, c: usize) -> Result<()> {
    let classes = data.classes();
    for (i, &cl) in classes.iter().enumerate() {
        if cl != i {
            return Err(Error::Invalid(format!(
                "class ids must be contiguous from 0: expected {}, found {}",
                i, cl
            )));
        }
    }
    if classes.len() > c {
        return Err(Error::Invalid(format!(
            "dataset has {} classes but the model has {} outputs",
            classes.len(),
            c
        )));
    }
    Ok(())
}

/// Mini-batch SGD training of a softmax classifier.
///
/// Rows are shuffled once per epoch by a generator seeded with
/// `config.seed`; the bottleneck layer's learning rate is multiplied by
/// `config.lr_multiplier_new_layers` (FCR variants). Returns the trained
/// model and the per-epoch mean loss. Deterministic for fixed
/// (data, config).
pub fn train_softmax(
    mut model: SoftmaxModel,
    data: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(SoftmaxModel, Vec<f64>)> {
    config.validate()?;
    check_contiguous_classes(data, model.n_classes())?;
    if data.features.n_dims() != model.in_dims() {
        return Err(Error::Invalid(format!(
            "data has {} dims, model expects {}",
            data.features.n_dims(),
            model.in_dims()
        )));
    }

    let n = data.n_rows();
    let lr = config.learning_rate;
    let lr_new = lr * config.lr_multiplier_new_layers;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let has_bottleneck = model.reduce_w.is_some();
    let (m, d, c) = (model.embed_dims(), model.in_dims(), model.n_classes());
    let mut v_reduce_w = if has_bottleneck {
        Some(vec![vec![0.0; d]; m])
    } else {
        None
    };
    let mut v_reduce_b = if has_bottleneck {
        Some(vec![0.0; m])
    } else {
        None
    };
    let mut v_out_w = vec![vec![0.0; m]; c];
    let mut v_out_b = vec![0.0; c];

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut global_step: u64 = 0;
    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| data.features.row(i)).collect();
            let ts: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let step_seed = mix_seed(config.seed, global_step);
            let (loss, grads) = softmax_loss_grad(&model, &xs, &ts, true, step_seed)?;
            epoch_loss += loss * batch.len() as f64;
            global_step += 1;

            if let (Some(aw), Some(ab), Some(gw), Some(gb), Some(vw), Some(vb)) = (
                model.reduce_w.as_mut(),
                model.reduce_b.as_mut(),
                grads.reduce_w.as_ref(),
                grads.reduce_b.as_ref(),
                v_reduce_w.as_mut(),
                v_reduce_b.as_mut(),
            ) {
                for ((prow, grow), vrow) in aw.iter_mut().zip(gw).zip(vw.iter_mut()) {
                    sgd_update(prow, grow, vrow, lr_new, config.momentum);
                }
                sgd_update(ab, gb, vb, lr_new, config.momentum);
            }
            for ((prow, grow), vrow) in model
                .out_w
                .iter_mut()
                .zip(&grads.out_w)
                .zip(v_out_w.iter_mut())
            {
                sgd_update(prow, grow, vrow, lr, config.momentum);
            }
            sgd_update(
                &mut model.out_b,
                &grads.out_b,
                &mut v_out_b,
                lr,
                config.momentum,
            );
        }
        epoch_losses.push(epoch_loss / n as f64);
    }
    Ok((model, epoch_losses))
}

/// Draws a pair batch: half same-class, half different-class (the same
/// half rounds down for odd sizes).
///
/// Positives pick a uniformly random class with at least two members,
/// then two distinct members; negatives pick two distinct classes, then
/// one member of each. Returns `(row_a, row_b, same_class)` index
/// triples. Deterministic per seed.
pub fn contrastive_pair_sampler(
    data: &LabeledDataset,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<(usize, usize, bool)>> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch_size must be >= 1".into()));
    }
    let by_class = data.class_indices();
    let classes: Vec<usize> = by_class.keys().copied().collect();
    let multi: Vec<usize> = classes
        .iter()
        .copied()
        .filter(|c| by_class[c].len() >= 2)
        .collect();
    let n_pos = batch_size / 2;
    let n_neg = batch_size - n_pos;
    if n_pos > 0 && multi.is_empty() {
        return Err(Error::Invalid(
            "no class has >= 2 samples: cannot draw same-class pairs".into(),
        ));
    }
    if n_neg > 0 && classes.len() < 2 {
        return Err(Error::Invalid(
            "fewer than 2 classes: cannot draw different-class pairs".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(batch_size);
    for _ in 0..n_pos {
        let c = multi[rng.random_range(0..multi.len())];
        let members = &by_class[&c];
        let i = rng.random_range(0..members.len());
        let j_raw = rng.random_range(0..members.len() - 1);
        let j = if j_raw >= i { j_raw + 1 } else { j_raw };
        pairs.push((members[i], members[j], true));
    }
    for _ in 0..n_neg {
        let ca = classes[rng.random_range(0..classes.len())];
        let cb_raw = rng.random_range(0..classes.len() - 1);
        let cb = if classes[cb_raw] == ca {
            classes[classes.len() - 1]
        } else {
            classes[cb_raw]
        };
        let a = by_class[&ca][rng.random_range(0..by_class[&ca].len())];
        let b = by_class[&cb][rng.random_range(0..by_class[&cb].len())];
        pairs.push((a, b, false));
    }
    Ok(pairs)
}

/// Mini-batch SGD training of a contrastive embedder.
///
/// Each epoch runs `ceil(n / batch_size)` steps; every step draws a fresh
/// pair batch from [`contrastive_pair_sampler`] with a per-step seed
/// derived from `config.seed`. Returns the trained model and the
/// per-epoch mean loss. Deterministic for fixed (data, config).
pub fn train_contrastive(
    mut model: ContrastiveModel,
    data: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(ContrastiveModel, Vec<f64>)> {
    config.validate()?;
    if data.features.n_dims() != model.in_dims() {
        return Err(Error::Invalid(format!(
            "data has {} dims, model expects {}",
            data.features.n_dims(),
            model.in_dims()
        )));
    }

    let n = data.n_rows();
    let steps_per_epoch = n.div_ceil(config.batch_size).max(1);
    let (m, d) = (model.embed_dims(), model.in_dims());
    let mut v_w = vec![vec![0.0; d]; m];
    let mut v_b = vec![0.0; m];

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut global_step: u64 = 0;
    for _ in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            let step_seed = mix_seed(config.seed, global_step);
            global_step += 1;
            let index_pairs = contrastive_pair_sampler(data, config.batch_size, step_seed)?;
            let pairs: Vec<(&[f64], &[f64], bool)> = index_pairs
                .iter()
                .map(|&(a, b, same)| (data.features.row(a), data.features.row(b), same))
                .collect();
            let (loss, grads) = contrastive_loss_grad(&model, &pairs)?;
            epoch_loss += loss;

            for ((prow, grow), vrow) in model
                .embed_w
                .iter_mut()
                .zip(&grads.embed_w)
                .zip(v_w.iter_mut())
            {
                sgd_update(prow, grow, vrow, config.learning_rate, config.momentum);
            }
            sgd_update(
                &mut model.embed_b,
                &grads.embed_b,
                &mut v_b,
                config.learning_rate,
                config.momentum,
            );
        }
        epoch_losses.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok((model, epoch_losses))
}

/// Synthesizes a labeled dataset of Gaussian class blobs.
///
/// Class centers are standard-normal draws scaled by `separation`;
/// samples add standard-normal noise scaled by `cluster_std`. Rows are
/// grouped by class (class 0 first). Deterministic per seed.
pub fn make_blobs(
    n_classes: usize,
    samples_per_class: usize,
    dims: usize,
    cluster_std: f64,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes == 0 || samples_per_class == 0 || dims == 0 {
        return Err(Error::Invalid(format!(
            "all counts must be positive, got n_classes={}, samples_per_class={}, dims={}",
            n_classes, samples_per_class, dims
        )));
    }
    if !(cluster_std >= 0.0 && cluster_std.is_finite()) || !separation.is_finite() {
        return Err(Error::Invalid(
            "cluster_std must be >= 0 and separation finite".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            (0..dims)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v * separation
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(n_classes * samples_per_class);
    let mut labels = Vec::with_capacity(n_classes * samples_per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..samples_per_class {
            let row: Vec<f64> = center
                .iter()
                .map(|&cv| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    cv + v * cluster_std
                })
                .collect();
            rows.push(row);
            labels.push(c);
        }
    }
    LabeledDataset::new(FeatureMatrix::from_rows(&rows)?, labels, None)
}

/// A serializable trained model.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Softmax(SoftmaxModel),
    Contrastive(ContrastiveModel),
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ECK1";

fn push_matrix(bytes: &mut Vec<u8>, m: &[Vec<f64>]) {
    for row in m {
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn push_vector(bytes: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
}

/// Writes a checkpoint: magic "ECK1", a u32 model tag (0 plain, 1 fcr1,
/// 2 fcr2, 3 contrastive), u32 dims, then the parameters as binary64
/// little-endian in a fixed order.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    match ckpt {
        Checkpoint::Softmax(m) => {
            let tag: u32 = match m.variant {
                SoftmaxVariant::Plain => 0,
                SoftmaxVariant::Fcr1 => 1,
                SoftmaxVariant::Fcr2 => 2,
            };
            bytes.extend_from_slice(&tag.to_le_bytes());
            bytes.extend_from_slice(&(m.in_dims() as u32).to_le_bytes());
            bytes.extend_from_slice(&(m.embed_dims() as u32).to_le_bytes());
            bytes.extend_from_slice(&(m.n_classes() as u32).to_le_bytes());
            bytes.extend_from_slice(&m.dropout_rate.to_le_bytes());
            if let (Some(a), Some(ab)) = (&m.reduce_w, &m.reduce_b) {
                push_matrix(&mut bytes, a);
                push_vector(&mut bytes, ab);
            }
            push_matrix(&mut bytes, &m.out_w);
            push_vector(&mut bytes, &m.out_b);
        }
        Checkpoint::Contrastive(m) => {
            bytes.extend_from_slice(&3u32.to_le_bytes());
            bytes.extend_from_slice(&(m.in_dims() as u32).to_le_bytes());
            bytes.extend_from_slice(&(m.embed_dims() as u32).to_le_bytes());
            bytes.extend_from_slice(&m.margin.to_le_bytes());
            push_matrix(&mut bytes, &m.embed_w);
            push_vector(&mut bytes, &m.embed_b);
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated checkpoint at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format(format!(
                "{}: non-finite parameter value",
                self.path.display()
            )));
        }
        Ok(v)
    }

    fn vector(&mut self, len: usize) -> Result<Vec<f64>> {
        (0..len).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
        (0..rows).map(|_| self.vector(cols)).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after checkpoint payload",
                self.path.display(),
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint file (bad magic or header)",
            path.display()
        )));
    }
    let mut r = ByteReader {
        bytes: &bytes,
        pos: 4,
        path,
    };
    let tag = r.u32()?;
    let ckpt = match tag {
        0 | 1 | 2 => {
            let d = r.u32()? as usize;
            let m = r.u32()? as usize;
            let c = r.u32()? as usize;
            if d == 0 || m == 0 || c == 0 {
                return Err(Error::Format(format!(
                    "{}: zero dimension in checkpoint header",
                    path.display()
                )));
            }
            let dropout_rate = r.f64()?;
            if !(0.0..1.0).contains(&dropout_rate) {
                return Err(Error::Format(format!(
                    "{}: dropout rate {} outside [0, 1)",
                    path.display(),
                    dropout_rate
                )));
            }
            let variant = match tag {
                0 => SoftmaxVariant::Plain,
                1 => SoftmaxVariant::Fcr1,
                _ => SoftmaxVariant::Fcr2,
            };
            if variant == SoftmaxVariant::Plain && m != d {
                return Err(Error::Format(format!(
                    "{}: plain checkpoint with m {} != d {}",
                    path.display(),
                    m,
                    d
                )));
            }
            let (reduce_w, reduce_b) = if variant == SoftmaxVariant::Plain {
                (None, None)
            } else {
                (Some(r.matrix(m, d)?), Some(r.vector(m)?))
            };
            Checkpoint::Softmax(SoftmaxModel {
                variant,
                reduce_w,
                reduce_b,
                out_w: r.matrix(c, m)?,
                out_b: r.vector(c)?,
                dropout_rate,
            })
        }
        3 => {
            let d = r.u32()? as usize;
            let m = r.u32()? as usize;
            if d == 0 || m == 0 {
                return Err(Error::Format(format!(
                    "{}: zero dimension in checkpoint header",
                    path.display()
                )));
            }
            let margin = r.f64()?;
            if !(margin > 0.0) {
                return Err(Error::Format(format!(
                    "{}: margin {} must be > 0",
                    path.display(),
                    margin
                )));
            }
            Checkpoint::Contrastive(ContrastiveModel {
                embed_w: r.matrix(m, d)?,
                embed_b: r.vector(m)?,
                margin,
            })
        }
        other => {
            return Err(Error::Format(format!(
                "{}: unknown model tag {}",
                path.display(),
                other
            )))
        }
    };
    r.finish()?;
    Ok(ckpt)
}
