//! L2 normalization and dimensionality reduction.
//!
//! Three reduction kinds share one [`Projection`] type: PCA (fit on a
//! training matrix), random orthogonal projection (fit from a seed), and
//! identity. Applying a projection computes `basis * (x - mean)` per row;
//! PCA is the only kind with a nonzero mean. Fit on the training split
//! only and apply to both splits, so no test information leaks into the
//! transform.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{dot, gram_schmidt_extend};
use crate::{Error, FeatureMatrix, Result};

/// How a [`Projection`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    Pca,
    RandomOrthogonal,
    Identity,
}

impl ProjectionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProjectionKind::Pca => "pca",
            ProjectionKind::RandomOrthogonal => "random-orthogonal",
            ProjectionKind::Identity => "identity",
        }
    }
}

/// A fitted linear reduction: `x -> basis * (x - mean)`.
///
/// `basis` rows are pairwise orthonormal within 1e-10. `mean` is the
/// training-set column mean for PCA and the zero vector otherwise.
/// `explained_variances` is populated by PCA only (one value per kept
/// component, descending); it is a fit-time diagnostic and is not part of
/// the serialized sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub kind: ProjectionKind,
    pub in_dims: usize,
    pub out_dims: usize,
    pub mean: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub explained_variances: Option<Vec<f64>>,
}

const ORTHO_TOL: f64 = 1e-10;

impl Projection {
    /// The identity reduction on `dims` dimensions.
    pub fn identity(dims: usize) -> Result<Projection> {
        if dims == 0 {
            return Err(Error::Invalid("dims must be >= 1".into()));
        }
        let mut basis = vec![vec![0.0; dims]; dims];
        for (i, row) in basis.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Ok(Projection {
            kind: ProjectionKind::Identity,
            in_dims: dims,
            out_dims: dims,
            mean: vec![0.0; dims],
            basis,
            explained_variances: None,
        })
    }

    /// Checks the shape and row-orthonormality invariants.
    pub fn validate(&self) -> Result<()> {
        if self.out_dims == 0 || self.in_dims == 0 {
            return Err(Error::Invalid("projection dims must be >= 1".into()));
        }
        if self.out_dims > self.in_dims {
            return Err(Error::Invalid(format!(
                "out_dims {} exceeds in_dims {}",
                self.out_dims, self.in_dims
            )));
        }
        if self.mean.len() != self.in_dims || self.basis.len() != self.out_dims {
            return Err(Error::Invalid("projection shape mismatch".into()));
        }
        for row in &self.basis {
            if row.len() != self.in_dims {
                return Err(Error::Invalid(
                    "projection basis row length mismatch".into(),
                ));
            }
        }
        for i in 0..self.out_dims {
            for j in i..self.out_dims {
                let expect = if i == j { 1.0 } else { 0.0 };
                let got = dot(&self.basis[i], &self.basis[j]);
                if (got - expect).abs() > ORTHO_TOL {
                    return Err(Error::Numeric(format!(
                        "basis rows {} and {} not orthonormal: dot = {}",
                        i, j, got
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Scales every row to unit Euclidean norm; all-zero rows pass through
/// unchanged.
///
/// # Examples
///
/// ```
/// use embed_eval::{FeatureMatrix, transforms::l2_normalize};
/// let m = FeatureMatrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
/// assert_eq!(l2_normalize(&m).row(0), &[0.6, 0.8]);
/// ```
pub fn l2_normalize(m: &FeatureMatrix) -> FeatureMatrix {
    let mut out = Vec::with_capacity(m.data().len());
    for row in m.iter_rows() {
        // Scale by the max entry first so squaring cannot overflow.
        let maxabs = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if maxabs == 0.0 {
            out.extend_from_slice(row);
            continue;
        }
        let scaled_norm: f64 = row
            .iter()
            .map(|v| (v / maxabs) * (v / maxabs))
            .sum::<f64>()
            .sqrt();
        let denom = maxabs * scaled_norm;
        out.extend(row.iter().map(|v| v / denom));
    }
    FeatureMatrix::from_vec(m.n_rows(), m.n_dims(), out)
        .expect("normalization preserves shape and finiteness")
}

/// Fits a PCA reduction to `out_dims` components on a training matrix.
///
/// Computed by SVD of the mean-centered data. Basis rows are the top
/// principal directions by descending explained variance
/// (singular_value^2 / (n - 1)); each row is sign-fixed so its
/// largest-magnitude entry is positive.
pub fn fit_pca(train: &FeatureMatrix, out_dims: usize) -> Result<Projection> {
    let n = train.n_rows();
    let d = train.n_dims();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "PCA needs at least 2 rows, got {}",
            n
        )));
    }
    if out_dims == 0 {
        return Err(Error::Invalid("out_dims must be >= 1".into()));
    }
    let max_components = d.min(n - 1);
    if out_dims > max_components {
        return Err(Error::Invalid(format!(
            "out_dims {} exceeds min(n_dims, n_rows - 1) = {}",
            out_dims, max_components
        )));
    }

    let mut mean = vec![0.0; d];
    for row in train.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let mut centered = Vec::with_capacity(n * d);
    for row in train.iter_rows() {
        centered.extend(row.iter().zip(&mean).map(|(v, m)| v - m));
    }
    let svd = DMatrix::from_row_slice(n, d, &centered).svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD did not produce right singular vectors".into()))?;

    // Order components by descending singular value explicitly rather than
    // relying on the decomposition's ordering.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("singular values are finite")
            .then(a.cmp(&b))
    });

    let mut basis = Vec::with_capacity(out_dims);
    let mut variances = Vec::with_capacity(out_dims);
    for &ci in order.iter().take(out_dims) {
        let mut row: Vec<f64> = v_t.row(ci).iter().copied().collect();
        // Sign convention: largest-magnitude entry positive (first such
        // index on ties).
        let lead = (0..row.len())
            .max_by(|&a, &b| {
                row[a]
                    .abs()
                    .partial_cmp(&row[b].abs())
                    .unwrap()
                    .then(b.cmp(&a))
            })
            .unwrap();
        if row[lead] < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
        basis.push(row);
        let s = svd.singular_values[ci];
        variances.push(s * s / (n as f64 - 1.0));
    }

    let p = Projection {
        kind: ProjectionKind::Pca,
        in_dims: d,
        out_dims,
        mean,
        basis,
        explained_variances: Some(variances),
    };
    p.validate()?;
    Ok(p)
}

/// Fits a seeded random orthogonal projection.
///
/// Rows are standard-normal draws from a ChaCha8 generator,
/// orthonormalized by modified Gram-Schmidt. Deterministic per seed.
pub fn fit_random_projection(in_dims: usize, out_dims: usize, seed: u64) -> Result<Projection> {
    if in_dims == 0 || out_dims == 0 {
        return Err(Error::Invalid("dims must be >= 1".into()));
    }
    if out_dims > in_dims {
        return Err(Error::Invalid(format!(
            "out_dims {} exceeds in_dims {}",
            out_dims, in_dims
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(out_dims);
    // Dependent draws are astronomically unlikely; the attempt cap turns
    // that impossibility into an error instead of a hang.
    let mut attempts = 0;
    while basis.len() < out_dims {
        attempts += 1;
        if attempts > out_dims + 64 {
            return Err(Error::Numeric(
                "random projection rows were linearly dependent".into(),
            ));
        }
        let cand: Vec<f64> = (0..in_dims).map(|_| normal.sample(&mut rng)).collect();
        basis.extend(gram_schmidt_extend(&basis, &[cand], 1e-8));
    }
    let p = Projection {
        kind: ProjectionKind::RandomOrthogonal,
        in_dims,
        out_dims,
        mean: vec![0.0; in_dims],
        basis,
        explained_variances: None,
    };
    p.validate()?;
    Ok(p)
}

/// Applies a fitted projection to every row: `basis * (row - mean)`.
pub fn apply_projection(p: &Projection, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.n_dims() != p.in_dims {
        return Err(Error::Invalid(format!(
            "matrix has {} dims, projection expects {}",
            m.n_dims(),
            p.in_dims
        )));
    }
    if p.kind == ProjectionKind::Identity {
        // basis = I, mean = 0: the product is exactly the input.
        return Ok(m.clone());
    }
    let mut out = Vec::with_capacity(m.n_rows() * p.out_dims);
    let mut centered = vec![0.0; p.in_dims];
    for row in m.iter_rows() {
        for ((c, v), mu) in centered.iter_mut().zip(row).zip(&p.mean) {
            *c = v - mu;
        }
        for b in &p.basis {
            out.push(dot(b, &centered));
        }
    }
    FeatureMatrix::from_vec(m.n_rows(), p.out_dims, out)
}

const SIDECAR_MAGIC: &[u8; 4] = b"EPJ1";

/// Writes a projection sidecar: magic "EPJ1", then kind tag, in_dims,
/// out_dims (u32 little-endian each), then mean and row-major basis as
/// binary64 little-endian. `explained_variances` is not persisted.
pub fn save_projection(path: &Path, p: &Projection) -> Result<()> {
    p.validate()?;
    let kind_tag: u32 = match p.kind {
        ProjectionKind::Identity => 0,
        ProjectionKind::Pca => 1,
        ProjectionKind::RandomOrthogonal => 2,
    };
    let mut bytes = Vec::new();
    bytes.extend_from_slice(SIDECAR_MAGIC);
    bytes.extend_from_slice(&kind_tag.to_le_bytes());
    bytes.extend_from_slice(&(p.in_dims as u32).to_le_bytes());
    bytes.extend_from_slice(&(p.out_dims as u32).to_le_bytes());
    for v in &p.mean {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for row in &p.basis {
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a projection sidecar written by [`save_projection`] and
/// re-validates its invariants.
pub fn load_projection(path: &Path) -> Result<Projection> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "{}: file is {} bytes, shorter than the 16-byte header",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..4] != SIDECAR_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected \"EPJ1\"",
            path.display(),
            &bytes[0..4]
        )));
    }
    let kind_tag = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let in_dims = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let out_dims = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let kind = match kind_tag {
        0 => ProjectionKind::Identity,
        1 => ProjectionKind::Pca,
        2 => ProjectionKind::RandomOrthogonal,
        other => {
            return Err(Error::Format(format!(
                "{}: unknown projection kind tag {}",
                path.display(),
                other
            )))
        }
    };
    let n_values = in_dims
        .checked_add(
            out_dims
                .checked_mul(in_dims)
                .ok_or_else(|| Error::Format(format!("{}: dims overflow", path.display())))?,
        )
        .ok_or_else(|| Error::Format(format!("{}: dims overflow", path.display())))?;
    let expected = 16 + n_values * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    let mut values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mean: Vec<f64> = values.by_ref().take(in_dims).collect();
    let mut basis = Vec::with_capacity(out_dims);
    for _ in 0..out_dims {
        basis.push(values.by_ref().take(in_dims).collect::<Vec<f64>>());
    }
    for v in mean.iter().chain(basis.iter().flatten()) {
        if !v.is_finite() {
            return Err(Error::Format(format!(
                "{}: non-finite value in projection",
                path.display()
            )));
        }
    }
    let p = Projection {
        kind,
        in_dims,
        out_dims,
        mean,
        basis,
        explained_variances: None,
    };
    p.validate()?;
    Ok(p)
}
