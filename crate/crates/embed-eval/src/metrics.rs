//! Softmax/cross-entropy primitives and distance functions, including a
//! distance that ignores feature shifts a softmax head cannot see.
//!
//! A linear classifier head `softmax(Wx + b)` maps many different feature
//! vectors to the same probability vector: adding any displacement `s` with
//! `W s` proportional to the all-ones vector leaves the softmax output
//! unchanged (a constant added to every logit cancels). Those displacements
//! form a subspace S spanned by `pinv_dir = W^T (W W^T)^{-1} 1` together
//! with the null space of `W`. [`invariant_shift_basis`] computes an
//! orthonormal basis of S, and [`invariant_distance`] measures
//!
//! ```text
//! d(x1, x2) = min over s in S of || (x1 - x2) - s ||
//! ```
//!
//! which is the Euclidean distance after projecting the difference off S.
//! The bias `b` plays no role: it cancels between the two logit vectors, so
//! the metric stores only `W`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{dot, gram_schmidt_extend, norm};
use crate::{Error, FeatureMatrix, Result};

/// Converts logits to probabilities: `p_c = exp(u_c) / sum_i exp(u_i)`.
///
/// Uses max-subtraction, so any finite logits are safe. The output sums to
/// 1 within 1e-12 and is invariant to adding a constant to every logit.
///
/// # Panics
///
/// Panics on an empty slice or non-finite entries.
pub fn softmax(u: &[f64]) -> Vec<f64> {
    assert!(!u.is_empty(), "softmax of an empty logit vector");
    assert!(
        u.iter().all(|v| v.is_finite()),
        "softmax requires finite logits"
    );
    let max = u.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = u.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of a probability vector against a one-hot target:
/// `-ln p[target]`. Returns +inf when `p[target]` is 0 (which cannot happen
/// for softmax outputs of finite logits).
///
/// # Panics
///
/// Panics if `target` is out of range.
pub fn cross_entropy(p: &[f64], target: usize) -> f64 {
    assert!(
        target < p.len(),
        "target class {} out of range {}",
        target,
        p.len()
    );
    let pt = p[target];
    if pt <= 0.0 {
        f64::INFINITY
    } else {
        -pt.ln()
    }
}

/// Distance definitions for [`pairwise_distances`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    Euclidean,
    /// `1 - cos(a, b)`; undefined for zero rows.
    Cosine,
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cosine distance of two pre-normalized (unit) vectors, computed as
/// `||a - b||^2 / 2 == 1 - a.b`. This form is exactly zero for identical
/// rows and never negative.
pub(crate) fn cosine_prenormalized(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 2.0
}

pub(crate) fn normalize_rows_for_cosine(m: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    m.iter_rows()
        .enumerate()
        .map(|(i, row)| {
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::Invalid(format!(
                    "cosine distance undefined for all-zero row {}",
                    i
                )));
            }
            Ok(row.iter().map(|v| v / n).collect())
        })
        .collect()
}

/// All pairwise distances between rows: an `n x n` symmetric matrix with a
/// zero diagonal.
pub fn pairwise_distances(m: &FeatureMatrix, metric: DistanceKind) -> Result<FeatureMatrix> {
    let n = m.n_rows();
    let mut out = vec![0.0; n * n];
    match metric {
        DistanceKind::Euclidean => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = euclidean(m.row(i), m.row(j));
                    out[i * n + j] = d;
                    out[j * n + i] = d;
                }
            }
        }
        DistanceKind::Cosine => {
            let unit = normalize_rows_for_cosine(m)?;
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = cosine_prenormalized(&unit[i], &unit[j]);
                    out[i * n + j] = d;
                    out[j * n + i] = d;
                }
            }
        }
    }
    FeatureMatrix::from_vec(n, n, out)
}

/// Default relative rank tolerance: singular values below
/// `1e-10 * sigma_max` count as zero.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

/// Orthonormal basis of the subspace of feature shifts invisible to a
/// softmax head with output matrix `W`, plus the ingredients it was built
/// from. Immutable after construction; see [`invariant_shift_basis`].
#[derive(Debug, Clone)]
pub struct InvariantShiftMetric {
    w: FeatureMatrix,
    pinv_dir: Vec<f64>,
    null_basis: Vec<Vec<f64>>,
    s_basis: Vec<Vec<f64>>,
    rank_tolerance: f64,
}

impl InvariantShiftMetric {
    /// The classifier output matrix (C x D).
    pub fn w(&self) -> &FeatureMatrix {
        &self.w
    }

    /// `W^T (W W^T)^{-1} 1`: the direction along which every logit rises
    /// by the same amount. Not normalized.
    pub fn pinv_dir(&self) -> &[f64] {
        &self.pinv_dir
    }

    /// Orthonormal basis of null(W), length D - rank(W).
    pub fn null_basis(&self) -> &[Vec<f64>] {
        &self.null_basis
    }

    /// Orthonormal basis of the full invariant subspace
    /// S = span{pinv_dir} + null(W), length D - C + 1 for full-row-rank W.
    pub fn s_basis(&self) -> &[Vec<f64>] {
        &self.s_basis
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    pub fn n_classes(&self) -> usize {
        self.w.n_rows()
    }

    pub fn n_dims(&self) -> usize {
        self.w.n_dims()
    }

    /// `W x` (no bias; the bias is irrelevant to the metric).
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_dims(), "feature length mismatch");
        self.w.iter_rows().map(|row| dot(row, x)).collect()
    }

    /// Distance between two features modulo invariant shifts: the norm of
    /// their difference projected off S. A pseudometric: symmetric, obeys
    /// the triangle inequality, and is zero for distinct features whose
    /// softmax outputs coincide.
    pub fn distance(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        let d = self.n_dims();
        if x1.len() != d || x2.len() != d {
            return Err(Error::Invalid(format!(
                "feature lengths {} and {} do not match metric dimensionality {}",
                x1.len(),
                x2.len(),
                d
            )));
        }
        let mut delta: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| a - b).collect();
        for b in &self.s_basis {
            let c = dot(b, &delta);
            for (dv, bv) in delta.iter_mut().zip(b) {
                *dv -= c * bv;
            }
        }
        Ok(norm(&delta))
    }

    /// Removes the invariant components from every row: `x - S S^T x`.
    ///
    /// Euclidean geometry on the result is the invariant-shift geometry of
    /// the originals, so downstream clustering/retrieval can stay
    /// Euclidean.
    pub fn project_out(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.n_dims() != self.n_dims() {
            return Err(Error::Invalid(format!(
                "matrix has {} dims, metric expects {}",
                m.n_dims(),
                self.n_dims()
            )));
        }
        let mut out = Vec::with_capacity(m.data().len());
        for row in m.iter_rows() {
            let mut x = row.to_vec();
            for b in &self.s_basis {
                let c = dot(b, &x);
                for (xv, bv) in x.iter_mut().zip(b) {
                    *xv -= c * bv;
                }
            }
            out.extend_from_slice(&x);
        }
        FeatureMatrix::from_vec(m.n_rows(), m.n_dims(), out)
    }

    /// Checks the construction invariants: S_basis orthonormal within
    /// 1e-10, and `W b` a scalar multiple of the all-ones vector within
    /// 1e-8 relative, for every basis vector b.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.s_basis.len() {
            for j in i..self.s_basis.len() {
                let expect = if i == j { 1.0 } else { 0.0 };
                let got = dot(&self.s_basis[i], &self.s_basis[j]);
                if (got - expect).abs() > 1e-10 {
                    return Err(Error::Numeric(format!(
                        "S basis vectors {} and {} not orthonormal: dot = {}",
                        i, j, got
                    )));
                }
            }
        }
        for (i, b) in self.s_basis.iter().enumerate() {
            let y = self.logits(b);
            let alpha = y.iter().sum::<f64>() / y.len() as f64;
            let dev = y.iter().fold(0.0f64, |a, v| a.max((v - alpha).abs()));
            let scale = y.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            if dev > 1e-8 * scale {
                return Err(Error::Numeric(format!(
                    "W * s_basis[{}] deviates from a constant vector by {} (scale {})",
                    i, dev, scale
                )));
            }
        }
        Ok(())
    }
}

/// Builds the invariant-shift metric for an output matrix `W` (C x D).
///
/// Requires D > C (otherwise the subspace degenerates) and full row rank:
/// singular values below `rank_tolerance * sigma_max` count as zero.
/// The null space is completed from the right singular directions by
/// pivoted Gram-Schmidt, so the basis is deterministic for a given `W`.
pub fn invariant_shift_basis(
    w: &FeatureMatrix,
    rank_tolerance: f64,
) -> Result<InvariantShiftMetric> {
    let c = w.n_rows();
    let d = w.n_dims();
    if d <= c {
        return Err(Error::Invalid(format!(
            "W is {} x {}: invariant subspace degenerates to null space / empty \
             (need feature dimensionality D > class count C)",
            c, d
        )));
    }
    if !(rank_tolerance > 0.0 && rank_tolerance < 1.0) {
        return Err(Error::Invalid(format!(
            "rank_tolerance must lie in (0, 1), got {}",
            rank_tolerance
        )));
    }

    let wm = DMatrix::from_row_slice(c, d, w.data());
    let svd = wm.svd(true, true);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::Numeric("SVD did not produce left singular vectors".into()))?;
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Numeric("SVD did not produce right singular vectors".into()))?;
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let threshold = rank_tolerance * sigma_max;
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s >= threshold && s > 0.0)
        .count();
    if rank < c {
        return Err(Error::Numeric(format!(
            "W is rank-deficient: computed rank {} for {} rows \
             (singular values below {:e} count as zero)",
            rank, c, threshold
        )));
    }

    // pinv_dir = W^T (W W^T)^{-1} 1 through the SVD: V . diag(1/sigma) . U^T . 1.
    let ones = DVector::from_element(c, 1.0);
    let ut1 = u.transpose() * ones;
    let scaled = DVector::from_iterator(c, (0..c).map(|i| ut1[i] / svd.singular_values[i]));
    let pinv = v_t.transpose() * scaled;
    let pinv_dir: Vec<f64> = pinv.iter().copied().collect();

    // Row space of W = the C retained right singular directions.
    let row_basis: Vec<Vec<f64>> = (0..c)
        .map(|i| v_t.row(i).iter().copied().collect())
        .collect();

    // Complete to all of R^D with standard basis vectors, best-conditioned
    // candidates first, to get null(W).
    let mut order: Vec<(f64, usize)> = (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            for b in &row_basis {
                let coef = b[i]; // dot(b, e_i)
                for (ev, bv) in e.iter_mut().zip(b) {
                    *ev -= coef * bv;
                }
            }
            (norm(&e), i)
        })
        .collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let candidates: Vec<Vec<f64>> = order
        .iter()
        .map(|&(_, i)| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            e
        })
        .collect();
    let null_basis = gram_schmidt_extend(&row_basis, &candidates, 1e-8);
    if null_basis.len() != d - rank {
        return Err(Error::Numeric(format!(
            "null-space completion produced {} vectors, expected {}",
            null_basis.len(),
            d - rank
        )));
    }

    // S = span{pinv_dir} + null(W); pinv_dir lies in the row space, hence
    // orthogonal to the null vectors already. One more pass tidies it up.
    let pinv_norm = norm(&pinv_dir);
    if pinv_norm == 0.0 {
        return Err(Error::Numeric("pinv direction vanished".into()));
    }
    let mut s_candidates = vec![pinv_dir.iter().map(|v| v / pinv_norm).collect::<Vec<f64>>()];
    s_candidates.extend(null_basis.iter().cloned());
    let s_basis = gram_schmidt_extend(&[], &s_candidates, 1e-10);
    if s_basis.len() != d - rank + 1 {
        return Err(Error::Numeric(format!(
            "invariant-subspace basis has {} vectors, expected {}",
            s_basis.len(),
            d - rank + 1
        )));
    }

    let metric = InvariantShiftMetric {
        w: w.clone(),
        pinv_dir,
        null_basis,
        s_basis,
        rank_tolerance,
    };
    metric.validate()?;
    Ok(metric)
}

/// Free-function form of [`InvariantShiftMetric::distance`].
pub fn invariant_distance(metric: &InvariantShiftMetric, x1: &[f64], x2: &[f64]) -> Result<f64> {
    metric.distance(x1, x2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_symmetry_and_known_values() {
        assert_eq!(softmax(&[0.0, 0.0, 0.0]), vec![1.0 / 3.0; 3]);
        // Direct high-precision evaluation of exp(u_i)/sum.
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(p[0], 0.09003057317038046, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.24472847105479765, epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], 0.6652409557748219, epsilon = 1e-15);
    }

    #[test]
    fn softmax_shift_invariance_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.random_range(1..=16);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-30.0..30.0)).collect();
            let p = softmax(&u);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // Mathematically in (0,1) for n >= 2, but a dominant logit can
            // round the ratio up to exactly 1.0.
            assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
            for c in [-100.0, 1.0, 1000.0] {
                let shifted: Vec<f64> = u.iter().map(|v| v + c).collect();
                let q = softmax(&shifted);
                for (a, b) in p.iter().zip(&q) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let p = softmax(&[700.0, -700.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_known_values() {
        // Uniform over 10 classes: -ln(1/10) = ln 10.
        let p = vec![0.1; 10];
        assert_abs_diff_eq!(cross_entropy(&p, 4), 2.302585092994046, epsilon = 1e-15);

        // Near-one-hot: loss tends to 0.
        let eps = 1e-9;
        let p = vec![1.0 - 2.0 * eps, eps, eps];
        assert!(cross_entropy(&p, 0) < 3e-9);
        assert!(cross_entropy(&p, 0) >= 0.0);

        // Composition with the softmax oracle above: -ln(0.09003...).
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(cross_entropy(&p, 0), 2.4076059644443803, epsilon = 1e-14);

        // Impossible event: +inf sentinel.
        assert_eq!(cross_entropy(&[1.0, 0.0], 1), f64::INFINITY);
    }

    #[test]
    fn pairwise_euclidean_hand_cases() {
        let m = matrix(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
        let d = pairwise_distances(&m, DistanceKind::Euclidean).unwrap();
        assert_eq!(d.row(0), &[0.0, 5.0]);
        assert_eq!(d.row(1), &[5.0, 0.0]);
    }

    #[test]
    fn pairwise_identical_rows_are_zero_distance() {
        let m = matrix(&[vec![0.3, -0.7, 1.1], vec![0.3, -0.7, 1.1]]);
        for metric in [DistanceKind::Euclidean, DistanceKind::Cosine] {
            let d = pairwise_distances(&m, metric).unwrap();
            assert_eq!(d.row(0)[1], 0.0, "{metric:?}");
        }
    }

    #[test]
    fn pairwise_cosine_hand_cases() {
        let m = matrix(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 0.0]]);
        let d = pairwise_distances(&m, DistanceKind::Cosine).unwrap();
        assert_eq!(d.row(0)[1], 1.0); // orthogonal
        assert_eq!(d.row(0)[2], 0.0); // same direction, different scale
        assert!(d.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn pairwise_cosine_rejects_zero_row() {
        let m = matrix(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let err = pairwise_distances(&m, DistanceKind::Cosine).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn pairwise_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..6).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let m = matrix(&rows);
        let d = pairwise_distances(&m, DistanceKind::Euclidean).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += (rows[i][k] - rows[j][k]).powi(2);
                }
                assert!((d.row(i)[j] - acc.sqrt()).abs() < 1e-10);
                assert_eq!(d.row(i)[j], d.row(j)[i]);
            }
        }
    }

    fn hand_metric() -> InvariantShiftMetric {
        let w = matrix(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        invariant_shift_basis(&w, DEFAULT_RANK_TOLERANCE).unwrap()
    }

    #[test]
    fn hand_basis_matches_manual_computation() {
        let m = hand_metric();
        // W W^T = I, so pinv_dir = W^T 1 = [1, 1, 0].
        assert_abs_diff_eq!(m.pinv_dir()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.pinv_dir()[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.pinv_dir()[2], 0.0, epsilon = 1e-12);
        // null(W) = span{e_3}.
        assert_eq!(m.null_basis().len(), 1);
        assert_abs_diff_eq!(m.null_basis()[0][2].abs(), 1.0, epsilon = 1e-12);
        // dim(S) = D - C + 1 = 2.
        assert_eq!(m.s_basis().len(), 2);
        m.validate().unwrap();
    }

    #[test]
    fn hand_distance_case() {
        let m = hand_metric();
        // delta = [1, 0, -5]; S-perp = span{[1,-1,0]/sqrt(2)};
        // projection of delta onto S-perp has length 1/sqrt(2).
        let d = m.distance(&[1.0, 0.0, 0.0], &[0.0, 0.0, 5.0]).unwrap();
        assert_abs_diff_eq!(d, 0.7071067811865475, epsilon = 1e-12);
    }

    #[test]
    fn distance_is_zero_on_identical_and_shifted_inputs() {
        let m = hand_metric();
        let x = [0.4, -1.2, 2.5];
        assert_eq!(m.distance(&x, &x).unwrap(), 0.0);

        // x + 3 pinv_dir + 2 v_1 is an invariant shift of x.
        let shifted: Vec<f64> = (0..3)
            .map(|i| x[i] + 3.0 * m.pinv_dir()[i] + 2.0 * m.null_basis()[0][i])
            .collect();
        assert!(m.distance(&x, &shifted).unwrap() < 1e-8);
        // And the softmax outputs agree.
        let p = softmax(&m.logits(&x));
        let q = softmax(&m.logits(&shifted));
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn distance_is_exactly_symmetric_and_triangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w_rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..9).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let m = invariant_shift_basis(&matrix(&w_rows), DEFAULT_RANK_TOLERANCE).unwrap();
        for _ in 0..50 {
            let v: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..9).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let dab = m.distance(&v[0], &v[1]).unwrap();
            let dba = m.distance(&v[1], &v[0]).unwrap();
            assert_eq!(dab, dba);
            let dbc = m.distance(&v[1], &v[2]).unwrap();
            let dac = m.distance(&v[0], &v[2]).unwrap();
            assert!(dac <= dab + dbc + 1e-9);
        }
    }

    #[test]
    fn subspace_dimension_is_d_minus_c_plus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let rows: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let m = invariant_shift_basis(&matrix(&rows), DEFAULT_RANK_TOLERANCE).unwrap();
            assert_eq!(m.s_basis().len(), 64 - 10 + 1);
            assert_eq!(m.null_basis().len(), 64 - 10);
            m.validate().unwrap();
        }
    }

    #[test]
    fn degenerate_and_deficient_inputs_error() {
        // D <= C: no room for the invariant subspace.
        let square = matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let err = invariant_shift_basis(&square, DEFAULT_RANK_TOLERANCE).unwrap_err();
        assert!(err.to_string().contains("degenerates"), "{err}");

        // Duplicate rows: rank 1 < 2.
        let deficient = matrix(&[vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]]);
        let err = invariant_shift_basis(&deficient, DEFAULT_RANK_TOLERANCE).unwrap_err();
        assert!(err.to_string().contains("rank 1"), "{err}");

        let w = matrix(&[vec![1.0, 0.0, 0.0]]);
        assert!(invariant_shift_basis(&w, 0.0).is_err());
        assert!(invariant_shift_basis(&w, 1.0).is_err());
    }

    #[test]
    fn distance_rejects_length_mismatch() {
        let m = hand_metric();
        assert!(m.distance(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn project_out_matches_pairwise_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let w_rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let metric = invariant_shift_basis(&matrix(&w_rows), DEFAULT_RANK_TOLERANCE).unwrap();
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..8).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let m = matrix(&rows);
        let projected = metric.project_out(&m).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let direct = metric.distance(m.row(i), m.row(j)).unwrap();
                let via_proj = euclidean(projected.row(i), projected.row(j));
                assert!((direct - via_proj).abs() < 1e-9, "({i},{j})");
            }
        }
    }

    #[test]
    fn least_squares_oracle_agrees_on_small_cases() {
        // Independent check: minimize ||delta - M c|| where M's columns are
        // pinv_dir and the columns of the null-space projector
        // I - W^T (W W^T)^{-1} W, i.e. no Gram-Schmidt ingredients.
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for trial in 0..10 {
            let c = 3;
            let d = 7;
            let w_rows: Vec<Vec<f64>> = (0..c)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let w = matrix(&w_rows);
            let metric = invariant_shift_basis(&w, DEFAULT_RANK_TOLERANCE).unwrap();
            let x1: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x2: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();

            let wm = DMatrix::from_row_slice(c, d, w.data());
            let wwt = &wm * wm.transpose();
            let wwt_inv = wwt.try_inverse().unwrap();
            let nproj = DMatrix::identity(d, d) - wm.transpose() * wwt_inv * &wm;
            let mut cols: Vec<f64> = Vec::new();
            let pinv = DVector::from_column_slice(metric.pinv_dir());
            for i in 0..d {
                cols.push(pinv[i]);
            }
            for j in 0..d {
                for i in 0..d {
                    cols.push(nproj[(i, j)]);
                }
            }
            // Column-major assembly: D x (D + 1) system.
            let mmat = DMatrix::from_column_slice(d, d + 1, &cols);
            let delta = DVector::from_iterator(d, x1.iter().zip(&x2).map(|(a, b)| a - b));
            let sol = mmat
                .clone()
                .svd(true, true)
                .solve(&delta, 1e-12)
                .expect("least squares solve");
            let residual = (&delta - mmat * sol).norm();

            let closed = metric.distance(&x1, &x2).unwrap();
            let scale = residual.abs().max(closed.abs()).max(1e-9);
            assert!(
                (closed - residual).abs() / scale < 1e-6,
                "trial {trial}: closed {closed} vs oracle {residual}"
            );
        }
    }
}
