//! Small shared vector helpers. Heavier decompositions go through nalgebra.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
///
/// Feeds `candidates` one by one; a candidate is kept (normalized) only if,
/// after projecting off everything kept so far, its residual norm exceeds
/// `tol`. Returns the kept orthonormal vectors. `basis` may be pre-populated
/// with vectors that are already orthonormal; candidates are orthogonalized
/// against those too but the pre-populated vectors are not returned.
pub(crate) fn gram_schmidt_extend(
    basis: &[Vec<f64>],
    candidates: &[Vec<f64>],
    tol: f64,
) -> Vec<Vec<f64>> {
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for cand in candidates {
        let mut v = cand.clone();
        // Two passes: the second mops up cancellation error from the first.
        for _ in 0..2 {
            for q in basis.iter().chain(kept.iter()) {
                let c = dot(&v, q);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
        let n = norm(&v);
        if n > tol {
            for vi in v.iter_mut() {
                *vi /= n;
            }
            kept.push(v);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extends_to_orthonormal_set() {
        let basis = vec![vec![1.0, 0.0, 0.0]];
        let candidates = vec![
            vec![1.0, 1.0, 0.0],
            vec![2.0, 2.0, 0.0], // dependent on the previous one: dropped
            vec![0.0, 1.0, 1.0],
        ];
        let kept = gram_schmidt_extend(&basis, &candidates, 1e-10);
        assert_eq!(kept.len(), 2);
        let all: Vec<&Vec<f64>> = basis.iter().chain(kept.iter()).collect();
        for i in 0..all.len() {
            for j in 0..all.len() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(all[i], all[j]) - expect).abs() < 1e-12);
            }
        }
    }
}
