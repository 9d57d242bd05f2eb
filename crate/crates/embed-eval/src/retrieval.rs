//! Exact nearest-neighbor search and Recall@K.
//!
//! Every row queries against all other rows (a query never retrieves
//! itself). Recall@K is the fraction of queries whose top-K list contains
//! at least one row of the query's class; rows whose class has no other
//! member can never match and count as misses, with their number recorded.

use rayon::prelude::*;

use crate::metrics::{
    cosine_prenormalized, euclidean, normalize_rows_for_cosine, InvariantShiftMetric,
};
use crate::{Error, FeatureMatrix, Result};

/// Distance definition for retrieval.
#[derive(Debug, Clone, Copy)]
pub enum RetrievalMetric<'a> {
    Euclidean,
    Cosine,
    /// Distance modulo softmax-invariant shifts; see
    /// [`crate::metrics::invariant_shift_basis`].
    InvariantShift(&'a InvariantShiftMetric),
}

impl RetrievalMetric<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            RetrievalMetric::Euclidean => "euclidean",
            RetrievalMetric::Cosine => "cosine",
            RetrievalMetric::InvariantShift(_) => "invariant-shift",
        }
    }
}

/// Recall@K results for one feature set.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RetrievalEval {
    /// The evaluated K values, ascending.
    pub ks: Vec<usize>,
    /// Recall per K, aligned with `ks`; non-decreasing.
    pub recall_at: Vec<f64>,
    pub metric: String,
    pub n_queries: usize,
    /// Queries whose class has no second member; always misses.
    pub singleton_queries: usize,
}

/// The `k` nearest rows to every row, excluding the row itself.
///
/// Row `i` of the result lists neighbor indices ascending by distance;
/// equal distances are broken by ascending row index.
pub fn knn_indices(
    m: &FeatureMatrix,
    metric: RetrievalMetric<'_>,
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    let n = m.n_rows();
    if k == 0 {
        return Err(Error::Invalid("K must be >= 1".into()));
    }
    if k > n - 1 {
        return Err(Error::Invalid(format!(
            "K = {} exceeds n_rows - 1 = {}",
            k,
            n - 1
        )));
    }

    // Pre-resolve the per-pair distance so the query loop is uniform.
    let unit_rows = match metric {
        RetrievalMetric::Cosine => Some(normalize_rows_for_cosine(m)?),
        _ => None,
    };
    if let RetrievalMetric::InvariantShift(inv) = metric {
        if inv.n_dims() != m.n_dims() {
            return Err(Error::Invalid(format!(
                "matrix has {} dims, invariant-shift metric expects {}",
                m.n_dims(),
                inv.n_dims()
            )));
        }
    }
    let dist = |i: usize, j: usize| -> f64 {
        match metric {
            RetrievalMetric::Euclidean => euclidean(m.row(i), m.row(j)),
            RetrievalMetric::Cosine => {
                let unit = unit_rows.as_ref().unwrap();
                cosine_prenormalized(&unit[i], &unit[j])
            }
            RetrievalMetric::InvariantShift(inv) => inv
                .distance(m.row(i), m.row(j))
                .expect("dimensions validated above"),
        }
    };

    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0)
            .expect("distances are finite")
            .then(a.1.cmp(&b.1))
    };
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dist(i, j), j))
                .collect();
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_unstable_by(cmp);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect())
}

/// Recall@K over the given K values (deduplicated and evaluated in
/// ascending order).
pub fn recall_at_k(
    m: &FeatureMatrix,
    labels: &[usize],
    ks: &[usize],
    metric: RetrievalMetric<'_>,
) -> Result<RetrievalEval> {
    if ks.is_empty() {
        return Err(Error::Invalid("ks must be non-empty".into()));
    }
    if labels.len() != m.n_rows() {
        return Err(Error::Invalid(format!(
            "{} labels for {} rows",
            labels.len(),
            m.n_rows()
        )));
    }
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let max_k = *ks.last().unwrap();
    let neighbors = knn_indices(m, metric, max_k)?;

    let n = m.n_rows();
    let mut class_sizes = std::collections::BTreeMap::new();
    for &l in labels {
        *class_sizes.entry(l).or_insert(0usize) += 1;
    }
    let singleton_queries = labels.iter().filter(|l| class_sizes[l] == 1).count();

    let recall_at: Vec<f64> = ks
        .iter()
        .map(|&k| {
            let hits = (0..n)
                .filter(|&i| neighbors[i][..k].iter().any(|&j| labels[j] == labels[i]))
                .count();
            hits as f64 / n as f64
        })
        .collect();

    Ok(RetrievalEval {
        ks,
        recall_at,
        metric: metric.name().to_string(),
        n_queries: n,
        singleton_queries,
    })
}
