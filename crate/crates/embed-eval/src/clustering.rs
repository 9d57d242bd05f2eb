//! Seeded k-means and normalized mutual information scoring.
//!
//! The evaluation protocol runs k-means many times (default 100) with
//! consecutive seeds and reports the mean and standard deviation of the
//! per-run NMI against ground-truth labels. Every run is deterministic for
//! its seed, so the whole evaluation is reproducible; runs execute in
//! parallel without affecting the result.

use rayon::prelude::*;

use crate::metrics::euclidean;
use crate::{Error, FeatureMatrix, Result};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_MAX_ITERS: usize = 300;
pub const DEFAULT_REL_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_KMEANS_RUNS: usize = 100;

/// Outcome of one k-means run.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Cluster id in `[0, k)` per row; no cluster is empty.
    pub assignments: Vec<usize>,
    /// `k x d` centroid matrix (row per cluster).
    pub centroids: FeatureMatrix,
    /// Sum of squared distances from each row to its centroid.
    pub inertia: f64,
    pub iterations: usize,
    /// True when the relative inertia decrease fell below tolerance before
    /// the iteration cap.
    pub converged: bool,
    /// Inertia recorded at each assignment step; never increases.
    pub inertia_trace: Vec<f64>,
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// Stops when the relative inertia decrease drops below `rel_tolerance`
/// or after `max_iters` iterations. Empty clusters are repaired by seizing
/// the point farthest from its assigned centroid (lowest row index on
/// ties), which keeps all k clusters alive and never increases inertia.
/// Deterministic per seed.
pub fn kmeans(
    m: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
    rel_tolerance: f64,
) -> Result<KMeansResult> {
    let n = m.n_rows();
    let d = m.n_dims();
    if k == 0 {
        return Err(Error::Invalid("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::Invalid(format!(
            "k = {} exceeds the number of rows {}",
            k, n
        )));
    }
    if max_iters == 0 {
        return Err(Error::Invalid("max_iters must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(m, k, &mut rng);

    let mut assignments = vec![0usize; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev_inertia = f64::INFINITY;

    for _ in 0..max_iters {
        // Assignment step: nearest centroid, lowest index on ties.
        let mut dist2 = vec![0.0; n];
        for (i, row) in m.iter_rows().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cent) in centroids.iter().enumerate() {
                let dd: f64 = row.iter().zip(cent).map(|(a, b)| (a - b) * (a - b)).sum();
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            assignments[i] = best;
            dist2[i] = best_d;
        }

        // Repair: every empty cluster takes the globally farthest point
        // from a cluster that can spare one, and moves its centroid there.
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        for c in 0..k {
            while sizes[c] == 0 {
                let victim = (0..n)
                    .filter(|&i| sizes[assignments[i]] >= 2)
                    .max_by(|&a, &b| dist2[a].partial_cmp(&dist2[b]).unwrap().then(b.cmp(&a)))
                    .expect("k <= n guarantees a donatable point");
                sizes[assignments[victim]] -= 1;
                sizes[c] += 1;
                assignments[victim] = c;
                centroids[c] = m.row(victim).to_vec();
                dist2[victim] = 0.0;
            }
        }

        let inertia: f64 = dist2.iter().sum();
        trace.push(inertia);

        if prev_inertia.is_finite() {
            let decrease = prev_inertia - inertia;
            let scale = if prev_inertia > 0.0 {
                prev_inertia
            } else {
                1.0
            };
            if decrease <= rel_tolerance * scale {
                converged = true;
                break;
            }
        }
        prev_inertia = inertia;

        // Update step: centroid = mean of its members (index order).
        let mut sums = vec![vec![0.0; d]; k];
        for (i, row) in m.iter_rows().enumerate() {
            for (s, v) in sums[assignments[i]].iter_mut().zip(row) {
                *s += v;
            }
        }
        for c in 0..k {
            for s in sums[c].iter_mut() {
                *s /= sizes[c] as f64;
            }
        }
        centroids = sums;
    }

    // Final centroids = means of the final assignment.
    let mut sizes = vec![0usize; k];
    let mut sums = vec![vec![0.0; d]; k];
    for (i, row) in m.iter_rows().enumerate() {
        sizes[assignments[i]] += 1;
        for (s, v) in sums[assignments[i]].iter_mut().zip(row) {
            *s += v;
        }
    }
    for c in 0..k {
        debug_assert!(sizes[c] > 0, "repair keeps every cluster populated");
        for s in sums[c].iter_mut() {
            *s /= sizes[c] as f64;
        }
    }
    let inertia: f64 = m
        .iter_rows()
        .enumerate()
        .map(|(i, row)| {
            let c = &sums[assignments[i]];
            row.iter()
                .zip(c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();

    Ok(KMeansResult {
        assignments,
        centroids: FeatureMatrix::from_vec(k, d, sums.concat())?,
        inertia,
        iterations: trace.len(),
        converged,
        inertia_trace: trace,
    })
}

/// k-means++ seeding: first centroid uniform, the rest sampled with
/// probability proportional to squared distance from the nearest chosen
/// centroid.
fn plus_plus_init(m: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = m.n_rows();
    let first = rng.random_range(0..n);
    let mut centroids: Vec<Vec<f64>> = vec![m.row(first).to_vec()];
    let mut d2: Vec<f64> = m
        .iter_rows()
        .map(|row| {
            let e = euclidean(row, &centroids[0]);
            e * e
        })
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let r = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > r {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All points coincide with chosen centroids; any point works.
            rng.random_range(0..n)
        };
        let chosen = m.row(idx).to_vec();
        for (i, row) in m.iter_rows().enumerate() {
            let e = euclidean(row, &chosen);
            d2[i] = d2[i].min(e * e);
        }
        centroids.push(chosen);
    }
    centroids
}

/// Which mean of the two partition entropies normalizes the mutual
/// information.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmiVariant {
    /// `2 I / (H(a) + H(b))`.
    Arithmetic,
    /// `I / sqrt(H(a) H(b))`.
    Geometric,
}

impl NmiVariant {
    pub fn name(&self) -> &'static str {
        match self {
            NmiVariant::Arithmetic => "arithmetic",
            NmiVariant::Geometric => "geometric",
        }
    }
}

/// Normalized mutual information with the arithmetic-mean normalization.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    nmi_with(a, b, NmiVariant::Arithmetic)
}

/// Normalized mutual information between two partitions of the same rows.
///
/// Natural logarithms; result in [0, 1]. Identical partitions (up to
/// relabeling) give exactly 1. When both partitions have zero entropy the
/// result is 1; when exactly one does, 0.
pub fn nmi_with(a: &[usize], b: &[usize], variant: NmiVariant) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "partition lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Invalid("partitions must be non-empty".into()));
    }
    let n = a.len() as f64;

    let mut cells: std::collections::BTreeMap<(usize, usize), usize> =
        std::collections::BTreeMap::new();
    let mut count_a: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    let mut count_b: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_insert(0) += 1;
        *count_a.entry(x).or_insert(0) += 1;
        *count_b.entry(y).or_insert(0) += 1;
    }

    // Identical up to relabeling <=> the contingency table is a bijection
    // between the two label sets. NMI is exactly 1 then; returning it
    // directly avoids rounding in the log sums.
    if cells.len() == count_a.len() && cells.len() == count_b.len() {
        return Ok(1.0);
    }

    let entropy = |counts: &std::collections::BTreeMap<usize, usize>| -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_a = entropy(&count_a);
    let h_b = entropy(&count_b);
    if h_a <= 0.0 && h_b <= 0.0 {
        return Ok(1.0);
    }
    if h_a <= 0.0 || h_b <= 0.0 {
        return Ok(0.0);
    }

    let mut mi = 0.0;
    for (&(x, y), &c) in &cells {
        let pxy = c as f64 / n;
        let px = count_a[&x] as f64 / n;
        let py = count_b[&y] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    let mi = mi.max(0.0); // mathematically >= 0; guards log rounding

    let value = match variant {
        NmiVariant::Arithmetic => 2.0 * mi / (h_a + h_b),
        NmiVariant::Geometric => mi / (h_a * h_b).sqrt(),
    };
    Ok(value.clamp(0.0, 1.0))
}

/// NMI statistics over repeated k-means runs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClusteringEval {
    pub nmi_mean: f64,
    /// Population standard deviation over the runs.
    pub nmi_std: f64,
    pub run_count: usize,
    pub k: usize,
    pub per_run_nmi: Vec<f64>,
}

/// Runs k-means `runs` times with seeds `seed .. seed + runs - 1` and
/// scores each run's assignment against `labels` with the given NMI
/// variant. Runs execute in parallel; the report is ordered by run index
/// and bitwise reproducible.
pub fn clustering_eval_with(
    m: &FeatureMatrix,
    labels: &[usize],
    k: usize,
    runs: usize,
    seed: u64,
    variant: NmiVariant,
) -> Result<ClusteringEval> {
    if runs == 0 {
        return Err(Error::Invalid("runs must be >= 1".into()));
    }
    if labels.len() != m.n_rows() {
        return Err(Error::Invalid(format!(
            "{} labels for {} rows",
            labels.len(),
            m.n_rows()
        )));
    }
    let per_run_nmi: Vec<f64> = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let result = kmeans(
                m,
                k,
                seed.wrapping_add(r),
                DEFAULT_MAX_ITERS,
                DEFAULT_REL_TOLERANCE,
            )?;
            nmi_with(&result.assignments, labels, variant)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mean = per_run_nmi.iter().sum::<f64>() / runs as f64;
    let var = per_run_nmi
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / runs as f64;
    Ok(ClusteringEval {
        nmi_mean: mean,
        nmi_std: var.sqrt(),
        run_count: runs,
        k,
        per_run_nmi,
    })
}

/// [`clustering_eval_with`] using the arithmetic NMI variant.
pub fn clustering_eval(
    m: &FeatureMatrix,
    labels: &[usize],
    k: usize,
    runs: usize,
    seed: u64,
) -> Result<ClusteringEval> {
    clustering_eval_with(m, labels, k, runs, seed, NmiVariant::Arithmetic)
}
