//! Feature/label file formats, class-disjoint splits, per-class subsampling.
//!
//! Binary feature files use a tiny container ("EMB1"):
//!
//! ```text
//! bytes 0..4    ASCII magic "EMB1"
//! bytes 4..8    u32 little-endian  n_rows   (>= 1)
//! bytes 8..12   u32 little-endian  n_dims   (>= 1)
//! bytes 12..    n_rows * n_dims IEEE-754 binary32 little-endian, row-major
//! ```
//!
//! No padding, no trailer; a file with extra bytes after the payload is
//! rejected. Values are stored as f32 and widened to f64 on load. Features
//! can also be read from and written to plain numeric CSV (no header, one
//! row per line), which keeps full f64 precision.
//!
//! Label files are UTF-8 CSV with the exact header `index,label`, one row
//! per feature row. Indices must cover 0..n_rows-1 with no gaps or
//! duplicates; labels are non-negative integers.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, FeatureMatrix, Result};

const MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

/// On-disk representation of a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    /// EMB1 binary container (f32 storage).
    Binary,
    /// Headerless numeric CSV (full f64 precision).
    Csv,
}

impl FeatureFormat {
    /// Picks the format by file extension: `.csv` means CSV, anything else
    /// the binary container.
    pub fn from_path(path: &Path) -> FeatureFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

/// Reads a feature matrix from a file in the given format.
pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureMatrix> {
    match format {
        FeatureFormat::Binary => load_features_binary(path),
        FeatureFormat::Csv => load_features_csv(path),
    }
}

/// Writes a feature matrix in the given format.
///
/// The binary container narrows values to f32; a value whose f32 cast is
/// non-finite is rejected. CSV keeps full f64 precision.
pub fn save_features(path: &Path, features: &FeatureMatrix, format: FeatureFormat) -> Result<()> {
    match format {
        FeatureFormat::Binary => save_features_binary(path, features),
        FeatureFormat::Csv => save_features_csv(path, features),
    }
}

fn load_features_binary(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "{}: file is {} bytes, shorter than the 12-byte header",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected \"EMB1\"",
            path.display(),
            &bytes[0..4]
        )));
    }
    let n_rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n_dims = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n_rows == 0 {
        return Err(Error::Format(format!(
            "{}: n_rows must be >= 1",
            path.display()
        )));
    }
    if n_dims == 0 {
        return Err(Error::Format(format!(
            "{}: n_dims must be >= 1",
            path.display()
        )));
    }
    let expected = HEADER_LEN as u64 + n_rows as u64 * n_dims as u64 * 4;
    if (bytes.len() as u64) < expected {
        return Err(Error::Format(format!(
            "{}: truncated payload: {} bytes, expected {} for {} rows x {} dims",
            path.display(),
            bytes.len(),
            expected,
            n_rows,
            n_dims
        )));
    }
    if bytes.len() as u64 > expected {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() as u64 - expected
        )));
    }
    let mut data = Vec::with_capacity(n_rows * n_dims);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format(format!(
                "{}: non-finite value {} at flat index {} (row {}, dim {})",
                path.display(),
                v,
                i,
                i / n_dims,
                i % n_dims
            )));
        }
        data.push(v as f64);
    }
    FeatureMatrix::from_vec(n_rows, n_dims, data)
}

fn save_features_binary(path: &Path, features: &FeatureMatrix) -> Result<()> {
    if features.n_rows() > u32::MAX as usize || features.n_dims() > u32::MAX as usize {
        return Err(Error::Invalid(format!(
            "shape {} x {} exceeds the u32 header fields",
            features.n_rows(),
            features.n_dims()
        )));
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + features.data().len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(features.n_rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(features.n_dims() as u32).to_le_bytes());
    for (i, &v) in features.data().iter().enumerate() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::Invalid(format!(
                "value {} at flat index {} does not fit f32 storage",
                v, i
            )));
        }
        bytes.extend_from_slice(&narrow.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_features_csv(path: &Path) -> Result<FeatureMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!(
                    "{}: line {}: {:?} is not a number",
                    path.display(),
                    lineno + 1,
                    field
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "{}: line {}: non-finite value {}",
                    path.display(),
                    lineno + 1,
                    v
                )));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "{}: line {}: {} columns, expected {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format(format!(
            "{}: n_rows must be >= 1",
            path.display()
        )));
    }
    FeatureMatrix::from_rows(&rows)
}

fn save_features_csv(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut text = String::new();
    for row in features.iter_rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                text.push(',');
            }
            // Rust's shortest round-trip formatting: load gives back the
            // exact f64.
            text.push_str(&format!("{}", v));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads labels for `n_rows` feature rows from a CSV file.
///
/// Returns `labels[i]` = label of row `i`. The file must carry the exact
/// header `index,label` and exactly one row for each index in
/// `0..n_rows`, in any order.
pub fn load_labels(path: &Path, n_rows: usize) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().map(|l| l.trim_end_matches('\r'));
    if header != Some("index,label") {
        return Err(Error::Format(format!(
            "{}: expected header \"index,label\", got {:?}",
            path.display(),
            header.unwrap_or("")
        )));
    }
    let mut labels = vec![None; n_rows];
    for (lineno, raw) in lines.enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let idx_str = parts.next().unwrap_or("");
        let label_str = parts.next().ok_or_else(|| {
            Error::Format(format!(
                "{}: line {}: expected \"index,label\", got {:?}",
                path.display(),
                lineno + 2,
                line
            ))
        })?;
        let parse = |field: &str, what: &str| -> Result<usize> {
            field.trim().parse::<usize>().map_err(|_| {
                Error::Format(format!(
                    "{}: line {}: {} {:?} is not a non-negative integer",
                    path.display(),
                    lineno + 2,
                    what,
                    field
                ))
            })
        };
        let idx = parse(idx_str, "index")?;
        let label = parse(label_str, "label")?;
        if idx >= n_rows {
            return Err(Error::Format(format!(
                "{}: line {}: index {} out of range for {} rows",
                path.display(),
                lineno + 2,
                idx,
                n_rows
            )));
        }
        if labels[idx].is_some() {
            return Err(Error::Format(format!(
                "{}: line {}: duplicate index {}",
                path.display(),
                lineno + 2,
                idx
            )));
        }
        labels[idx] = Some(label);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| {
                Error::Format(format!("{}: missing label for index {}", path.display(), i))
            })
        })
        .collect()
}

/// Writes labels in the `index,label` CSV layout that [`load_labels`] reads.
pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i, l));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Feature rows with integer class labels and string row ids.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl LabeledDataset {
    /// Pairs features with labels; ids default to the stringified row index.
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<usize>,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        if labels.len() != features.n_rows() {
            return Err(Error::Invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                features.n_rows()
            )));
        }
        let ids = match ids {
            Some(ids) => {
                if ids.len() != features.n_rows() {
                    return Err(Error::Invalid(format!(
                        "{} ids for {} rows",
                        ids.len(),
                        features.n_rows()
                    )));
                }
                ids
            }
            None => (0..features.n_rows()).map(|i| i.to_string()).collect(),
        };
        Ok(LabeledDataset {
            features,
            labels,
            ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.n_rows()
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.labels.iter().copied().collect();
        set.into_iter().collect()
    }

    /// Row indices per class, keys ascending, indices in original order.
    pub fn class_indices(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map
    }

    /// New dataset with only the listed rows, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        LabeledDataset::new(features, labels, Some(ids))
    }
}

/// How to divide classes between train and test.
#[derive(Debug, Clone)]
pub enum SplitSpec {
    /// Classes sorted ascending; the first ceil(C/2) go to train, the rest
    /// to test.
    FirstHalfClasses,
    /// Explicit class lists. They must be disjoint and together cover every
    /// class present in the data.
    Explicit {
        train_classes: Vec<usize>,
        test_classes: Vec<usize>,
    },
}

/// Splits a dataset so train and test share no classes.
///
/// Row order within each side follows the original dataset. Errors if
/// either side ends up empty.
pub fn class_disjoint_split(
    data: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let present: BTreeSet<usize> = data.labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(Error::Invalid(format!(
            "class-disjoint split needs >= 2 classes, found {}",
            present.len()
        )));
    }
    let train_set: BTreeSet<usize> = match spec {
        SplitSpec::FirstHalfClasses => {
            let classes: Vec<usize> = present.iter().copied().collect();
            let n_train = classes.len().div_ceil(2);
            classes[..n_train].iter().copied().collect()
        }
        SplitSpec::Explicit {
            train_classes,
            test_classes,
        } => {
            let train: BTreeSet<usize> = train_classes.iter().copied().collect();
            let test: BTreeSet<usize> = test_classes.iter().copied().collect();
            if let Some(&c) = train.intersection(&test).next() {
                return Err(Error::Invalid(format!(
                    "class {} appears in both train and test lists",
                    c
                )));
            }
            let declared: BTreeSet<usize> = train.union(&test).copied().collect();
            if let Some(&c) = present.difference(&declared).next() {
                return Err(Error::Invalid(format!(
                    "class {} present in data but in neither split list",
                    c
                )));
            }
            if let Some(&c) = declared.difference(&present).next() {
                return Err(Error::Invalid(format!(
                    "class {} listed in the split but absent from the data",
                    c
                )));
            }
            train
        }
    };
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (i, l) in data.labels.iter().enumerate() {
        if train_set.contains(l) {
            train_rows.push(i);
        } else {
            test_rows.push(i);
        }
    }
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(Error::Invalid(
            "split leaves train or test side empty".into(),
        ));
    }
    Ok((data.select(&train_rows)?, data.select(&test_rows)?))
}

/// Keeps a random fraction of each class.
///
/// Every class keeps `max(1, round(fraction * m))` of its `m` rows, chosen
/// uniformly without replacement. Kept rows stay in their original order.
/// Each class draws from its own ChaCha8 stream (stream id = class label)
/// seeded by `seed`, so the selection for one class does not depend on
/// which other classes exist. `fraction` must lie in (0, 1]; 1.0 keeps
/// everything.
pub fn subsample_per_class(
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Invalid(format!(
            "fraction must be in (0, 1], got {}",
            fraction
        )));
    }
    if fraction == 1.0 {
        return Ok(data.clone());
    }
    let mut kept = Vec::new();
    for (class, rows) in data.class_indices() {
        let m = rows.len();
        let keep = ((fraction * m as f64).round() as usize).clamp(1, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        let mut chosen = rand::seq::index::sample(&mut rng, m, keep).into_vec();
        chosen.sort_unstable();
        kept.extend(chosen.into_iter().map(|j| rows[j]));
    }
    kept.sort_unstable();
    data.select(&kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn emb1_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.emb1");
        let m = matrix(&[vec![1.0, -2.5], vec![0.5, 4.0], vec![-0.25, 0.0]]);
        save_features(&path, &m, FeatureFormat::Binary).unwrap();
        let back = load_features(&path, FeatureFormat::Binary).unwrap();
        assert_eq!(back, m);
        // 12-byte header + 6 f32 values.
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 12 + 24);
    }

    #[test]
    fn emb1_narrows_to_f32() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.emb1");
        let v = 0.1f64; // not representable in f32
        let m = matrix(&[vec![v]]);
        save_features(&path, &m, FeatureFormat::Binary).unwrap();
        let back = load_features(&path, FeatureFormat::Binary).unwrap();
        assert_eq!(back.data()[0], 0.1f32 as f64);
        assert_ne!(back.data()[0], v);
    }

    #[test]
    fn emb1_rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.emb1");
        let mut bytes = b"EMB2".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = load_features(&path, FeatureFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn emb1_rejects_zero_rows() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.emb1");
        let mut bytes = b"EMB1".to_vec();
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = load_features(&path, FeatureFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("n_rows must be >= 1"), "{err}");
    }

    #[test]
    fn emb1_rejects_truncation_and_trailer() {
        let dir = tempdir().unwrap();
        let m = matrix(&[vec![1.0, 2.0]]);
        let path = dir.path().join("x.emb1");
        save_features(&path, &m, FeatureFormat::Binary).unwrap();
        let good = std::fs::read(&path).unwrap();

        let short = dir.path().join("short.emb1");
        std::fs::write(&short, &good[..good.len() - 1]).unwrap();
        let err = load_features(&short, FeatureFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let long = dir.path().join("long.emb1");
        let mut padded = good.clone();
        padded.push(0);
        std::fs::write(&long, padded).unwrap();
        let err = load_features(&long, FeatureFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("trailing bytes"), "{err}");
    }

    #[test]
    fn emb1_rejects_non_finite_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.emb1");
        let mut bytes = b"EMB1".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1f32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = load_features(&path, FeatureFormat::Binary).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn save_rejects_f32_overflow() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.emb1");
        let m = matrix(&[vec![1e300]]);
        let err = save_features(&path, &m, FeatureFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("f32"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err =
            load_features(Path::new("/nonexistent/x.emb1"), FeatureFormat::Binary).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }

    #[test]
    fn csv_features_parse() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "1.0,2.0\n3.0,4.0\n").unwrap();
        let m = load_features(&path, FeatureFormat::Csv).unwrap();
        assert_eq!(m.n_rows(), 2);
        assert_eq!(m.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn csv_features_round_trip_full_precision() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let m = matrix(&[vec![0.1, -2.0e-17], vec![1.0 / 3.0, 5.0]]);
        save_features(&path, &m, FeatureFormat::Csv).unwrap();
        let back = load_features(&path, FeatureFormat::Csv).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn csv_features_reject_ragged_and_junk() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");

        std::fs::write(&path, "1.0,2.0\n3.0\n").unwrap();
        let err = load_features(&path, FeatureFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("columns"), "{err}");

        std::fs::write(&path, "1.0,abc\n").unwrap();
        let err = load_features(&path, FeatureFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("not a number"), "{err}");

        std::fs::write(&path, "").unwrap();
        let err = load_features(&path, FeatureFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("n_rows must be >= 1"), "{err}");
    }

    #[test]
    fn format_from_path_uses_extension() {
        assert_eq!(
            FeatureFormat::from_path(Path::new("a/b.csv")),
            FeatureFormat::Csv
        );
        assert_eq!(
            FeatureFormat::from_path(Path::new("a/b.CSV")),
            FeatureFormat::Csv
        );
        assert_eq!(
            FeatureFormat::from_path(Path::new("a/b.emb1")),
            FeatureFormat::Binary
        );
        assert_eq!(
            FeatureFormat::from_path(Path::new("a/b")),
            FeatureFormat::Binary
        );
    }

    #[test]
    fn labels_parse_any_row_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("l.csv");
        std::fs::write(&path, "index,label\n2,7\n0,3\n1,3\n").unwrap();
        assert_eq!(load_labels(&path, 3).unwrap(), vec![3, 3, 7]);
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("l.csv");
        save_labels(&path, &[4, 0, 9]).unwrap();
        assert_eq!(load_labels(&path, 3).unwrap(), vec![4, 0, 9]);
    }

    #[test]
    fn labels_reject_bad_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("l.csv");
        std::fs::write(&path, "idx,label\n0,1\n").unwrap();
        let err = load_labels(&path, 1).unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");
    }

    #[test]
    fn labels_reject_gap_duplicate_negative_and_range() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("l.csv");

        std::fs::write(&path, "index,label\n0,1\n2,1\n").unwrap();
        let err = load_labels(&path, 3).unwrap_err();
        assert!(
            err.to_string().contains("missing label for index 1"),
            "{err}"
        );

        std::fs::write(&path, "index,label\n0,1\n0,2\n").unwrap();
        let err = load_labels(&path, 2).unwrap_err();
        assert!(err.to_string().contains("duplicate index 0"), "{err}");

        std::fs::write(&path, "index,label\n0,-1\n").unwrap();
        let err = load_labels(&path, 1).unwrap_err();
        assert!(err.to_string().contains("non-negative"), "{err}");

        std::fs::write(&path, "index,label\n5,1\n").unwrap();
        let err = load_labels(&path, 1).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn labels_tolerate_crlf_and_blank_lines() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("l.csv");
        std::fs::write(&path, "index,label\r\n0,4\r\n\r\n1,5\r\n").unwrap();
        assert_eq!(load_labels(&path, 2).unwrap(), vec![4, 5]);
    }

    fn four_class_dataset() -> LabeledDataset {
        // Classes 0..4, interleaved row order.
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 0.0]).collect();
        let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
        LabeledDataset::new(matrix(&rows), labels, None).unwrap()
    }

    #[test]
    fn half_split_takes_lower_classes() {
        let data = four_class_dataset();
        let (train, test) = class_disjoint_split(&data, &SplitSpec::FirstHalfClasses).unwrap();
        assert_eq!(train.classes(), vec![0, 1]);
        assert_eq!(test.classes(), vec![2, 3]);
        // Original row order preserved.
        assert_eq!(train.ids, vec!["0", "1", "4", "5"]);
        assert_eq!(test.ids, vec!["2", "3", "6", "7"]);
    }

    #[test]
    fn half_split_odd_class_count_rounds_up() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64]).collect();
        let data = LabeledDataset::new(matrix(&rows), vec![10, 20, 30], None).unwrap();
        let (train, test) = class_disjoint_split(&data, &SplitSpec::FirstHalfClasses).unwrap();
        assert_eq!(train.classes(), vec![10, 20]);
        assert_eq!(test.classes(), vec![30]);
    }

    #[test]
    fn explicit_split_validates_lists() {
        let data = four_class_dataset();
        let overlap = SplitSpec::Explicit {
            train_classes: vec![0, 1],
            test_classes: vec![1, 2, 3],
        };
        assert!(class_disjoint_split(&data, &overlap).is_err());

        let incomplete = SplitSpec::Explicit {
            train_classes: vec![0],
            test_classes: vec![1, 2],
        };
        assert!(class_disjoint_split(&data, &incomplete).is_err());

        let phantom = SplitSpec::Explicit {
            train_classes: vec![0, 1, 9],
            test_classes: vec![2, 3],
        };
        assert!(class_disjoint_split(&data, &phantom).is_err());

        let ok = SplitSpec::Explicit {
            train_classes: vec![3, 0],
            test_classes: vec![1, 2],
        };
        let (train, test) = class_disjoint_split(&data, &ok).unwrap();
        assert_eq!(train.classes(), vec![0, 3]);
        assert_eq!(test.classes(), vec![1, 2]);
    }

    #[test]
    fn single_class_split_errors() {
        let rows = vec![vec![0.0], vec![1.0]];
        let data = LabeledDataset::new(matrix(&rows), vec![5, 5], None).unwrap();
        assert!(class_disjoint_split(&data, &SplitSpec::FirstHalfClasses).is_err());
    }

    #[test]
    fn subsample_full_fraction_is_identity() {
        let data = four_class_dataset();
        let s = subsample_per_class(&data, 1.0, 7).unwrap();
        assert_eq!(s.ids, data.ids);
        assert_eq!(s.labels, data.labels);
    }

    #[test]
    fn subsample_keeps_at_least_one_per_class() {
        let data = four_class_dataset(); // 2 rows per class
        let s = subsample_per_class(&data, 0.05, 7).unwrap();
        assert_eq!(s.classes(), data.classes());
        for (_, rows) in s.class_indices() {
            assert_eq!(rows.len(), 1); // round(0.05 * 2) = 0, clamped to 1
        }
    }

    #[test]
    fn subsample_rounds_half_away_from_zero() {
        // 59 rows at 5% -> round(2.95) = 3; 82 rows -> round(4.1) = 4.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..59 {
            rows.push(vec![i as f64]);
            labels.push(0);
        }
        for i in 0..82 {
            rows.push(vec![100.0 + i as f64]);
            labels.push(1);
        }
        let data = LabeledDataset::new(matrix(&rows), labels, None).unwrap();
        let s = subsample_per_class(&data, 0.05, 1).unwrap();
        let by_class = s.class_indices();
        assert_eq!(by_class[&0].len(), 3);
        assert_eq!(by_class[&1].len(), 4);
    }

    #[test]
    fn subsample_is_deterministic_and_ordered() {
        let data = four_class_dataset();
        let a = subsample_per_class(&data, 0.5, 42).unwrap();
        let b = subsample_per_class(&data, 0.5, 42).unwrap();
        assert_eq!(a.ids, b.ids);
        // Kept ids must be ascending because the original row order was.
        let mut sorted = a.ids.clone();
        sorted.sort_by_key(|s| s.parse::<usize>().unwrap());
        assert_eq!(a.ids, sorted);
    }

    #[test]
    fn subsample_rejects_bad_fraction() {
        let data = four_class_dataset();
        assert!(subsample_per_class(&data, 0.0, 1).is_err());
        assert!(subsample_per_class(&data, 1.5, 1).is_err());
        assert!(subsample_per_class(&data, f64::NAN, 1).is_err());
    }
}
