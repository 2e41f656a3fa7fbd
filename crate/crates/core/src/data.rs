//! Dataset ingestion, unit-ball normalization, deterministic splits, and the
//! synthetic generator used by the validity simulations.
//!
//! Every dataset row lives in the closed Euclidean unit ball, which the
//! loaders enforce by projection (x -> x / max(1, |x|)). Splits are seeded
//! permutations, so a (dataset, seed) pair always produces the same parts,
//! and each part records which role it plays through its [`SplitTag`].
//!
//! Loaders never touch the network: files are read from a local data
//! directory (see the `--data-dir` flag / `DATA_DIR` variable of the CLI and
//! `scripts/fetch_data.sh` for provenance of the benchmark files).

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Role of a dataset within the experimental protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    /// As loaded, before any split.
    Full,
    /// Certification split S: trains the posterior and backs the bound.
    Cert,
    /// Prior split S': reserved for learning a data-dependent prior.
    Prior,
    /// Held-out test split, never shown to training or certification.
    Test,
}

/// Dense feature matrix with unit-ball rows, labels in [0, class_count), and
/// a content fingerprint for provenance tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    rows: usize,
    cols: usize,
    labels: Vec<usize>,
    class_count: usize,
    split_tag: SplitTag,
    fingerprint: String,
}

const UNIT_BALL_SLACK: f64 = 1e-9;

fn project_rows(features: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut features[r * cols..(r + 1) * cols];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
}

fn content_fingerprint(features: &[f64], labels: &[usize], cols: usize, class_count: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"PBDATA01");
    hasher.update((labels.len() as u64).to_le_bytes());
    hasher.update((cols as u64).to_le_bytes());
    hasher.update((class_count as u64).to_le_bytes());
    for v in features {
        hasher.update(v.to_le_bytes());
    }
    for &l in labels {
        hasher.update((l as u64).to_le_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Dataset {
    /// Builds a dataset from row vectors, validating the unit-ball and label
    /// invariants (rows are not projected here; use a loader for raw data).
    pub fn from_parts(rows: Vec<Vec<f64>>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err(Error::invalid("features", "rows must have dimension >= 1"));
        }
        let mut features = Vec::with_capacity(rows.len() * cols);
        for row in &rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, got: row.len() });
            }
            features.extend_from_slice(row);
        }
        Self::from_flat(features, rows.len(), cols, labels, class_count, SplitTag::Full)
    }

    fn from_flat(
        features: Vec<f64>,
        rows: usize,
        cols: usize,
        labels: Vec<usize>,
        class_count: usize,
        split_tag: SplitTag,
    ) -> Result<Self> {
        if rows == 0 {
            return Err(Error::EmptyDataset);
        }
        if labels.len() != rows {
            return Err(Error::DimensionMismatch { expected: rows, got: labels.len() });
        }
        if class_count < 2 {
            return Err(Error::invalid("class_count", "must be >= 2"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "dataset features".into() });
        }
        for r in 0..rows {
            let norm =
                features[r * cols..(r + 1) * cols].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 + UNIT_BALL_SLACK {
                return Err(Error::invalid("features", format!("row {r} has norm {norm} > 1")));
            }
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= class_count {
                let _ = i;
                return Err(Error::LabelOutOfRange { label, class_count });
            }
        }
        let fingerprint = content_fingerprint(&features, &labels, cols, class_count);
        Ok(Self { features, rows, cols, labels, class_count, split_tag, fingerprint })
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.rows
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[must_use]
    pub fn feature_dim(&self) -> usize {
        self.cols
    }

    #[must_use]
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    #[must_use]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.cols..(i + 1) * self.cols]
    }

    #[must_use]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    #[must_use]
    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    /// Hex SHA-256 over dimensions, features, and labels; two datasets share
    /// a fingerprint exactly when their contents are identical.
    #[must_use]
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// New dataset holding the given rows (in the given order) under a new
    /// split tag.
    pub fn subset(&self, indices: &[usize], tag: SplitTag) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut features = Vec::with_capacity(indices.len() * self.cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.rows {
                return Err(Error::invalid("indices", format!("row {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::from_flat(features, indices.len(), self.cols, labels, self.class_count, tag)
    }

    /// Per-feature min-max rescaling to [0, 1] followed by unit-ball
    /// projection. Constant columns map to zero. This is the preprocessing
    /// applied to the UCI benchmarks before training.
    pub fn minmax_scale(&self) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; self.cols];
        let mut hi = vec![f64::NEG_INFINITY; self.cols];
        for r in 0..self.rows {
            for (c, &v) in self.row(r).iter().enumerate() {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
        let mut features = Vec::with_capacity(self.features.len());
        for r in 0..self.rows {
            for (c, &v) in self.row(r).iter().enumerate() {
                let range = hi[c] - lo[c];
                features.push(if range > 0.0 { (v - lo[c]) / range } else { 0.0 });
            }
        }
        project_rows(&mut features, self.rows, self.cols);
        Self::from_flat(
            features,
            self.rows,
            self.cols,
            self.labels.clone(),
            self.class_count,
            self.split_tag,
        )
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(bytes)
}

fn idx_header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        return Err(Error::Parse { path: path.to_path_buf(), line: 0, reason: "truncated IDX header".into() });
    }
    let got = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if got != magic {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("bad IDX magic {got:#010x}, expected {magic:#010x}"),
        });
    }
    Ok((0..dims)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect())
}

/// Loads an IDX image/label pair (the MNIST and FashionMNIST container):
/// big-endian headers, unsigned-byte pixels. Pixels are scaled to [0, 1] and
/// each flattened image is projected to the unit ball.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = read_file(images_path)?;
    let dims = idx_header(&img_bytes, images_path, 0x0000_0803, 3)?;
    let (count, height, width) = (dims[0], dims[1], dims[2]);
    let pixels = count * height * width;
    if img_bytes.len() != 16 + pixels {
        return Err(Error::Parse {
            path: images_path.to_path_buf(),
            line: 0,
            reason: format!("expected {} pixel bytes, found {}", pixels, img_bytes.len() - 16),
        });
    }

    let lbl_bytes = read_file(labels_path)?;
    let lbl_dims = idx_header(&lbl_bytes, labels_path, 0x0000_0801, 1)?;
    if lbl_dims[0] != count {
        return Err(Error::Parse {
            path: labels_path.to_path_buf(),
            line: 0,
            reason: format!("label count {} does not match image count {count}", lbl_dims[0]),
        });
    }
    if lbl_bytes.len() != 8 + count {
        return Err(Error::Parse {
            path: labels_path.to_path_buf(),
            line: 0,
            reason: "truncated label payload".into(),
        });
    }

    let cols = height * width;
    let mut features: Vec<f64> =
        img_bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    project_rows(&mut features, count, cols);
    let labels: Vec<usize> = lbl_bytes[8..].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::from_flat(features, count, cols, labels, class_count.max(2), SplitTag::Full)
}

/// Loads the sparse text format `label idx:val idx:val ...` with 1-based
/// indices (the distribution format of the UCI benchmarks). Missing indices
/// are zero, raw labels are remapped to contiguous [0, |Y|) in ascending
/// order, and rows are projected to the unit ball.
pub fn load_sparse_text(path: &Path, n_features: usize) -> Result<Dataset> {
    if n_features == 0 {
        return Err(Error::invalid("n_features", "must be >= 1"));
    }
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        reason: "file is not valid UTF-8".into(),
    })?;
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut raw_labels: Vec<f64> = Vec::new();
    let mut features: Vec<f64> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(lineno + 1, format!("bad label `{label_tok}`")))?;
        let row_start = features.len();
        features.resize(row_start + n_features, 0.0);
        for tok in tokens {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno + 1, format!("bad entry `{tok}`")))?;
            let idx: usize = idx_s
                .parse()
                .map_err(|_| parse_err(lineno + 1, format!("bad index `{idx_s}`")))?;
            let val: f64 = val_s
                .parse()
                .map_err(|_| parse_err(lineno + 1, format!("bad value `{val_s}`")))?;
            if idx == 0 || idx > n_features {
                return Err(parse_err(
                    lineno + 1,
                    format!("index {idx} out of range 1..={n_features}"),
                ));
            }
            features[row_start + idx - 1] = val;
        }
        raw_labels.push(label);
    }
    let rows = raw_labels.len();
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }

    let mut keys = raw_labels.clone();
    keys.sort_by(f64::total_cmp);
    keys.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| keys.binary_search_by(|k| k.total_cmp(l)).expect("key present"))
        .collect();

    project_rows(&mut features, rows, n_features);
    Dataset::from_flat(features, rows, n_features, labels, keys.len().max(2), SplitTag::Full)
}

fn seeded_permutation(m: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    perm
}

/// Seeded 50/50 split into (train, test); odd sizes give the extra row to
/// the train side. The parts are disjoint and exhaustive.
pub fn split_half(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if data.len() < 2 {
        return Err(Error::invalid("data", "need at least 2 rows to split"));
    }
    let perm = seeded_permutation(data.len(), seed);
    let train_len = data.len() - data.len() / 2;
    let train = data.subset(&perm[..train_len], SplitTag::Cert)?;
    let test = data.subset(&perm[train_len..], SplitTag::Test)?;
    Ok((train, test))
}

/// Seeded split of a training set into (prior_set, cert_set), giving
/// floor(fraction * m) rows (at least 1, at most m - 1) to the prior side.
/// The certificate's sample size is the cert side's length.
pub fn split_prior(train: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("fraction", format!("must lie in (0,1), got {fraction}")));
    }
    if train.len() < 2 {
        return Err(Error::invalid("train", "need at least 2 rows to split"));
    }
    let m = train.len();
    let prior_len = ((fraction * m as f64).floor() as usize).clamp(1, m - 1);
    let perm = seeded_permutation(m, seed);
    let prior = train.subset(&perm[..prior_len], SplitTag::Prior)?;
    let cert = train.subset(&perm[prior_len..], SplitTag::Cert)?;
    Ok((prior, cert))
}

/// Noise std of the synthetic blob generator.
pub const BLOB_NOISE_STD: f64 = 0.1;

/// Synthetic classification task: one isotropic Gaussian blob per class,
/// centred at `separation` times a random unit vector, with labels balanced
/// round-robin and rows projected into the unit ball. `separation` 0 makes
/// the classes indistinguishable; values near 1 give a comfortable margin.
pub fn synth_gaussian_blobs(
    m: usize,
    n: usize,
    class_count: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if class_count < 2 {
        return Err(Error::invalid("class_count", "must be >= 2"));
    }
    if m < class_count {
        return Err(Error::invalid("m", "need at least one row per class"));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::invalid("separation", "must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut centers = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        let mut c: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in c.iter_mut() {
            *v *= separation / norm;
        }
        centers.push(c);
    }
    let mut features = Vec::with_capacity(m * n);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let y = i % class_count;
        for j in 0..n {
            let noise: f64 = normal.sample(&mut rng);
            features.push(centers[y][j] + BLOB_NOISE_STD * noise);
        }
        labels.push(y);
    }
    project_rows(&mut features, m, n);
    Dataset::from_flat(features, m, n, labels, class_count, SplitTag::Full)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::from_parts(
            vec![
                vec![0.5, 0.0],
                vec![0.0, 0.5],
                vec![-0.5, 0.0],
                vec![0.0, -0.5],
                vec![0.3, 0.3],
                vec![-0.3, -0.3],
                vec![0.2, -0.2],
                vec![-0.2, 0.2],
                vec![0.1, 0.0],
                vec![0.0, 0.1],
            ],
            vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
            2,
        )
        .unwrap()
    }

    #[test]
    fn from_parts_enforces_invariants() {
        assert!(matches!(
            Dataset::from_parts(vec![], vec![], 2),
            Err(Error::EmptyDataset)
        ));
        assert!(Dataset::from_parts(vec![vec![2.0, 0.0]], vec![0], 2).is_err(), "norm > 1");
        assert!(matches!(
            Dataset::from_parts(vec![vec![0.5, 0.0]], vec![2], 2),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(Dataset::from_parts(vec![vec![0.5], vec![0.1, 0.2]], vec![0, 1], 2).is_err());
    }

    fn idx_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        // Two 2x2 images with pixels (0, 255, 128, 64) and (0, 0, 0, 0).
        let mut images = Vec::new();
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&[0, 255, 128, 64, 0, 0, 0, 0]);
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&2u32.to_be_bytes());
        labels.extend_from_slice(&[1, 0]);
        let ip = dir.join("images.idx");
        let lp = dir.join("labels.idx");
        std::fs::write(&ip, &images).unwrap();
        std::fs::write(&lp, &labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_loader_round_trips_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = idx_fixture(dir.path());
        let data = load_idx(&ip, &lp).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.feature_dim(), 4);
        // Raw scaled pixels (0, 1, 128/255, 64/255) have norm > 1 and are
        // projected; the all-zero image stays zero.
        let raw = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (got, want) in data.row(0).iter().zip(raw.iter().map(|v| v / norm)) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(data.row(1).iter().all(|&v| v == 0.0));
        assert_eq!((data.label(0), data.label(1)), (1, 0));
    }

    #[test]
    fn idx_loader_rejects_bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = idx_fixture(dir.path());

        let mut bad_magic = std::fs::read(&ip).unwrap();
        bad_magic[3] = 0x01;
        let bm = dir.path().join("bad_magic.idx");
        std::fs::write(&bm, &bad_magic).unwrap();
        assert!(matches!(load_idx(&bm, &lp), Err(Error::Parse { .. })));

        let truncated = dir.path().join("trunc.idx");
        std::fs::write(&truncated, &std::fs::read(&ip).unwrap()[..20]).unwrap();
        assert!(matches!(load_idx(&truncated, &lp), Err(Error::Parse { .. })));

        // One label too few.
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&1u32.to_be_bytes());
        labels.push(1);
        let short = dir.path().join("short_labels.idx");
        std::fs::write(&short, &labels).unwrap();
        assert!(matches!(load_idx(&ip, &short), Err(Error::Parse { .. })));
    }

    #[test]
    fn sparse_loader_parses_and_projects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.txt");
        std::fs::write(&path, "1 1:0.5 3:0.5\n-1 2:2.0\n").unwrap();
        let data = load_sparse_text(&path, 3).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.row(0), &[0.5, 0.0, 0.5], "direct parse with zero fill");
        assert_eq!(data.row(1), &[0.0, 1.0, 0.0], "norm-2 row scaled onto the sphere");
        // Labels {-1, +1} remap ascending to {0, 1}.
        assert_eq!((data.label(0), data.label(1)), (1, 0));
        assert_eq!(data.class_count(), 2);
    }

    #[test]
    fn sparse_loader_rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "1 1:0.5 oops\n").unwrap();
        assert!(matches!(load_sparse_text(&path, 3), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&path, "1 4:0.5\n").unwrap();
        assert!(matches!(load_sparse_text(&path, 3), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&path, "1 0:0.5\n").unwrap();
        assert!(load_sparse_text(&path, 3).is_err(), "index 0 is out of the 1-based range");
    }

    #[test]
    fn split_half_partitions_deterministically() {
        let data = toy();
        let (train, test) = split_half(&data, 7).unwrap();
        assert_eq!((train.len(), test.len()), (5, 5));
        assert_eq!(train.split_tag(), SplitTag::Cert);
        assert_eq!(test.split_tag(), SplitTag::Test);
        let (train2, test2) = split_half(&data, 7).unwrap();
        assert_eq!(train.fingerprint(), train2.fingerprint());
        assert_eq!(test.fingerprint(), test2.fingerprint());

        // Partition check: every original row appears exactly once.
        let mut seen: Vec<Vec<f64>> = Vec::new();
        for part in [&train, &test] {
            for i in 0..part.len() {
                seen.push(part.row(i).to_vec());
            }
        }
        assert_eq!(seen.len(), data.len());
        for i in 0..data.len() {
            assert!(seen.iter().any(|r| r == data.row(i)), "row {i} lost by the split");
        }
    }

    #[test]
    fn split_half_gives_extra_row_to_train() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..11 {
            rows.push(vec![i as f64 / 20.0, 0.0]);
            labels.push(i % 2);
        }
        let data = Dataset::from_parts(rows, labels, 2).unwrap();
        let (train, test) = split_half(&data, 0).unwrap();
        assert_eq!((train.len(), test.len()), (6, 5));
    }

    #[test]
    fn split_prior_sizes_and_disjointness() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..100 {
            rows.push(vec![(i as f64) / 200.0, 0.25]);
            labels.push(i % 2);
        }
        let data = Dataset::from_parts(rows, labels, 2).unwrap();
        let (prior, cert) = split_prior(&data, 0.25, 3).unwrap();
        assert_eq!((prior.len(), cert.len()), (25, 75));
        assert_eq!(prior.split_tag(), SplitTag::Prior);
        assert_eq!(cert.split_tag(), SplitTag::Cert);
        for i in 0..prior.len() {
            for j in 0..cert.len() {
                assert_ne!(prior.row(i), cert.row(j), "splits must be disjoint");
            }
        }
        assert!(split_prior(&data, 0.0, 3).is_err());
        assert!(split_prior(&data, 1.0, 3).is_err());
    }

    #[test]
    fn blobs_are_deterministic_balanced_and_in_ball() {
        let a = synth_gaussian_blobs(90, 5, 3, 0.8, 11).unwrap();
        let b = synth_gaussian_blobs(90, 5, 3, 0.8, 11).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint(), "same seed must reproduce the dataset");
        let c = synth_gaussian_blobs(90, 5, 3, 0.8, 12).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());

        let mut counts = [0usize; 3];
        for i in 0..a.len() {
            counts[a.label(i)] += 1;
        }
        assert_eq!(counts, [30, 30, 30], "labels must be balanced");
        for i in 0..a.len() {
            let norm = a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn minmax_scale_maps_columns_to_unit_range() {
        let data = Dataset::from_parts(
            vec![vec![0.1, 0.5, 0.25], vec![0.3, 0.5, 0.0], vec![0.2, 0.5, 0.1]],
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        let scaled = data.minmax_scale().unwrap();
        // Column 0 spans {0.1, 0.3}: scaled to {0, 1, 0.5}; column 1 is
        // constant and maps to 0; column 2 spans {0, 0.25}. Every scaled row
        // already has norm <= 1, so the projection leaves them unchanged.
        let col = |c: usize| (0..3).map(|r| scaled.row(r)[c]).collect::<Vec<_>>();
        let close = |got: Vec<f64>, want: [f64; 3]| {
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-12, "column value {g} != {w}");
            }
        };
        close(col(0), [0.0, 1.0, 0.5]);
        close(col(1), [0.0, 0.0, 0.0]);
        close(col(2), [1.0, 0.0, 0.4]);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = Dataset::from_parts(vec![vec![0.5, 0.0]], vec![0], 2).unwrap();
        let b = Dataset::from_parts(vec![vec![0.5, 0.0]], vec![0], 2).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = Dataset::from_parts(vec![vec![0.5, 1e-9]], vec![0], 2).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint(), "hash must change with the bytes");
        let d = Dataset::from_parts(vec![vec![0.5, 0.0]], vec![1], 2).unwrap();
        assert_ne!(a.fingerprint(), d.fingerprint(), "hash must cover labels");
    }
}
