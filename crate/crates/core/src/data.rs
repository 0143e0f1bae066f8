//! Datasets: synthetic generators certified by exhaustive scans, MNIST IDX
//! ingestion, subsetting and label noise.
//!
//! Generated datasets record the γ / ε actually measured on their samples,
//! never the requested targets.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Matrix, Rng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CACHE_MAGIC: &[u8; 4] = b"AFDS";
pub const CACHE_VERSION: u32 = 1;
const MAX_GENERATION_ATTEMPTS: usize = 50;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad IDX magic: expected {expected:#010x}, read {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("requested {requested} samples, only {available} available")]
    InsufficientSamples { requested: usize, available: usize },
    #[error("generation failed after {attempts} attempts: {detail}")]
    GenerationFailed { attempts: usize, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad dataset cache: {0}")]
    BadCache(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// `±1` targets for binary tasks, class indices otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    Binary(Vec<f64>),
    Class { labels: Vec<usize>, classes: usize },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Binary(y) => y.len(),
            Labels::Class { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Binary labels map `-1 → 0`, `+1 → 1`.
    pub fn class_indices(&self) -> Vec<usize> {
        match self {
            Labels::Binary(y) => y.iter().map(|&v| usize::from(v > 0.0)).collect(),
            Labels::Class { labels, .. } => labels.clone(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Labels::Binary(_) => 2,
            Labels::Class { classes, .. } => *classes,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Labels {
        match self {
            Labels::Binary(y) => Labels::Binary(indices.iter().map(|&i| y[i]).collect()),
            Labels::Class { labels, classes } => Labels::Class {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        }
    }

    fn value_string(&self, i: usize) -> String {
        match self {
            Labels::Binary(y) => format!("{}", y[i]),
            Labels::Class { labels, .. } => labels[i].to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    OrthogonalSeparable,
    NearlyOrthogonal,
    Idx,
    Csv,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: DatasetKind,
    /// Measured: min pairwise `⟨x_i y_i, x_j y_j⟩` for orthogonal-separable
    /// data, max off-diagonal `|⟨x_i, x_j⟩|` for nearly-orthogonal data.
    pub gamma: Option<f64>,
    /// Measured `min ‖x_i‖² / n - γ` for nearly-orthogonal data.
    pub epsilon: Option<f64>,
    pub noise_fraction: f64,
    /// Indices (into this dataset) whose labels were corrupted.
    pub flipped: Vec<usize>,
    pub seed: Option<u64>,
    pub provenance: String,
}

impl DatasetMeta {
    pub fn new(kind: DatasetKind, provenance: impl Into<String>) -> Self {
        DatasetMeta {
            kind,
            gamma: None,
            epsilon: None,
            noise_fraction: 0.0,
            flipped: Vec::new(),
            seed: None,
            provenance: provenance.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Labels,
    meta: DatasetMeta,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Labels, meta: DatasetMeta) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(DataError::InvalidArgument("dataset must have at least one sample".into()));
        }
        if inputs.rows() != labels.len() {
            return Err(DataError::CountMismatch {
                images: inputs.rows(),
                labels: labels.len(),
            });
        }
        if let Labels::Binary(y) = &labels {
            if let Some(v) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
                return Err(DataError::InvalidArgument(format!("binary label {v} is not ±1")));
            }
        }
        if let Labels::Class { labels: l, classes } = &labels {
            if let Some(v) = l.iter().find(|&&v| v >= *classes) {
                return Err(DataError::InvalidArgument(format!(
                    "class label {v} out of range for {classes} classes"
                )));
            }
        }
        Ok(Dataset {
            inputs,
            labels,
            meta,
        })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows in `indices` order. Noise bookkeeping is remapped to the new
    /// positions.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut meta = self.meta.clone();
        let flipped: std::collections::HashSet<usize> = self.meta.flipped.iter().copied().collect();
        meta.flipped = indices
            .iter()
            .enumerate()
            .filter(|(_, i)| flipped.contains(i))
            .map(|(pos, _)| pos)
            .collect();
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: self.labels.select(indices),
            meta,
        }
    }

    /// Random disjoint split into `(rest, held_out)` with `n_held_out` rows
    /// in the second part.
    pub fn split(&self, n_held_out: usize, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
        if n_held_out >= self.len() {
            return Err(DataError::InsufficientSamples {
                requested: n_held_out + 1,
                available: self.len(),
            });
        }
        let perm = rng.sample_indices(self.len(), self.len());
        let (held, rest) = perm.split_at(n_held_out);
        Ok((self.select(rest), self.select(held)))
    }
}

/// Min over all pairs, `i = j` included, of `⟨x_i y_i, x_j y_j⟩`.
pub fn scan_orthogonal_separable(inputs: &Matrix, labels: &[f64]) -> f64 {
    let n = inputs.rows();
    let mut min = f64::INFINITY;
    for i in 0..n {
        for j in i..n {
            let v = labels[i] * labels[j] * dot(inputs.row(i), inputs.row(j));
            min = min.min(v);
        }
    }
    min
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearOrthogonalScan {
    /// `max_{i≠j} |⟨x_i, x_j⟩|`.
    pub gamma: f64,
    pub min_sq_norm: f64,
    /// `min ‖x_i‖² / n - γ`; the dataset qualifies when this and `gamma`
    /// are both positive.
    pub epsilon: f64,
}

impl NearOrthogonalScan {
    pub fn holds(&self) -> bool {
        self.gamma > 0.0 && self.epsilon > 0.0
    }
}

pub fn scan_nearly_orthogonal(inputs: &Matrix) -> NearOrthogonalScan {
    let n = inputs.rows();
    let mut gamma: f64 = 0.0;
    let mut min_sq_norm = f64::INFINITY;
    for i in 0..n {
        min_sq_norm = min_sq_norm.min(dot(inputs.row(i), inputs.row(i)));
        for j in i + 1..n {
            gamma = gamma.max(dot(inputs.row(i), inputs.row(j)).abs());
        }
    }
    NearOrthogonalScan {
        gamma,
        min_sq_norm,
        epsilon: min_sq_norm / n as f64 - gamma,
    }
}

fn random_unit(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn random_signs(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| if rng.next_u64() & 1 == 1 { 1.0 } else { -1.0 }).collect()
}

/// Samples with `y_i x_i = μ + ζ_i`, `‖μ‖ = 2√γ` and `‖ζ_i‖ ≤ √γ / 2`, so
/// every pair satisfies `⟨x_i y_i, x_j y_j⟩ ≥ 4γ - 2γ - γ/4 > γ`. The
/// returned dataset is certified by [`scan_orthogonal_separable`].
pub fn gen_orthogonal_separable(n: usize, d: usize, gamma_target: f64, rng: &mut Rng) -> Result<Dataset> {
    if d < 2 || n == 0 {
        return Err(DataError::InvalidArgument(format!("need n ≥ 1 and d ≥ 2, got n={n}, d={d}")));
    }
    if !(gamma_target > 0.0) || !gamma_target.is_finite() {
        return Err(DataError::InvalidArgument(format!("γ must be positive, got {gamma_target}")));
    }
    let seed = rng.seed();
    let mut best = f64::NEG_INFINITY;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mu: Vec<f64> = random_unit(d, rng)
            .into_iter()
            .map(|v| 2.0 * gamma_target.sqrt() * v)
            .collect();
        let radius = 0.5 * gamma_target.sqrt();
        let labels = random_signs(n, rng);
        let mut data = Vec::with_capacity(n * d);
        for &y in &labels {
            let dir = random_unit(d, rng);
            // Uniform in the ball.
            let r = radius * rng.next_f64().powf(1.0 / d as f64);
            data.extend(mu.iter().zip(&dir).map(|(m, z)| y * (m + r * z)));
        }
        let inputs = Matrix::from_vec(n, d, data).expect("finite by construction");
        let measured = scan_orthogonal_separable(&inputs, &labels);
        if measured >= gamma_target {
            let mut meta = DatasetMeta::new(DatasetKind::OrthogonalSeparable, format!("orthogonal-separable n={n} d={d} γ≥{gamma_target}"));
            meta.gamma = Some(measured);
            meta.seed = Some(seed);
            return Dataset::new(inputs, Labels::Binary(labels), meta);
        }
        best = best.max(measured);
    }
    Err(DataError::GenerationFailed {
        attempts: MAX_GENERATION_ATTEMPTS,
        detail: format!("best min pairwise product {best} < {gamma_target}"),
    })
}

fn orthonormal_rows(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for q in &rows {
            let p = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows
}

/// Near-orthogonal rows: orthonormal directions perturbed by Gaussian noise
/// so off-diagonal products are small but nonzero, then scaled so that
/// `min ‖x‖² ≥ n (γ + ε_target)` with margin. Certified by
/// [`scan_nearly_orthogonal`].
pub fn gen_nearly_orthogonal(n: usize, d: usize, eps_target: f64, rng: &mut Rng) -> Result<Dataset> {
    if n == 0 || d < 4 * n {
        return Err(DataError::InvalidArgument(format!("need d ≥ 4n, got n={n}, d={d}")));
    }
    if !(eps_target > 0.0) || !eps_target.is_finite() {
        return Err(DataError::InvalidArgument(format!("ε must be positive, got {eps_target}")));
    }
    let seed = rng.seed();
    // Perturbation size: off-diagonal products are about τ·√(2/d) each, and
    // the max over pairs should stay well below 1/n.
    let mut tau = (0.1 * (d as f64).sqrt() / n as f64).min(0.5);
    let mut last = None;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let q = orthonormal_rows(n, d, rng);
        let mut data = Vec::with_capacity(n * d);
        for row in &q {
            data.extend(row.iter().map(|v| v + tau * rng.normal() / (d as f64).sqrt()));
        }
        let raw = Matrix::from_vec(n, d, data).expect("finite by construction");
        let scan = scan_nearly_orthogonal(&raw);
        let slack = scan.min_sq_norm - n as f64 * scan.gamma;
        if scan.gamma > 0.0 && slack > 0.0 {
            // Scaling by s multiplies every product by s²: choose s² with a 10% margin.
            let s2 = 1.1 * n as f64 * eps_target / slack;
            let inputs = raw.scale(s2.sqrt());
            let scan = scan_nearly_orthogonal(&inputs);
            if scan.gamma > 0.0 && scan.epsilon >= eps_target {
                let mut meta = DatasetMeta::new(DatasetKind::NearlyOrthogonal, format!("nearly-orthogonal n={n} d={d} ε≥{eps_target}"));
                meta.gamma = Some(scan.gamma);
                meta.epsilon = Some(scan.epsilon);
                meta.seed = Some(seed);
                return Dataset::new(inputs, Labels::Binary(random_signs(n, rng)), meta);
            }
            last = Some(scan);
        } else {
            last = Some(scan);
            tau *= 0.5;
        }
    }
    Err(DataError::GenerationFailed {
        attempts: MAX_GENERATION_ATTEMPTS,
        detail: format!("last scan {last:?}"),
    })
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or(DataError::Truncated {
        expected: offset + 4,
        actual: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Decodes an image/label IDX pair (optionally gzip-compressed) into a
/// dataset with pixels scaled to `[0, 1]`.
pub fn idx_to_dataset(images: &IdxImages, labels: &[u8], provenance: String) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let d = images.rows * images.cols;
    let data = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let inputs = Matrix::from_vec(images.count, d, data).expect("finite pixels");
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1).max(10);
    let labels = Labels::Class {
        labels: labels.iter().map(|&l| l as usize).collect(),
        classes,
    };
    Dataset::new(inputs, labels, DatasetMeta::new(DatasetKind::Idx, provenance))
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = parse_idx_images(&read_maybe_gz(images_path)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?)?;
    idx_to_dataset(&images, &labels, format!("idx:{}", images_path.display()))
}

/// Corrupts exactly `⌊fraction · n⌋` labels, chosen without replacement,
/// each to a uniformly random different label.
pub fn inject_label_noise(ds: &Dataset, fraction: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DataError::InvalidArgument(format!("noise fraction {fraction} outside [0, 1]")));
    }
    let count = (fraction * ds.len() as f64).floor() as usize;
    let mut chosen = rng.sample_indices(ds.len(), count);
    chosen.sort_unstable();
    let mut labels = ds.labels.clone();
    match &mut labels {
        Labels::Binary(y) => {
            for &i in &chosen {
                y[i] = -y[i];
            }
        }
        Labels::Class { labels, classes } => {
            if *classes < 2 {
                return Err(DataError::InvalidArgument("label noise needs at least two classes".into()));
            }
            for &i in &chosen {
                let r = rng.below(*classes - 1);
                labels[i] = if r < labels[i] { r } else { r + 1 };
            }
        }
    }
    let mut meta = ds.meta.clone();
    meta.noise_fraction = fraction;
    let mut flipped: Vec<usize> = meta.flipped.iter().copied().chain(chosen).collect();
    flipped.sort_unstable();
    flipped.dedup();
    meta.flipped = flipped;
    Ok(Dataset {
        inputs: ds.inputs.clone(),
        labels,
        meta,
    })
}

/// Uniform sample of `n` rows without replacement, optionally restricted to
/// `classes`. A two-class filter yields binary `±1` labels (smaller class
/// index → −1); other filters renumber the kept classes `0..k` in ascending
/// order.
pub fn subset(ds: &Dataset, n: usize, rng: &mut Rng, classes: Option<&[usize]>) -> Result<Dataset> {
    let candidates: Vec<usize> = match (classes, &ds.labels) {
        (None, _) => (0..ds.len()).collect(),
        (Some(filter), Labels::Class { labels, .. }) => (0..ds.len()).filter(|&i| filter.contains(&labels[i])).collect(),
        (Some(_), Labels::Binary(_)) => {
            return Err(DataError::InvalidArgument("class filter needs class-indexed labels".into()))
        }
    };
    if n > candidates.len() || n == 0 {
        return Err(DataError::InsufficientSamples {
            requested: n,
            available: candidates.len(),
        });
    }
    let picks: Vec<usize> = rng
        .sample_indices(candidates.len(), n)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    let mut out = ds.select(&picks);
    if let (Some(filter), Labels::Class { labels, .. }) = (classes, &out.labels) {
        let mut sorted = filter.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        out.labels = if sorted.len() == 2 {
            Labels::Binary(labels.iter().map(|&l| if l == sorted[0] { -1.0 } else { 1.0 }).collect())
        } else {
            Labels::Class {
                labels: labels.iter().map(|l| sorted.binary_search(l).unwrap()).collect(),
                classes: sorted.len(),
            }
        };
        out.meta.provenance = format!("{} classes={sorted:?}", out.meta.provenance);
    }
    out.meta.provenance = format!("{} subset n={n} seed={}", out.meta.provenance, rng.seed());
    Ok(out)
}

/// CSV with header `x_0,…,x_{d-1},y`; floats in shortest round-trip form.
pub fn write_csv(ds: &Dataset, mut w: impl Write) -> io::Result<()> {
    let header: Vec<String> = (0..ds.dim()).map(|i| format!("x_{i}")).chain(["y".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..ds.len() {
        let mut line: Vec<String> = ds.inputs.row(i).iter().map(|v| format!("{v}")).collect();
        line.push(ds.labels.value_string(i));
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Binary cache layout (little-endian):
/// `"AFDS"`, version `u32`, `n u64`, `d u64`, label tag `u8` (0 binary,
/// 1 class), classes `u64`, metadata length `u64`, metadata JSON,
/// `n·d` `f64` inputs, then labels as `i8` (binary) or `u32` (class).
pub fn write_cache(ds: &Dataset, mut w: impl Write) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(ds.dim() as u64).to_le_bytes());
    let (tag, classes) = match &ds.labels {
        Labels::Binary(_) => (0u8, 2u64),
        Labels::Class { classes, .. } => (1u8, *classes as u64),
    };
    buf.push(tag);
    buf.extend_from_slice(&classes.to_le_bytes());
    let meta = serde_json::to_vec(&ds.meta).map_err(|e| DataError::BadCache(e.to_string()))?;
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    for v in ds.inputs.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    match &ds.labels {
        Labels::Binary(y) => buf.extend(y.iter().map(|&v| (v as i8) as u8)),
        Labels::Class { labels, .. } => {
            for &l in labels {
                buf.extend_from_slice(&(l as u32).to_le_bytes());
            }
        }
    }
    w.write_all(&buf).map_err(|source| DataError::Io {
        path: PathBuf::from("<cache>"),
        source,
    })
}

pub fn read_cache(bytes: &[u8]) -> Result<Dataset> {
    struct Cursor<'a> {
        b: &'a [u8],
        at: usize,
    }
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            let s = self.b.get(self.at..self.at + n).ok_or(DataError::Truncated {
                expected: self.at + n,
                actual: self.b.len(),
            })?;
            self.at += n;
            Ok(s)
        }
        fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
    }
    let mut c = Cursor { b: bytes, at: 0 };
    if c.take(4)? != CACHE_MAGIC {
        return Err(DataError::BadCache("missing AFDS magic".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(DataError::BadCache(format!("unsupported version {version}")));
    }
    let n = c.u64()? as usize;
    let d = c.u64()? as usize;
    let tag = c.take(1)?[0];
    let classes = c.u64()? as usize;
    let meta_len = c.u64()? as usize;
    let meta: DatasetMeta = serde_json::from_slice(c.take(meta_len)?).map_err(|e| DataError::BadCache(e.to_string()))?;
    let raw = c.take(n * d * 8)?;
    let data = raw.chunks_exact(8).map(|ch| f64::from_le_bytes(ch.try_into().unwrap())).collect();
    let inputs = Matrix::from_vec(n, d, data).map_err(|e| DataError::BadCache(e.to_string()))?;
    let labels = match tag {
        0 => Labels::Binary(c.take(n)?.iter().map(|&b| (b as i8) as f64).collect()),
        1 => Labels::Class {
            labels: c
                .take(n * 4)?
                .chunks_exact(4)
                .map(|ch| u32::from_le_bytes(ch.try_into().unwrap()) as usize)
                .collect(),
            classes,
        },
        other => return Err(DataError::BadCache(format!("unknown label tag {other}"))),
    };
    Dataset::new(inputs, labels, meta)
}
