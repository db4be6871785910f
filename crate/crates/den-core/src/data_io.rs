//! Dataset loading, standardization, run configuration, and seeded RNG
//! streams.

use crate::error::{DenError, Result};
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::io::Read;
use std::path::Path;

/// Variance floor for standardization; constant features stay centered at 0.
pub const STD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Dense,
    /// Rows hold integer token ids in [0, vocab_size).
    TokenSequence { vocab_size: usize },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    pub feature_names: Option<Vec<String>>,
    pub kind: DatasetKind,
}

impl Dataset {
    pub fn new(
        samples: Array2<f64>,
        labels: Option<Vec<usize>>,
        feature_names: Option<Vec<String>>,
        kind: DatasetKind,
    ) -> Result<Self> {
        let (n, d) = samples.dim();
        if n < 2 {
            return Err(DenError::Data(format!("need at least 2 samples, got {n}")));
        }
        if d < 1 {
            return Err(DenError::Data("need at least 1 feature".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(DenError::Data("samples contain NaN or Inf".into()));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(DenError::Data(format!(
                    "label count {} does not match sample count {n}",
                    l.len()
                )));
            }
        }
        if let Some(f) = &feature_names {
            if f.len() != d {
                return Err(DenError::Data(format!(
                    "feature name count {} does not match feature count {d}",
                    f.len()
                )));
            }
        }
        if let DatasetKind::TokenSequence { vocab_size } = kind {
            for &v in samples.iter() {
                if v < 0.0 || v.fract() != 0.0 || v >= vocab_size as f64 {
                    return Err(DenError::Data(format!(
                        "token id {v} outside [0, {vocab_size})"
                    )));
                }
            }
        }
        Ok(Dataset {
            samples,
            labels,
            feature_names,
            kind,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.samples.ncols()
    }
}

/// Load a comma-separated file. An optional header row is detected when the
/// first row does not parse as numbers. With `has_labels`, the final column
/// is split off as integer labels.
pub fn load_csv(path: impl AsRef<Path>, has_labels: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DenError::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    let (first_idx, first_line) = lines
        .next()
        .ok_or_else(|| DenError::Data(format!("{}: empty file", path.display())))?;

    let first_cells: Vec<&str> = first_line.split(',').map(str::trim).collect();
    let header_present = first_cells.iter().any(|c| c.parse::<f64>().is_err());
    let n_cols = first_cells.len();

    let mut feature_names = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();

    let parse_row = |row_idx: usize, line: &str| -> Result<Vec<f64>> {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != n_cols {
            return Err(DenError::Parse {
                row: row_idx + 1,
                col: cells.len(),
                message: format!("expected {n_cols} columns, found {}", cells.len()),
            });
        }
        cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let v: f64 = cell.parse().map_err(|_| DenError::Parse {
                    row: row_idx + 1,
                    col: c + 1,
                    message: format!("cannot parse {cell:?} as a number"),
                })?;
                if !v.is_finite() {
                    return Err(DenError::Parse {
                        row: row_idx + 1,
                        col: c + 1,
                        message: format!("non-finite value {cell:?}"),
                    });
                }
                Ok(v)
            })
            .collect()
    };

    if header_present {
        let mut names: Vec<String> = first_cells.iter().map(|s| s.to_string()).collect();
        if has_labels {
            names.pop();
        }
        feature_names = Some(names);
    } else {
        rows.push(parse_row(first_idx, first_line)?);
    }
    for (i, line) in lines {
        rows.push(parse_row(i, line)?);
    }
    if rows.is_empty() {
        return Err(DenError::Data(format!(
            "{}: no data rows",
            path.display()
        )));
    }

    let mut labels = None;
    if has_labels {
        if n_cols < 2 {
            return Err(DenError::Data(
                "label column requested but file has a single column".into(),
            ));
        }
        let mut ls = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter_mut().enumerate() {
            let v = row.pop().unwrap();
            if v < 0.0 || v.fract() != 0.0 {
                return Err(DenError::Parse {
                    row: i + 1,
                    col: n_cols,
                    message: format!("label {v} is not a nonnegative integer"),
                });
            }
            ls.push(v as usize);
        }
        labels = Some(ls);
    }

    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let samples = Array2::from_shape_vec((flat.len() / d, d), flat)
        .map_err(|e| DenError::Data(e.to_string()))?;
    Dataset::new(samples, labels, feature_names, DatasetKind::Dense)
}

/// Write the sample matrix (plus labels, when present) back out as CSV.
/// Floats are printed with Rust's shortest round-trip formatting, so a
/// write-then-read cycle reproduces the matrix bitwise.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (i, row) in data.samples.axis_iter(Axis(0)).enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        if let Some(l) = &data.labels {
            cells.push(format!("{}", l[i]));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DenError::io(path.display().to_string(), e))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| DenError::io(what.to_string(), e))?;
    Ok(u32::from_be_bytes(buf))
}

/// Load an IDX image/label pair (big-endian MNIST layout). Pixels are
/// flattened row-major and scaled to [0, 1].
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let mut img = fs::File::open(images_path)
        .map_err(|e| DenError::io(images_path.display().to_string(), e))?;
    let magic = read_u32_be(&mut img, "idx images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DenError::Data(format!(
            "bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(&mut img, "idx images")? as usize;
    let rows = read_u32_be(&mut img, "idx images")? as usize;
    let cols = read_u32_be(&mut img, "idx images")? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    img.read_exact(&mut pixels)
        .map_err(|e| DenError::io(images_path.display().to_string(), e))?;

    let mut lab = fs::File::open(labels_path)
        .map_err(|e| DenError::io(labels_path.display().to_string(), e))?;
    let magic = read_u32_be(&mut lab, "idx labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DenError::Data(format!(
            "bad IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n_labels = read_u32_be(&mut lab, "idx labels")? as usize;
    if n_labels != n {
        return Err(DenError::Data(format!(
            "IDX image count {n} does not match label count {n_labels}"
        )));
    }
    let mut label_bytes = vec![0u8; n];
    lab.read_exact(&mut label_bytes)
        .map_err(|e| DenError::io(labels_path.display().to_string(), e))?;

    let samples = Array2::from_shape_vec(
        (n, rows * cols),
        pixels.into_iter().map(|p| p as f64 / 255.0).collect(),
    )
    .map_err(|e| DenError::Data(e.to_string()))?;
    let labels = label_bytes.into_iter().map(|b| b as usize).collect();
    Dataset::new(samples, Some(labels), None, DatasetKind::Dense)
}

/// Center each feature at mean 0 and divide by max(std, [`STD_EPS`]).
/// Idempotent up to floating-point noise.
pub fn standardize(data: &Dataset) -> Result<Dataset> {
    if !matches!(data.kind, DatasetKind::Dense) {
        return Err(DenError::Data(
            "standardize applies to dense datasets only".into(),
        ));
    }
    let n = data.n_samples() as f64;
    let mut samples = data.samples.clone();
    for mut col in samples.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / n;
        let std = var.sqrt().max(STD_EPS);
        if var.sqrt() > STD_EPS {
            col.mapv_inplace(|v| v / std);
        }
    }
    Dataset::new(
        samples,
        data.labels.clone(),
        data.feature_names.clone(),
        data.kind,
    )
}

/// Run configuration shared across pipeline stages.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    /// Positive-pair neighbor count, also negatives drawn per sample.
    pub k: usize,
    /// Minimum positive neighbors guaranteed per sample.
    pub j: usize,
    pub embed_dim: usize,
    pub gamma: f64,
    pub eigen_threshold: f64,
    /// Spectral affinity subset size (clamped to N).
    pub spectral_subsample: usize,
    pub knn_filter_neighbors: usize,
    pub epochs_embed: usize,
    pub epochs_head: usize,
    pub epochs_finetune: usize,
    pub lr: f64,
    pub lr_finetune: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 10,
            j: 1,
            embed_dim: 2,
            gamma: 1.0,
            eigen_threshold: 1e-2,
            spectral_subsample: 1000,
            knn_filter_neighbors: 50,
            epochs_embed: 50,
            epochs_head: 50,
            epochs_finetune: 50,
            lr: 1e-3,
            lr_finetune: 1e-4,
            batch_size: 256,
            seed: 0,
            standardize: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j < 1 || self.j >= self.k {
            return Err(DenError::Config(format!(
                "need 1 <= j < k, got j={} k={}",
                self.j, self.k
            )));
        }
        if self.embed_dim < 1 {
            return Err(DenError::Config("embed_dim must be >= 1".into()));
        }
        if self.eigen_threshold <= 0.0 {
            return Err(DenError::Config("eigen_threshold must be > 0".into()));
        }
        if self.lr_finetune >= self.lr {
            return Err(DenError::Config(format!(
                "lr_finetune ({}) must be below lr ({})",
                self.lr_finetune, self.lr
            )));
        }
        if self.batch_size == 0 || self.spectral_subsample < 2 {
            return Err(DenError::Config(
                "batch_size must be > 0 and spectral_subsample >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file mirroring the field names.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| DenError::io(path.display().to_string(), e))?;
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| DenError::Config(format!(
                "{}:{}: expected 'key = value'",
                path.display(),
                i + 1
            )))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| DenError::Config(format!("invalid value {value:?} for key {key:?}")))
        }
        match key {
            "k" => self.k = parse(key, value)?,
            "j" => self.j = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "eigen_threshold" => self.eigen_threshold = parse(key, value)?,
            "spectral_subsample" => self.spectral_subsample = parse(key, value)?,
            "knn_filter_neighbors" => self.knn_filter_neighbors = parse(key, value)?,
            "epochs_embed" => self.epochs_embed = parse(key, value)?,
            "epochs_head" => self.epochs_head = parse(key, value)?,
            "epochs_finetune" => self.epochs_finetune = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_finetune" => self.lr_finetune = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "standardize" => self.standardize = parse(key, value)?,
            _ => return Err(DenError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }
}

/// Root of all randomness in a run. Every stochastic stage derives its own
/// child stream by label, so stages stay independent and a fixed seed
/// reproduces the whole pipeline.
#[derive(Debug, Clone, Copy)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for a named stage.
    pub fn child(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.seed, label, 0))
    }

    /// Indexed child stream, one per worker or per sample.
    pub fn child_indexed(&self, label: &str, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.seed, label, index))
    }
}

/// FNV-1a over (seed, label, index), then an avalanche mix.
fn mix(seed: u64, label: &str, index: u64) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in seed.to_le_bytes().iter().chain(label.as_bytes()) {
        h = (h ^ *chunk as u64).wrapping_mul(PRIME);
    }
    for b in index.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(PRIME);
    }
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Deterministic stream for a bare seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
