//! File formats for stage handoff: embedding / label / attribution CSVs and
//! the combined encoder + head model file.

use den_core::cluster_head::ClusterModel;
use den_core::explain::Attribution;
use den_core::nn_core::{Activation, DenseNet};
use den_core::siamese_embedder::{from_checkpoint, to_checkpoint, Checkpoint};
use den_core::{DenError, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

fn io_err(path: &Path, e: std::io::Error) -> DenError {
    DenError::io(path.display().to_string(), e)
}

/// `sample_id,dim_0,...` with shortest-round-trip floats (lossless reload).
pub fn write_embedding_csv(points: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("sample_id");
    for d in 0..points.ncols() {
        let _ = write!(out, ",dim_{d}");
    }
    out.push('\n');
    for (i, row) in points.rows().into_iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_embedding_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if lineno == 0 && fields.first() == Some(&"sample_id") {
            continue;
        }
        let vals: Vec<f64> = fields[1..]
            .iter()
            .map(|f| {
                f.parse().map_err(|_| DenError::Parse {
                    row: lineno + 1,
                    col: 2,
                    message: format!("bad float {f:?}"),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(DenError::Data(format!("{}: no rows", path.display())));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(DenError::Data(format!("{}: ragged rows", path.display())));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = flat.len() / dim;
    Array2::from_shape_vec((n, dim), flat)
        .map_err(|e| DenError::Shape(e.to_string()))
}

/// `sample_id,cluster` label file.
pub fn write_labels_csv(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("sample_id,cluster\n");
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Accepts either the two-column `sample_id,cluster` form or one bare label
/// per line; rows are taken in order.
pub fn read_labels_csv(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if lineno == 0 && fields.iter().any(|f| f.parse::<usize>().is_err()) {
            continue; // header
        }
        let raw = *fields.last().unwrap();
        labels.push(raw.parse::<usize>().map_err(|_| DenError::Parse {
            row: lineno + 1,
            col: fields.len(),
            message: format!("bad label {raw:?}"),
        })?);
    }
    if labels.is_empty() {
        return Err(DenError::Data(format!("{}: no labels", path.display())));
    }
    Ok(labels)
}

/// `epoch,loss` history file.
pub fn write_loss_history(history: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        let _ = writeln!(out, "{e},{l}");
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// `sample_id,cluster,base_value,phi_0,...` attribution table.
pub fn write_attributions(attrs: &[Attribution], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let width = attrs.first().map_or(0, |a| a.phi.len());
    let mut out = String::from("sample_id,cluster,base_value");
    for d in 0..width {
        let _ = write!(out, ",phi_{d}");
    }
    out.push('\n');
    for a in attrs {
        let _ = write!(out, "{},{},{}", a.sample_index, a.cluster_id, a.base_value);
        for v in &a.phi {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_attributions(path: impl AsRef<Path>) -> Result<Vec<Attribution>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut attrs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("sample_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(DenError::Parse {
                row: lineno + 1,
                col: fields.len(),
                message: "attribution rows need at least 4 columns".into(),
            });
        }
        let parse_f = |s: &str, col: usize| -> Result<f64> {
            s.parse().map_err(|_| DenError::Parse {
                row: lineno + 1,
                col,
                message: format!("bad number {s:?}"),
            })
        };
        attrs.push(Attribution {
            sample_index: parse_f(fields[0], 1)? as usize,
            cluster_id: parse_f(fields[1], 2)? as usize,
            base_value: parse_f(fields[2], 3)?,
            phi: fields[3..]
                .iter()
                .enumerate()
                .map(|(i, s)| parse_f(s, i + 4))
                .collect::<Result<_>>()?,
        });
    }
    if attrs.is_empty() {
        return Err(DenError::Data(format!("{}: no attributions", path.display())));
    }
    Ok(attrs)
}

/// Serialized encoder + cluster head, the output of `fit-head` / `finetune`.
#[derive(Serialize, Deserialize)]
pub struct ClusterModelFile {
    pub version: u32,
    pub encoder: Checkpoint,
    pub head_dims: Vec<usize>,
    pub head_params: Vec<f64>,
    pub n_clusters: usize,
    pub trivial: bool,
}

pub fn save_cluster_model(model: &ClusterModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = ClusterModelFile {
        version: 1,
        encoder: to_checkpoint(&model.encoder),
        head_dims: model.head.dims(),
        head_params: model.head.params_vec(),
        n_clusters: model.n_clusters,
        trivial: model.trivial,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| DenError::Data(format!("model serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| io_err(path, e))
}

pub fn load_cluster_model(path: impl AsRef<Path>) -> Result<ClusterModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: ClusterModelFile = serde_json::from_str(&text)
        .map_err(|e| DenError::Data(format!("{}: {e}", path.display())))?;
    let encoder = from_checkpoint(&file.encoder)?;
    let mut seed_rng = den_core::data_io::seeded_rng(0);
    let mut head = DenseNet::new(&file.head_dims, Activation::Selu, &mut seed_rng);
    if head.n_params() != file.head_params.len() {
        return Err(DenError::Data(format!(
            "{}: head has {} params, expected {}",
            path.display(),
            file.head_params.len(),
            head.n_params()
        )));
    }
    head.set_params(&file.head_params);
    Ok(ClusterModel {
        encoder,
        head,
        n_clusters: file.n_clusters,
        trivial: file.trivial,
    })
}
