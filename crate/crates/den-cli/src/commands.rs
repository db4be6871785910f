//! Implementations behind the `den` subcommands. Each one reads artifacts
//! from earlier stages, runs a den-core stage, and writes its own artifacts
//! into the output directory.

use crate::artifacts::{
    read_attributions, read_embedding_csv, read_labels_csv, load_cluster_model,
    save_cluster_model, write_attributions, write_embedding_csv, write_labels_csv,
    write_loss_history,
};
use den_core::cluster_head::{finetune_end_to_end, predict_cluster, train_head, ClusterModel};
use den_core::data_io::{load_csv, save_csv, standardize};
use den_core::explain::{default_n_coalitions, explain_batch};
use den_core::fdist_loss::{f_cdf_exact, f_cdf_grad, f_cdf_laplace};
use den_core::metrics::{accuracy, ari, nmi};
use den_core::pair_graph::{build_pair_graph, write_edge_list};
use den_core::plot::{plot_attribution_heatmap, plot_scatter};
use den_core::siamese_embedder::{load_checkpoint, save_checkpoint, train_embedder};
use den_core::spectral_cluster::{cluster as spectral, SpectralConfig};
use den_core::synth;
use den_core::{
    ClusterLabels, Dataset, DatasetKind, DenError, PairGraph, Result, RunConfig, SeedStream,
};
use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Load the input CSV and apply the configured preprocessing. Token data is
/// never standardized.
fn load_input(path: &Path, labeled: bool, cfg: &RunConfig) -> Result<Dataset> {
    let data = load_csv(path, labeled)?;
    if cfg.standardize && matches!(data.kind, DatasetKind::Dense) {
        standardize(&data)
    } else {
        Ok(data)
    }
}

/// Parse the two-section edge list written by `embed`.
fn read_edge_list(path: &Path) -> Result<PairGraph> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DenError::io(path.display().to_string(), e))?;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut section: Option<bool> = None;
    let mut max_id = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        match line {
            "" => continue,
            "#positives" => section = Some(true),
            "#negatives" => section = Some(false),
            _ => {
                let parse = |s: &str| -> Result<usize> {
                    s.parse().map_err(|_| DenError::Parse {
                        row: lineno + 1,
                        col: 1,
                        message: format!("bad edge endpoint {s:?}"),
                    })
                };
                let mut it = line.split_whitespace();
                let (a, b) = match (it.next(), it.next()) {
                    (Some(a), Some(b)) => (parse(a)?, parse(b)?),
                    _ => {
                        return Err(DenError::Parse {
                            row: lineno + 1,
                            col: 1,
                            message: "expected 'i j'".into(),
                        })
                    }
                };
                max_id = max_id.max(a).max(b);
                match section {
                    Some(true) => positives.push((a, b)),
                    Some(false) => negatives.push((a, b)),
                    None => {
                        return Err(DenError::Data(format!(
                            "{}: edge before any section header",
                            path.display()
                        )))
                    }
                }
            }
        }
    }
    Ok(PairGraph {
        positives,
        negatives,
        n_samples: max_id + 1,
    })
}

fn labels_to_cluster_labels(labels: Vec<usize>) -> ClusterLabels {
    let n_clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    ClusterLabels {
        labels,
        n_clusters,
        d_avg: 0.0,
    }
}

pub fn embed(input: &Path, labeled: bool, cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let data = load_input(input, labeled, cfg)?;
    let seeds = SeedStream::new(cfg.seed);
    let graph = build_pair_graph(&data, cfg, &seeds)?;
    write_edge_list(&graph, out_dir.join("edges.txt"))?;
    let (model, result) = train_embedder(&data, &graph, cfg, &seeds)?;
    write_embedding_csv(&result.points, out_dir.join("embedding.csv"))?;
    write_loss_history(&result.loss_history, out_dir.join("loss_history.csv"))?;
    save_checkpoint(&model, out_dir.join("checkpoint.json"))?;
    println!(
        "embedded {} samples into {} dims ({} positive / {} negative pairs, final loss {:.6})",
        data.n_samples(),
        cfg.embed_dim,
        graph.positives.len(),
        graph.negatives.len(),
        result.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Serialize)]
struct ClusterReportFile {
    n_clusters: usize,
    k_raw: usize,
    d_avg: f64,
    eigenvalues_head: Vec<f64>,
}

pub fn cluster(embedding: &Path, edges: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let points = read_embedding_csv(embedding)?;
    let graph = read_edge_list(edges)?;
    let seeds = SeedStream::new(cfg.seed);
    let scfg = SpectralConfig::from_run_config(cfg);
    let (labels, report) = spectral(&points, &graph.positives, &scfg, &seeds)?;
    write_labels_csv(&labels.labels, out_dir.join("labels.csv"))?;
    let report_file = ClusterReportFile {
        n_clusters: labels.n_clusters,
        k_raw: report.k_raw,
        d_avg: labels.d_avg,
        eigenvalues_head: report.eigenvalues_head,
    };
    let json = serde_json::to_string_pretty(&report_file)
        .map_err(|e| DenError::Data(e.to_string()))?;
    std::fs::write(out_dir.join("cluster_report.json"), json)
        .map_err(|e| DenError::io("cluster_report.json", e))?;
    println!(
        "clustered {} points: {} clusters (spectrum suggested {})",
        points.nrows(),
        labels.n_clusters,
        report.k_raw
    );
    Ok(())
}

pub fn fit_head(
    embedding: &Path,
    labels: &Path,
    checkpoint: &Path,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<()> {
    let points = read_embedding_csv(embedding)?;
    let labels = labels_to_cluster_labels(read_labels_csv(labels)?);
    let encoder = load_checkpoint(checkpoint)?;
    let seeds = SeedStream::new(cfg.seed);
    let (head, trivial) = train_head(&points, &labels, cfg, &seeds)?;
    let model = ClusterModel {
        encoder,
        head,
        n_clusters: labels.n_clusters.max(1),
        trivial,
    };
    save_cluster_model(&model, out_dir.join("model.json"))?;
    println!(
        "trained {}-cluster head on {} points{}",
        model.n_clusters,
        points.nrows(),
        if trivial { " (single cluster, trivial head)" } else { "" }
    );
    Ok(())
}

pub fn finetune(
    input: &Path,
    labeled: bool,
    model_path: &Path,
    labels: &Path,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<()> {
    let data = load_input(input, labeled, cfg)?;
    let model = load_cluster_model(model_path)?;
    let labels = labels_to_cluster_labels(read_labels_csv(labels)?);
    let seeds = SeedStream::new(cfg.seed);
    let model = finetune_end_to_end(model, &data, &labels, cfg, &seeds)?;
    save_cluster_model(&model, out_dir.join("model.json"))?;
    let (pred, _) = predict_cluster(&model, &data.samples)?;
    let agree = pred
        .iter()
        .zip(&labels.labels)
        .filter(|(a, b)| a == b)
        .count();
    println!(
        "fine-tuned end to end; {}/{} samples match the spectral labels",
        agree,
        data.n_samples()
    );
    Ok(())
}

fn parse_index_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| DenError::Config(format!("bad sample index {s:?}")))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn explain(
    input: &Path,
    labeled: bool,
    model_path: &Path,
    samples: Option<&str>,
    background_size: usize,
    coalitions: Option<usize>,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<()> {
    let data = load_input(input, labeled, cfg)?;
    let model = load_cluster_model(model_path)?;
    let n = data.n_samples();
    let indices = match samples {
        Some(text) => parse_index_list(text)?,
        None => (0..n.min(10)).collect(),
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(DenError::Data(format!(
            "sample index {bad} out of range for {n} samples"
        )));
    }
    let seeds = SeedStream::new(cfg.seed);
    let mut pool: Vec<usize> = (0..n).collect();
    pool.shuffle(&mut seeds.child("shap_background"));
    pool.truncate(background_size.clamp(1, n));
    pool.sort_unstable();
    let background = data.samples.select(Axis(0), &pool);
    let rows = data.samples.select(Axis(0), &indices);
    let n_coalitions = coalitions.unwrap_or_else(|| default_n_coalitions(data.n_features()));
    let attrs = explain_batch(&model, &rows, &indices, &background, n_coalitions, &seeds)?;
    write_attributions(&attrs, out_dir.join("attributions.csv"))?;
    println!(
        "attributed {} samples over {} features ({} coalitions each)",
        attrs.len(),
        data.n_features(),
        n_coalitions
    );
    Ok(())
}

#[derive(Serialize)]
struct MetricsFile {
    accuracy: Option<f64>,
    nmi: f64,
    ari: f64,
}

fn compute_metrics(pred: &[usize], truth: &[usize]) -> Result<MetricsFile> {
    Ok(MetricsFile {
        accuracy: accuracy(pred, truth)?,
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
    })
}

pub fn metrics(pred: &Path, truth: &Path, out_dir: &Path) -> Result<()> {
    let pred = read_labels_csv(pred)?;
    let truth = read_labels_csv(truth)?;
    let m = compute_metrics(&pred, &truth)?;
    match m.accuracy {
        Some(acc) => println!("ACC  {acc:.6}"),
        None => println!("ACC  n/a (cluster count differs from ground truth)"),
    }
    println!("NMI  {:.6}", m.nmi);
    println!("ARI  {:.6}", m.ari);
    let json = serde_json::to_string_pretty(&m).map_err(|e| DenError::Data(e.to_string()))?;
    std::fs::write(out_dir.join("metrics.json"), json)
        .map_err(|e| DenError::io("metrics.json", e))?;
    Ok(())
}

pub fn check_loss(n_list: &str, d2_max: f64, steps: usize, out_dir: &Path) -> Result<()> {
    if d2_max <= 0.0 || steps == 0 {
        return Err(DenError::Config("need d2_max > 0 and steps > 0".into()));
    }
    let ns = parse_index_list(n_list)?;
    if ns.iter().any(|&n| n == 0) {
        return Err(DenError::Config("dimensions must be >= 1".into()));
    }
    let mut out = String::from("d2,n,exact,laplace,grad,fd_grad\n");
    let mut worst_laplace = 0.0f64;
    let mut worst_grad = 0.0f64;
    for &n in &ns {
        for s in 1..=steps {
            let d2 = d2_max * s as f64 / steps as f64;
            let exact = f_cdf_exact(d2, n)?;
            let laplace = f_cdf_laplace(d2, n)?;
            let grad = f_cdf_grad(d2, n)?;
            let h = 1e-6 * d2.max(1.0);
            let fd = (f_cdf_exact(d2 + h, n)? - f_cdf_exact((d2 - h).max(1e-12), n)?)
                / (d2 + h - (d2 - h).max(1e-12));
            let _ = writeln!(out, "{d2},{n},{exact},{laplace},{grad},{fd}");
            if exact > 1e-12 {
                worst_laplace = worst_laplace.max((laplace - exact).abs() / exact);
            }
            worst_grad = worst_grad.max((grad - fd).abs() / grad.abs().max(1e-12));
        }
    }
    std::fs::write(out_dir.join("loss_table.csv"), out)
        .map_err(|e| DenError::io("loss_table.csv", e))?;
    println!(
        "swept {} grid points; worst Laplace relative error {:.4}%, worst gradient FD mismatch {:.2e}",
        ns.len() * steps,
        worst_laplace * 100.0,
        worst_grad
    );
    Ok(())
}

pub fn make_blobs(
    clusters: usize,
    points: usize,
    dim: usize,
    spread: f64,
    cfg: &RunConfig,
    output: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let seeds = SeedStream::new(cfg.seed);
    let data = synth::make_blobs(clusters, points, dim, spread, &seeds)?;
    let path: PathBuf = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("blobs.csv"));
    save_csv(&data, &path)?;
    println!(
        "wrote {} samples ({} clusters x {} points, {} dims) to {}",
        data.n_samples(),
        clusters,
        points,
        dim,
        path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn plot(
    embedding: Option<&Path>,
    labels: Option<&Path>,
    attributions: Option<&Path>,
    sample: Option<usize>,
    grid: Option<&str>,
    output: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    match (embedding, attributions) {
        (Some(points_path), None) => {
            let points = read_embedding_csv(points_path)?;
            let labels = labels.map(read_labels_csv).transpose()?;
            let path = output
                .map(Path::to_path_buf)
                .unwrap_or_else(|| out_dir.join("scatter.svg"));
            plot_scatter(&points, labels.as_deref(), &path)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        (None, Some(attr_path)) => {
            let grid = grid.ok_or_else(|| {
                DenError::Config("heat maps need --grid ROWSxCOLS".into())
            })?;
            let (rows, cols) = grid
                .split_once(['x', 'X'])
                .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)))
                .ok_or_else(|| DenError::Config(format!("bad --grid value {grid:?}")))?;
            let attrs = read_attributions(attr_path)?;
            let attr = match sample {
                Some(id) => attrs
                    .iter()
                    .find(|a| a.sample_index == id)
                    .ok_or_else(|| DenError::Data(format!("sample {id} not in the table")))?,
                None => &attrs[0],
            };
            let path = output
                .map(Path::to_path_buf)
                .unwrap_or_else(|| out_dir.join("heatmap.svg"));
            plot_attribution_heatmap(&attr.phi, rows, cols, &path)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        _ => Err(DenError::Config(
            "pass exactly one of --embedding or --attributions".into(),
        )),
    }
}

#[derive(Serialize)]
struct StageRecord {
    stage: String,
    seconds: f64,
}

#[derive(Serialize)]
struct PipelineManifest {
    seed: u64,
    config: RunConfig,
    n_samples: usize,
    n_features: usize,
    n_clusters: usize,
    stages: Vec<StageRecord>,
    artifacts: Vec<String>,
    metrics: Option<MetricsFile>,
}

pub fn pipeline(
    input: &Path,
    labeled: bool,
    no_explain: bool,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<()> {
    let seeds = SeedStream::new(cfg.seed);
    let mut stages: Vec<StageRecord> = Vec::new();
    let mut artifacts: Vec<String> = Vec::new();
    let record = |stages: &mut Vec<StageRecord>, name: &str, t0: Instant| {
        let seconds = t0.elapsed().as_secs_f64();
        println!("[{name}] {seconds:.2}s");
        stages.push(StageRecord {
            stage: name.to_string(),
            seconds,
        });
    };
    let track = |artifacts: &mut Vec<String>, name: &str| {
        artifacts.push(out_dir.join(name).display().to_string());
    };

    let t0 = Instant::now();
    let data = load_input(input, labeled, cfg)?;
    record(&mut stages, "load", t0);

    let t0 = Instant::now();
    let graph = build_pair_graph(&data, cfg, &seeds)?;
    write_edge_list(&graph, out_dir.join("edges.txt"))?;
    track(&mut artifacts, "edges.txt");
    record(&mut stages, "pair_graph", t0);

    let t0 = Instant::now();
    let (embedder, embedding) = train_embedder(&data, &graph, cfg, &seeds)?;
    write_embedding_csv(&embedding.points, out_dir.join("embedding.csv"))?;
    write_loss_history(&embedding.loss_history, out_dir.join("loss_history.csv"))?;
    save_checkpoint(&embedder, out_dir.join("checkpoint.json"))?;
    track(&mut artifacts, "embedding.csv");
    track(&mut artifacts, "loss_history.csv");
    track(&mut artifacts, "checkpoint.json");
    record(&mut stages, "embed", t0);

    let t0 = Instant::now();
    let scfg = SpectralConfig::from_run_config(cfg);
    let (labels, report) = spectral(&embedding.points, &graph.positives, &scfg, &seeds)?;
    write_labels_csv(&labels.labels, out_dir.join("labels.csv"))?;
    track(&mut artifacts, "labels.csv");
    record(&mut stages, "cluster", t0);
    println!(
        "  {} clusters (spectrum suggested {})",
        labels.n_clusters, report.k_raw
    );

    let t0 = Instant::now();
    let (head, trivial) = train_head(&embedding.points, &labels, cfg, &seeds)?;
    let model = ClusterModel {
        encoder: embedder,
        head,
        n_clusters: labels.n_clusters.max(1),
        trivial,
    };
    record(&mut stages, "fit_head", t0);

    let t0 = Instant::now();
    let model = finetune_end_to_end(model, &data, &labels, cfg, &seeds)?;
    save_cluster_model(&model, out_dir.join("model.json"))?;
    track(&mut artifacts, "model.json");
    record(&mut stages, "finetune", t0);

    let t0 = Instant::now();
    let (pred, _) = predict_cluster(&model, &data.samples)?;
    write_labels_csv(&pred, out_dir.join("predicted_labels.csv"))?;
    track(&mut artifacts, "predicted_labels.csv");
    record(&mut stages, "predict", t0);

    if !no_explain && data.n_features() <= 62 {
        let t0 = Instant::now();
        let n = data.n_samples();
        let indices: Vec<usize> = (0..n.min(10)).collect();
        let mut pool: Vec<usize> = (0..n).collect();
        pool.shuffle(&mut seeds.child("shap_background"));
        pool.truncate(100.min(n));
        pool.sort_unstable();
        let background = data.samples.select(Axis(0), &pool);
        let rows = data.samples.select(Axis(0), &indices);
        let n_coalitions = default_n_coalitions(data.n_features());
        let attrs = explain_batch(&model, &rows, &indices, &background, n_coalitions, &seeds)?;
        write_attributions(&attrs, out_dir.join("attributions.csv"))?;
        track(&mut artifacts, "attributions.csv");
        record(&mut stages, "explain", t0);
    }

    if cfg.embed_dim == 2 {
        let t0 = Instant::now();
        plot_scatter(
            &embedding.points,
            Some(&pred),
            out_dir.join("scatter.svg"),
        )?;
        track(&mut artifacts, "scatter.svg");
        record(&mut stages, "plot", t0);
    }

    let metrics = match &data.labels {
        Some(truth) => {
            let m = compute_metrics(&pred, truth)?;
            match m.accuracy {
                Some(acc) => println!("ACC {acc:.4}  NMI {:.4}  ARI {:.4}", m.nmi, m.ari),
                None => println!(
                    "ACC n/a (count mismatch)  NMI {:.4}  ARI {:.4}",
                    m.nmi, m.ari
                ),
            }
            Some(m)
        }
        None => None,
    };

    let manifest = PipelineManifest {
        seed: cfg.seed,
        config: cfg.clone(),
        n_samples: data.n_samples(),
        n_features: data.n_features(),
        n_clusters: model.n_clusters,
        stages,
        artifacts,
        metrics,
    };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| DenError::Data(e.to_string()))?;
    std::fs::write(out_dir.join("manifest.json"), json)
        .map_err(|e| DenError::io("manifest.json", e))?;
    println!("pipeline complete: {} clusters", model.n_clusters);
    Ok(())
}
