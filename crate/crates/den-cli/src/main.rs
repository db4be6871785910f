//! `den` — pipeline driver for differentiating embedding networks.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 data error,
//! 3 numerical failure.

mod artifacts;
mod commands;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use den_core::{DenError, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "den", version, about = "Unsupervised embedding, clustering and attribution")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Flat `key = value` config file; CLI flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count (default: all cores; 1 gives bitwise-stable runs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the pair graph and train the Siamese embedder.
    Embed {
        /// Input CSV (optionally with a header row).
        #[arg(long)]
        input: PathBuf,
        /// Treat the last input column as ground-truth labels.
        #[arg(long)]
        labeled: bool,
    },
    /// Spectral-cluster an embedding, estimating the cluster count.
    Cluster {
        /// Embedding CSV from `embed`.
        #[arg(long)]
        embedding: PathBuf,
        /// Edge list from `embed` (positive pairs set the kernel scale).
        #[arg(long)]
        edges: PathBuf,
    },
    /// Train the SELU cluster head on spectral labels.
    FitHead {
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Encoder checkpoint from `embed`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fine-tune encoder + head end to end against the spectral labels.
    Finetune {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labeled: bool,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Kernel SHAP attribution of cluster assignments.
    Explain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labeled: bool,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated sample indices (default: first 10).
        #[arg(long)]
        samples: Option<String>,
        /// Background rows drawn from the data.
        #[arg(long, default_value_t = 100)]
        background_size: usize,
        /// Coalitions per sample (default scales with feature count).
        #[arg(long)]
        coalitions: Option<usize>,
    },
    /// Compare predicted labels against ground truth (ACC, NMI, ARI).
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Tabulate the pair-probability loss: exact vs Laplace, gradients.
    CheckLoss {
        /// Comma-separated embedding dimensions to sweep.
        #[arg(long, default_value = "1,2,3,8,16")]
        n_list: String,
        #[arg(long, default_value_t = 20.0)]
        d2_max: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
    /// Run every stage: embed, cluster, head, fine-tune, metrics, plots.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labeled: bool,
        /// Skip the Kernel SHAP stage (it dominates runtime on wide data).
        #[arg(long)]
        no_explain: bool,
    },
    /// Generate separated Gaussian blobs as a labeled CSV.
    MakeBlobs {
        #[arg(long, default_value_t = 5)]
        clusters: usize,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        /// Output CSV (default: blobs.csv in the output directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render an embedding scatter or an attribution heat map as SVG.
    Plot {
        /// 2-D embedding CSV to scatter.
        #[arg(long, conflicts_with = "attributions")]
        embedding: Option<PathBuf>,
        /// Cluster labels for coloring the scatter.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Attribution CSV; renders one sample's phi vector as a grid.
        #[arg(long)]
        attributions: Option<PathBuf>,
        /// Sample id to pick from the attribution table.
        #[arg(long)]
        sample: Option<usize>,
        /// Heat-map grid as ROWSxCOLS, e.g. 28x28.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn build_config(global: &GlobalArgs) -> den_core::Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_for(err: &DenError) -> u8 {
    match err {
        DenError::Config(_) => 1,
        DenError::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Some(t) = cli.global.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .is_err()
        {
            eprintln!("error: could not configure the thread pool");
            return ExitCode::from(1);
        }
    }

    let cfg = match build_config(&cli.global) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cli.global.out_dir) {
        eprintln!("error: cannot create {}: {e}", cli.global.out_dir.display());
        return ExitCode::from(2);
    }

    let out_dir = cli.global.out_dir.clone();
    let result = match cli.command {
        Command::Embed { input, labeled } => commands::embed(&input, labeled, &cfg, &out_dir),
        Command::Cluster { embedding, edges } => {
            commands::cluster(&embedding, &edges, &cfg, &out_dir)
        }
        Command::FitHead {
            embedding,
            labels,
            checkpoint,
        } => commands::fit_head(&embedding, &labels, &checkpoint, &cfg, &out_dir),
        Command::Finetune {
            input,
            labeled,
            model,
            labels,
        } => commands::finetune(&input, labeled, &model, &labels, &cfg, &out_dir),
        Command::Explain {
            input,
            labeled,
            model,
            samples,
            background_size,
            coalitions,
        } => commands::explain(
            &input,
            labeled,
            &model,
            samples.as_deref(),
            background_size,
            coalitions,
            &cfg,
            &out_dir,
        ),
        Command::Metrics { pred, truth } => commands::metrics(&pred, &truth, &out_dir),
        Command::CheckLoss {
            n_list,
            d2_max,
            steps,
        } => commands::check_loss(&n_list, d2_max, steps, &out_dir),
        Command::Pipeline {
            input,
            labeled,
            no_explain,
        } => commands::pipeline(&input, labeled, no_explain, &cfg, &out_dir),
        Command::MakeBlobs {
            clusters,
            points,
            dim,
            spread,
            output,
        } => commands::make_blobs(
            clusters,
            points,
            dim,
            spread,
            &cfg,
            output.as_deref(),
            &out_dir,
        ),
        Command::Plot {
            embedding,
            labels,
            attributions,
            sample,
            grid,
            output,
        } => commands::plot(
            embedding.as_deref(),
            labels.as_deref(),
            attributions.as_deref(),
            sample,
            grid.as_deref(),
            output.as_deref(),
            &out_dir,
        ),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
