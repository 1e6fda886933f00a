use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use pulseclust_core::dataset::write_dataset;
use pulseclust_core::Exec;
use pulseclust_train::config::{DataSource, RunConfig};
use pulseclust_train::model::Model;
use pulseclust_train::pipeline::{
    checkpoint_path, embed, evaluate, load_dataset, num_classes, predict, silhouette_argmax, snr_sweep_dataset,
    sweep_clusters, train, write_confusion_csv, write_metrics_csv, write_sweep_csv, MetricsRow,
};

#[derive(Parser, Debug)]
#[command(name = "pulseclust", version, about = "Unsupervised clustering of radar intra-pulse waveforms")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; omitted fields take the toy defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Size factor for generated datasets (1 = full size).
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Full-width encoder and paper training settings on dataset 1.
    #[arg(long, global = true)]
    full: bool,
    /// Use generated dataset 1 or 2 instead of the toy set.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=2))]
    dataset: Option<u8>,
    /// Independent runs with consecutive seeds.
    #[arg(long, global = true, default_value_t = 1)]
    repeats: u32,
    /// Disable data-parallel kernels.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset and write it to the output directory.
    Gen {
        /// Also write the toy SNR sweep set.
        #[arg(long)]
        snr_sweep: bool,
    },
    /// Run the three training stages.
    Train {
        /// Load stages whose checkpoint already exists instead of retraining them.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the configured dataset.
    Eval {
        /// Directory holding the stage checkpoints (defaults to --out).
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        /// Evaluate on the toy SNR sweep instead.
        #[arg(long)]
        snr_sweep: bool,
    },
    /// Silhouette and purity over a range of cluster counts.
    Sweep {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        #[arg(long)]
        min_clusters: Option<usize>,
        #[arg(long)]
        max_clusters: Option<usize>,
    },
}

fn resolve_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?,
        None if c.full => RunConfig::full(),
        None => RunConfig::toy(),
    };
    if c.config.is_some() && c.full {
        log::warn!("--full is ignored when --config is given");
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(scale) = c.scale {
        cfg.data.scale = scale;
    }
    match c.dataset {
        Some(1) => cfg.data.source = DataSource::Dataset1,
        Some(2) => cfg.data.source = DataSource::Dataset2,
        _ => {}
    }
    Ok(cfg)
}

fn exec(c: &Common) -> Exec {
    if c.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

/// Per-repeat configs; repeats beyond the first get their own seed and subdirectory.
fn repeated(cfg: &RunConfig, repeats: u32) -> Vec<RunConfig> {
    if repeats <= 1 {
        return vec![cfg.clone()];
    }
    (0..repeats as u64)
        .map(|r| {
            let mut c = cfg.clone();
            c.seed = cfg.seed + r;
            c.out_dir = cfg.out_dir.join(format!("seed{}", c.seed));
            c
        })
        .collect()
}

fn load_model(cfg: &RunConfig, run: &Path, stage: u8, frame_len: usize) -> Result<Model> {
    let ckpt = checkpoint_path(run, stage);
    Model::load(&cfg.encoder, frame_len, &ckpt).with_context(|| format!("loading {}", ckpt.display()))
}

fn print_rows(rows: &[MetricsRow]) {
    println!("stage,dataset,snr_db,acc,nmi,ari,purity");
    for r in rows {
        println!("{},{},{},{:.4},{:.4},{:.4},{:.4}", r.stage, r.dataset, r.snr_db, r.acc, r.nmi, r.ari, r.purity);
    }
}

fn run(cli: Cli) -> Result<()> {
    let base = resolve_config(&cli.common)?;
    let exec = exec(&cli.common);
    for cfg in repeated(&base, cli.common.repeats) {
        let started = Instant::now();
        std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
        match &cli.command {
            Command::Gen { snr_sweep } => {
                let ds = load_dataset(&cfg, exec)?;
                let manifest = write_dataset(&ds, &cfg.out_dir)?;
                println!("{} samples -> {}", ds.len(), manifest.display());
                if *snr_sweep {
                    let sweep = snr_sweep_dataset(&cfg, exec)?;
                    let manifest = write_dataset(&sweep, &cfg.out_dir)?;
                    println!("{} samples -> {}", sweep.len(), manifest.display());
                }
            }
            Command::Train { resume } => {
                let outcome = train(&cfg, exec, *resume)?;
                print_rows(&outcome.metrics);
                println!(
                    "mined purity {:.4} vs neighbor purity {:.4} at k = {}",
                    outcome.mining.mined_purity, outcome.mining.neighbor_purity, outcome.mining.k
                );
            }
            Command::Eval { run, stage, snr_sweep } => {
                let run = run.clone().unwrap_or_else(|| cfg.out_dir.clone());
                let ds = if *snr_sweep {
                    if cfg.data.source != DataSource::Toy {
                        bail!("--snr-sweep applies to the toy configuration");
                    }
                    snr_sweep_dataset(&cfg, exec)?
                } else {
                    load_dataset(&cfg, exec)?
                };
                let mut model = load_model(&cfg, &run, *stage, ds.frame_len())?;
                let clusters = num_classes(&ds);
                let pred = predict(&mut model, &ds, &cfg, *stage, clusters, exec)?;
                let rows = evaluate(&pred, &ds, &format!("stage{stage}"))?;
                write_metrics_csv(&cfg.out_dir.join("eval_metrics.csv"), &rows)?;
                write_confusion_csv(&cfg.out_dir.join("eval_confusion.csv"), &pred, &ds.labels())?;
                print_rows(&rows);
            }
            Command::Sweep { run, stage, min_clusters, max_clusters } => {
                let run = run.clone().unwrap_or_else(|| cfg.out_dir.clone());
                let ds = load_dataset(&cfg, exec)?;
                let mut model = load_model(&cfg, &run, *stage, ds.frame_len())?;
                let emb = embed(&mut model, &ds, cfg.eval.batch_size, cfg.data.input_norm, exec)?;
                let lo = min_clusters.unwrap_or(cfg.sweep.min_clusters);
                let hi = max_clusters.unwrap_or(cfg.sweep.max_clusters);
                if lo == 0 || lo > hi || hi > ds.len() {
                    bail!("cluster range {lo}..={hi} is invalid for {} samples", ds.len());
                }
                let rows = sweep_clusters(&emb.features, &ds.labels(), lo..=hi, cfg.seed, cfg.eval.kmeans_restarts, exec)?;
                write_sweep_csv(&cfg.out_dir.join("sweep.csv"), &rows)?;
                println!("clusters,silhouette,purity");
                for r in &rows {
                    let sil = r.silhouette.map_or("undefined".to_string(), |s| format!("{s:.4}"));
                    println!("{},{},{:.4}", r.clusters, sil, r.purity);
                }
                match silhouette_argmax(&rows) {
                    Some(c) => println!("estimated clusters: {c} (true classes: {})", num_classes(&ds)),
                    None => println!("no silhouette defined in range"),
                }
            }
        }
        info!("seed {} done in {:.1} s", cfg.seed, started.elapsed().as_secs_f64());
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

