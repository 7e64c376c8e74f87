use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use cloudseed::eval::IouThresholds;
use cloudseed::pointcloud::Category;
use cloudseed_server::commands;
use cloudseed_server::config::JobConfig;
use cloudseed_server::http::{serve, ServeSetup};

#[derive(Parser, Debug)]
#[command(name = "cloudseed", version, about = "Click-seeded point cloud annotation pipeline")]
struct Cli {
    /// TOML or JSON job config. Falls back to $CLOUDSEED_CONFIG.
    #[arg(long, global = true, env = "CLOUDSEED_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config category (car, pedestrian, cyclist).
    #[arg(long, global = true, value_parser = parse_category)]
    category: Option<Category>,
    /// Output file or directory of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a KITTI object split into scene containers.
    Ingest {
        /// Directory holding velodyne/, calib/ and optionally label_2/.
        #[arg(long)]
        kitti: PathBuf,
        /// File listing the frame ids to convert, one per line.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Generate synthetic labelled scenes.
    Synth {
        #[arg(long)]
        scenes: u64,
        /// Index of the first scene; seeds depend on the index.
        #[arg(long, default_value_t = 0)]
        offset: u64,
    },
    /// Simulate annotator clicks on the ground-truth instances of a scene set.
    SimulateClicks {
        #[arg(long)]
        scenes: PathBuf,
        /// Clicks per instance; defaults to the config value.
        #[arg(long)]
        per_instance: Option<usize>,
    },
    /// Train the segmentation network for one category.
    TrainSeg {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        clicks: PathBuf,
    },
    /// Train the centroid and box networks.
    TrainBox {
        #[arg(long)]
        scenes: PathBuf,
    },
    /// Segment every click and fit a box, writing detection results.
    Infer {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        clicks: PathBuf,
        #[arg(long)]
        seg_model: PathBuf,
        #[arg(long)]
        box_model: PathBuf,
    },
    /// Score detection results against ground truth.
    Evaluate {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        results: PathBuf,
    },
    /// Seconds-per-object statistics from session snapshots or timing records.
    TimingReport {
        /// Directory of session snapshots, or a JSON lines file of scene timings.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the annotation service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        golden: Option<PathBuf>,
        #[arg(long)]
        training: Option<PathBuf>,
        #[arg(long)]
        click_db: Option<PathBuf>,
        #[arg(long)]
        sessions: Option<PathBuf>,
    },
}

fn parse_category(s: &str) -> Result<Category, String> {
    Category::ALL
        .into_iter()
        .find(|c| c.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown category `{s}`"))
}

fn out_path(cli: &Cli) -> anyhow::Result<&Path> {
    cli.out.as_deref().context("--out is required for this command")
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => JobConfig::load(path)?,
        None => JobConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(category) = cli.category {
        cfg.category = category;
    }
    match &cli.command {
        Command::Ingest { kitti, split } => {
            let ids = match split {
                Some(p) => Some(std::fs::read_to_string(p)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect::<Vec<_>>()),
                None => None,
            };
            let done = commands::ingest(kitti, out_path(&cli)?, ids.as_deref())?;
            eprintln!("ingested {} frames", done.len());
        }
        Command::Synth { scenes, offset } => {
            let ids = commands::synth(&cfg, out_path(&cli)?, *scenes, *offset)?;
            eprintln!("wrote {} scenes", ids.len());
        }
        Command::SimulateClicks { scenes, per_instance } => {
            let summary = commands::simulate_clicks(&cfg, scenes, out_path(&cli)?, *per_instance)?;
            for (scene, instance, points) in &summary.too_sparse {
                eprintln!("warning: {scene} instance {instance} has {points} points and gets no click");
            }
            print_json(&summary)?;
        }
        Command::TrainSeg { scenes, clicks } => print_json(&commands::train_seg(&cfg, scenes, clicks, out_path(&cli)?)?)?,
        Command::TrainBox { scenes } => print_json(&commands::train_box(&cfg, scenes, out_path(&cli)?)?)?,
        Command::Infer {
            scenes,
            clicks,
            seg_model,
            box_model,
        } => print_json(&commands::infer(&cfg, scenes, clicks, seg_model, box_model, out_path(&cli)?)?)?,
        Command::Evaluate { scenes, results } => {
            print_json(&commands::evaluate(scenes, results, out_path(&cli)?, &IouThresholds::default())?)?
        }
        Command::TimingReport { input } => {
            let report = commands::timing(input, out_path(&cli)?)?;
            for id in &report.excluded {
                eprintln!("warning: scene {id} has no objects and is left out");
            }
            print_json(&report)?;
        }
        Command::Serve {
            listen,
            pool,
            golden,
            training,
            click_db,
            sessions,
        } => {
            let pick = |flag: &Option<PathBuf>, conf: &Option<PathBuf>, name: &str| {
                flag.clone().or_else(|| conf.clone()).with_context(|| format!("--{name} is required"))
            };
            let setup = ServeSetup {
                qa: cfg.qa.clone(),
                seed: cfg.seed,
                pool_dir: pick(pool, &cfg.serve.pool, "pool")?,
                golden_dir: pick(golden, &cfg.serve.golden, "golden")?,
                training_dir: pick(training, &cfg.serve.training, "training")?,
                click_db: pick(click_db, &cfg.serve.click_db, "click-db")?,
                sessions_dir: sessions.clone().or_else(|| cfg.serve.sessions.clone()),
            };
            let addr = listen.clone().unwrap_or_else(|| cfg.listen.clone());
            tokio::runtime::Runtime::new()?.block_on(serve(setup, &addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
