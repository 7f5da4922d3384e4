use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use otcloak_cli::experiment::{
    acquire_graph, aggregate_trace_lines, run_editing_experiment, run_injection_experiment,
    train_victim, DatasetConfig, ExperimentConfig,
};
use otcloak_cli::io::save_dataset;
use otcloak_cli::{Error, Result};
use otcloak_core::attack::AttackTrace;
use otcloak_core::cost_model::OtGeometry;
use otcloak_core::datagen::{generate, GenParams};
use otcloak_core::detector::{Detector, DetectorModel};
use otcloak_core::geometry::DistanceCache;
use otcloak_core::training::append_training_log;

#[derive(Parser)]
#[command(
    name = "otcloak",
    version,
    about = "OT-guided cloaking attacks on graph bot detectors"
)]
struct Cli {
    /// Master seed; every sub-seed derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// JSON config file (experiment or generator params by subcommand).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArgs {
    /// Node file (JSON Lines).
    #[arg(long)]
    nodes: Option<PathBuf>,
    /// Edge file (CSV with src,dst,relation header).
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Generator preset: cresci-like, twibot-like, botsim-like.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write nodes.jsonl + edges.csv.
    Gen {
        /// Generator preset name.
        #[arg(long, default_value = "cresci-like")]
        preset: String,
    },
    /// Train the message-passing detector and save its checkpoint.
    TrainDetector {
        #[command(flatten)]
        dataset: DatasetArgs,
    },
    /// Train the OT geometry against a frozen detector.
    TrainGeometry {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Detector checkpoint; trained in-run when omitted.
        #[arg(long)]
        detector: Option<PathBuf>,
    },
    /// Dump the misclassified-boundary-bot candidate list as JSON.
    Candidates {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Geometry checkpoint; trained in-run when omitted.
        #[arg(long)]
        geometry: Option<PathBuf>,
        /// Detector checkpoint; trained in-run when omitted.
        #[arg(long)]
        detector: Option<PathBuf>,
    },
    /// Run the node-editing attack protocol.
    AttackEdit {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Targets to attack.
        #[arg(long)]
        n_targets: Option<usize>,
        /// Edge budget per trial.
        #[arg(long)]
        budget: Option<usize>,
        /// Attack every target in parallel with this many workers.
        #[arg(long)]
        parallel_targets: Option<usize>,
    },
    /// Run the node-injection attack protocol.
    AttackInject {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        n_targets: Option<usize>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        parallel_targets: Option<usize>,
    },
    /// Re-aggregate one or more trace files and print the statistics.
    Eval {
        /// Trace files (newline-delimited JSON).
        #[arg(long, required = true, num_args = 1..)]
        traces: Vec<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("OTCLOAK_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let structured = serde_json::json!({"error": err.to_string()});
        eprintln!("{structured}");
        std::process::exit(1);
    }
}

fn load_experiment_config(cli_config: &Option<PathBuf>, seed: u64) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match cli_config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.seed = seed;
    Ok(cfg)
}

fn apply_dataset_args(cfg: &mut ExperimentConfig, args: &DatasetArgs) {
    if args.nodes.is_some() || args.edges.is_some() {
        cfg.dataset.node_path = args.nodes.clone();
        cfg.dataset.edge_path = args.edges.clone();
    } else if let Some(preset) = &args.preset {
        cfg.dataset = DatasetConfig {
            preset: Some(preset.clone()),
            ..DatasetConfig::default()
        };
    } else if cfg.dataset.preset.is_none()
        && cfg.dataset.gen.is_none()
        && cfg.dataset.node_path.is_none()
    {
        cfg.dataset.preset = Some("cresci-like".into());
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_traces(path: &Path, traces: &[Vec<AttackTrace>]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for per_target in traces {
        for trace in per_target {
            writeln!(file, "{}", trace.to_report_line())?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { preset } => {
            ensure_out(&cli.out)?;
            let mut params: GenParams = match &cli.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => GenParams::preset(&preset)
                    .ok_or_else(|| Error::Config(format!("unknown preset '{preset}'")))?,
            };
            params.seed = cli.seed;
            let g = generate(&params)?;
            let nodes = cli.out.join("nodes.jsonl");
            let edges = cli.out.join("edges.csv");
            save_dataset(&g, &nodes, &edges)?;
            println!(
                "{}",
                serde_json::json!({
                    "nodes": g.node_count(),
                    "edges": g.edge_count(),
                    "node_file": nodes,
                    "edge_file": edges,
                })
            );
            Ok(())
        }
        Command::TrainDetector { dataset } => {
            ensure_out(&cli.out)?;
            let mut cfg = load_experiment_config(&cli.config, cli.seed)?;
            apply_dataset_args(&mut cfg, &dataset);
            let cfg = cfg.resolved();
            let graph = acquire_graph(&cfg)?;
            let model = otcloak_core::detector::train_detector(&graph, &cfg.detector.train)?;
            let all: Vec<_> = graph.node_ids().collect();
            let accuracy = model.accuracy_on(&graph, &all)?;
            let path = cli.out.join("detector.bin");
            model.save(&path)?;
            println!(
                "{}",
                serde_json::json!({"checkpoint": path, "clean_accuracy": accuracy})
            );
            Ok(())
        }
        Command::TrainGeometry { dataset, detector } => {
            ensure_out(&cli.out)?;
            let mut cfg = load_experiment_config(&cli.config, cli.seed)?;
            apply_dataset_args(&mut cfg, &dataset);
            let cfg = cfg.resolved();
            let graph = acquire_graph(&cfg)?;
            let predictions = match &detector {
                Some(path) => DetectorModel::load(path)?.predict_all(&graph)?,
                None => {
                    log::info!("no detector checkpoint given; training in-run");
                    train_victim(&graph, &cfg.detector)?.predict_all(&graph)?
                }
            };
            let (geometry, history) =
                otcloak_core::training::train_geometry(&graph, &predictions, &cfg.geometry)?;
            let ckpt = cli.out.join("geometry.bin");
            geometry.save(&ckpt)?;
            let log_path = cli.out.join("train_log.jsonl");
            append_training_log(&log_path, &history)?;
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint": ckpt,
                    "train_log": log_path,
                    "epochs": history.len(),
                    "final_loss": history.last().map(|s| s.loss_total),
                })
            );
            Ok(())
        }
        Command::Candidates {
            dataset,
            geometry,
            detector,
        } => {
            ensure_out(&cli.out)?;
            let mut cfg = load_experiment_config(&cli.config, cli.seed)?;
            apply_dataset_args(&mut cfg, &dataset);
            let cfg = cfg.resolved();
            let graph = acquire_graph(&cfg)?;
            let predictions = match &detector {
                Some(path) => DetectorModel::load(path)?.predict_all(&graph)?,
                None => train_victim(&graph, &cfg.detector)?.predict_all(&graph)?,
            };
            let geometry = match &geometry {
                Some(path) => OtGeometry::load(path)?,
                None => {
                    otcloak_core::training::train_geometry(&graph, &predictions, &cfg.geometry)?.0
                }
            };
            let mut cache = DistanceCache::new();
            let candidates = otcloak_core::geometry::boundary_candidates(
                &geometry,
                &graph,
                &predictions,
                cfg.attack.tau_bdry,
                cfg.attack.effective_degree_cap(),
                cfg.attack.max_candidates,
                &cfg.attack.measure,
                &cfg.attack.sinkhorn,
                &mut cache,
            )?;
            let json = serde_json::to_string_pretty(&candidates)
                .map_err(|e| Error::Config(e.to_string()))?;
            let path = cli.out.join("candidates.json");
            std::fs::write(&path, &json)?;
            println!("{json}");
            Ok(())
        }
        Command::AttackEdit {
            dataset,
            n_targets,
            budget,
            parallel_targets,
        } => {
            ensure_out(&cli.out)?;
            let mut cfg = load_experiment_config(&cli.config, cli.seed)?;
            apply_dataset_args(&mut cfg, &dataset);
            if let Some(n) = n_targets {
                cfg.n_targets = n;
            }
            if let Some(b) = budget {
                cfg.attack.budget_delta = b;
            }
            if let Some(p) = parallel_targets {
                cfg.parallel_targets = p;
            }
            let (report, traces) = run_editing_experiment(&cfg)?;
            finish_experiment(&cli.out, &report, &traces)
        }
        Command::AttackInject {
            dataset,
            n_targets,
            budget,
            parallel_targets,
        } => {
            ensure_out(&cli.out)?;
            let mut cfg = load_experiment_config(&cli.config, cli.seed)?;
            apply_dataset_args(&mut cfg, &dataset);
            if let Some(n) = n_targets {
                cfg.n_targets = n;
            }
            if let Some(b) = budget {
                cfg.attack.budget_delta = b;
            }
            if let Some(p) = parallel_targets {
                cfg.parallel_targets = p;
            }
            let (report, traces) = run_injection_experiment(&cfg)?;
            finish_experiment(&cli.out, &report, &traces)
        }
        Command::Eval { traces } => {
            let mut lines = Vec::new();
            for path in &traces {
                let text = std::fs::read_to_string(path)?;
                for (idx, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let value: serde_json::Value =
                        serde_json::from_str(line).map_err(|e| Error::Parse {
                            line: idx + 1,
                            message: e.to_string(),
                        })?;
                    lines.push(value);
                }
            }
            let aggregate = aggregate_trace_lines(&lines);
            println!(
                "{}",
                serde_json::to_string_pretty(&aggregate)
                    .map_err(|e| Error::Config(e.to_string()))?
            );
            Ok(())
        }
    }
}

fn finish_experiment(
    out: &Path,
    report: &otcloak_cli::experiment::ExperimentReport,
    traces: &[Vec<AttackTrace>],
) -> Result<()> {
    let report_path = out.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&report_path, json.as_bytes())?;
    let traces_path = out.join("traces.jsonl");
    write_traces(&traces_path, traces)?;
    log::info!("run took {:.2}s", report.timing_seconds);
    println!(
        "{}",
        serde_json::json!({
            "report": report_path,
            "traces": traces_path,
            "misclassification_rate": report.misclassification_rate,
            "baseline_random_rate": report.baseline_random_rate,
        })
    );
    Ok(())
}
