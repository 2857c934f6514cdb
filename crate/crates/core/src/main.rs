//! `stp` — dataset generation, training, planning, benchmarking, rendering.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage, 3 invalid config,
//! 4 missing artifact, 5 artifact schema mismatch.

use std::io::ErrorKind;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use stp_core::bench::{
    bench_tasks, run_benchmark, summarize, write_reports, BenchError, BenchPlanner, BenchTask,
    ExpertPlanner, ModelPlanner,
};
use stp_core::config::{desk2d, load_config, AppConfig, ConfigError};
use stp_core::dataset::{
    build_dataset, load_manifest, load_training_clips, split_iter, DatasetError, Split,
    workspace_grid,
};
use stp_core::frames::encode_initial_frame;
use stp_core::grid::Path as GridPath;
use stp_core::nn::{
    load_model, save_model, train_with_progress, ModelIoError, NetConfig, TrainConfig,
};
use stp_core::planner::{plan_multi, plan_single, PlanResult};
use stp_core::render::render_ppm;
use stp_core::{Cell, PatchSpec, RngSeed};

const EXIT_RUNTIME: i32 = 1;
const EXIT_CONFIG: i32 = 3;
const EXIT_MISSING: i32 = 4;
const EXIT_SCHEMA: i32 = 5;

#[derive(Parser)]
#[command(
    name = "stp",
    version,
    about = "Video-prediction motion planner: generate data, train, plan, benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; omitted means the built-in desk-scale profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the dataset (worlds, expert paths, clips, splits).
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory (default: paths.data_dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the frame-prediction network on the dataset.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory (default: paths.data_dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model output file (default: paths.model_file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan one robot's path on a dataset workspace.
    Plan {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Workspace id providing the world.
        #[arg(long, default_value_t = 0)]
        workspace: usize,
        /// Start cell, comma-separated coordinates (e.g. 1,1).
        #[arg(long)]
        start: String,
        /// Goal cell, comma-separated coordinates (e.g. 14,14).
        #[arg(long)]
        goal: String,
    },
    /// Plan several robots' paths with one shared model.
    PlanMulti {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        workspace: usize,
        /// Robot count; must match the number of --start/--goal flags.
        #[arg(long)]
        robots: usize,
        /// Start cell per robot (repeat the flag).
        #[arg(long)]
        start: Vec<String>,
        /// Goal cell per robot (repeat the flag).
        #[arg(long)]
        goal: Vec<String>,
    },
    /// Run planners over the evaluation splits and write reports.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Report directory (default: paths.report_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict to one split (seen-eval or unseen-eval).
        #[arg(long)]
        split: Option<String>,
        /// Comma-separated planner names (stp-net, rrt-star).
        #[arg(long, default_value = "stp-net,rrt-star")]
        planners: String,
    },
    /// Render a workspace (optionally with a stored expert path) as PPM.
    Render {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        workspace: usize,
        /// Draw the expert path of this task index, if given.
        #[arg(long)]
        task: Option<usize>,
        /// Split the task index refers to.
        #[arg(long, default_value = "seen-train")]
        split: String,
        /// Output image file.
        #[arg(long)]
        out: PathBuf,
    },
}

struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> CliError {
        CliError { code, message: message.into() }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        let code = match &e {
            ConfigError::Io(io) if io.kind() == ErrorKind::NotFound => EXIT_MISSING,
            _ => EXIT_CONFIG,
        };
        CliError::new(code, format!("config error: {e}"))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> CliError {
        let code = match &e {
            DatasetError::Io(io) if io.kind() == ErrorKind::NotFound => EXIT_MISSING,
            DatasetError::Magic
            | DatasetError::Version(_)
            | DatasetError::ManifestVersion(_)
            | DatasetError::Truncated
            | DatasetError::Corrupt(_)
            | DatasetError::Schema(_) => EXIT_SCHEMA,
            DatasetError::Config(_) | DatasetError::UnknownSplit(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        CliError::new(code, format!("dataset error: {e}"))
    }
}

impl From<ModelIoError> for CliError {
    fn from(e: ModelIoError) -> CliError {
        let code = match &e {
            ModelIoError::Io(io) if io.kind() == ErrorKind::NotFound => EXIT_MISSING,
            ModelIoError::Io(_) => EXIT_RUNTIME,
            _ => EXIT_SCHEMA,
        };
        CliError::new(code, format!("model error: {e}"))
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> CliError {
        match e {
            BenchError::Dataset(d) => d.into(),
            other => CliError::new(EXIT_RUNTIME, format!("bench error: {other}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        let code = if e.kind() == ErrorKind::NotFound { EXIT_MISSING } else { EXIT_RUNTIME };
        CliError::new(code, format!("io error: {e}"))
    }
}

fn main() {
    stp_core::util::init_thread_pool();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out } => cmd_gen_data(config, out),
        Command::Train { config, data, out } => cmd_train(config, data, out),
        Command::Plan { config, data, model, workspace, start, goal } => {
            cmd_plan(config, data, model, workspace, &[start], &[goal], false)
        }
        Command::PlanMulti { config, data, model, workspace, robots, start, goal } => {
            if start.len() != robots || goal.len() != robots {
                return Err(CliError::new(
                    EXIT_CONFIG,
                    format!(
                        "--robots {} needs {} --start and --goal flags (got {} and {})",
                        robots,
                        robots,
                        start.len(),
                        goal.len()
                    ),
                ));
            }
            cmd_plan(config, data, model, workspace, &start, &goal, true)
        }
        Command::Bench { config, data, model, out, split, planners } => {
            cmd_bench(config, data, model, out, split, &planners)
        }
        Command::Render { config, data, workspace, task, split, out } => {
            cmd_render(config, data, workspace, task, &split, out)
        }
    }
}

fn effective_config(args: &ConfigArgs) -> Result<AppConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => desk2d(),
    };
    if let Some(seed) = args.seed {
        config.dataset.seed = RngSeed(seed);
    }
    Ok(config)
}

fn parse_cell(text: &str, dim: usize) -> Result<Cell, CliError> {
    let coords: Result<Vec<i32>, _> = text.split(',').map(|t| t.trim().parse::<i32>()).collect();
    let coords = coords.map_err(|_| {
        CliError::new(EXIT_CONFIG, format!("cannot parse cell {text:?} (expected r,c or r,c,l)"))
    })?;
    if coords.len() != dim {
        return Err(CliError::new(
            EXIT_CONFIG,
            format!("cell {text:?} has {} coordinates, world is {dim}-dimensional", coords.len()),
        ));
    }
    Ok(Cell::from_coords(&coords))
}

fn cmd_gen_data(args: ConfigArgs, out: Option<PathBuf>) -> Result<(), CliError> {
    let config = effective_config(&args)?;
    let dir = out.unwrap_or_else(|| PathBuf::from(&config.paths.data_dir));
    eprintln!("generating dataset in {}", dir.display());
    let report = build_dataset(&dir, &config.dataset)?;
    eprintln!(
        "built {} clips / {} tasks (discarded {} attempts), clip length {}",
        report.clips, report.tasks, report.discarded_tasks, report.clip_len
    );
    println!(
        "{}",
        serde_json::json!({
            "dir": dir.display().to_string(),
            "clips": report.clips,
            "tasks": report.tasks,
            "discarded_tasks": report.discarded_tasks,
            "clip_len": report.clip_len,
        })
    );
    Ok(())
}

fn cmd_train(
    args: ConfigArgs,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let config = effective_config(&args)?;
    let data_dir = data.unwrap_or_else(|| PathBuf::from(&config.paths.data_dir));
    let model_path = out.unwrap_or_else(|| PathBuf::from(&config.paths.model_file));

    let manifest = load_manifest(&data_dir)?;
    let clips = load_training_clips(&data_dir, &manifest)?;
    if config.train.j + 1 >= manifest.clip_len {
        return Err(CliError::new(
            EXIT_CONFIG,
            format!(
                "j={} leaves no scored steps for clips of length {}",
                config.train.j, manifest.clip_len
            ),
        ));
    }

    let meta = NetConfig {
        side: manifest.n,
        dim: manifest.d,
        in_channels: 1 + 2 * manifest.robots,
        hidden: config.train.hidden,
        kernel: config.train.kernel,
        layers: config.train.layers,
        output_mode: config.train.output_mode,
    };
    let train_cfg = TrainConfig {
        batch_size: config.train.batch,
        iterations: config.train.iterations,
        lr: config.train.lr,
        j: config.train.j,
        seed: config.dataset.seed.derive("train", 0),
    };
    eprintln!(
        "training on {} clips (T={}): hidden {}, {} layers, kernel {}, batch {}, {} iterations",
        clips.len(),
        manifest.clip_len,
        meta.hidden,
        meta.layers,
        meta.kernel,
        train_cfg.batch_size,
        train_cfg.iterations
    );
    let every = (train_cfg.iterations / 100).max(1);
    let (params, trace) = train_with_progress::<f32>(meta, &clips, &train_cfg, |iter, loss| {
        if iter % every == 0 || iter + 1 == train_cfg.iterations {
            eprintln!("iter {:>6}/{} loss {loss:.6}", iter + 1, train_cfg.iterations);
        }
    })
    .map_err(|e| CliError::new(EXIT_RUNTIME, format!("training failed: {e}")))?;

    if let Some(parent) = model_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_model(&params, &model_path)?;
    println!(
        "{}",
        serde_json::json!({
            "model": model_path.display().to_string(),
            "iterations": trace.len(),
            "final_loss": trace.last().copied(),
        })
    );
    Ok(())
}

/// The JSON shape `plan` and `plan-multi` print and `bench` records refine.
fn plan_record(task_id: &str, result: &PlanResult) -> serde_json::Value {
    serde_json::json!({
        "task_id": task_id,
        "planner": "stp-net",
        "success": result.success,
        "time_ms": result.wall_time * 1e3,
        "cost": if result.success { Some(result.total_cost()) } else { None },
        "visited": result.visited_waypoints,
        "forward_passes": result.forward_passes,
        "paths": result.paths,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_plan(
    args: ConfigArgs,
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    workspace: usize,
    starts: &[String],
    goals: &[String],
    multi: bool,
) -> Result<(), CliError> {
    let config = effective_config(&args)?;
    let data_dir = data.unwrap_or_else(|| PathBuf::from(&config.paths.data_dir));
    let model_path = model.unwrap_or_else(|| PathBuf::from(&config.paths.model_file));

    let manifest = load_manifest(&data_dir)?;
    let entry = manifest
        .workspaces
        .iter()
        .find(|w| w.id == workspace)
        .ok_or_else(|| {
            CliError::new(EXIT_CONFIG, format!("workspace {workspace} is not in the manifest"))
        })?;
    let grid = workspace_grid(&manifest.config, entry)?;
    let params = load_model(&model_path)?;
    if params.meta.side != manifest.n || params.meta.dim != manifest.d {
        return Err(CliError::new(
            EXIT_SCHEMA,
            format!(
                "model geometry {}^{} does not match dataset {}^{}",
                params.meta.side, params.meta.dim, manifest.n, manifest.d
            ),
        ));
    }

    let starts: Vec<Cell> = starts
        .iter()
        .map(|s| parse_cell(s, manifest.d))
        .collect::<Result<_, _>>()?;
    let goals: Vec<Cell> = goals
        .iter()
        .map(|g| parse_cell(g, manifest.d))
        .collect::<Result<_, _>>()?;

    let patch = PatchSpec::new(manifest.p)
        .map_err(|e| CliError::new(EXIT_SCHEMA, format!("manifest patch invalid: {e}")))?;
    let max_itr = config
        .plan
        .max_itr
        .unwrap_or_else(|| stp_core::planner::default_max_itr(grid.side(), grid.dim()));
    let x0 = encode_initial_frame(&grid, &starts, &goals, patch)
        .map_err(|e| CliError::new(EXIT_RUNTIME, format!("cannot encode task: {e}")))?;

    let result = if multi {
        plan_multi(&params, &x0, &starts, &goals, patch, max_itr, &grid)
    } else {
        plan_single(&params, &x0, starts[0], goals[0], patch, max_itr, &grid)
    }
    .map_err(|e| CliError::new(EXIT_RUNTIME, format!("planning failed: {e}")))?;

    println!(
        "{}",
        serde_json::to_string(&plan_record("cli", &result))
            .map_err(|e| CliError::new(EXIT_RUNTIME, e.to_string()))?
    );
    Ok(())
}

fn cmd_bench(
    args: ConfigArgs,
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    split: Option<String>,
    planner_names: &str,
) -> Result<(), CliError> {
    let config = effective_config(&args)?;
    let data_dir = data.unwrap_or_else(|| PathBuf::from(&config.paths.data_dir));
    let model_path = model.unwrap_or_else(|| PathBuf::from(&config.paths.model_file));
    let report_dir = out.unwrap_or_else(|| PathBuf::from(&config.paths.report_dir));

    let splits: Vec<Split> = match split {
        Some(s) => vec![s.parse().map_err(CliError::from)?],
        None => vec![Split::SeenEval, Split::UnseenEval],
    };
    let mut tasks: Vec<BenchTask> = Vec::new();
    for s in &splits {
        tasks.extend(bench_tasks(&data_dir, *s)?);
    }
    if tasks.is_empty() {
        return Err(CliError::new(EXIT_RUNTIME, "no tasks in the requested splits"));
    }

    let patch = PatchSpec::new(load_manifest(&data_dir)?.p)
        .map_err(|e| CliError::new(EXIT_SCHEMA, format!("manifest patch invalid: {e}")))?;
    let mut model_planner: Option<ModelPlanner> = None;
    let mut expert_planner: Option<ExpertPlanner> = None;
    for name in planner_names.split(',').map(str::trim) {
        match name {
            "stp-net" => {
                model_planner = Some(ModelPlanner {
                    params: load_model(&model_path)?,
                    patch,
                    max_itr: config.plan.max_itr,
                })
            }
            "rrt-star" => {
                expert_planner = Some(ExpertPlanner {
                    iterations: config.dataset.expert_iterations,
                    waypoint_spacing: stp_core::dataset::WAYPOINT_SPACING,
                    seed: config.dataset.seed.derive("bench", 0),
                })
            }
            other => {
                return Err(CliError::new(
                    EXIT_CONFIG,
                    format!("unknown planner {other:?} (expected stp-net or rrt-star)"),
                ));
            }
        }
    }
    let mut planners: Vec<&mut dyn BenchPlanner> = Vec::new();
    if let Some(p) = model_planner.as_mut() {
        planners.push(p);
    }
    if let Some(p) = expert_planner.as_mut() {
        planners.push(p);
    }

    eprintln!("benchmarking {} planners over {} tasks", planners.len(), tasks.len());
    let records = run_benchmark(&mut planners, &tasks)?;
    let summary = summarize(&records);
    write_reports(&report_dir, &records, &summary)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::new(EXIT_RUNTIME, e.to_string()))?
    );
    Ok(())
}

fn cmd_render(
    args: ConfigArgs,
    data: Option<PathBuf>,
    workspace: usize,
    task: Option<usize>,
    split: &str,
    out: PathBuf,
) -> Result<(), CliError> {
    let config = effective_config(&args)?;
    let data_dir = data.unwrap_or_else(|| PathBuf::from(&config.paths.data_dir));
    let manifest = load_manifest(&data_dir)?;
    if manifest.d != 2 {
        return Err(CliError::new(EXIT_RUNTIME, "render supports 2D worlds only"));
    }
    let entry = manifest
        .workspaces
        .iter()
        .find(|w| w.id == workspace)
        .ok_or_else(|| {
            CliError::new(EXIT_CONFIG, format!("workspace {workspace} is not in the manifest"))
        })?;
    let grid = workspace_grid(&manifest.config, entry)?;

    let mut paths: Vec<GridPath> = Vec::new();
    if let Some(index) = task {
        let split: Split = split.parse().map_err(CliError::from)?;
        let records = split_iter(&data_dir, split)?;
        let record = records
            .iter()
            .find(|t| t.workspace == workspace && t.index == index)
            .ok_or_else(|| {
                CliError::new(
                    EXIT_CONFIG,
                    format!("no task {index} in workspace {workspace} for split {split}"),
                )
            })?;
        paths = record.paths.clone();
    }

    let bytes = render_ppm(&grid, &paths, &[], None);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&out, bytes)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}
