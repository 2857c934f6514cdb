//! Dataset builds: worlds, expert tasks, encoded clips, splits, and the
//! on-disk layout (manifest.json + tasks.jsonl + clips/…/*.stpc).

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path as FsPath, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expert::{plan_expert_path, ExpertError, RRTStarConfig};
use crate::frames::{path_to_clip, Clip, Frame, FrameError, PatchSpec};
use crate::grid::{gen_maze, gen_random_forest, sample_free_pair, Cell, GridError, OccupancyGrid, Path};
use crate::planner::path_cost;
use crate::util::RngSeed;

const CLIP_MAGIC: &[u8; 4] = b"STPC";
const CLIP_VERSION: u16 = 1;
const MANIFEST_VERSION: u32 = 1;
/// Attempts per task slot before the build gives up on a workspace.
const TASK_RETRY_BUDGET: usize = 40;
/// Spacing cap (in cells) for expert waypoints. At most 1.0 every move lands
/// on a lattice neighbor, so quantizing a collision-free polyline almost never
/// introduces a colliding cell pair.
pub const WAYPOINT_SPACING: f64 = 1.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad magic bytes (not an STPC clip file)")]
    Magic,
    #[error("unsupported clip format version {0}")]
    Version(u16),
    #[error("unsupported manifest version {0}")]
    ManifestVersion(u32),
    #[error("file is truncated")]
    Truncated,
    #[error("corrupt clip file: {0}")]
    Corrupt(String),
    #[error("clip values must be exactly 0 or 1")]
    NonBinaryClip,
    #[error("dataset does not match its manifest: {0}")]
    Schema(String),
    #[error("unknown split {0:?} (expected seen-train, seen-eval or unseen-eval)")]
    UnknownSplit(String),
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("workspace {workspace} could not produce a task within {budget} attempts")]
    TaskBudget { workspace: usize, budget: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorldKind {
    Forest,
    Maze,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    SeenTrain,
    SeenEval,
    UnseenEval,
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Split, DatasetError> {
        match s {
            "seen-train" => Ok(Split::SeenTrain),
            "seen-eval" => Ok(Split::SeenEval),
            "unseen-eval" => Ok(Split::UnseenEval),
            other => Err(DatasetError::UnknownSplit(other.to_string())),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::SeenTrain => "seen-train",
            Split::SeenEval => "seen-eval",
            Split::UnseenEval => "unseen-eval",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub world: WorldKind,
    pub n: usize,
    pub d: usize,
    /// Obstacle shapes per forest workspace; ignored for mazes.
    pub obstacles: usize,
    pub robots: usize,
    /// Training (seen) workspaces.
    pub workspaces: usize,
    pub clips_per_workspace: usize,
    /// Fresh start/goal pairs per seen workspace, disjoint from training.
    pub eval_tasks_per_workspace: usize,
    pub unseen_workspaces: usize,
    pub tasks_per_unseen_workspace: usize,
    pub p: usize,
    pub expert_iterations: usize,
    pub seed: RngSeed,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: &str| Err(DatasetError::Config(msg.to_string()));
        if !(2..=3).contains(&self.d) {
            return bad("d must be 2 or 3");
        }
        if self.n < 4 {
            return bad("n must be at least 4");
        }
        if self.n > u16::MAX as usize {
            return bad("n does not fit the clip header");
        }
        if self.robots == 0 {
            return bad("robots must be at least 1");
        }
        if self.workspaces == 0 && self.unseen_workspaces == 0 {
            return bad("need at least one workspace");
        }
        if self.workspaces > 0 && self.clips_per_workspace == 0 {
            return bad("seen workspaces need at least one clip");
        }
        PatchSpec::new(self.p)?;
        if self.expert_iterations == 0 {
            return bad("expert_iterations must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkspaceSplit {
    Seen,
    Unseen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceEntry {
    pub id: usize,
    pub split: WorkspaceSplit,
    pub world_seed: RngSeed,
    pub train_clips: usize,
    pub eval_tasks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub d: usize,
    pub n: usize,
    pub p: usize,
    pub robots: usize,
    /// Length of the longest training clip (0 when there are none); the
    /// training loop pads shorter clips up to the batch maximum.
    pub clip_len: usize,
    pub discarded_tasks: usize,
    pub config: DatasetConfig,
    pub workspaces: Vec<WorkspaceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub workspace: usize,
    pub index: usize,
    pub split: Split,
    pub starts: Vec<Cell>,
    pub goals: Vec<Cell>,
    pub paths: Vec<Path>,
    pub cost: f64,
    /// Clip file relative to the dataset root; training tasks only.
    pub clip: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildReport {
    pub clips: usize,
    pub tasks: usize,
    pub discarded_tasks: usize,
    pub clip_len: usize,
}

/// Rebuild the world of one manifest entry (deterministic in its seed).
pub fn workspace_grid(
    config: &DatasetConfig,
    entry: &WorkspaceEntry,
) -> Result<OccupancyGrid, DatasetError> {
    let grid = match config.world {
        WorldKind::Forest => {
            gen_random_forest(config.n, config.d, config.obstacles, entry.world_seed)?
        }
        WorldKind::Maze => gen_maze(config.n, entry.world_seed)?,
    };
    Ok(grid)
}

struct WorkspaceBuild {
    entry: WorkspaceEntry,
    tasks: Vec<TaskRecord>,
    clips: Vec<Clip>,
    discarded: usize,
}

fn build_workspace(config: &DatasetConfig, id: usize) -> Result<WorkspaceBuild, DatasetError> {
    let ws_seed = config.seed.derive("workspace", id as u64);
    let entry = WorkspaceEntry {
        id,
        split: if id < config.workspaces {
            WorkspaceSplit::Seen
        } else {
            WorkspaceSplit::Unseen
        },
        world_seed: ws_seed.derive("world", 0),
        train_clips: if id < config.workspaces {
            config.clips_per_workspace
        } else {
            0
        },
        eval_tasks: if id < config.workspaces {
            config.eval_tasks_per_workspace
        } else {
            config.tasks_per_unseen_workspace
        },
    };
    let grid = workspace_grid(config, &entry)?;
    let patch = PatchSpec::new(config.p)?;
    let rrt = RRTStarConfig::for_grid(&grid, config.expert_iterations);
    // Half the grid side keeps tasks long enough that clips still carry
    // several supervised steps beyond the J observation frames.
    let min_sep = config.n as f64 / 2.0;

    let mut used: HashSet<(Vec<Cell>, Vec<Cell>)> = HashSet::new();
    let mut tasks = Vec::new();
    let mut clips = Vec::new();
    let mut discarded = 0usize;

    for slot in 0..entry.train_clips + entry.eval_tasks {
        let is_train = slot < entry.train_clips;
        let slot_seed = ws_seed.derive("task", slot as u64);
        let mut built = false;
        for attempt in 0..TASK_RETRY_BUDGET {
            let attempt_seed = slot_seed.derive("attempt", attempt as u64);
            match try_task(&grid, config, &rrt, min_sep, attempt_seed, &used) {
                Some((starts, goals, paths, cost)) => {
                    let clip = if is_train {
                        let raw = path_to_clip(&grid, &paths, &goals, patch)?;
                        clips.push(raw);
                        Some(clip_rel_path(id, slot))
                    } else {
                        None
                    };
                    used.insert((starts.clone(), goals.clone()));
                    tasks.push(TaskRecord {
                        workspace: id,
                        index: slot,
                        split: match (is_train, entry.split) {
                            (true, _) => Split::SeenTrain,
                            (false, WorkspaceSplit::Seen) => Split::SeenEval,
                            (false, WorkspaceSplit::Unseen) => Split::UnseenEval,
                        },
                        starts,
                        goals,
                        paths,
                        cost,
                        clip,
                    });
                    built = true;
                    break;
                }
                None => discarded += 1,
            }
        }
        if !built {
            return Err(DatasetError::TaskBudget {
                workspace: id,
                budget: TASK_RETRY_BUDGET,
            });
        }
    }
    Ok(WorkspaceBuild { entry, tasks, clips, discarded })
}

type TaskDraw = (Vec<Cell>, Vec<Cell>, Vec<Path>, f64);

/// One attempt at a full task: sample R connectable pairs, keep starts and
/// goals pairwise distinct, run the expert per robot. None = discard.
fn try_task(
    grid: &OccupancyGrid,
    config: &DatasetConfig,
    rrt: &RRTStarConfig,
    min_sep: f64,
    seed: RngSeed,
    used: &HashSet<(Vec<Cell>, Vec<Cell>)>,
) -> Option<TaskDraw> {
    let r = config.robots;
    let mut starts = Vec::with_capacity(r);
    let mut goals = Vec::with_capacity(r);
    for robot in 0..r {
        let (s, g) = sample_free_pair(grid, min_sep, seed.derive("pair", robot as u64)).ok()?;
        if starts.contains(&s) || goals.contains(&g) || starts.contains(&g) || goals.contains(&s) {
            return None;
        }
        starts.push(s);
        goals.push(g);
    }
    if used.contains(&(starts.clone(), goals.clone())) {
        return None;
    }
    // Patch stamping needs a free center; sampling already guarantees it,
    // but the expert must also produce paths the encoder accepts.
    let mut paths = Vec::with_capacity(r);
    let mut cost = 0.0;
    for robot in 0..r {
        let path = plan_expert_path(
            grid,
            &starts[robot],
            &goals[robot],
            rrt,
            WAYPOINT_SPACING,
            seed.derive("expert", robot as u64),
        )
        .ok()?;
        cost += path_cost(&path);
        paths.push(path);
    }
    Some((starts, goals, paths, cost))
}

fn clip_rel_path(workspace: usize, slot: usize) -> String {
    format!("clips/ws{workspace:03}/clip{slot:04}.stpc")
}

/// Generate every workspace and write the dataset under `dir`. Clips are
/// stored at their natural lengths; the training loop pads each batch as
/// needed. Rebuilds with the same config are bitwise identical.
pub fn build_dataset(dir: &FsPath, config: &DatasetConfig) -> Result<BuildReport, DatasetError> {
    config.validate()?;
    let total_ws = config.workspaces + config.unseen_workspaces;
    let mut builds = (0..total_ws)
        .into_par_iter()
        .map(|id| build_workspace(config, id))
        .collect::<Result<Vec<_>, _>>()?;

    let clip_len = builds
        .iter()
        .flat_map(|b| b.clips.iter().map(Clip::len))
        .max()
        .unwrap_or(0);

    fs::create_dir_all(dir)?;
    let mut total_clips = 0usize;
    let mut total_tasks = 0usize;
    let mut discarded = 0usize;
    let mut entries = Vec::with_capacity(total_ws);
    let mut task_lines = Vec::new();

    for build in &mut builds {
        discarded += build.discarded;
        total_tasks += build.tasks.len();
        if !build.clips.is_empty() {
            let ws_dir = dir.join(format!("clips/ws{:03}", build.entry.id));
            fs::create_dir_all(&ws_dir)?;
            for (slot, clip) in build.clips.iter().enumerate() {
                save_clip(&dir.join(clip_rel_path(build.entry.id, slot)), clip)?;
                total_clips += 1;
            }
        }
        for task in &build.tasks {
            task_lines.push(serde_json::to_string(task)?);
        }
        entries.push(build.entry.clone());
    }

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        d: config.d,
        n: config.n,
        p: config.p,
        robots: config.robots,
        clip_len,
        discarded_tasks: discarded,
        config: config.clone(),
        workspaces: entries,
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest)?;
    manifest_json.push('\n');
    fs::write(dir.join("manifest.json"), manifest_json)?;

    let mut tasks_file = fs::File::create(dir.join("tasks.jsonl"))?;
    for line in &task_lines {
        writeln!(tasks_file, "{line}")?;
    }
    tasks_file.flush()?;

    Ok(BuildReport {
        clips: total_clips,
        tasks: total_tasks,
        discarded_tasks: discarded,
        clip_len,
    })
}

pub fn load_manifest(dir: &FsPath) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(DatasetError::ManifestVersion(manifest.format_version));
    }
    Ok(manifest)
}

/// Tasks of one split, ordered by (workspace, index).
pub fn split_iter(dir: &FsPath, split: Split) -> Result<Vec<TaskRecord>, DatasetError> {
    let text = fs::read_to_string(dir.join("tasks.jsonl"))?;
    let mut tasks = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskRecord = serde_json::from_str(line)?;
        if task.split == split {
            tasks.push(task);
        }
    }
    tasks.sort_by_key(|t| (t.workspace, t.index));
    Ok(tasks)
}

/// All training clips in manifest order, validated against the manifest.
pub fn load_training_clips(
    dir: &FsPath,
    manifest: &DatasetManifest,
) -> Result<Vec<Clip>, DatasetError> {
    let channels = 1 + 2 * manifest.robots;
    let mut clips = Vec::new();
    for ws in &manifest.workspaces {
        for slot in 0..ws.train_clips {
            let clip = load_clip(&dir.join(clip_rel_path(ws.id, slot)))?;
            if clip.side() != manifest.n
                || clip.dim() != manifest.d
                || clip.channels() != channels
                || clip.len() > manifest.clip_len
            {
                return Err(DatasetError::Schema(format!(
                    "clip {} does not match manifest geometry",
                    clip_rel_path(ws.id, slot)
                )));
            }
            clips.push(clip);
        }
    }
    if !clips.is_empty() && clips.iter().map(Clip::len).max() != Some(manifest.clip_len) {
        return Err(DatasetError::Schema(format!(
            "longest stored clip disagrees with manifest clip_len {}",
            manifest.clip_len
        )));
    }
    Ok(clips)
}

pub fn clip_to_bytes(clip: &Clip) -> Result<Vec<u8>, DatasetError> {
    let cells = clip.frames[0].cells();
    let mut out = Vec::with_capacity(13 + clip.len() * clip.channels() * cells);
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    out.push(clip.dim() as u8);
    out.extend_from_slice(&(clip.side() as u16).to_le_bytes());
    out.extend_from_slice(&(clip.channels() as u16).to_le_bytes());
    out.extend_from_slice(&(clip.len() as u16).to_le_bytes());
    for frame in &clip.frames {
        for &v in frame.data() {
            if v == 0.0 {
                out.push(0);
            } else if v == 1.0 {
                out.push(1);
            } else {
                return Err(DatasetError::NonBinaryClip);
            }
        }
    }
    Ok(out)
}

pub fn clip_from_bytes(bytes: &[u8]) -> Result<Clip, DatasetError> {
    const HEADER: usize = 13;
    if bytes.len() < 4 {
        return Err(DatasetError::Truncated);
    }
    if &bytes[..4] != CLIP_MAGIC {
        return Err(DatasetError::Magic);
    }
    if bytes.len() < HEADER {
        return Err(DatasetError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CLIP_VERSION {
        return Err(DatasetError::Version(version));
    }
    let d = bytes[6] as usize;
    let n = u16::from_le_bytes([bytes[7], bytes[8]]) as usize;
    let c = u16::from_le_bytes([bytes[9], bytes[10]]) as usize;
    let t = u16::from_le_bytes([bytes[11], bytes[12]]) as usize;
    if !(2..=3).contains(&d) || n == 0 || c == 0 || t == 0 {
        return Err(DatasetError::Corrupt("bad header geometry".to_string()));
    }
    let cells = n.pow(d as u32);
    let expected = HEADER + t * c * cells;
    if bytes.len() < expected {
        return Err(DatasetError::Truncated);
    }
    if bytes.len() > expected {
        return Err(DatasetError::Corrupt("trailing bytes".to_string()));
    }
    let mut frames = Vec::with_capacity(t);
    let mut at = HEADER;
    for _ in 0..t {
        let mut frame = Frame::zeros(c, n, d);
        for (dst, &b) in frame.data_mut().iter_mut().zip(&bytes[at..at + c * cells]) {
            *dst = match b {
                0 => 0.0,
                1 => 1.0,
                other => {
                    return Err(DatasetError::Corrupt(format!(
                        "payload byte {other} is not 0 or 1"
                    )))
                }
            };
        }
        at += c * cells;
        frames.push(frame);
    }
    Ok(Clip::new(frames)?)
}

pub fn save_clip(path: &FsPath, clip: &Clip) -> Result<(), DatasetError> {
    fs::write(path, clip_to_bytes(clip)?)?;
    Ok(())
}

pub fn load_clip(path: &FsPath) -> Result<Clip, DatasetError> {
    clip_from_bytes(&fs::read(path)?)
}

/// Every file a dataset build writes, relative to its root, in a fixed
/// order — used for bitwise rebuild comparisons.
pub fn dataset_files(manifest: &DatasetManifest) -> Vec<PathBuf> {
    let mut files = vec![PathBuf::from("manifest.json"), PathBuf::from("tasks.jsonl")];
    for ws in &manifest.workspaces {
        for slot in 0..ws.train_clips {
            files.push(PathBuf::from(clip_rel_path(ws.id, slot)));
        }
    }
    files
}
