//! Benchmark harness: run planners over dataset task streams, validate the
//! returned paths, and emit JSONL records plus an aggregate summary.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path as FsPath;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    load_manifest, split_iter, workspace_grid, DatasetError, DatasetManifest, Split, TaskRecord,
};
use crate::expert::{plan_expert_path, RRTStarConfig};
use crate::frames::{encode_initial_frame, FrameError, PatchSpec};
use crate::grid::{astar_oracle, col_det, Cell, OccupancyGrid};
use crate::nn::NetworkParams;
use crate::planner::{
    default_max_itr, path_cost, plan_multi, plan_single, PlanError, PlanResult,
};
use crate::util::RngSeed;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("no tasks in the requested split")]
    EmptySplit,
}

/// One planning task, hydrated from a dataset TaskRecord.
#[derive(Clone, Debug)]
pub struct BenchTask {
    pub id: String,
    pub split: Split,
    pub grid: OccupancyGrid,
    pub starts: Vec<Cell>,
    pub goals: Vec<Cell>,
}

/// Hydrate a split into runnable tasks (worlds rebuilt from their seeds).
pub fn bench_tasks(dir: &FsPath, split: Split) -> Result<Vec<BenchTask>, BenchError> {
    let manifest = load_manifest(dir)?;
    let records = split_iter(dir, split)?;
    hydrate_tasks(&manifest, &records, split)
}

pub fn hydrate_tasks(
    manifest: &DatasetManifest,
    records: &[TaskRecord],
    split: Split,
) -> Result<Vec<BenchTask>, BenchError> {
    let mut grids: HashMap<usize, OccupancyGrid> = HashMap::new();
    let mut tasks = Vec::with_capacity(records.len());
    for rec in records {
        let grid = match grids.get(&rec.workspace) {
            Some(g) => g.clone(),
            None => {
                let entry = manifest
                    .workspaces
                    .iter()
                    .find(|w| w.id == rec.workspace)
                    .ok_or_else(|| {
                        DatasetError::Schema(format!(
                            "task references unknown workspace {}",
                            rec.workspace
                        ))
                    })?;
                let g = workspace_grid(&manifest.config, entry)?;
                grids.insert(rec.workspace, g.clone());
                g
            }
        };
        tasks.push(BenchTask {
            id: format!("ws{:03}/task{:04}", rec.workspace, rec.index),
            split,
            grid,
            starts: rec.starts.clone(),
            goals: rec.goals.clone(),
        });
    }
    Ok(tasks)
}

/// A planner under benchmark. Implementations must be deterministic for a
/// fixed task.
pub trait BenchPlanner {
    fn name(&self) -> &str;
    fn plan(&mut self, task: &BenchTask) -> Result<PlanResult, PlanError>;
}

/// The trained model driving the online planner (shared passes when R > 1).
pub struct ModelPlanner {
    pub params: NetworkParams<f32>,
    pub patch: PatchSpec,
    pub max_itr: Option<usize>,
}

impl BenchPlanner for ModelPlanner {
    fn name(&self) -> &str {
        "stp-net"
    }

    fn plan(&mut self, task: &BenchTask) -> Result<PlanResult, PlanError> {
        let x0 = encode_initial_frame(&task.grid, &task.starts, &task.goals, self.patch)
            .map_err(PlanError::Frame)?;
        let max_itr = self
            .max_itr
            .unwrap_or_else(|| default_max_itr(task.grid.side(), task.grid.dim()));
        if task.starts.len() == 1 {
            plan_single(
                &self.params,
                &x0,
                task.starts[0],
                task.goals[0],
                self.patch,
                max_itr,
                &task.grid,
            )
        } else {
            plan_multi(
                &self.params,
                &x0,
                &task.starts,
                &task.goals,
                self.patch,
                max_itr,
                &task.grid,
            )
        }
    }
}

/// The sampling expert as a baseline planner.
pub struct ExpertPlanner {
    pub iterations: usize,
    pub waypoint_spacing: f64,
    pub seed: RngSeed,
}

impl BenchPlanner for ExpertPlanner {
    fn name(&self) -> &str {
        "rrt-star"
    }

    fn plan(&mut self, task: &BenchTask) -> Result<PlanResult, PlanError> {
        let t0 = Instant::now();
        let cfg = RRTStarConfig::for_grid(&task.grid, self.iterations);
        let mut paths = Vec::with_capacity(task.starts.len());
        let mut ok = true;
        for (robot, (s, g)) in task.starts.iter().zip(&task.goals).enumerate() {
            let seed = self
                .seed
                .derive("bench-task", fnv_str(&task.id))
                .derive("robot", robot as u64);
            match plan_expert_path(&task.grid, s, g, &cfg, self.waypoint_spacing, seed) {
                Ok(p) => paths.push(p),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        Ok(PlanResult {
            success: ok,
            paths: if ok { paths } else { Vec::new() },
            visited_waypoints: 0,
            forward_passes: 0,
            wall_time: t0.elapsed().as_secs_f64(),
        })
    }
}

fn fnv_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One line of results.jsonl.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub task_id: String,
    pub planner: String,
    pub split: Split,
    pub success: bool,
    pub time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visited_waypoints: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forward_passes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerSummary {
    pub planner: String,
    pub split: Split,
    pub tasks: usize,
    pub successes: usize,
    pub success_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_mean_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_std_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visited_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forward_passes_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_ratio_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub records: usize,
    pub planners: Vec<PlannerSummary>,
}

/// True iff a claimed-successful result holds up: endpoints correct and
/// every segment collision-free, per robot.
pub fn validate_result(task: &BenchTask, result: &PlanResult) -> bool {
    if result.paths.len() != task.starts.len() {
        return false;
    }
    for (robot, path) in result.paths.iter().enumerate() {
        let wp = &path.waypoints;
        if wp.first() != Some(&task.starts[robot]) || wp.last() != Some(&task.goals[robot]) {
            return false;
        }
        if wp.windows(2).any(|w| col_det(&task.grid, &w[0], &w[1])) {
            return false;
        }
    }
    true
}

/// Run every planner over every task. The first task serves as an untimed
/// warm-up per planner and is then rerun for the record. Claimed successes
/// that fail independent validation are recorded as failures.
pub fn run_benchmark(
    planners: &mut [&mut dyn BenchPlanner],
    tasks: &[BenchTask],
) -> Result<Vec<BenchRecord>, BenchError> {
    if tasks.is_empty() {
        return Err(BenchError::EmptySplit);
    }
    let mut oracle_costs: Vec<Option<f64>> = Vec::with_capacity(tasks.len());
    for task in tasks {
        let mut total = 0.0;
        let mut all = true;
        for (s, g) in task.starts.iter().zip(&task.goals) {
            match astar_oracle(&task.grid, s, g) {
                Some(p) => total += path_cost(&p),
                None => {
                    all = false;
                    break;
                }
            }
        }
        oracle_costs.push(if all { Some(total) } else { None });
    }

    let mut records = Vec::with_capacity(planners.len() * tasks.len());
    for planner in planners.iter_mut() {
        let _ = planner.plan(&tasks[0]);
        for (task, oracle) in tasks.iter().zip(&oracle_costs) {
            let t0 = Instant::now();
            let outcome = planner.plan(task);
            let elapsed = t0.elapsed().as_secs_f64();
            let (mut success, result) = match outcome {
                Ok(r) => (r.success, Some(r)),
                Err(_) => (false, None),
            };
            if success {
                let r = result.as_ref().expect("success implies a result");
                success = validate_result(task, r);
            }
            let cost = if success {
                result.as_ref().map(|r| r.total_cost())
            } else {
                None
            };
            let cost_ratio = match (cost, oracle) {
                (Some(c), Some(o)) if *o > 0.0 => Some(c / o),
                _ => None,
            };
            records.push(BenchRecord {
                task_id: task.id.clone(),
                planner: planner.name().to_string(),
                split: task.split,
                success,
                time_s: elapsed,
                cost,
                visited_waypoints: result.as_ref().map(|r| r.visited_waypoints),
                forward_passes: result.as_ref().map(|r| r.forward_passes),
                oracle_cost: *oracle,
                cost_ratio,
            });
        }
    }
    Ok(records)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn mean(values: &[f64]) -> Option<f64> {
    mean_std(values).0
}

/// Aggregate records per (planner, split). Cost statistics cover successful
/// tasks only; time covers all tasks; std is the population deviation.
pub fn summarize(records: &[BenchRecord]) -> BenchSummary {
    let mut keys: Vec<(String, Split)> = Vec::new();
    for r in records {
        let key = (r.planner.clone(), r.split);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut planners = Vec::with_capacity(keys.len());
    for (planner, split) in keys {
        let group: Vec<&BenchRecord> = records
            .iter()
            .filter(|r| r.planner == planner && r.split == split)
            .collect();
        let successes = group.iter().filter(|r| r.success).count();
        let times: Vec<f64> = group.iter().map(|r| r.time_s).collect();
        let costs: Vec<f64> = group.iter().filter_map(|r| r.cost).collect();
        let visited: Vec<f64> = group
            .iter()
            .filter(|r| r.success)
            .filter_map(|r| r.visited_waypoints.map(|v| v as f64))
            .collect();
        let passes: Vec<f64> = group
            .iter()
            .filter(|r| r.success)
            .filter_map(|r| r.forward_passes.map(|v| v as f64))
            .collect();
        let ratios: Vec<f64> = group.iter().filter_map(|r| r.cost_ratio).collect();
        let (time_mean_s, time_std_s) = mean_std(&times);
        let (cost_mean, cost_std) = mean_std(&costs);
        planners.push(PlannerSummary {
            planner,
            split,
            tasks: group.len(),
            successes,
            success_rate: successes as f64 / group.len() as f64,
            time_mean_s,
            time_std_s,
            cost_mean,
            cost_std,
            visited_mean: mean(&visited),
            forward_passes_mean: mean(&passes),
            cost_ratio_mean: mean(&ratios),
        });
    }
    BenchSummary { records: records.len(), planners }
}

/// Per-task comparison of one shared multi-robot plan against per-robot
/// single plans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiVsSingle {
    pub task_id: String,
    pub multi_success: bool,
    pub singles_success: bool,
    pub t_multi_s: f64,
    pub t_single_sum_s: f64,
    pub passes_multi: usize,
    pub passes_single_sum: usize,
}

/// Each task planned once with the shared forward pass and once per robot.
/// The per-robot runs park every other robot at its goal, so one network
/// serves both constructions and pass counts are directly comparable.
pub fn compare_multi_vs_single(
    params: &NetworkParams<f32>,
    patch: PatchSpec,
    max_itr: Option<usize>,
    tasks: &[BenchTask],
) -> Result<Vec<MultiVsSingle>, BenchError> {
    let mut out = Vec::with_capacity(tasks.len());
    for task in tasks {
        let itr = max_itr.unwrap_or_else(|| default_max_itr(task.grid.side(), task.grid.dim()));
        let x0 = encode_initial_frame(&task.grid, &task.starts, &task.goals, patch)?;
        let multi = plan_multi(params, &x0, &task.starts, &task.goals, patch, itr, &task.grid)?;

        let mut t_single_sum = 0.0;
        let mut passes_sum = 0usize;
        let mut singles_ok = true;
        for j in 0..task.starts.len() {
            let starts: Vec<Cell> = task
                .goals
                .iter()
                .enumerate()
                .map(|(k, g)| if k == j { task.starts[j] } else { *g })
                .collect();
            let x0 = encode_initial_frame(&task.grid, &starts, &task.goals, patch)?;
            let single = plan_multi(params, &x0, &starts, &task.goals, patch, itr, &task.grid)?;
            t_single_sum += single.wall_time;
            passes_sum += single.forward_passes;
            singles_ok &= single.success;
        }
        out.push(MultiVsSingle {
            task_id: task.id.clone(),
            multi_success: multi.success,
            singles_success: singles_ok,
            t_multi_s: multi.wall_time,
            t_single_sum_s: t_single_sum,
            passes_multi: multi.forward_passes,
            passes_single_sum: passes_sum,
        });
    }
    Ok(out)
}

/// Write results.jsonl (one record per line, input order) and summary.json.
pub fn write_reports(
    dir: &FsPath,
    records: &[BenchRecord],
    summary: &BenchSummary,
) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    let mut jsonl = fs::File::create(dir.join("results.jsonl"))?;
    for r in records {
        writeln!(jsonl, "{}", serde_json::to_string(r)?)?;
    }
    jsonl.flush()?;
    let mut pretty = serde_json::to_string_pretty(summary)?;
    pretty.push('\n');
    fs::write(dir.join("summary.json"), pretty)?;
    Ok(())
}

pub fn read_records(path: &FsPath) -> Result<Vec<BenchRecord>, BenchError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::Frame;
    use crate::grid::Path;
    use crate::nn::{NetConfig, NnError, OutputMode};
    use crate::planner::{plan_single_with, FramePredictor};

    fn free_task(id: &str, n: usize, start: Cell, goal: Cell) -> BenchTask {
        BenchTask {
            id: id.to_string(),
            split: Split::SeenEval,
            grid: OccupancyGrid::new_free(n, 2).unwrap(),
            starts: vec![start],
            goals: vec![goal],
        }
    }

    /// Indicator stub marching one cell toward the goal per step; assumes an
    /// empty grid so its suggestion always commits.
    struct Greedy {
        current: Cell,
        goal: Cell,
        side: usize,
    }

    impl FramePredictor for Greedy {
        fn predict_next(&mut self, _new: &[Frame]) -> Result<Frame, NnError> {
            let probe = OccupancyGrid::new_free(self.side, 2).unwrap();
            let mut f = Frame::zeros(3, self.side, 2);
            let step = Cell::new2(
                self.current.row() + (self.goal.row() - self.current.row()).signum(),
                self.current.col() + (self.goal.col() - self.current.col()).signum(),
            );
            f.channel_mut(1)[probe.index_of(&step)] = 1.0;
            self.current = step;
            Ok(f)
        }

        fn robot_channel(&self, _id: usize) -> usize {
            1
        }
    }

    struct GreedyPlanner;

    impl BenchPlanner for GreedyPlanner {
        fn name(&self) -> &str {
            "greedy-stub"
        }

        fn plan(&mut self, task: &BenchTask) -> Result<PlanResult, PlanError> {
            let patch = PatchSpec::new(3).unwrap();
            let x0 = encode_initial_frame(&task.grid, &task.starts, &task.goals, patch)
                .map_err(PlanError::Frame)?;
            let mut stub = Greedy {
                current: task.starts[0],
                goal: task.goals[0],
                side: task.grid.side(),
            };
            plan_single_with(
                &mut stub,
                &x0,
                task.starts[0],
                task.goals[0],
                patch,
                64,
                &task.grid,
            )
        }
    }

    #[test]
    fn straight_line_stub_visits_path_minus_two() {
        let tasks = vec![
            free_task("a", 8, Cell::new2(0, 0), Cell::new2(7, 7)),
            free_task("b", 8, Cell::new2(7, 0), Cell::new2(0, 7)),
        ];
        let mut stub = GreedyPlanner;
        let mut planners: Vec<&mut dyn BenchPlanner> = vec![&mut stub];
        let records = run_benchmark(&mut planners, &tasks).unwrap();
        assert_eq!(records.len(), 2);
        for r in &records {
            assert!(r.success);
            let visited = r.visited_waypoints.unwrap();
            // Path length is not in the record; the greedy walk commits
            // side-2 waypoints with zero rejections on these tasks.
            assert_eq!(visited, 6);
            assert!(r.oracle_cost.is_some());
            assert!(r.cost_ratio.unwrap() >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn summary_matches_hand_computation() {
        let records = vec![
            BenchRecord {
                task_id: "t0".into(),
                planner: "p".into(),
                split: Split::SeenEval,
                success: true,
                time_s: 0.2,
                cost: Some(10.0),
                visited_waypoints: Some(4),
                forward_passes: Some(5),
                oracle_cost: Some(8.0),
                cost_ratio: Some(1.25),
            },
            BenchRecord {
                task_id: "t1".into(),
                planner: "p".into(),
                split: Split::SeenEval,
                success: false,
                time_s: 0.4,
                cost: None,
                visited_waypoints: Some(9),
                forward_passes: Some(12),
                oracle_cost: Some(8.0),
                cost_ratio: None,
            },
        ];
        let summary = summarize(&records);
        assert_eq!(summary.records, 2);
        let s = &summary.planners[0];
        assert_eq!(s.tasks, 2);
        assert_eq!(s.successes, 1);
        assert!((s.success_rate - 0.5).abs() < 1e-12);
        assert!((s.time_mean_s.unwrap() - 0.3).abs() < 1e-12);
        assert!((s.time_std_s.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(s.cost_mean, Some(10.0));
        assert_eq!(s.cost_std, Some(0.0));
        // Visited/pass means cover successful tasks only.
        assert_eq!(s.visited_mean, Some(4.0));
        assert_eq!(s.forward_passes_mean, Some(5.0));
        assert_eq!(s.cost_ratio_mean, Some(1.25));
    }

    #[test]
    fn failed_validation_downgrades_success() {
        struct Liar;
        impl BenchPlanner for Liar {
            fn name(&self) -> &str {
                "liar"
            }
            fn plan(&mut self, task: &BenchTask) -> Result<PlanResult, PlanError> {
                Ok(PlanResult {
                    success: true,
                    paths: vec![Path::new(vec![task.starts[0], task.starts[0]])],
                    visited_waypoints: 0,
                    forward_passes: 0,
                    wall_time: 0.0,
                })
            }
        }
        let tasks = vec![free_task("a", 6, Cell::new2(0, 0), Cell::new2(5, 5))];
        let mut liar = Liar;
        let mut planners: Vec<&mut dyn BenchPlanner> = vec![&mut liar];
        let records = run_benchmark(&mut planners, &tasks).unwrap();
        assert!(!records[0].success);
        assert!(records[0].cost.is_none());
    }

    #[test]
    fn reports_round_trip_and_prefix_parse() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![BenchRecord {
            task_id: "x".into(),
            planner: "p".into(),
            split: Split::UnseenEval,
            success: true,
            time_s: 0.1,
            cost: Some(3.0),
            visited_waypoints: Some(1),
            forward_passes: Some(2),
            oracle_cost: Some(3.0),
            cost_ratio: Some(1.0),
        }];
        let summary = summarize(&records);
        write_reports(dir.path(), &records, &summary).unwrap();
        let back = read_records(&dir.path().join("results.jsonl")).unwrap();
        assert_eq!(back, records);

        // A truncated JSONL prefix still parses line by line.
        let text = fs::read_to_string(dir.path().join("results.jsonl")).unwrap();
        let first_line = text.lines().next().unwrap();
        let partial: BenchRecord = serde_json::from_str(first_line).unwrap();
        assert_eq!(partial, records[0]);
    }

    fn tiny_net(in_channels: usize, seed: u64) -> NetworkParams<f32> {
        let meta = NetConfig {
            side: 8,
            dim: 2,
            in_channels,
            hidden: 4,
            kernel: 3,
            layers: 2,
            output_mode: OutputMode::FullFrame,
        };
        NetworkParams::init(meta, RngSeed(seed)).unwrap()
    }

    #[test]
    fn compare_with_one_robot_runs_the_same_plan_twice() {
        let params = tiny_net(3, 5);
        let tasks = vec![free_task("a", 8, Cell::new2(0, 0), Cell::new2(7, 7))];
        let rows =
            compare_multi_vs_single(&params, PatchSpec::new(3).unwrap(), Some(16), &tasks)
                .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].passes_multi, rows[0].passes_single_sum);
        assert_eq!(rows[0].multi_success, rows[0].singles_success);
    }

    #[test]
    fn compare_parks_finished_robots_at_their_goals() {
        // Both robots start inside their goal regions, so the joint run and
        // every parked per-robot run commit without a single forward pass.
        let params = tiny_net(5, 6);
        let task = BenchTask {
            id: "pair".into(),
            split: Split::SeenEval,
            grid: OccupancyGrid::new_free(8, 2).unwrap(),
            starts: vec![Cell::new2(2, 2), Cell::new2(5, 5)],
            goals: vec![Cell::new2(2, 3), Cell::new2(5, 6)],
        };
        let rows =
            compare_multi_vs_single(&params, PatchSpec::new(3).unwrap(), Some(16), &[task])
                .unwrap();
        assert!(rows[0].multi_success && rows[0].singles_success);
        assert_eq!(rows[0].passes_multi, 0);
        assert_eq!(rows[0].passes_single_sum, 0);
    }

    #[test]
    fn expert_planner_is_deterministic_on_a_task() {
        let grid = crate::grid::gen_random_forest(12, 2, 5, RngSeed(2)).unwrap();
        let (s, g) = crate::grid::sample_free_pair(&grid, 5.0, RngSeed(3)).unwrap();
        let task = BenchTask {
            id: "det".into(),
            split: Split::SeenEval,
            grid,
            starts: vec![s],
            goals: vec![g],
        };
        let mut p = ExpertPlanner { iterations: 800, waypoint_spacing: 1.0, seed: RngSeed(9) };
        let a = p.plan(&task).unwrap();
        let b = p.plan(&task).unwrap();
        assert_eq!(a.success, b.success);
        assert_eq!(a.paths, b.paths);
    }
}
