//! Online planning: argsort the predicted state channel, commit the best
//! collision-free candidate, repeat until the goal region is reached.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{gen_frame, Frame, FrameError, PatchSpec};
use crate::grid::{col_det, Cell, OccupancyGrid, Path};
use crate::nn::{network_forward, CellState, NetworkParams, NnError, OutputMode};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("start or goal cell is occupied or out of bounds")]
    BadEndpoint,
    #[error("task needs at least one robot and equally many starts and goals")]
    BadTask,
    #[error("initial frame does not match the grid and robot count")]
    FrameMismatch,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Cells within a Chebyshev radius of the goal count as arrival.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GoalRegion {
    pub goal: Cell,
    pub radius: i32,
}

impl GoalRegion {
    /// Region matching the goal's rendered patch: radius ⌊p/2⌋.
    pub fn for_patch(goal: Cell, patch: PatchSpec) -> GoalRegion {
        GoalRegion { goal, radius: patch.radius() as i32 }
    }
}

pub fn in_goal_region(cell: &Cell, region: &GoalRegion) -> bool {
    cell.chebyshev(&region.goal) <= region.radius
}

/// Total Euclidean length over consecutive waypoints.
pub fn path_cost(path: &Path) -> f64 {
    path.waypoints
        .windows(2)
        .map(|w| w[0].euclidean(&w[1]))
        .sum()
}

/// All cells of a single-channel field, ordered by value descending; ties
/// break by ascending row-major index so the order is deterministic.
pub fn argsort_desc(values: &[f32], side: usize, dim: usize) -> Vec<Cell> {
    debug_assert_eq!(values.len(), side.pow(dim as u32));
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_unstable_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then_with(|| a.cmp(&b))
    });
    let probe = OccupancyGrid::new_free(side, dim).expect("side/dim already validated");
    idx.into_iter().map(|i| probe.cell_at(i)).collect()
}

/// Default iteration budget: a generous multiple of the grid side.
pub fn default_max_itr(side: usize, dim: usize) -> usize {
    if dim == 3 {
        6 * side
    } else {
        4 * side
    }
}

/// One step of lookahead: absorb newly observed frames, emit the predicted
/// next frame. Implementations carry whatever recurrent state they need.
pub trait FramePredictor {
    fn predict_next(&mut self, new_frames: &[Frame]) -> Result<Frame, NnError>;

    /// Channel of the predicted frame holding robot `id`'s state.
    fn robot_channel(&self, id: usize) -> usize;
}

/// Trained network driving the planner, with incremental recurrent state so
/// each planning iteration costs one frame, not the whole clip.
pub struct ModelPredictor<'a> {
    params: &'a NetworkParams<f32>,
    state: Option<CellState<f32>>,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(params: &'a NetworkParams<f32>) -> ModelPredictor<'a> {
        ModelPredictor { params, state: None }
    }
}

impl FramePredictor for ModelPredictor<'_> {
    fn predict_next(&mut self, new_frames: &[Frame]) -> Result<Frame, NnError> {
        let (pred, state) = network_forward(self.params, new_frames, self.state.take())?;
        self.state = Some(state);
        Ok(pred)
    }

    fn robot_channel(&self, id: usize) -> usize {
        match self.params.meta.output_mode {
            OutputMode::FullFrame => 2 * id + 1,
            OutputMode::ProbOnly => id,
        }
    }
}

/// Outcome of one planning run. On success every path runs start → goal;
/// `visited_waypoints` counts every candidate examined, rejections included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub success: bool,
    pub paths: Vec<Path>,
    pub visited_waypoints: usize,
    pub forward_passes: usize,
    pub wall_time: f64,
}

impl PlanResult {
    pub fn total_cost(&self) -> f64 {
        self.paths.iter().map(path_cost).sum()
    }
}

/// Plan one robot's path with a trained model.
pub fn plan_single(
    params: &NetworkParams<f32>,
    x0: &Frame,
    start: Cell,
    goal: Cell,
    patch: PatchSpec,
    max_itr: usize,
    grid: &OccupancyGrid,
) -> Result<PlanResult, PlanError> {
    let mut pred = ModelPredictor::new(params);
    plan_single_with(&mut pred, x0, start, goal, patch, max_itr, grid)
}

/// Plan all robots' paths against one shared model.
pub fn plan_multi(
    params: &NetworkParams<f32>,
    x0: &Frame,
    starts: &[Cell],
    goals: &[Cell],
    patch: PatchSpec,
    max_itr: usize,
    grid: &OccupancyGrid,
) -> Result<PlanResult, PlanError> {
    let mut pred = ModelPredictor::new(params);
    plan_multi_with(&mut pred, x0, starts, goals, patch, max_itr, grid)
}

/// Single-robot planning against any predictor: the R = 1 case of the
/// multi-robot loop, which makes the reduction exact.
pub fn plan_single_with<P: FramePredictor>(
    pred: &mut P,
    x0: &Frame,
    start: Cell,
    goal: Cell,
    patch: PatchSpec,
    max_itr: usize,
    grid: &OccupancyGrid,
) -> Result<PlanResult, PlanError> {
    plan_multi_with(pred, x0, &[start], &[goal], patch, max_itr, grid)
}

struct MultiState<'a> {
    grid: &'a OccupancyGrid,
    regions: Vec<GoalRegion>,
    paths: Vec<Vec<Cell>>,
    current: Vec<Cell>,
    done: Vec<bool>,
}

impl MultiState<'_> {
    /// Finish robot `id` if it stands in its goal region and the hop onto
    /// the exact goal is collision-free and not blocked by another robot.
    fn try_finish(&mut self, id: usize) {
        if self.done[id] {
            return;
        }
        let goal = self.regions[id].goal;
        if !in_goal_region(&self.current[id], &self.regions[id]) {
            return;
        }
        if self.current[id] == goal {
            self.done[id] = true;
            return;
        }
        if col_det(self.grid, &self.current[id], &goal) {
            return;
        }
        if self.occupied_by_other(id, &goal) {
            return;
        }
        self.paths[id].push(goal);
        self.current[id] = goal;
        self.done[id] = true;
        self.assert_disjoint();
    }

    fn occupied_by_other(&self, id: usize, cell: &Cell) -> bool {
        self.current
            .iter()
            .enumerate()
            .any(|(j, c)| j != id && c == cell)
    }

    fn assert_disjoint(&self) {
        debug_assert!(
            (0..self.current.len()).all(|i| !self.occupied_by_other(i, &self.current[i])),
            "two robots share a cell"
        );
    }
}

/// Multi-robot planning against any predictor: one forward pass per
/// iteration serves every robot; a cell committed this timestamp is closed
/// to later robots.
pub fn plan_multi_with<P: FramePredictor>(
    pred: &mut P,
    x0: &Frame,
    starts: &[Cell],
    goals: &[Cell],
    patch: PatchSpec,
    max_itr: usize,
    grid: &OccupancyGrid,
) -> Result<PlanResult, PlanError> {
    let t0 = Instant::now();
    let r = starts.len();
    if r == 0 || goals.len() != r {
        return Err(PlanError::BadTask);
    }
    for cell in starts.iter().chain(goals) {
        if !grid.in_bounds(cell) || grid.is_occupied(cell) {
            return Err(PlanError::BadEndpoint);
        }
    }
    if x0.channels() != 1 + 2 * r || x0.side() != grid.side() || x0.dim() != grid.dim() {
        return Err(PlanError::FrameMismatch);
    }

    let mut st = MultiState {
        grid,
        regions: goals
            .iter()
            .map(|&g| GoalRegion::for_patch(g, patch))
            .collect(),
        paths: starts.iter().map(|&s| vec![s]).collect(),
        current: starts.to_vec(),
        done: vec![false; r],
    };
    let mut visited = 0usize;
    let mut forward_passes = 0usize;
    let mut pending = vec![x0.clone()];

    loop {
        // Robots blocked at arrival retry before spending a forward pass;
        // another robot may have stepped off their goal cell since.
        for id in 0..r {
            st.try_finish(id);
        }
        if st.done.iter().all(|&d| d) {
            break;
        }
        if forward_passes == max_itr {
            break;
        }
        let prediction = pred.predict_next(&pending)?;
        pending.clear();
        forward_passes += 1;

        for id in 0..r {
            if st.done[id] {
                continue;
            }
            let channel = prediction.channel(pred.robot_channel(id));
            for cand in argsort_desc(channel, grid.side(), grid.dim()) {
                visited += 1;
                if st.paths[id].contains(&cand) {
                    continue;
                }
                if st.occupied_by_other(id, &cand) {
                    continue;
                }
                if col_det(grid, &st.current[id], &cand) {
                    continue;
                }
                st.paths[id].push(cand);
                st.current[id] = cand;
                st.assert_disjoint();
                break;
            }
            st.try_finish(id);
        }

        if !st.done.iter().all(|&d| d) {
            pending.push(gen_frame(x0, &st.current, patch)?);
        }
    }

    let success = st.done.iter().all(|&d| d);
    let paths = if success {
        st.paths.into_iter().map(Path::new).collect()
    } else {
        Vec::new()
    };
    Ok(PlanResult {
        success,
        paths,
        visited_waypoints: visited,
        forward_passes,
        wall_time: t0.elapsed().as_secs_f64(),
    })
}
