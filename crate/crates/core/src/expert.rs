//! RRT* expert planner over continuous space, plus shortcut smoothing and
//! quantization of the resulting polylines into grid-cell waypoint paths
//! used as training targets.

use crate::grid::{col_det, segment_hits_occupied, Cell, OccupancyGrid, Path};
use crate::util::RngSeed;
use rand::Rng;
use thiserror::Error;

/// A continuous piecewise-linear path; points beyond the grid dimension
/// hold 0.5 so distances are consistent in 2D and 3D.
pub type Polyline = Vec<[f64; 3]>;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("start or goal cell {0} is occupied")]
    OccupiedEndpoint(Cell),
    #[error("no path found within {0} iterations")]
    NotFound(usize),
    #[error("quantization produced a colliding segment between {0} and {1}")]
    QuantizationCollision(Cell, Cell),
    #[error("invalid planner configuration: {0}")]
    BadConfig(String),
}

#[derive(Clone, Copy, Debug)]
pub struct RRTStarConfig {
    pub max_iterations: usize,
    /// Steering step, in cell lengths.
    pub step_size: f64,
    /// Probability of sampling the goal instead of free space.
    pub goal_bias: f64,
    /// Scale for the shrinking near-neighborhood radius.
    pub rewire_gamma: f64,
    /// A node within this distance of the goal may connect to it.
    pub goal_tolerance: f64,
}

impl RRTStarConfig {
    /// Standard settings for a grid: the near radius follows the usual
    /// RRT* schedule gamma·(log k / k)^(1/d) with gamma derived from the
    /// free volume.
    pub fn for_grid(grid: &OccupancyGrid, max_iterations: usize) -> RRTStarConfig {
        let d = grid.dim() as f64;
        let free_volume = grid.count_free() as f64;
        let gamma = 2.0 * (1.0 + 1.0 / d).powf(1.0 / d) * free_volume.powf(1.0 / d);
        RRTStarConfig {
            max_iterations,
            step_size: 2.0,
            goal_bias: 0.05,
            rewire_gamma: gamma,
            goal_tolerance: 1.0,
        }
    }

    fn validate(&self) -> Result<(), ExpertError> {
        if self.step_size <= 0.0 {
            return Err(ExpertError::BadConfig("step_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.goal_bias) {
            return Err(ExpertError::BadConfig("goal_bias must be in [0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(ExpertError::BadConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Search tree rooted at the start point.
pub struct Tree {
    nodes: Vec<[f64; 3]>,
    parent: Vec<Option<usize>>,
    cost_to_root: Vec<f64>,
    children: Vec<Vec<usize>>,
}

impl Tree {
    fn new(root: [f64; 3]) -> Tree {
        Tree {
            nodes: vec![root],
            parent: vec![None],
            cost_to_root: vec![0.0],
            children: vec![Vec::new()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> [f64; 3] {
        self.nodes[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn cost_to_root(&self, i: usize) -> f64 {
        self.cost_to_root[i]
    }

    fn push(&mut self, point: [f64; 3], parent: usize, cost: f64) -> usize {
        let i = self.nodes.len();
        self.nodes.push(point);
        self.parent.push(Some(parent));
        self.cost_to_root.push(cost);
        self.children.push(Vec::new());
        self.children[parent].push(i);
        i
    }

    fn reparent(&mut self, child: usize, new_parent: usize, new_cost: f64) {
        let old = self.parent[child].expect("root is never reparented");
        self.children[old].retain(|&c| c != child);
        self.parent[child] = Some(new_parent);
        self.children[new_parent].push(child);
        let delta = new_cost - self.cost_to_root[child];
        // Shift the whole subtree; costs stay consistent with edge lengths.
        let mut stack = vec![child];
        while let Some(i) = stack.pop() {
            self.cost_to_root[i] += delta;
            stack.extend(&self.children[i]);
        }
    }

    fn polyline_to(&self, i: usize) -> Polyline {
        let mut points = vec![self.nodes[i]];
        let mut cur = i;
        while let Some(p) = self.parent[cur] {
            cur = p;
            points.push(self.nodes[cur]);
        }
        points.reverse();
        points
    }
}

fn dist(d: usize, a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for k in 0..d {
        let v = a[k] - b[k];
        s += v * v;
    }
    s.sqrt()
}

/// Total Euclidean length of a polyline.
pub fn polyline_cost(d: usize, points: &[[f64; 3]]) -> f64 {
    points.windows(2).map(|w| dist(d, &w[0], &w[1])).sum()
}

fn sample_free_point<R: Rng>(grid: &OccupancyGrid, rng: &mut R) -> [f64; 3] {
    let n = grid.side() as f64;
    let d = grid.dim();
    loop {
        let p = [
            rng.random_range(0.0..n),
            rng.random_range(0.0..n),
            if d == 3 { rng.random_range(0.0..n) } else { 0.5 },
        ];
        if grid.is_free(&grid.cell_of_point(&p)) {
            return p;
        }
    }
}

struct Run {
    tree: Tree,
    goal: [f64; 3],
    goal_tolerance: f64,
    dim: usize,
}

impl Run {
    /// Cheapest complete polyline found so far: best tree node that can
    /// legally connect to the goal, with the goal point appended.
    fn best(&self, grid: &OccupancyGrid) -> Option<(Polyline, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.tree.len() {
            let gap = dist(self.dim, &self.tree.nodes[i], &self.goal);
            if gap > self.goal_tolerance {
                continue;
            }
            let total = self.tree.cost_to_root[i] + gap;
            if best.map_or(true, |(_, c)| total < c) {
                if gap > 1e-12 && segment_hits_occupied(grid, &self.tree.nodes[i], &self.goal) {
                    continue;
                }
                best = Some((i, total));
            }
        }
        best.map(|(i, c)| {
            let mut points = self.tree.polyline_to(i);
            if dist(self.dim, points.last().unwrap(), &self.goal) > 1e-12 {
                points.push(self.goal);
            }
            (points, c)
        })
    }
}

fn grow(
    grid: &OccupancyGrid,
    start: &Cell,
    goal: &Cell,
    cfg: &RRTStarConfig,
    seed: RngSeed,
    mut on_checkpoint: impl FnMut(usize, &Run),
) -> Result<Run, ExpertError> {
    cfg.validate()?;
    for cell in [start, goal] {
        if grid.is_occupied(cell) {
            return Err(ExpertError::OccupiedEndpoint(*cell));
        }
    }
    let d = grid.dim();
    let mut rng = seed.rng();
    let mut run = Run {
        tree: Tree::new(start.center()),
        goal: goal.center(),
        goal_tolerance: cfg.goal_tolerance,
        dim: d,
    };

    for iter in 1..=cfg.max_iterations {
        let target = if rng.random::<f64>() < cfg.goal_bias {
            run.goal
        } else {
            sample_free_point(grid, &mut rng)
        };

        // Nearest node, then steer toward the target by at most step_size.
        let mut nearest = 0;
        let mut nearest_d = f64::INFINITY;
        for (i, p) in run.tree.nodes.iter().enumerate() {
            let dd = dist(d, p, &target);
            if dd < nearest_d {
                nearest_d = dd;
                nearest = i;
            }
        }
        if nearest_d < 1e-12 {
            continue;
        }
        let mut new_point = target;
        if nearest_d > cfg.step_size {
            let s = cfg.step_size / nearest_d;
            let base = run.tree.nodes[nearest];
            for k in 0..3 {
                new_point[k] = base[k] + s * (target[k] - base[k]);
            }
        }
        if grid.is_occupied(&grid.cell_of_point(&new_point)) {
            continue;
        }

        // Shrinking neighborhood for choose-parent and rewiring.
        let k = run.tree.len() as f64;
        let radius = if run.tree.len() < 2 {
            0.0
        } else {
            (cfg.rewire_gamma * (k.ln() / k).powf(1.0 / d as f64)).min(cfg.step_size * 4.0)
        };
        let mut near: Vec<usize> = (0..run.tree.len())
            .filter(|&i| dist(d, &run.tree.nodes[i], &new_point) <= radius)
            .collect();
        if !near.contains(&nearest) {
            near.push(nearest);
        }

        let mut parent = None;
        let mut parent_cost = f64::INFINITY;
        for &i in &near {
            let cand = run.tree.cost_to_root[i] + dist(d, &run.tree.nodes[i], &new_point);
            if cand < parent_cost && !segment_hits_occupied(grid, &run.tree.nodes[i], &new_point) {
                parent = Some(i);
                parent_cost = cand;
            }
        }
        let Some(parent) = parent else { continue };
        let new_index = run.tree.push(new_point, parent, parent_cost);

        for &i in &near {
            if i == parent {
                continue;
            }
            let cand = parent_cost + dist(d, &new_point, &run.tree.nodes[i]);
            if cand + 1e-12 < run.tree.cost_to_root[i]
                && !segment_hits_occupied(grid, &new_point, &run.tree.nodes[i])
            {
                run.tree.reparent(i, new_index, cand);
            }
        }

        on_checkpoint(iter, &run);
    }
    Ok(run)
}

/// RRT* from start to goal. Returns the cheapest collision-free polyline
/// found, ending exactly at the goal center; deterministic in the seed.
pub fn rrt_star(
    grid: &OccupancyGrid,
    start: &Cell,
    goal: &Cell,
    cfg: &RRTStarConfig,
    seed: RngSeed,
) -> Result<Polyline, ExpertError> {
    // Degenerate task: the start can already connect.
    if start.euclidean(goal) <= cfg.goal_tolerance
        && !grid.is_occupied(start)
        && !grid.is_occupied(goal)
        && !segment_hits_occupied(grid, &start.center(), &goal.center())
    {
        cfg.validate()?;
        return Ok(vec![start.center(), goal.center()]);
    }
    let run = grow(grid, start, goal, cfg, seed, |_, _| {})?;
    run.best(grid).map(|(p, _)| p).ok_or(ExpertError::NotFound(cfg.max_iterations))
}

/// Best path cost after each listed iteration count (None = not yet found).
#[cfg(test)]
fn checkpoint_costs(
    grid: &OccupancyGrid,
    start: &Cell,
    goal: &Cell,
    cfg: &RRTStarConfig,
    seed: RngSeed,
    checkpoints: &[usize],
) -> Vec<Option<f64>> {
    let mut costs = Vec::with_capacity(checkpoints.len());
    grow(grid, start, goal, cfg, seed, |iter, run| {
        if checkpoints.contains(&iter) {
            costs.push(run.best(grid).map(|(_, c)| c));
        }
    })
    .unwrap();
    costs
}

/// Greedy line-of-sight shortcutting: from each kept vertex, jump to the
/// farthest later vertex reachable by a free segment. Never increases cost.
pub fn shortcut(grid: &OccupancyGrid, points: &[[f64; 3]]) -> Polyline {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let mut out = vec![points[0]];
    let mut i = 0;
    while i + 1 < points.len() {
        let mut j = points.len() - 1;
        while j > i + 1 && segment_hits_occupied(grid, &points[i], &points[j]) {
            j -= 1;
        }
        out.push(points[j]);
        i = j;
    }
    out
}

/// Subdivide each segment so no two consecutive points are farther apart
/// than `spacing`. Geometry (and therefore cost) is unchanged.
pub fn subdivide(d: usize, points: &[[f64; 3]], spacing: f64) -> Polyline {
    assert!(spacing > 0.0, "spacing must be positive");
    if points.len() < 2 {
        return points.to_vec();
    }
    let mut out = vec![points[0]];
    for w in points.windows(2) {
        let len = dist(d, &w[0], &w[1]);
        let pieces = (len / spacing).ceil().max(1.0) as usize;
        for i in 1..=pieces {
            let t = i as f64 / pieces as f64;
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = w[0][k] + t * (w[1][k] - w[0][k]);
            }
            out.push(p);
        }
    }
    out
}

/// Quantize a collision-free polyline to the cell lattice: containing cell
/// per vertex, consecutive duplicates collapsed, revisit loops erased, and
/// every consecutive pair re-verified with col_det.
pub fn extract_waypoints(points: &[[f64; 3]], grid: &OccupancyGrid) -> Result<Path, ExpertError> {
    let mut cells: Vec<Cell> = Vec::with_capacity(points.len());
    for p in points {
        let cell = grid.cell_of_point(p);
        // Wobble across a cell boundary and back would revisit a cell; cutting
        // back to the first visit keeps the sequence loop-free. The shortcut
        // between cells[i] and its new successor is free because the successor
        // was entered from this same cell.
        if let Some(i) = cells.iter().position(|c| *c == cell) {
            cells.truncate(i + 1);
        } else {
            cells.push(cell);
        }
    }
    for w in cells.windows(2) {
        if col_det(grid, &w[0], &w[1]) {
            return Err(ExpertError::QuantizationCollision(w[0], w[1]));
        }
    }
    Ok(Path::new(cells))
}

/// Full expert pipeline: RRT*, shortcut smoothing, resampling at the given
/// waypoint spacing, quantization.
pub fn plan_expert_path(
    grid: &OccupancyGrid,
    start: &Cell,
    goal: &Cell,
    cfg: &RRTStarConfig,
    waypoint_spacing: f64,
    seed: RngSeed,
) -> Result<Path, ExpertError> {
    let raw = rrt_star(grid, start, goal, cfg, seed)?;
    let smooth = shortcut(grid, &raw);
    let dense = subdivide(grid.dim(), &smooth, waypoint_spacing);
    extract_waypoints(&dense, grid)
}
