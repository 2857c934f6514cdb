//! Occupancy-grid worlds: procedural generation, cell geometry, collision
//! detection, and an optimal-path oracle used as the cost reference.

use crate::util::RngSeed;
use rand::Rng;
use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

/// Distance between segment sample points when testing for collisions,
/// in cell lengths. Conservative at grid resolution; the test suite checks
/// it against a much finer supersampling reference.
pub const COLLISION_STEP: f64 = 0.25;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimension must be 2 or 3, got {0}")]
    BadDim(usize),
    #[error("grid side must be at least {min}, got {got}")]
    SideTooSmall { min: usize, got: usize },
    #[error("cell {0} out of bounds for grid side {1}")]
    OutOfBounds(Cell, usize),
    #[error("obstacle placement left no free cell after {0} attempts")]
    PlacementFailed(usize),
    #[error("no connectable free pair with separation >= {min_separation} after {attempts} attempts")]
    PairSampling { min_separation: f64, attempts: usize },
    #[error("grid has fewer than two free cells")]
    TooFewFreeCells,
}

/// A lattice cell, identified by integer coordinates (row, col[, layer]).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    coords: [i32; 3],
    dim: u8,
}

impl Cell {
    pub fn new2(row: i32, col: i32) -> Cell {
        Cell { coords: [row, col, 0], dim: 2 }
    }

    pub fn new3(row: i32, col: i32, layer: i32) -> Cell {
        Cell { coords: [row, col, layer], dim: 3 }
    }

    /// Build from a coordinate slice of length 2 or 3.
    pub fn from_coords(coords: &[i32]) -> Cell {
        match coords {
            [r, c] => Cell::new2(*r, *c),
            [r, c, l] => Cell::new3(*r, *c, *l),
            _ => panic!("cell coordinates must have length 2 or 3"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }

    pub fn row(&self) -> i32 {
        self.coords[0]
    }

    pub fn col(&self) -> i32 {
        self.coords[1]
    }

    pub fn layer(&self) -> i32 {
        self.coords[2]
    }

    /// Continuous point at the cell center: coordinate + 0.5 per axis.
    pub fn center(&self) -> [f64; 3] {
        [
            self.coords[0] as f64 + 0.5,
            self.coords[1] as f64 + 0.5,
            if self.dim == 3 { self.coords[2] as f64 + 0.5 } else { 0.5 },
        ]
    }

    pub fn chebyshev(&self, other: &Cell) -> i32 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b).abs())
            .max()
            .unwrap_or(0)
    }

    pub fn euclidean(&self, other: &Cell) -> f64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

impl std::fmt::Debug for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({})", self.coords().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","))
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

// Cells serialize as plain coordinate arrays: [r, c] or [r, c, l].
impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.dim()))?;
        for c in self.coords() {
            seq.serialize_element(c)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Cell, D::Error> {
        struct CellVisitor;
        impl<'de> Visitor<'de> for CellVisitor {
            type Value = Cell;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("an array of 2 or 3 integer coordinates")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Cell, A::Error> {
                let mut coords = Vec::with_capacity(3);
                while let Some(v) = seq.next_element::<i32>()? {
                    coords.push(v);
                    if coords.len() > 3 {
                        return Err(serde::de::Error::invalid_length(4, &self));
                    }
                }
                if coords.len() < 2 {
                    return Err(serde::de::Error::invalid_length(coords.len(), &self));
                }
                Ok(Cell::from_coords(&coords))
            }
        }
        deserializer.deserialize_seq(CellVisitor)
    }
}

/// An ordered waypoint sequence on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path {
    pub waypoints: Vec<Cell>,
}

impl Path {
    pub fn new(waypoints: Vec<Cell>) -> Path {
        Path { waypoints }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn start(&self) -> Option<Cell> {
        self.waypoints.first().copied()
    }

    pub fn goal(&self) -> Option<Cell> {
        self.waypoints.last().copied()
    }
}

/// Binary occupancy over an n^d cell lattice, d in {2, 3}. Row-major:
/// 2D index = r*n + c, 3D index = (r*n + c)*n + l.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    side: usize,
    dim: usize,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new_free(side: usize, dim: usize) -> Result<OccupancyGrid, GridError> {
        if dim != 2 && dim != 3 {
            return Err(GridError::BadDim(dim));
        }
        if side < 2 {
            return Err(GridError::SideTooSmall { min: 2, got: side });
        }
        Ok(OccupancyGrid { side, dim, occupied: vec![false; side.pow(dim as u32)] })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total cell count n^d.
    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupied
    }

    pub fn in_bounds(&self, cell: &Cell) -> bool {
        cell.dim() == self.dim
            && cell.coords().iter().all(|&c| c >= 0 && (c as usize) < self.side)
    }

    pub fn index_of(&self, cell: &Cell) -> usize {
        debug_assert!(self.in_bounds(cell));
        let n = self.side;
        let c = cell.coords;
        if self.dim == 2 {
            c[0] as usize * n + c[1] as usize
        } else {
            (c[0] as usize * n + c[1] as usize) * n + c[2] as usize
        }
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        let n = self.side;
        if self.dim == 2 {
            Cell::new2((index / n) as i32, (index % n) as i32)
        } else {
            Cell::new3((index / (n * n)) as i32, ((index / n) % n) as i32, (index % n) as i32)
        }
    }

    pub fn is_occupied(&self, cell: &Cell) -> bool {
        self.occupied[self.index_of(cell)]
    }

    pub fn is_free(&self, cell: &Cell) -> bool {
        !self.is_occupied(cell)
    }

    pub fn set_occupied(&mut self, cell: &Cell, value: bool) {
        let i = self.index_of(cell);
        self.occupied[i] = value;
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.len()).filter(|&i| !self.occupied[i]).map(|i| self.cell_at(i)).collect()
    }

    pub fn count_free(&self) -> usize {
        self.occupied.iter().filter(|&&o| !o).count()
    }

    /// Cell containing a continuous point; coordinates clamp to the lattice.
    pub fn cell_of_point(&self, p: &[f64; 3]) -> Cell {
        let n = self.side as i32;
        let clamp = |x: f64| (x.floor() as i32).clamp(0, n - 1);
        if self.dim == 2 {
            Cell::new2(clamp(p[0]), clamp(p[1]))
        } else {
            Cell::new3(clamp(p[0]), clamp(p[1]), clamp(p[2]))
        }
    }
}

// ---------------------------------------------------------------------------
// Procedural generation
// ---------------------------------------------------------------------------

/// One stamped obstacle: the set of cell indices it occupies.
#[derive(Clone, Debug)]
struct Stamp {
    cells: Vec<usize>,
}

fn stamp_rect_2d(n: usize, r0: usize, c0: usize, h: usize, w: usize) -> Stamp {
    let mut cells = Vec::with_capacity(h * w);
    for r in r0..r0 + h {
        for c in c0..c0 + w {
            cells.push(r * n + c);
        }
    }
    Stamp { cells }
}

fn sample_shape_2d<R: Rng>(n: usize, rng: &mut R) -> Stamp {
    let max_side = 12.min(n.saturating_sub(2)).max(3);
    let side = |rng: &mut R| rng.random_range(3..=max_side);
    match rng.random_range(0..3u32) {
        // Axis-aligned rectangle.
        0 => {
            let h = side(rng);
            let w = side(rng);
            let r0 = rng.random_range(0..=n - h);
            let c0 = rng.random_range(0..=n - w);
            stamp_rect_2d(n, r0, c0, h, w)
        }
        // L-shape: a vertical and a horizontal arm sharing a corner.
        1 => {
            let arm_v = side(rng);
            let arm_h = side(rng);
            let t = rng.random_range(1..=3.min(arm_v).min(arm_h));
            let r0 = rng.random_range(0..=n - arm_v);
            let c0 = rng.random_range(0..=n - arm_h);
            let mut s = stamp_rect_2d(n, r0, c0, arm_v, t);
            s.cells.extend(stamp_rect_2d(n, r0, c0, t, arm_h).cells);
            s.cells.sort_unstable();
            s.cells.dedup();
            s
        }
        // Plus sign: two crossing arms.
        _ => {
            let arm = side(rng);
            let t = rng.random_range(1..=3.min(arm));
            let r0 = rng.random_range(0..=n - arm);
            let c0 = rng.random_range(0..=n - arm);
            let off = (arm - t) / 2;
            let mut s = stamp_rect_2d(n, r0, c0 + off, arm, t);
            s.cells.extend(stamp_rect_2d(n, r0 + off, c0, t, arm).cells);
            s.cells.sort_unstable();
            s.cells.dedup();
            s
        }
    }
}

fn sample_shape_3d<R: Rng>(n: usize, rng: &mut R) -> Stamp {
    let max_side = 6.min(n.saturating_sub(2)).max(2);
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = rng.random_range(2..=max_side);
    }
    let r0 = rng.random_range(0..=n - dims[0]);
    let c0 = rng.random_range(0..=n - dims[1]);
    let l0 = rng.random_range(0..=n - dims[2]);
    let mut cells = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for r in r0..r0 + dims[0] {
        for c in c0..c0 + dims[1] {
            for l in l0..l0 + dims[2] {
                cells.push((r * n + c) * n + l);
            }
        }
    }
    Stamp { cells }
}

fn forest_with_stamps(
    n: usize,
    d: usize,
    num_obstacles: usize,
    seed: RngSeed,
) -> Result<(OccupancyGrid, Vec<Stamp>), GridError> {
    if n < 8 {
        return Err(GridError::SideTooSmall { min: 8, got: n });
    }
    let mut rng = seed.rng();
    const MAX_ATTEMPTS: usize = 32;
    for _ in 0..MAX_ATTEMPTS {
        let mut grid = OccupancyGrid::new_free(n, d)?;
        let mut stamps = Vec::with_capacity(num_obstacles);
        for _ in 0..num_obstacles {
            let stamp =
                if d == 2 { sample_shape_2d(n, &mut rng) } else { sample_shape_3d(n, &mut rng) };
            for &i in &stamp.cells {
                grid.occupied[i] = true;
            }
            stamps.push(stamp);
        }
        if grid.count_free() > 0 {
            return Ok((grid, stamps));
        }
    }
    Err(GridError::PlacementFailed(MAX_ATTEMPTS))
}

/// Random-forest world: `num_obstacles` shapes from a fixed library
/// (rectangles, L-shapes and plus signs in 2D; boxes in 3D), stamped as the
/// union of their cells. Deterministic in the seed.
pub fn gen_random_forest(
    n: usize,
    d: usize,
    num_obstacles: usize,
    seed: RngSeed,
) -> Result<OccupancyGrid, GridError> {
    forest_with_stamps(n, d, num_obstacles, seed).map(|(g, _)| g)
}

/// Maze world carved by a randomized depth-first search (recursive
/// backtracker). Rooms sit at odd coordinates; corridors form a spanning
/// tree of the room lattice, so every free cell reaches every other.
/// For even n the last row/column stays occupied as padding.
pub fn gen_maze(n: usize, seed: RngSeed) -> Result<OccupancyGrid, GridError> {
    if n < 5 {
        return Err(GridError::SideTooSmall { min: 5, got: n });
    }
    let rooms = (n - 1) / 2;
    let mut grid = OccupancyGrid::new_free(n, 2)?;
    grid.occupied.fill(true);

    let room_cell = |i: usize, j: usize| Cell::new2((2 * i + 1) as i32, (2 * j + 1) as i32);
    let mut rng = seed.rng();
    let mut visited = vec![false; rooms * rooms];
    let mut stack = vec![(0usize, 0usize)];
    visited[0] = true;
    grid.set_occupied(&room_cell(0, 0), false);

    while let Some(&(i, j)) = stack.last() {
        let mut neighbors = Vec::with_capacity(4);
        if i > 0 && !visited[(i - 1) * rooms + j] {
            neighbors.push((i - 1, j));
        }
        if i + 1 < rooms && !visited[(i + 1) * rooms + j] {
            neighbors.push((i + 1, j));
        }
        if j > 0 && !visited[i * rooms + (j - 1)] {
            neighbors.push((i, j - 1));
        }
        if j + 1 < rooms && !visited[i * rooms + (j + 1)] {
            neighbors.push((i, j + 1));
        }
        if neighbors.is_empty() {
            stack.pop();
            continue;
        }
        let (ni, nj) = neighbors[rng.random_range(0..neighbors.len())];
        visited[ni * rooms + nj] = true;
        // Carve the wall cell between the two rooms, then the room itself.
        let wall = Cell::new2((i + ni + 1) as i32, (j + nj + 1) as i32);
        grid.set_occupied(&wall, false);
        grid.set_occupied(&room_cell(ni, nj), false);
        stack.push((ni, nj));
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// Collision detection
// ---------------------------------------------------------------------------

/// True iff the straight segment between two continuous points passes
/// through an occupied cell, sampling every COLLISION_STEP cell lengths
/// (endpoints always tested). Endpoint order does not matter: the segment
/// is canonicalized before sampling so the sample set is identical.
pub fn segment_hits_occupied(grid: &OccupancyGrid, a: &[f64; 3], b: &[f64; 3]) -> bool {
    let (p0, p1) = if a <= b { (a, b) } else { (b, a) };
    let mut len2 = 0.0;
    for k in 0..grid.dim() {
        let d = p1[k] - p0[k];
        len2 += d * d;
    }
    let len = len2.sqrt();
    let steps = ((len / COLLISION_STEP).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let p = [
            p0[0] + t * (p1[0] - p0[0]),
            p0[1] + t * (p1[1] - p0[1]),
            p0[2] + t * (p1[2] - p0[2]),
        ];
        if grid.is_occupied(&grid.cell_of_point(&p)) {
            return true;
        }
    }
    false
}

/// True iff the segment between the centers of cells `a` and `b` intersects
/// any occupied cell (including the endpoints themselves).
pub fn col_det(grid: &OccupancyGrid, a: &Cell, b: &Cell) -> bool {
    if a == b {
        return grid.is_occupied(a);
    }
    segment_hits_occupied(grid, &a.center(), &b.center())
}

// ---------------------------------------------------------------------------
// Optimal-path oracle
// ---------------------------------------------------------------------------

/// Moves on the 8-connected (2D) / 26-connected (3D) lattice. A diagonal
/// move is forbidden when any of its axis projections lands on an occupied
/// cell (no corner cutting).
pub fn lattice_neighbors(grid: &OccupancyGrid, cell: &Cell, out: &mut Vec<(Cell, f64)>) {
    out.clear();
    let d = grid.dim();
    let deltas_per_axis = [-1i32, 0, 1];
    let mut delta = [0i32; 3];
    let axes = if d == 2 { 0..9 } else { 0..27 };
    'moves: for code in axes {
        let mut c = code;
        for k in 0..d {
            delta[k] = deltas_per_axis[c % 3];
            c /= 3;
        }
        if delta[..d].iter().all(|&x| x == 0) {
            continue;
        }
        let mut target = [0i32; 3];
        for k in 0..d {
            target[k] = cell.coords()[k] + delta[k];
        }
        let target_cell = Cell::from_coords(&target[..d]);
        if !grid.in_bounds(&target_cell) || grid.is_occupied(&target_cell) {
            continue;
        }
        let nz: Vec<usize> = (0..d).filter(|&k| delta[k] != 0).collect();
        if nz.len() > 1 {
            // Every proper sub-move of the diagonal must land on a free cell.
            let subsets = 1u32 << nz.len();
            for mask in 1..subsets - 1 {
                let mut probe = [0i32; 3];
                probe[..d].copy_from_slice(&cell.coords()[..d]);
                for (bit, &k) in nz.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        probe[k] += delta[k];
                    }
                }
                let probe_cell = Cell::from_coords(&probe[..d]);
                if grid.is_occupied(&probe_cell) {
                    continue 'moves;
                }
            }
        }
        let cost = (nz.len() as f64).sqrt();
        out.push((target_cell, cost));
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    f: f64,
    index: usize,
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.f.total_cmp(&other.f).then(self.index.cmp(&other.index))
    }
}

/// Cost-optimal path between free cells on the diagonal lattice with
/// Euclidean edge weights, or None when start and goal are disconnected.
/// Used as the independent reference for planner path quality.
pub fn astar_oracle(grid: &OccupancyGrid, start: &Cell, goal: &Cell) -> Option<Path> {
    if !grid.in_bounds(start) || !grid.in_bounds(goal) {
        return None;
    }
    if grid.is_occupied(start) || grid.is_occupied(goal) {
        return None;
    }
    if start == goal {
        return Some(Path::new(vec![*start]));
    }
    let len = grid.len();
    let mut g = vec![f64::INFINITY; len];
    let mut parent = vec![usize::MAX; len];
    let mut closed = vec![false; len];
    let start_i = grid.index_of(start);
    let goal_i = grid.index_of(goal);
    g[start_i] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(HeapEntry { f: start.euclidean(goal), index: start_i }));
    let mut neighbors = Vec::with_capacity(26);
    while let Some(Reverse(entry)) = heap.pop() {
        let i = entry.index;
        if closed[i] {
            continue;
        }
        closed[i] = true;
        if i == goal_i {
            let mut cells = vec![grid.cell_at(i)];
            let mut cur = i;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                cells.push(grid.cell_at(cur));
            }
            cells.reverse();
            return Some(Path::new(cells));
        }
        let cell = grid.cell_at(i);
        lattice_neighbors(grid, &cell, &mut neighbors);
        for &(next, cost) in neighbors.iter() {
            let j = grid.index_of(&next);
            if closed[j] {
                continue;
            }
            let cand = g[i] + cost;
            if cand < g[j] {
                g[j] = cand;
                parent[j] = i;
                heap.push(Reverse(HeapEntry { f: cand + next.euclidean(goal), index: j }));
            }
        }
    }
    None
}

/// Sample two free, mutually reachable cells at least `min_separation`
/// apart (Euclidean). Bounded rejection sampling; deterministic in seed.
pub fn sample_free_pair(
    grid: &OccupancyGrid,
    min_separation: f64,
    seed: RngSeed,
) -> Result<(Cell, Cell), GridError> {
    let free = grid.free_cells();
    if free.len() < 2 {
        return Err(GridError::TooFewFreeCells);
    }
    let mut rng = seed.rng();
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let a = free[rng.random_range(0..free.len())];
        let b = free[rng.random_range(0..free.len())];
        if a == b || a.euclidean(&b) < min_separation {
            continue;
        }
        if astar_oracle(grid, &a, &b).is_some() {
            return Ok((a, b));
        }
    }
    Err(GridError::PairSampling { min_separation, attempts: ATTEMPTS })
}

/// PGM (P5) bytes for a 2D grid: free cells white (255), occupied black (0).
pub fn grid_to_pgm(grid: &OccupancyGrid) -> Vec<u8> {
    assert_eq!(grid.dim(), 2, "PGM export is 2D only");
    let n = grid.side();
    let mut out = format!("P5\n{} {}\n255\n", n, n).into_bytes();
    out.extend(grid.occupancy().iter().map(|&o| if o { 0u8 } else { 255u8 }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_5x5_with(occupied: &[(i32, i32)]) -> OccupancyGrid {
        let mut g = OccupancyGrid::new_free(5, 2).unwrap();
        for &(r, c) in occupied {
            g.set_occupied(&Cell::new2(r, c), true);
        }
        g
    }

    #[test]
    fn forest_is_union_of_stamps() {
        let (grid, stamps) = forest_with_stamps(64, 2, 15, RngSeed(7)).unwrap();
        assert_eq!(stamps.len(), 15);
        let mut union = vec![false; grid.len()];
        for s in &stamps {
            for &i in &s.cells {
                union[i] = true;
            }
        }
        assert_eq!(union, grid.occupancy());
        assert!(grid.count_free() > 0);
    }

    #[test]
    fn forest_zero_obstacles_is_all_free() {
        let g = gen_random_forest(16, 2, 0, RngSeed(1)).unwrap();
        assert_eq!(g.count_free(), 256);
    }

    #[test]
    fn forest_deterministic_in_seed() {
        let a = gen_random_forest(64, 2, 15, RngSeed(3)).unwrap();
        let b = gen_random_forest(64, 2, 15, RngSeed(3)).unwrap();
        assert_eq!(a, b);
        let c = gen_random_forest(64, 2, 15, RngSeed(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forest_3d_smoke() {
        let g = gen_random_forest(12, 3, 8, RngSeed(5)).unwrap();
        assert_eq!(g.len(), 12 * 12 * 12);
        assert!(g.count_free() > 0);
        assert!(g.occupancy().iter().any(|&o| o));
    }

    /// Corridor lattice of a maze must be a spanning tree: connected with
    /// |E| = |V| - 1 under 4-connected adjacency.
    fn assert_maze_tree(grid: &OccupancyGrid) {
        let free = grid.free_cells();
        assert!(!free.is_empty());
        let mut edges = 0usize;
        for cell in &free {
            for (dr, dc) in [(0, 1), (1, 0)] {
                let nb = Cell::new2(cell.row() + dr, cell.col() + dc);
                if grid.in_bounds(&nb) && grid.is_free(&nb) {
                    edges += 1;
                }
            }
        }
        // BFS from the first free cell.
        let mut seen = vec![false; grid.len()];
        let mut queue = std::collections::VecDeque::new();
        seen[grid.index_of(&free[0])] = true;
        queue.push_back(free[0]);
        let mut reached = 0usize;
        while let Some(cell) = queue.pop_front() {
            reached += 1;
            for (dr, dc) in [(0, 1), (1, 0), (0, -1), (-1, 0)] {
                let nb = Cell::new2(cell.row() + dr, cell.col() + dc);
                if grid.in_bounds(&nb) && grid.is_free(&nb) && !seen[grid.index_of(&nb)] {
                    seen[grid.index_of(&nb)] = true;
                    queue.push_back(nb);
                }
            }
        }
        assert_eq!(reached, free.len(), "maze corridors must be connected");
        assert_eq!(edges, free.len() - 1, "maze corridors must be acyclic");
    }

    #[test]
    fn maze_is_spanning_tree() {
        for seed in 0..8u64 {
            assert_maze_tree(&gen_maze(9, RngSeed(seed)).unwrap());
            assert_maze_tree(&gen_maze(16, RngSeed(seed)).unwrap());
        }
    }

    #[test]
    fn maze_deterministic() {
        assert_eq!(gen_maze(17, RngSeed(9)).unwrap(), gen_maze(17, RngSeed(9)).unwrap());
    }

    #[test]
    fn maze_even_n_pads_border() {
        let g = gen_maze(10, RngSeed(0)).unwrap();
        for k in 0..10 {
            assert!(g.is_occupied(&Cell::new2(9, k)));
            assert!(g.is_occupied(&Cell::new2(k, 9)));
        }
    }

    #[test]
    fn col_det_degenerate_and_free_row() {
        let g = grid_5x5_with(&[]);
        let a = Cell::new2(0, 0);
        assert!(!col_det(&g, &a, &a));
        assert!(!col_det(&g, &a, &Cell::new2(0, 4)));
    }

    #[test]
    fn col_det_center_obstacle_on_diagonal() {
        let g = grid_5x5_with(&[(2, 2)]);
        assert!(col_det(&g, &Cell::new2(0, 0), &Cell::new2(4, 4)));
        // A segment skirting the obstacle row stays clear.
        assert!(!col_det(&g, &Cell::new2(0, 0), &Cell::new2(0, 4)));
    }

    #[test]
    fn col_det_occupied_endpoint() {
        let g = grid_5x5_with(&[(1, 1)]);
        assert!(col_det(&g, &Cell::new2(1, 1), &Cell::new2(3, 3)));
        assert!(col_det(&g, &Cell::new2(1, 1), &Cell::new2(1, 1)));
    }

    #[test]
    fn astar_pure_diagonal() {
        let g = grid_5x5_with(&[]);
        let p = astar_oracle(&g, &Cell::new2(0, 0), &Cell::new2(4, 4)).unwrap();
        let cost = crate::planner::path_cost(&p);
        assert!((cost - 4.0 * std::f64::consts::SQRT_2).abs() < 1e-9);
        assert_eq!(p.len(), 5);
    }

    #[test]
    fn astar_start_equals_goal() {
        let g = grid_5x5_with(&[]);
        let p = astar_oracle(&g, &Cell::new2(2, 2), &Cell::new2(2, 2)).unwrap();
        assert_eq!(p.waypoints, vec![Cell::new2(2, 2)]);
    }

    #[test]
    fn astar_enclosed_goal_fails() {
        let g = grid_5x5_with(&[(1, 1), (1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2), (3, 3)]);
        assert!(astar_oracle(&g, &Cell::new2(0, 0), &Cell::new2(2, 2)).is_none());
    }

    #[test]
    fn astar_no_corner_cutting() {
        // Diagonal squeeze: both orthogonal projections blocked.
        let g = grid_5x5_with(&[(0, 1), (1, 0)]);
        let p = astar_oracle(&g, &Cell::new2(0, 0), &Cell::new2(1, 1));
        assert!(p.is_none() || crate::planner::path_cost(p.as_ref().unwrap()) > std::f64::consts::SQRT_2 + 1e-9);
    }

    #[test]
    fn sample_pair_respects_separation() {
        let g = OccupancyGrid::new_free(16, 2).unwrap();
        let (a, b) = sample_free_pair(&g, 8.0, RngSeed(11)).unwrap();
        assert!(a.euclidean(&b) >= 8.0);
    }

    #[test]
    fn sample_pair_impossible_separation_fails() {
        let g = OccupancyGrid::new_free(16, 2).unwrap();
        let r = sample_free_pair(&g, 16.0 * 3.0, RngSeed(11));
        assert!(matches!(r, Err(GridError::PairSampling { .. })));
    }

    #[test]
    fn sample_pair_stays_within_connected_region() {
        // Wall splits the grid into two halves.
        let mut g = OccupancyGrid::new_free(16, 2).unwrap();
        for r in 0..16 {
            g.set_occupied(&Cell::new2(r, 8), true);
        }
        for seed in 0..20u64 {
            let (a, b) = sample_free_pair(&g, 4.0, RngSeed(seed)).unwrap();
            assert_eq!(a.col() < 8, b.col() < 8, "pair must not straddle the wall");
            assert!(astar_oracle(&g, &a, &b).is_some());
        }
    }

    #[test]
    fn pgm_bytes_exact() {
        let mut g = OccupancyGrid::new_free(2, 2).unwrap();
        g.set_occupied(&Cell::new2(0, 1), true);
        assert_eq!(grid_to_pgm(&g), b"P5\n2 2\n255\n\xff\x00\xff\xff".to_vec());
    }

    #[test]
    fn cell_serde_round_trip() {
        let c = Cell::new3(1, 2, 3);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, "[1,2,3]");
        assert_eq!(serde_json::from_str::<Cell>(&s).unwrap(), c);
        assert_eq!(serde_json::from_str::<Cell>("[4,5]").unwrap(), Cell::new2(4, 5));
    }
}
