//! Multi-channel binary frames and clips: the image encoding of a planning
//! task's status that the network consumes and predicts.
//!
//! Channel layout for R robots (C = 1 + 2R):
//!   0        environment occupancy,
//!   2i + 1   robot i current state (patch around its cell),
//!   2i + 2   robot i goal (patch around its goal cell).

use crate::grid::{Cell, GridError, OccupancyGrid, Path};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("patch side must be odd and >= 1, got {0}")]
    BadPatch(usize),
    #[error("cell {0} is occupied")]
    OccupiedCell(Cell),
    #[error("expected {expected} robot states, got {got}")]
    RobotCountMismatch { expected: usize, got: usize },
    #[error("starts and goals must be nonempty lists of equal length")]
    BadRobotLists,
    #[error("path for robot {0} is empty")]
    EmptyPath(usize),
    #[error("clip must contain at least one frame")]
    EmptyClip,
    #[error("pad target {target} is shorter than clip length {len}")]
    PadTooShort { target: usize, len: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Side length of the square/cube patch marked around a robot or goal cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    p: usize,
}

impl PatchSpec {
    pub fn new(p: usize) -> Result<PatchSpec, FrameError> {
        if p == 0 || p % 2 == 0 {
            return Err(FrameError::BadPatch(p));
        }
        Ok(PatchSpec { p })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Chebyshev radius ⌊p/2⌋.
    pub fn radius(&self) -> usize {
        self.p / 2
    }
}

/// One time step of a task as a C-channel image over the n^d lattice.
/// Data is channel-major: value for (channel c, cell i) sits at c·n^d + i.
/// Ground-truth frames are exactly {0,1}-valued; predictions lie in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    channels: usize,
    side: usize,
    dim: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn zeros(channels: usize, side: usize, dim: usize) -> Frame {
        Frame { channels, side, dim, data: vec![0.0; channels * side.pow(dim as u32)] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per channel, n^d.
    pub fn cells(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn robots(&self) -> usize {
        (self.channels - 1) / 2
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let m = self.cells();
        &self.data[c * m..(c + 1) * m]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let m = self.cells();
        &mut self.data[c * m..(c + 1) * m]
    }

    /// Occupancy grid recovered from channel 0 (values ≥ 0.5 are occupied).
    pub fn env_grid(&self) -> OccupancyGrid {
        let mut grid = OccupancyGrid::new_free(self.side, self.dim).expect("frame geometry");
        for (i, &v) in self.channel(0).iter().enumerate() {
            if v >= 0.5 {
                let cell = grid.cell_at(i);
                grid.set_occupied(&cell, true);
            }
        }
        grid
    }
}

/// Zero field over the grid with ones at every free cell within Chebyshev
/// radius ⌊p/2⌋ of `center`, clipped at the borders.
pub fn apply_patch(
    grid: &OccupancyGrid,
    center: &Cell,
    patch: PatchSpec,
) -> Result<Vec<f32>, FrameError> {
    if grid.is_occupied(center) {
        return Err(FrameError::OccupiedCell(*center));
    }
    let mut field = vec![0.0f32; grid.len()];
    stamp_patch(grid, center, patch, &mut field);
    Ok(field)
}

fn stamp_patch(grid: &OccupancyGrid, center: &Cell, patch: PatchSpec, field: &mut [f32]) {
    let r = patch.radius() as i32;
    let n = grid.side() as i32;
    let c = center.coords();
    let lo = |k: usize| (c[k] - r).max(0);
    let hi = |k: usize| (c[k] + r).min(n - 1);
    if grid.dim() == 2 {
        for row in lo(0)..=hi(0) {
            for col in lo(1)..=hi(1) {
                let cell = Cell::new2(row, col);
                if grid.is_free(&cell) {
                    field[grid.index_of(&cell)] = 1.0;
                }
            }
        }
    } else {
        for row in lo(0)..=hi(0) {
            for col in lo(1)..=hi(1) {
                for layer in lo(2)..=hi(2) {
                    let cell = Cell::new3(row, col, layer);
                    if grid.is_free(&cell) {
                        field[grid.index_of(&cell)] = 1.0;
                    }
                }
            }
        }
    }
}

/// Frame for the start of a task: occupancy plus per-robot start and goal
/// patches.
pub fn encode_initial_frame(
    grid: &OccupancyGrid,
    starts: &[Cell],
    goals: &[Cell],
    patch: PatchSpec,
) -> Result<Frame, FrameError> {
    if starts.is_empty() || starts.len() != goals.len() {
        return Err(FrameError::BadRobotLists);
    }
    let robots = starts.len();
    let mut frame = Frame::zeros(1 + 2 * robots, grid.side(), grid.dim());
    for (i, &occ) in grid.occupancy().iter().enumerate() {
        frame.channel_mut(0)[i] = if occ { 1.0 } else { 0.0 };
    }
    for (i, (s, g)) in starts.iter().zip(goals).enumerate() {
        let sf = apply_patch(grid, s, patch)?;
        let gf = apply_patch(grid, g, patch)?;
        frame.channel_mut(2 * i + 1).copy_from_slice(&sf);
        frame.channel_mut(2 * i + 2).copy_from_slice(&gf);
    }
    Ok(frame)
}

/// Frame for an intermediate step: environment and goal channels copied
/// bit-exactly from the initial frame, state channels rebuilt at the given
/// current cells.
pub fn gen_frame(x0: &Frame, current_states: &[Cell], patch: PatchSpec) -> Result<Frame, FrameError> {
    if current_states.len() != x0.robots() {
        return Err(FrameError::RobotCountMismatch { expected: x0.robots(), got: current_states.len() });
    }
    let grid = x0.env_grid();
    let mut out = x0.clone();
    for (i, cell) in current_states.iter().enumerate() {
        let field = apply_patch(&grid, cell, patch)?;
        out.channel_mut(2 * i + 1).copy_from_slice(&field);
    }
    Ok(out)
}

/// An ordered, non-empty frame sequence with constant geometry; the
/// environment and goal channels are identical in every frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Vec<Frame>,
}

impl Clip {
    pub fn new(frames: Vec<Frame>) -> Result<Clip, FrameError> {
        if frames.is_empty() {
            return Err(FrameError::EmptyClip);
        }
        Ok(Clip { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }

    pub fn side(&self) -> usize {
        self.frames[0].side()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }
}

/// Render one frame per time step of the given paths; robots that finish
/// early hold their final waypoint. Clip length = longest path length.
pub fn path_to_clip(
    grid: &OccupancyGrid,
    paths: &[Path],
    goals: &[Cell],
    patch: PatchSpec,
) -> Result<Clip, FrameError> {
    if paths.is_empty() || paths.len() != goals.len() {
        return Err(FrameError::BadRobotLists);
    }
    let mut starts = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        starts.push(p.start().ok_or(FrameError::EmptyPath(i))?);
    }
    let x0 = encode_initial_frame(grid, &starts, goals, patch)?;
    let t_max = paths.iter().map(|p| p.len()).max().unwrap();
    let mut frames = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let states: Vec<Cell> =
            paths.iter().map(|p| p.waypoints[t.min(p.len() - 1)]).collect();
        frames.push(gen_frame(&x0, &states, patch)?);
    }
    Ok(Clip { frames })
}

/// Extend a clip to `target` frames by repeating its final frame.
pub fn pad_clip(clip: &Clip, target: usize) -> Result<Clip, FrameError> {
    if target < clip.len() {
        return Err(FrameError::PadTooShort { target, len: clip.len() });
    }
    let mut frames = clip.frames.clone();
    let last = frames.last().expect("clip nonempty").clone();
    frames.resize(target, last);
    Ok(Clip { frames })
}
