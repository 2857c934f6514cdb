//! Python extension module `stp_planner`: world generation, the collision
//! and A* oracles, the RRT* expert, and trained-model planning.
//!
//! Cells cross the boundary as coordinate tuples/lists; frames as flat
//! row-major float lists (channel-major, like the core layout).

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use stp_core::dataset;
use stp_core::expert;
use stp_core::frames::{encode_initial_frame, Clip, Frame};
use stp_core::grid;
use stp_core::nn;
use stp_core::planner;
use stp_core::{Cell, OccupancyGrid, PatchSpec, Path, RngSeed};

fn to_cell(coords: Vec<i32>, dim: usize) -> PyResult<Cell> {
    if coords.len() != dim {
        return Err(PyValueError::new_err(format!(
            "cell needs {dim} coordinates, got {}",
            coords.len()
        )));
    }
    Ok(Cell::from_coords(&coords))
}

fn cell_out(cell: &Cell) -> Vec<i32> {
    cell.coords().to_vec()
}

fn path_out(path: &Path) -> Vec<Vec<i32>> {
    path.waypoints.iter().map(cell_out).collect()
}

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Occupancy-grid world.
#[pyclass(name = "Grid", from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: OccupancyGrid,
}

#[pymethods]
impl PyGrid {
    /// Random-forest world with `obstacles` stamped shapes.
    #[staticmethod]
    fn forest(n: usize, d: usize, obstacles: usize, seed: u64) -> PyResult<PyGrid> {
        Ok(PyGrid {
            inner: grid::gen_random_forest(n, d, obstacles, RngSeed(seed)).map_err(value_err)?,
        })
    }

    /// Maze world (spanning-tree corridors).
    #[staticmethod]
    fn maze(n: usize, seed: u64) -> PyResult<PyGrid> {
        Ok(PyGrid { inner: grid::gen_maze(n, RngSeed(seed)).map_err(value_err)? })
    }

    #[staticmethod]
    fn free(n: usize, d: usize) -> PyResult<PyGrid> {
        Ok(PyGrid { inner: OccupancyGrid::new_free(n, d).map_err(value_err)? })
    }

    #[getter]
    fn side(&self) -> usize {
        self.inner.side()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn is_occupied(&self, cell: Vec<i32>) -> PyResult<bool> {
        Ok(self.inner.is_occupied(&to_cell(cell, self.inner.dim())?))
    }

    fn set_occupied(&mut self, cell: Vec<i32>, value: bool) -> PyResult<()> {
        let cell = to_cell(cell, self.inner.dim())?;
        if !self.inner.in_bounds(&cell) {
            return Err(PyValueError::new_err("cell out of bounds"));
        }
        self.inner.set_occupied(&cell, value);
        Ok(())
    }

    /// Row-major occupancy flags.
    fn occupancy(&self) -> Vec<bool> {
        self.inner.occupancy().to_vec()
    }

    /// True iff the straight segment between cell centers hits an obstacle.
    fn col_det(&self, a: Vec<i32>, b: Vec<i32>) -> PyResult<bool> {
        let d = self.inner.dim();
        Ok(grid::col_det(&self.inner, &to_cell(a, d)?, &to_cell(b, d)?))
    }

    /// Shortest lattice path (8/26-connected, corner cuts forbidden), or None.
    fn astar(&self, start: Vec<i32>, goal: Vec<i32>) -> PyResult<Option<Vec<Vec<i32>>>> {
        let d = self.inner.dim();
        let start = to_cell(start, d)?;
        let goal = to_cell(goal, d)?;
        Ok(grid::astar_oracle(&self.inner, &start, &goal).map(|p| path_out(&p)))
    }

    /// RRT* + smoothing + grid quantization.
    #[pyo3(signature = (start, goal, iterations=2000, waypoint_spacing=1.5, seed=0))]
    fn plan_expert(
        &self,
        start: Vec<i32>,
        goal: Vec<i32>,
        iterations: usize,
        waypoint_spacing: f64,
        seed: u64,
    ) -> PyResult<Vec<Vec<i32>>> {
        let d = self.inner.dim();
        let start = to_cell(start, d)?;
        let goal = to_cell(goal, d)?;
        let cfg = expert::RRTStarConfig::for_grid(&self.inner, iterations);
        let path =
            expert::plan_expert_path(&self.inner, &start, &goal, &cfg, waypoint_spacing, RngSeed(seed))
                .map_err(value_err)?;
        Ok(path_out(&path))
    }

    /// PGM (P5) bytes, 2D only.
    fn to_pgm(&self) -> PyResult<Vec<u8>> {
        if self.inner.dim() != 2 {
            return Err(PyValueError::new_err("PGM export is 2D only"));
        }
        Ok(grid::grid_to_pgm(&self.inner))
    }
}

/// Trained frame-prediction network plus the online planner.
#[pyclass(name = "Model")]
struct PyModel {
    params: nn::NetworkParams<f32>,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<PyModel> {
        let params = nn::load_model(std::path::Path::new(path))
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(PyModel { params })
    }

    #[getter]
    fn side(&self) -> usize {
        self.params.meta.side
    }

    #[getter]
    fn robots(&self) -> usize {
        self.params.meta.robots()
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.params.meta.hidden
    }

    fn __repr__(&self) -> String {
        let m = &self.params.meta;
        format!(
            "Model(side={}, dim={}, in_channels={}, hidden={}, layers={})",
            m.side, m.dim, m.in_channels, m.hidden, m.layers
        )
    }

    /// Predict the next frame from a clip of flat channel-major frames.
    fn predict_next(&self, frames: Vec<Vec<f32>>) -> PyResult<Vec<f32>> {
        let meta = &self.params.meta;
        let plane = meta.plane();
        let mut clip = Vec::with_capacity(frames.len());
        for data in &frames {
            if data.len() != meta.in_channels * plane {
                return Err(PyValueError::new_err(format!(
                    "frame needs {} values, got {}",
                    meta.in_channels * plane,
                    data.len()
                )));
            }
            let mut f = Frame::zeros(meta.in_channels, meta.side, meta.dim);
            f.data_mut().copy_from_slice(data);
            clip.push(f);
        }
        let (pred, _) = nn::network_forward(&self.params, &clip, None).map_err(value_err)?;
        Ok(pred.data().to_vec())
    }

    /// Plan one robot's path; returns a result dict.
    #[pyo3(signature = (grid, start, goal, p=3, max_itr=None))]
    fn plan(
        &self,
        py: Python<'_>,
        grid: &PyGrid,
        start: Vec<i32>,
        goal: Vec<i32>,
        p: usize,
        max_itr: Option<usize>,
    ) -> PyResult<Py<PyAny>> {
        let d = grid.inner.dim();
        self.plan_impl(py, grid, vec![to_cell(start, d)?], vec![to_cell(goal, d)?], p, max_itr)
    }

    /// Plan several robots' paths with shared forward passes.
    #[pyo3(signature = (grid, starts, goals, p=3, max_itr=None))]
    fn plan_multi(
        &self,
        py: Python<'_>,
        grid: &PyGrid,
        starts: Vec<Vec<i32>>,
        goals: Vec<Vec<i32>>,
        p: usize,
        max_itr: Option<usize>,
    ) -> PyResult<Py<PyAny>> {
        let d = grid.inner.dim();
        let starts = starts.into_iter().map(|c| to_cell(c, d)).collect::<PyResult<Vec<_>>>()?;
        let goals = goals.into_iter().map(|c| to_cell(c, d)).collect::<PyResult<Vec<_>>>()?;
        self.plan_impl(py, grid, starts, goals, p, max_itr)
    }
}

impl PyModel {
    fn plan_impl(
        &self,
        py: Python<'_>,
        grid: &PyGrid,
        starts: Vec<Cell>,
        goals: Vec<Cell>,
        p: usize,
        max_itr: Option<usize>,
    ) -> PyResult<Py<PyAny>> {
        let patch = PatchSpec::new(p).map_err(value_err)?;
        let g = &grid.inner;
        let max_itr = max_itr.unwrap_or_else(|| planner::default_max_itr(g.side(), g.dim()));
        let x0 = encode_initial_frame(g, &starts, &goals, patch).map_err(value_err)?;
        let result = if starts.len() == 1 {
            planner::plan_single(&self.params, &x0, starts[0], goals[0], patch, max_itr, g)
        } else {
            planner::plan_multi(&self.params, &x0, &starts, &goals, patch, max_itr, g)
        }
        .map_err(value_err)?;

        let dict = pyo3::types::PyDict::new(py);
        dict.set_item("success", result.success)?;
        dict.set_item(
            "paths",
            result.paths.iter().map(path_out).collect::<Vec<_>>(),
        )?;
        dict.set_item("visited_waypoints", result.visited_waypoints)?;
        dict.set_item("forward_passes", result.forward_passes)?;
        dict.set_item("wall_time", result.wall_time)?;
        Ok(dict.into_any().unbind())
    }
}

/// Total Euclidean length of a waypoint sequence.
#[pyfunction]
fn path_cost(waypoints: Vec<Vec<i32>>) -> PyResult<f64> {
    if waypoints.is_empty() {
        return Err(PyValueError::new_err("path must be nonempty"));
    }
    let dim = waypoints[0].len();
    let cells = waypoints
        .into_iter()
        .map(|c| to_cell(c, dim))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(planner::path_cost(&Path::new(cells)))
}

/// Encode a task's initial frame as a flat channel-major list.
#[pyfunction]
#[pyo3(signature = (grid, starts, goals, p=3))]
fn initial_frame(
    grid: &PyGrid,
    starts: Vec<Vec<i32>>,
    goals: Vec<Vec<i32>>,
    p: usize,
) -> PyResult<Vec<f32>> {
    let d = grid.inner.dim();
    let starts = starts.into_iter().map(|c| to_cell(c, d)).collect::<PyResult<Vec<_>>>()?;
    let goals = goals.into_iter().map(|c| to_cell(c, d)).collect::<PyResult<Vec<_>>>()?;
    let patch = PatchSpec::new(p).map_err(value_err)?;
    let frame = encode_initial_frame(&grid.inner, &starts, &goals, patch).map_err(value_err)?;
    Ok(frame.data().to_vec())
}

/// Load an STPC clip file as a list of flat channel-major frames.
#[pyfunction]
fn load_clip(path: &str) -> PyResult<Vec<Vec<f32>>> {
    let clip: Clip = dataset::load_clip(std::path::Path::new(path))
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(clip.frames.iter().map(|f| f.data().to_vec()).collect())
}

#[pymodule]
fn stp_planner(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(path_cost, m)?)?;
    m.add_function(wrap_pyfunction!(initial_frame, m)?)?;
    m.add_function(wrap_pyfunction!(load_clip, m)?)?;
    Ok(())
}
