//! PPM rendering of worlds, paths and predicted fields. One cell is one
//! pixel; bytes are deterministic for fixed inputs.

use crate::frames::Frame;
use crate::grid::{Cell, OccupancyGrid, Path};

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];
pub const ORANGE: [u8; 3] = [255, 165, 0];
pub const GREEN: [u8; 3] = [0, 200, 0];
pub const BLUE: [u8; 3] = [0, 0, 255];
pub const RED: [u8; 3] = [255, 0, 0];

/// P6 image of a 2D world: obstacles black, free cells white, an optional
/// probability field as red shading, rejected candidates red, waypoints
/// orange, each path's start green and goal blue.
pub fn render_ppm(
    grid: &OccupancyGrid,
    paths: &[Path],
    rejected: &[Cell],
    overlay: Option<&[f32]>,
) -> Vec<u8> {
    assert_eq!(grid.dim(), 2, "PPM export is 2D only");
    let n = grid.side();
    let mut pixels = vec![WHITE; n * n];

    if let Some(field) = overlay {
        assert_eq!(field.len(), n * n, "overlay must cover the grid");
        for (px, &v) in pixels.iter_mut().zip(field) {
            let v = v.clamp(0.0, 1.0);
            let fade = (255.0 * (1.0 - v)).round() as u8;
            *px = [255, fade, fade];
        }
    }
    for (px, &occ) in pixels.iter_mut().zip(grid.occupancy()) {
        if occ {
            *px = BLACK;
        }
    }
    for cell in rejected {
        pixels[grid.index_of(cell)] = RED;
    }
    for path in paths {
        for wp in &path.waypoints {
            pixels[grid.index_of(wp)] = ORANGE;
        }
    }
    for path in paths {
        if let Some(start) = path.start() {
            pixels[grid.index_of(&start)] = GREEN;
        }
        if let Some(goal) = path.goal() {
            pixels[grid.index_of(&goal)] = BLUE;
        }
    }

    let mut out = format!("P6\n{n} {n}\n255\n").into_bytes();
    for px in &pixels {
        out.extend_from_slice(px);
    }
    out
}

/// Convenience overlay source: one channel of a frame.
pub fn frame_channel_overlay(frame: &Frame, channel: usize) -> &[f32] {
    frame.channel(channel)
}
