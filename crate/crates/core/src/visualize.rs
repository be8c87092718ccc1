//! Grid rendering of an exported trajectory: one column per step, the
//! current image with the attended box on top and the cropped patch below.

use crate::episode::ExportedTrajectory;
use crate::error::{AfhError, Result};
use crate::image::{Image, PatchGeometry, PatchLocation};

pub const BOX_COLOR: [f64; 3] = [1.0, 0.0, 0.0];
pub const BACKGROUND: f64 = 1.0;
pub const MARGIN: usize = 2;

/// Rendered grid plus where each column's pieces landed.
#[derive(Clone, Debug)]
pub struct Rendering {
    pub image: Image,
    /// Top-left corner `(row, col)` of each step's state panel.
    pub state_origins: Vec<(usize, usize)>,
    /// Top-left corner `(row, col)` of each step's patch panel.
    pub patch_origins: Vec<(usize, usize)>,
    /// Box of each step in state-panel coordinates: `(top, left, height,
    /// width)`, possibly extending past the panel.
    pub boxes: Vec<(i64, i64, usize, usize)>,
}

fn to_rgb(img: &Image, y: usize, x: usize) -> [f64; 3] {
    match img.channels() {
        1 => [img.get(y, x, 0); 3],
        _ => [img.get(y, x, 0), img.get(y, x, 1), img.get(y, x, 2)],
    }
}

fn blit(dst: &mut Image, src: &Image, top: usize, left: usize) {
    for y in 0..src.height() {
        for x in 0..src.width() {
            let px = to_rgb(src, y, x);
            for (c, v) in px.iter().enumerate() {
                dst.set(top + y, left + x, c, *v);
            }
        }
    }
}

/// Draws the one-pixel outline of the box, clipped to the panel.
fn outline(dst: &mut Image, panel: (usize, usize, usize, usize), b: (i64, i64, usize, usize)) {
    let (pt, pl, ph, pw) = panel;
    let (top, left, h, w) = b;
    let (bottom, right) = (top + h as i64 - 1, left + w as i64 - 1);
    for y in top..=bottom {
        for x in left..=right {
            let edge = y == top || y == bottom || x == left || x == right;
            if edge && y >= 0 && x >= 0 && (y as usize) < ph && (x as usize) < pw {
                for (c, v) in BOX_COLOR.iter().enumerate() {
                    dst.set(pt + y as usize, pl + x as usize, c, *v);
                }
            }
        }
    }
}

/// Column `t` shows `I_{t-1}` with the step-`t` box and the patch cropped
/// at step `t`.
pub fn render_trajectory(traj: &ExportedTrajectory) -> Result<Rendering> {
    let steps = traj.rows.len();
    if traj.states.len() != steps + 1 || traj.patches.len() != steps {
        return Err(AfhError::Manifest(format!(
            "{} steps but {} states and {} patches",
            steps,
            traj.states.len(),
            traj.patches.len()
        )));
    }
    let (h, w) = (traj.states[0].height(), traj.states[0].width());
    let (ph, pw) = traj
        .rows
        .first()
        .map(|r| (r.patch_height, r.patch_width))
        .unwrap_or((0, 0));
    let cell_w = w.max(pw);
    let cols = steps.max(1);
    let width = MARGIN + cols * (cell_w + MARGIN);
    let height = MARGIN + h + MARGIN + ph + MARGIN;
    let mut out = Image::filled(height, width, 3, BACKGROUND);
    let mut state_origins = Vec::with_capacity(steps);
    let mut patch_origins = Vec::with_capacity(steps);
    let mut boxes = Vec::with_capacity(steps);
    for (i, row) in traj.rows.iter().enumerate() {
        let left = MARGIN + i * (cell_w + MARGIN);
        let state_top = MARGIN;
        let patch_top = MARGIN + h + MARGIN;
        let geom = PatchGeometry {
            pad_value: row.pad_value,
            ..PatchGeometry::new(row.patch_height, row.patch_width)
        };
        let (oy, ox) = geom.origin(PatchLocation::new(row.x, row.y));
        blit(&mut out, &traj.states[i], state_top, left);
        let b = (oy, ox, row.patch_height, row.patch_width);
        outline(&mut out, (state_top, left, h, w), b);
        blit(&mut out, &traj.patches[i], patch_top, left);
        state_origins.push((state_top, left));
        patch_origins.push((patch_top, left));
        boxes.push(b);
    }
    Ok(Rendering {
        image: out,
        state_origins,
        patch_origins,
        boxes,
    })
}
