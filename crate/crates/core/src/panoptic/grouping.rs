use rayon::prelude::*;

use super::{plane_dims, Center, Grid, LabelMap, Mask};
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Assigns each foreground pixel `p` the id `k + 1` of the center nearest to
/// `p + offset(p)`, with distances in `f64` and ties to the lower index.
/// Background pixels, and every pixel when there are no centers, get 0.
///
/// `offsets` holds `(dy, dx)` per pixel.
pub fn group_pixels(centers: &[Center], offsets: &Tensor, foreground: &Mask) -> Result<LabelMap> {
    let (h, w) = plane_dims(offsets, 2)?;
    if (foreground.height(), foreground.width()) != (h, w) {
        return Err(config_err!(
            "foreground {}x{} does not match offsets {h}x{w}",
            foreground.height(),
            foreground.width()
        ));
    }
    let mut out = vec![0u32; h * w];
    if centers.is_empty() {
        return Grid::new(h, w, out);
    }
    let off = offsets.data();
    let fg = foreground.data();
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, id) in row.iter_mut().enumerate() {
            let p = y * w + x;
            if !fg[p] {
                continue;
            }
            let ty = y as f64 + off[2 * p] as f64;
            let tx = x as f64 + off[2 * p + 1] as f64;
            let mut best = (f64::INFINITY, 0);
            for (k, c) in centers.iter().enumerate() {
                let (dy, dx) = (ty - c.y as f64, tx - c.x as f64);
                let d = dy * dy + dx * dx;
                if d < best.0 {
                    best = (d, k);
                }
            }
            *id = best.1 as u32 + 1;
        }
    });
    Grid::new(h, w, out)
}
