use serde::{Deserialize, Serialize};

use super::plane_dims;
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Center {
    pub y: usize,
    pub x: usize,
    pub score: f32,
}

/// Instance centers from a heatmap of shape `[H, W]`, `[H, W, 1]` or `[1, H, W, 1]`.
///
/// A pixel is a center when its score reaches `threshold` and it is the
/// maximum of its `nms_kernel` window under the order (score descending,
/// raster position ascending), so each plateau yields one point. Results
/// are sorted by descending score, then `(y, x)`, and cut to `top_k`.
pub fn extract_centers(heatmap: &Tensor, threshold: f32, nms_kernel: usize, top_k: usize) -> Result<Vec<Center>> {
    if nms_kernel == 0 || nms_kernel % 2 == 0 {
        return Err(config_err!("nms kernel must be odd, got {nms_kernel}"));
    }
    let (h, w) = plane_dims(heatmap, 1)?;
    let v = heatmap.data();
    let r = nms_kernel / 2;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let s = v[y * w + x];
            if !(s >= threshold) {
                continue;
            }
            let wins = (y.saturating_sub(r)..=(y + r).min(h - 1)).all(|qy| {
                (x.saturating_sub(r)..=(x + r).min(w - 1)).all(|qx| {
                    let q = v[qy * w + qx];
                    s > q || (s == q && (qy, qx) >= (y, x))
                })
            });
            if wins {
                out.push(Center { y, x, score: s });
            }
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.y, a.x).cmp(&(b.y, b.x))));
    out.truncate(top_k);
    Ok(out)
}
