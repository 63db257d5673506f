use rayon::prelude::*;

use super::Pointwise;
use crate::error::{config_err, Result};
use crate::kernels::{bilinear_resize, relu};
use crate::model_io::{ContextConfig, Scope};
use crate::tensor::Tensor;

/// Source rows `[start, end)` of output bin `i` when pooling `size` rows into `bins`.
pub fn bin_range(i: usize, size: usize, bins: usize) -> (usize, usize) {
    (i * size / bins, ((i + 1) * size).div_ceil(bins))
}

/// Adaptive average pooling of `[B, H, W, C]` to `[B, bins, bins, C]`.
/// Bins may overlap when `bins` exceeds an extent.
pub fn adaptive_avg_pool(x: &Tensor, bins: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    let data = x.data();
    let mut out = vec![0.0f32; b * bins * bins * c];
    for n in 0..b {
        for by in 0..bins {
            let (y0, y1) = bin_range(by, h, bins);
            for bx in 0..bins {
                let (x0, x1) = bin_range(bx, w, bins);
                let mut acc = vec![0.0f64; c];
                for y in y0..y1 {
                    for xx in x0..x1 {
                        let px = &data[((n * h + y) * w + xx) * c..][..c];
                        for (a, &v) in acc.iter_mut().zip(px) {
                            *a += v as f64;
                        }
                    }
                }
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                let dst = &mut out[((n * bins + by) * bins + bx) * c..][..c];
                for (d, a) in dst.iter_mut().zip(acc) {
                    *d = (a / count) as f32;
                }
            }
        }
    }
    Tensor::new(&[b, bins, bins, c], out)
}

/// Pyramid pooling over the deepest encoder stage.
#[derive(Clone, Debug)]
pub struct ContextModule {
    pub bins: Vec<usize>,
    pub branches: Vec<Pointwise>,
    pub fuse: Pointwise,
}

impl ContextModule {
    pub fn load(scope: &Scope<'_>, cfg: &ContextConfig, in_channels: usize) -> Result<Self> {
        let branches = (0..cfg.bins.len())
            .map(|i| Pointwise::load(&scope.sub(format!("branches.{i}")), cfg.branch_channels, in_channels))
            .collect::<Result<Vec<_>>>()?;
        let fuse_in = in_channels + cfg.bins.len() * cfg.branch_channels;
        Ok(Self {
            bins: cfg.bins.clone(),
            branches,
            fuse: Pointwise::load(&scope.sub("fuse"), cfg.out_channels, fuse_in)?,
        })
    }

    /// Returns the fused features and the projected global-average branch `[B, Cb]`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, h, w, _) = x.dims4()?;
        if self.bins.first() != Some(&1) {
            return Err(config_err!("context module needs a global (bin 1) branch"));
        }
        let projected = self
            .bins
            .par_iter()
            .zip(&self.branches)
            .map(|(&bins, branch)| Ok(relu(&branch.forward(&adaptive_avg_pool(x, bins)?)?)))
            .collect::<Result<Vec<_>>>()?;
        let pooled = projected[0].clone().reshape(&[b, self.branches[0].out_channels()])?;
        let resized = projected
            .iter()
            .map(|p| bilinear_resize(p, h, w, false))
            .collect::<Result<Vec<_>>>()?;
        let mut parts = vec![x];
        parts.extend(resized.iter());
        let features = relu(&self.fuse.forward(&Tensor::concat_channels(&parts)?)?);
        Ok((features, pooled))
    }
}

pub fn context_module(x: &Tensor, module: &ContextModule) -> Result<(Tensor, Tensor)> {
    module.forward(x)
}

/// Fully connected scene classifier on the pooled context vector.
pub fn scene_head(pooled: &Tensor, head: &Pointwise) -> Result<Tensor> {
    head.forward(pooled)
}
