use std::sync::Arc;

use super::config::EncoderConfig;
use crate::error::{config_err, Result};
use crate::kernels::{conv2d, normalize_row, LN_EPS};
use crate::model_io::Scope;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Projection {
    /// One convolution over RGB (or RGB + depth as a fourth channel).
    Joint { weight: Arc<Tensor>, bias: Arc<Tensor> },
    /// RGB and depth embedded by separate convolutions into disjoint channel ranges.
    Split {
        rgb: (Arc<Tensor>, Arc<Tensor>),
        depth: (Arc<Tensor>, Arc<Tensor>),
    },
}

/// Strided patch embedding followed by layer norm.
///
/// For split variants the norm statistics are taken per modality, so the
/// depth channels stay a function of depth alone.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    projection: Projection,
    norm: (Arc<Tensor>, Arc<Tensor>),
    patch: usize,
    uses_depth: bool,
    /// Channel boundaries of the norm groups.
    groups: Vec<usize>,
}

impl PatchEmbed {
    pub fn load(scope: &Scope<'_>, cfg: &EncoderConfig) -> Result<Self> {
        let p = cfg.patch_size;
        let stem = cfg.stem_channels;
        let pair = |name: &str, w: &[usize], b: &[usize]| -> Result<(Arc<Tensor>, Arc<Tensor>)> {
            let s = scope.sub(name);
            Ok((s.get_shaped("weight", w)?, s.get_shaped("bias", b)?))
        };
        let (projection, groups) = if cfg.variant.is_multi() {
            let (r, d) = (cfg.rgb_embed_channels, cfg.depth_embed_channels);
            let widen = cfg.rgb_widen_channels;
            let base = pair("rgb", &[r - widen, p, p, 3], &[r - widen])?;
            let rgb = if widen > 0 {
                // Output channels lead the weight layout, so the widening filters append.
                let (ww, wb) = pair("rgb_wide", &[widen, p, p, 3], &[widen])?;
                let cat = |a: &Tensor, b: &Tensor, shape: &[usize]| -> Result<Arc<Tensor>> {
                    Ok(Arc::new(Tensor::new(shape, [a.data(), b.data()].concat())?))
                };
                (cat(&base.0, &ww, &[r, p, p, 3])?, cat(&base.1, &wb, &[r])?)
            } else {
                base
            };
            (
                Projection::Split {
                    rgb,
                    depth: pair("depth", &[d, p, p, 1], &[d])?,
                },
                vec![0, r, stem],
            )
        } else {
            let (weight, bias) = pair("proj", &[stem, p, p, cfg.joint_input_channels()], &[stem])?;
            (Projection::Joint { weight, bias }, vec![0, stem])
        };
        Ok(Self {
            projection,
            norm: pair("norm", &[stem], &[stem])?,
            patch: p,
            uses_depth: cfg.variant.uses_depth(),
            groups,
        })
    }

    /// Convolutional embedding before the norm.
    pub fn project(&self, rgb: &Tensor, depth: Option<&Tensor>) -> Result<Tensor> {
        let p = self.patch;
        if self.uses_depth && depth.is_none() {
            return Err(config_err!("this encoder variant needs a depth input"));
        }
        match &self.projection {
            Projection::Joint { weight, bias } => {
                let input = match depth {
                    Some(d) if self.uses_depth => Tensor::concat_channels(&[rgb, d])?,
                    _ => rgb.clone(),
                };
                conv2d(&input, weight, Some(bias), p, 0)
            }
            Projection::Split { rgb: (rw, rb), depth: (dw, db) } => {
                let r = conv2d(rgb, rw, Some(rb), p, 0)?;
                let d = conv2d(depth.expect("checked above"), dw, Some(db), p, 0)?;
                Tensor::concat_channels(&[&r, &d])
            }
        }
    }

    /// Applies the (per-modality) layer norm to projected patches.
    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.channels();
        let (g, b) = (self.norm.0.data(), self.norm.1.data());
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            for bounds in self.groups.windows(2) {
                let (s, e) = (bounds[0], bounds[1]);
                normalize_row(&mut row[s..e], &g[s..e], &b[s..e], LN_EPS);
            }
        }
        Tensor::new(x.shape(), out)?.finite("patch_embed norm")
    }

    pub fn forward(&self, rgb: &Tensor, depth: Option<&Tensor>) -> Result<Tensor> {
        self.normalize(&self.project(rgb, depth)?)
    }
}
