use std::sync::Arc;

use super::window::pad_to;
use crate::error::Result;
use crate::kernels::{layer_norm, linear, LN_EPS};
use crate::model_io::Scope;
use crate::tensor::Tensor;

/// Concatenates each 2x2 neighbourhood into `4C` channels, ordered
/// `(0,0), (1,0), (0,1), (1,1)` as `(dy, dx)`. Odd extents are zero-padded first.
pub fn gather_2x2(x: &Tensor) -> Result<Tensor> {
    let (_, h, w, _) = x.dims4()?;
    let x = pad_to(x, h.div_ceil(2) * 2, w.div_ceil(2) * 2)?;
    let (b, h, w, c) = x.dims4()?;
    let (ho, wo) = (h / 2, w / 2);
    let src = x.data();
    let mut out = Vec::with_capacity(x.len());
    for n in 0..b {
        for y in 0..ho {
            for xx in 0..wo {
                for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let s = ((n * h + 2 * y + dy) * w + 2 * xx + dx) * c;
                    out.extend_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    Tensor::new(&[b, ho, wo, 4 * c], out)
}

#[derive(Clone, Debug)]
pub struct PatchMerging {
    pub reduction: Arc<Tensor>,
    pub norm: (Arc<Tensor>, Arc<Tensor>),
}

impl PatchMerging {
    pub fn load(scope: &Scope<'_>, channels: usize) -> Result<Self> {
        Ok(Self {
            reduction: scope.get_shaped("reduction.weight", &[2 * channels, 4 * channels])?,
            norm: (
                scope.get_shaped("norm.weight", &[2 * channels])?,
                scope.get_shaped("norm.bias", &[2 * channels])?,
            ),
        })
    }

    /// Linear reduction of the gathered neighbourhood, before the norm.
    pub fn reduce(&self, x: &Tensor) -> Result<Tensor> {
        linear(&gather_2x2(x)?, &self.reduction, None)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(&self.reduce(x)?, &self.norm.0, &self.norm.1, LN_EPS)
    }
}

/// Halves resolution and doubles channels.
pub fn patch_merge(x: &Tensor, merging: &PatchMerging) -> Result<Tensor> {
    merging.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rand_tensor;

    #[test]
    fn gather_matches_index_oracle() {
        let x = rand_tensor(&[2, 6, 4, 3], 1, 1.0);
        let g = gather_2x2(&x).unwrap();
        assert_eq!(g.shape(), &[2, 3, 2, 12]);
        for n in 0..2 {
            for y in 0..3 {
                for xx in 0..2 {
                    for k in 0..4 {
                        let (dy, dx) = [(0, 0), (1, 0), (0, 1), (1, 1)][k];
                        for c in 0..3 {
                            let got = g.data()[((n * 3 + y) * 2 + xx) * 12 + k * 3 + c];
                            let want = x.data()[((n * 6 + 2 * y + dy) * 4 + 2 * xx + dx) * 3 + c];
                            assert_eq!(got, want);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn odd_extents_are_padded() {
        let x = rand_tensor(&[1, 5, 3, 2], 2, 1.0);
        let g = gather_2x2(&x).unwrap();
        assert_eq!(g.shape(), &[1, 3, 2, 8]);
        // Bottom-right neighbour of the last output pixel is padding.
        assert_eq!(&g.data()[g.len() - 2..], &[0.0, 0.0]);
    }
}
