use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::shapes::{crosses_modality, expected_shapes, modality_isolated};
use super::store::WeightStore;
use crate::error::Result;
use crate::tensor::Tensor;

/// Standard deviation of projection weights.
pub const INIT_STD: f32 = 0.02;
/// Initial per-head attention log-scale, ln(10).
pub const INIT_LOGIT_SCALE: f32 = std::f32::consts::LN_10;

/// 64-bit FNV-1a, used to derive a per-tensor stream from the global seed.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Deterministic synthetic weights for `config`.
///
/// Each tensor draws from its own ChaCha8 stream seeded with
/// `seed ^ fnv1a64(name)`, so the values of one tensor do not depend on
/// which other tensors exist. Projections are normal with sigma 0.02
/// truncated to two sigma by rejection, biases are zero, norm gains are one
/// and attention log-scales are ln(10). Cross-modal blocks of the
/// modality-isolated projections are zero.
pub fn reference_init(config: &ModelConfig, seed: u64) -> Result<WeightStore> {
    let shapes = expected_shapes(config)?;
    let isolated = modality_isolated(config);
    let normal = Normal::new(0.0f32, INIT_STD).expect("valid sigma");
    let mut store = WeightStore::new();
    for (name, shape) in &shapes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(name.as_bytes()));
        let tensor = match param_kind(name) {
            ParamKind::Zero => Tensor::zeros(shape)?,
            ParamKind::One => Tensor::full(shape, 1.0)?,
            ParamKind::LogitScale => Tensor::full(shape, INIT_LOGIT_SCALE)?,
            ParamKind::Projection => Tensor::from_fn(shape, |_| truncated(&normal, &mut rng))?,
        };
        store.insert(name.clone(), tensor);
    }
    for (name, split) in isolated {
        let t = store.get(&name)?;
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut data = t.data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                if crosses_modality(r, c, cols, split) {
                    data[r * cols + c] = 0.0;
                }
            }
        }
        store.insert(name, Tensor::new(&[rows, cols], data)?);
    }
    Ok(store)
}

enum ParamKind {
    Zero,
    One,
    LogitScale,
    Projection,
}

fn param_kind(name: &str) -> ParamKind {
    let mut parts = name.rsplit('.');
    let leaf = parts.next().unwrap_or_default();
    let owner = parts.next().unwrap_or_default();
    match leaf {
        "bias" => ParamKind::Zero,
        "logit_scale" => ParamKind::LogitScale,
        "weight" if owner.starts_with("norm") => ParamKind::One,
        _ => ParamKind::Projection,
    }
}

fn truncated(normal: &Normal<f32>, rng: &mut impl Rng) -> f32 {
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            return v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderVariant;

    #[test]
    fn same_seed_same_store() {
        let c = ModelConfig::tiny();
        assert_eq!(reference_init(&c, 0).unwrap(), reference_init(&c, 0).unwrap());
        assert_ne!(reference_init(&c, 0).unwrap(), reference_init(&c, 1).unwrap());
    }

    #[test]
    fn value_classes() {
        let s = reference_init(&ModelConfig::tiny(), 3).unwrap();
        assert!(s.get("encoder.stages.0.blocks.0.norm1.weight").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(s.get("encoder.merges.1.norm.weight").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(s.get("semantic_head.bias").unwrap().data().iter().all(|&v| v == 0.0));
        let ls = s.get("encoder.stages.1.blocks.1.attn.logit_scale").unwrap();
        assert!(ls.data().iter().all(|&v| v == INIT_LOGIT_SCALE));
        let w = s.get("encoder.stages.2.blocks.0.mlp.fc1.weight").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        let n = w.len() as f64;
        let var = w.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
        // Two-sigma truncation keeps about 77% of the variance.
        let expect = 0.774 * (INIT_STD as f64).powi(2);
        assert!((var - expect).abs() < 0.05 * expect, "{var} vs {expect}");
    }

    #[test]
    fn isolated_projections_have_zero_cross_blocks() {
        let c = ModelConfig::emsaformer(EncoderVariant::SwinV2TMulti);
        let s = reference_init(&c, 0).unwrap();
        let q = s.get("encoder.stages.0.blocks.1.attn.qkv.weight").unwrap();
        let (rows, cols) = (q.shape()[0], q.shape()[1]);
        let mut zero = 0;
        for r in 0..rows {
            for col in 0..cols {
                let v = q.data()[r * cols + col];
                if crosses_modality(r, col, cols, 64) {
                    assert_eq!(v, 0.0);
                    zero += 1;
                } else {
                    assert_ne!(v, 0.0);
                }
            }
        }
        assert_eq!(zero, 3 * 2 * 64 * 32);
    }
}
