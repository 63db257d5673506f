//! Shared fixtures for the criterion benches.

use emsaformer_core::model_io::{reference_init, ModelConfig};
use emsaformer_core::{Model, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform `[-1, 1)` tensor, reproducible per seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0)).expect("valid shape")
}

/// Model with reference weights for `config`.
pub fn reference_model(config: &ModelConfig, seed: u64) -> Model {
    let store = reference_init(config, seed).expect("reference init");
    Model::load(config, &store).expect("reference weights load")
}

/// Normalized RGB-D input pair of one image.
pub fn input_pair(model: &Model, height: usize, width: usize, seed: u64) -> (Tensor, Option<Tensor>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let rgb: Vec<u8> = (0..height * width * 3).map(|_| r.gen()).collect();
    let depth: Vec<u16> = (0..height * width).map(|_| r.gen_range(500..5000)).collect();
    model.preprocess(&rgb, Some(&depth), height, width).expect("preprocess")
}
