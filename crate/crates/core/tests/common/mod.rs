#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgvae_core::model::{
    compile, define_model, Activation, ExecutionPlan, Family, ParamFn, ParamStore, Supervision, VariableSpec,
};
use sgvae_core::Tensor;

fn mlp() -> ParamFn {
    ParamFn::mlp(&[4], Activation::Tanh)
}

/// `q(y | x) q(z | x, y)` with `p(y) p(z) p(x | y, z)`; x is 3-d Gaussian.
pub fn kingma(seed: u64) -> (ExecutionPlan, ParamStore) {
    let g = define_model(vec![
        VariableSpec::new("y", Family::Categorical, 3, Supervision::Partial).recognition(&["x"], mlp()),
        VariableSpec::new("z", Family::Normal, 2, Supervision::Latent).recognition(&["x", "y"], mlp()),
        VariableSpec::new("x", Family::Normal, 3, Supervision::Observed).generative(&["y", "z"], mlp()),
    ])
    .unwrap();
    compile(&g, seed).unwrap()
}

/// `q(z2 | y1, z1, x) q(y1 | z1, x) q(z1 | x)` with `p(z1) p(y1) p(z2 | z1) p(x | y1, z2)`.
pub fn chain(seed: u64) -> (ExecutionPlan, ParamStore) {
    let g = define_model(vec![
        VariableSpec::new("z1", Family::Normal, 2, Supervision::Latent).recognition(&["x"], mlp()),
        VariableSpec::new("y1", Family::Categorical, 3, Supervision::Partial).recognition(&["z1", "x"], mlp()),
        VariableSpec::new("z2", Family::Normal, 2, Supervision::Latent)
            .generative(&["z1"], mlp())
            .recognition(&["y1", "z1", "x"], mlp()),
        VariableSpec::new("x", Family::Normal, 3, Supervision::Observed).generative(&["y1", "z2"], mlp()),
    ])
    .unwrap();
    compile(&g, seed).unwrap()
}

pub fn random_x(rng: &mut ChaCha8Rng, points: usize) -> Tensor {
    Tensor::new(
        [points, 3],
        (0..points * 3).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, points: usize) -> Tensor {
    let labels: Vec<usize> = (0..points).map(|_| rng.random_range(0..3)).collect();
    Tensor::one_hot(&labels, 3).unwrap()
}

/// Scales every weight so the tiny models produce non-trivial densities.
pub fn perturb(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
}
