mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgvae_core::data::{split_semi_supervised, synth_tabular_dataset, Dataset};
use sgvae_core::model::{
    compile, define_model, run_trace, Activation, Evidence, ExecutionPlan, Family, ParamFn, ParamStore, Supervision,
    TraceConfig, VariableSpec,
};
use sgvae_core::objective::{combined_objective, elbo_unsupervised, supervised_term, ObjectiveConfig};
use sgvae_core::oracle::kingma_model;
use sgvae_core::train::{adam_step, classify, error_rate, AdamConfig, AdamState, TrainConfig, Trainer};
use sgvae_core::{Tape, Tensor};

/// Neural counterpart of the tabular Kingma model: x ∈ 6 values, y ∈ 3, z ∈ 4.
fn neural_kingma(seed: u64) -> (ExecutionPlan, ParamStore) {
    let mlp = || ParamFn::mlp(&[16], Activation::Tanh);
    let g = define_model(vec![
        VariableSpec::new("y", Family::Categorical, 3, Supervision::Partial).recognition(&["x"], mlp()),
        VariableSpec::new("z", Family::Categorical, 4, Supervision::Latent).recognition(&["x", "y"], mlp()),
        VariableSpec::new("x", Family::Categorical, 6, Supervision::Observed).generative(&["y", "z"], mlp()),
    ])
    .unwrap();
    compile(&g, seed).unwrap()
}

fn synthetic(seed: u64) -> (Dataset, Dataset) {
    let data = synth_tabular_dataset(&kingma_model(seed).unwrap(), 300, seed).unwrap();
    let split = split_semi_supervised(&data, 30, seed).unwrap();
    (split.supervised, split.unsupervised.without_labels())
}

fn config(lr: f64, seed: u64) -> TrainConfig {
    let mut c = TrainConfig {
        batch_sup: 10,
        batch_unsup: 30,
        objective: ObjectiveConfig {
            samples: 4,
            ..Default::default()
        },
        seed,
        ..Default::default()
    };
    c.adam.lr = lr;
    c
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let (sup, unsup) = synthetic(1);
    let (plan, store) = neural_kingma(1);
    let before = store.tensors().to_vec();
    let mut t = Trainer::new(plan, store, config(0.0, 1), unsup.len(), sup.len()).unwrap();
    t.train_epoch(&sup, &unsup, 0).unwrap();
    for (a, b) in before.iter().zip(t.params.tensors()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn objective_increases_on_data_from_the_model_family() {
    let mut gains = Vec::new();
    for seed in 0..5 {
        let (sup, unsup) = synthetic(seed);
        let (plan, store) = neural_kingma(seed);
        let mut t = Trainer::new(plan, store, config(1e-2, seed), unsup.len(), sup.len()).unwrap();
        let objs: Vec<f64> = (0..5)
            .map(|e| t.train_epoch(&sup, &unsup, e).unwrap().objective)
            .collect();
        gains.push(objs[4] - objs[0]);
    }
    gains.sort_by(f64::total_cmp);
    assert!(gains[2] > 0.0, "{gains:?}");
}

#[test]
fn training_is_deterministic() {
    let (sup, unsup) = synthetic(3);
    let run = || {
        let (plan, store) = neural_kingma(3);
        let mut t = Trainer::new(plan, store, config(1e-2, 9), unsup.len(), sup.len()).unwrap();
        let m: Vec<u64> = (0..2)
            .map(|e| t.train_epoch(&sup, &unsup, e).unwrap().objective.to_bits())
            .collect();
        (m, t.params.tensors().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_descends_a_quadratic_bowl() {
    let mut p = vec![Tensor::new([4], vec![0.5, -0.5, 0.5, -0.5]).unwrap()];
    let mut state = AdamState::new(&p);
    let cfg = AdamConfig {
        lr: 0.01,
        ..Default::default()
    };
    let norm = |p: &[Tensor]| p[0].data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let start = norm(&p);
    assert!((start - 1.0).abs() < 1e-15);
    let mut norms = Vec::new();
    for _ in 0..500 {
        let g = vec![p[0].clone()];
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        norms.push(norm(&p));
    }
    assert!(norms.windows(2).skip(10).take(40).all(|w| w[1] < w[0]));
    assert!(norms[499] < 1e-2, "{}", norms[499]);
    assert_eq!(state.step, 500);
}

#[test]
fn combined_gradient_is_the_sum_of_term_gradients() {
    let (plan, store) = common::kingma(5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ux = common::random_x(&mut rng, 4);
    let sx = common::random_x(&mut rng, 2);
    let sy = common::random_labels(&mut rng, 2);
    let cfg = ObjectiveConfig {
        samples: 3,
        ..Default::default()
    };
    // which: 0 unsupervised only, 1 supervised only, 2 both.
    let grads = |which: u8| {
        let tape = Tape::new();
        let vars = store.track(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tc = TraceConfig::relaxed(3);
        let u = run_trace(
            &plan,
            &tape,
            &vars,
            &Evidence::new().with("x", ux.clone()),
            &tc,
            &mut rng,
        )
        .unwrap();
        let s = run_trace(
            &plan,
            &tape,
            &vars,
            &Evidence::new().with("x", sx.clone()).with("y", sy.clone()),
            &tc,
            &mut rng,
        )
        .unwrap();
        let u = (which != 1).then(|| elbo_unsupervised(&u, false).unwrap());
        let s = (which != 0).then(|| supervised_term(&s, &cfg, 2.0).unwrap());
        let obj = combined_objective(u, 40, s, 7, 1.5).unwrap();
        tape.backward(obj).unwrap();
        store.gradients(&tape, &vars)
    };
    let (gu, gs, gb) = (grads(0), grads(1), grads(2));
    for j in 0..gb.len() {
        for ((a, b), c) in gu[j].data().iter().zip(gs[j].data()).zip(gb[j].data()) {
            assert!(
                (a + b - c).abs() <= 1e-12 * c.abs().max(1.0),
                "{}: {a} + {b} vs {c}",
                store.names()[j]
            );
        }
    }
}

fn output_layer(store: &ParamStore) -> (usize, usize) {
    let names = store.names();
    let w = names
        .iter()
        .rposition(|n| n.starts_with("y.") && n.ends_with(".w"))
        .unwrap();
    let b = names
        .iter()
        .rposition(|n| n.starts_with("y.") && n.ends_with(".b"))
        .unwrap();
    (w, b)
}

#[test]
fn classification_ignores_logit_shift_and_scale() {
    let (plan, mut store) = common::kingma(8);
    common::perturb(&mut store, 8, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = common::random_x(&mut rng, 200);
    let base = classify(&plan, store.tensors(), &x, 1, 0).unwrap();
    let (w, b) = output_layer(&store);

    let mut shifted = store.tensors().to_vec();
    shifted[b].data_mut().iter_mut().for_each(|v| *v += 3.7);
    assert_eq!(classify(&plan, &shifted, &x, 1, 0).unwrap(), base);

    let mut scaled = store.tensors().to_vec();
    for i in [w, b] {
        scaled[i].data_mut().iter_mut().for_each(|v| *v *= 2.5);
    }
    assert_eq!(classify(&plan, &scaled, &x, 1, 0).unwrap(), base);
}

#[test]
fn uniform_classifier_is_at_chance_level() {
    let (plan, store) = common::kingma(9);
    let (w, b) = output_layer(&store);
    let mut params = store.tensors().to_vec();
    for i in [w, b] {
        params[i] = Tensor::zeros(params[i].shape().to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 3000;
    let x = Tensor::new([n, 3], (0..n * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let data = Dataset::new(x, Some(labels), 3).unwrap();
    let err = error_rate(&plan, &params, &data, 1, 0).unwrap();
    let sd = (2.0 / 9.0 / n as f64).sqrt();
    assert!((err - 2.0 / 3.0).abs() < 3.0 * sd, "{err}");
}
