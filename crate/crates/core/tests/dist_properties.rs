use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgvae_core::dist::{
    bernoulli_log_prob, categorical_log_prob, concrete_log_prob, concrete_rsample, gumbel, kl_normal_std,
    normal_log_prob, normal_rsample, standard_normal,
};
use sgvae_core::math::{mean_stderr, LN_2PI};
use sgvae_core::{Tape, Tensor};

#[test]
fn pathwise_gradient_of_second_moment() {
    let n = 100_000;
    let (mu, log_sigma) = (0.7, -0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let noise = standard_normal(&mut rng, &[n, 1]);

    let tape = Tape::new();
    let m = tape.var(Tensor::matrix(1, 1, vec![mu]).unwrap());
    let s = tape.constant(Tensor::full([n, 1], log_sigma));
    let z = normal_rsample(m.repeat_rows(n).unwrap(), s, &noise).unwrap();
    tape.backward(z.square().mean()).unwrap();
    let grad = tape.grad(m).unwrap().item().unwrap();

    // Per-sample pathwise derivative is 2z; its spread gives the standard error.
    let per_sample: Vec<f64> = z.value().data().iter().map(|v| 2.0 * v).collect();
    let (mean, se) = mean_stderr(&per_sample);
    assert!((grad - mean).abs() < 1e-10);
    assert!((grad - 2.0 * mu).abs() < 3.0 * se, "grad {grad} vs {} ± {se}", 2.0 * mu);
}

#[test]
fn gumbel_max_frequencies_match_softmax() {
    let n = 100_000;
    let k = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lse = sgvae_core::math::log_sum_exp(&logits);
        let tape = Tape::new();
        let l = tape.constant(Tensor::row(logits.clone())).repeat_rows(n).unwrap();
        let g = gumbel(&mut rng, &[n, k]);
        let y = concrete_rsample(l, 0.1, &g).unwrap().to_tensor();
        let mut counts = vec![0usize; k];
        for c in y.argmax_rows() {
            counts[c] += 1;
        }
        for c in 0..k {
            let p = (logits[c] - lse).exp();
            let freq = counts[c] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 3.0 * sigma, "class {c}: {freq} vs {p}");
        }
    }
}

#[test]
fn analytic_kl_matches_monte_carlo() {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 3;
    let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let log_std: Vec<f64> = (0..d).map(|_| rng.random_range(-0.8..0.5)).collect();

    let tape = Tape::new();
    let m = tape.constant(Tensor::row(mean.clone()));
    let s = tape.constant(Tensor::row(log_std.clone()));
    let exact = kl_normal_std(m, s).unwrap().item().unwrap();

    let mr = m.repeat_rows(n).unwrap();
    let sr = s.repeat_rows(n).unwrap();
    let z = normal_rsample(mr, sr, &standard_normal(&mut rng, &[n, d])).unwrap();
    let log_q = normal_log_prob(z, mr, sr).unwrap();
    let zeros = tape.constant(Tensor::zeros([n, d]));
    let log_p = normal_log_prob(z, zeros, zeros).unwrap();
    let diff = log_q.sub(&log_p).unwrap().to_tensor();
    let (est, se) = mean_stderr(diff.data());
    assert!((est - exact).abs() < 3.0 * se, "{est} ± {se} vs {exact}");
}

#[test]
fn relaxed_sample_entropy_vanishes_as_temperature_drops() {
    let tape = Tape::new();
    let logits = tape.constant(Tensor::row(vec![0.3, -0.2, 1.1, 0.0]));
    let noise = Tensor::row(vec![0.4, 1.3, -0.5, 0.2]);
    let entropy = |t: f64| -> f64 {
        let y = concrete_rsample(logits, t, &noise).unwrap().to_tensor();
        -y.data().iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    };
    let temps = [1.0, 0.3, 0.1, 0.03, 0.01];
    let hs: Vec<f64> = temps.iter().map(|&t| entropy(t)).collect();
    for w in hs.windows(2) {
        assert!(w[1] < w[0], "{hs:?}");
    }
    assert!(hs[4] < 1e-6);
}

fn concrete_density(y: &[f64], logits: &[f64], temp: f64) -> f64 {
    let tape = Tape::new();
    let log_y = tape.constant(Tensor::row(y.iter().map(|v| v.ln()).collect()));
    let l = tape.constant(Tensor::row(logits.to_vec()));
    concrete_log_prob(log_y, l, temp).unwrap().item().unwrap().exp()
}

#[test]
fn binary_concrete_density_matches_closed_form() {
    // Two-class density in y = y_1: τ a y^(−τ−1) (1−y)^(−τ−1) / (a y^(−τ) + (1−y)^(−τ))², a = π_1/π_2.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let logits: [f64; 2] = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let temp: f64 = rng.random_range(0.1..3.0);
        let y: f64 = rng.random_range(0.01..0.99);
        let a = (logits[0] - logits[1]).exp();
        let expected = temp * a * y.powf(-temp - 1.0) * (1.0 - y).powf(-temp - 1.0)
            / (a * y.powf(-temp) + (1.0 - y).powf(-temp)).powi(2);
        let got = concrete_density(&[y, 1.0 - y], &logits, temp);
        assert!(
            (got - expected).abs() <= 1e-10 * expected.max(1.0),
            "{got} vs {expected}"
        );
    }
}

#[test]
fn three_class_concrete_density_integrates_to_one() {
    let n = 600;
    let h = 1.0 / n as f64;
    for (logits, temp) in [([0.4, -0.3, 1.0], 1.5), ([0.0, 0.0, 0.0], 2.0), ([-1.0, 0.5, 0.2], 1.2)] {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n - i {
                // Midpoints of the lower triangles tile the simplex; upper ones fill the rest.
                let (a, b) = ((i as f64 + 1.0 / 3.0) * h, (j as f64 + 1.0 / 3.0) * h);
                total += 0.5 * h * h * concrete_density(&[a, b, 1.0 - a - b], &logits, temp);
                if j + 1 < n - i {
                    let (a, b) = ((i as f64 + 2.0 / 3.0) * h, (j as f64 + 2.0 / 3.0) * h);
                    total += 0.5 * h * h * concrete_density(&[a, b, 1.0 - a - b], &logits, temp);
                }
            }
        }
        assert!((total - 1.0).abs() < 2e-3, "{logits:?} τ={temp}: {total}");
    }
}

proptest! {
    #[test]
    fn concrete_sums_to_one(
        logits in proptest::collection::vec(-30.0f64..30.0, 2..8),
        temp in 0.01f64..5.0,
        seed in any::<u64>(),
    ) {
        let k = logits.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::new();
        let l = tape.constant(Tensor::row(logits));
        let y = concrete_rsample(l, temp, &gumbel(&mut rng, &[1, k])).unwrap().to_tensor();
        let s: f64 = y.data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(y.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn discrete_log_probs_are_non_positive(
        logits in proptest::collection::vec(-20.0f64..20.0, 2..6),
        x in proptest::collection::vec(0.0f64..=1.0, 2..6),
        pick in any::<prop::sample::Index>(),
    ) {
        let tape = Tape::new();
        let k = logits.len();
        let l = tape.constant(Tensor::row(logits.clone()));
        let y = tape.constant(Tensor::one_hot(&[pick.index(k)], k).unwrap());
        prop_assert!(categorical_log_prob(y, l).unwrap().item().unwrap() <= 0.0);
        let n = x.len().min(k);
        let xb = tape.constant(Tensor::row(x[..n].to_vec()));
        let lb = tape.constant(Tensor::row(logits[..n].to_vec()));
        prop_assert!(bernoulli_log_prob(xb, lb).unwrap().item().unwrap() <= 0.0);
    }

    #[test]
    fn normal_log_prob_bounded_by_mode(
        x in proptest::collection::vec(-5.0f64..5.0, 3),
        mean in proptest::collection::vec(-5.0f64..5.0, 3),
        log_std in proptest::collection::vec(-3.0f64..3.0, 3),
    ) {
        let tape = Tape::new();
        let bound = -0.5 * LN_2PI * 3.0 - log_std.iter().sum::<f64>();
        let lp = normal_log_prob(
            tape.constant(Tensor::row(x)),
            tape.constant(Tensor::row(mean)),
            tape.constant(Tensor::row(log_std)),
        ).unwrap().item().unwrap();
        prop_assert!(lp <= bound + 1e-12);
    }
}
