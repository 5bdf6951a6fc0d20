mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgvae_core::model::{run_trace, Evidence, SampleSet, TraceConfig};
use sgvae_core::objective::{normalized_weights, supervised_iwae};
use sgvae_core::Tape;

/// 1000 traces across both factorizations, random parameters, S and B.
fn for_random_traces(mut check: impl FnMut(&sgvae_core::model::Trace<'_>, f64)) {
    for k in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let (plan, mut store) = if k % 2 == 0 {
            common::kingma(k)
        } else {
            common::chain(k)
        };
        common::perturb(&mut store, k, 0.5);
        let label = if k % 2 == 0 { "y" } else { "y1" };
        let points = rng.random_range(1..4);
        let samples = rng.random_range(1..6);
        let alpha = rng.random_range(0.0..2.0);
        let ev = Evidence::new()
            .with("x", common::random_x(&mut rng, points))
            .with(label, common::random_labels(&mut rng, points));
        let tape = Tape::new();
        let vars = store.track(&tape);
        let config = if k % 4 < 2 {
            TraceConfig::exact(samples)
        } else {
            TraceConfig::relaxed(samples)
        };
        let trace = run_trace(&plan, &tape, &vars, &ev, &config, &mut rng).unwrap();
        check(&trace, alpha);
    }
}

#[test]
fn log_q_splits_into_weight_and_proposal() {
    for_random_traces(|t, _| {
        let lq = t.log_joint_q().unwrap().to_tensor();
        let lw = t.log_w().to_tensor();
        let prop = t.log_q_unsupplied().unwrap().to_tensor();
        for ((q, w), p) in lq.data().iter().zip(lw.data()).zip(prop.data()) {
            assert!((q - (w + p)).abs() <= 1e-12 * q.abs().max(1.0), "{q} vs {w} + {p}");
        }
    });
}

#[test]
fn normalized_weights_average_to_one() {
    for_random_traces(|t, _| {
        let set = t.sample_set().unwrap();
        let w = normalized_weights(&set).unwrap().to_tensor();
        let s = t.samples();
        for b in 0..t.points() {
            let mean: f64 = w.data()[b * s..(b + 1) * s].iter().sum::<f64>() / s as f64;
            assert!((mean - 1.0).abs() < 1e-12, "{mean}");
        }
    });
}

#[test]
fn importance_weighted_variant_at_one_sample() {
    for_random_traces(|t, alpha| {
        let set = t.sample_set().unwrap();
        let (lp, lq, lw) = (set.log_p.to_tensor(), set.log_q.to_tensor(), set.log_w.to_tensor());
        let s = t.samples();
        // Take the first sample of each point as its own one-sample set.
        let pick = |v: &sgvae_core::Tensor| (0..t.points()).map(|b| v.data()[b * s]).collect::<Vec<_>>();
        let tape = Tape::new();
        let one = SampleSet::from_values(&tape, t.points(), pick(&lp), pick(&lq), pick(&lw)).unwrap();
        let got = supervised_iwae(&one, alpha).unwrap().to_tensor();
        for b in 0..t.points() {
            let (p, q, w) = (lp.data()[b * s], lq.data()[b * s], lw.data()[b * s]);
            let expected = p - q + (1.0 + alpha) * w;
            assert!((got.data()[b] - expected).abs() <= 1e-10 * expected.abs().max(1.0));
        }
    });
}

#[test]
fn supervised_weight_is_the_label_probability() {
    // In the Kingma factorization, y is recognized from x alone, so log w
    // is the same for every sample of a point.
    for k in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let (plan, store) = common::kingma(k);
        let ev = Evidence::new()
            .with("x", common::random_x(&mut rng, 2))
            .with("y", common::random_labels(&mut rng, 2));
        let tape = Tape::new();
        let vars = store.track(&tape);
        let t = run_trace(&plan, &tape, &vars, &ev, &TraceConfig::relaxed(4), &mut rng).unwrap();
        let lw = t.log_w().to_tensor();
        for b in 0..2 {
            let row = &lw.data()[b * 4..(b + 1) * 4];
            assert!(row.iter().all(|v| *v == row[0] && *v <= 0.0));
        }
    }
}

#[test]
fn unsupervised_trace_has_zero_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (plan, store) = common::chain(5);
    let tape = Tape::new();
    let vars = store.track(&tape);
    let ev = Evidence::new().with("x", common::random_x(&mut rng, 3));
    let t = run_trace(&plan, &tape, &vars, &ev, &TraceConfig::relaxed(2), &mut rng).unwrap();
    assert!(!t.is_supervised());
    assert!(t.log_w().to_tensor().data().iter().all(|&v| v == 0.0));
}

#[test]
fn relaxed_and_concrete_traces_share_noise_layout() {
    use sgvae_core::model::{RelaxedDensity, Sampling};
    let (plan, store) = common::kingma(9);
    let run = |density| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tape = Tape::new();
        let vars = store.track(&tape);
        let ev = Evidence::new().with("x", common::random_x(&mut rng, 2));
        let config = TraceConfig {
            samples: 3,
            sampling: Sampling::Relaxed {
                temperature: 0.66,
                straight_through: false,
                density,
            },
        };
        let t = run_trace(&plan, &tape, &vars, &ev, &config, &mut rng).unwrap();
        let value = t.node(0).value.var.to_tensor();
        let lq = t.node(0).log_q.unwrap().var.to_tensor();
        (value, lq)
    };
    let (soft, lq_soft) = run(RelaxedDensity::SoftOneHot);
    let (conc, lq_conc) = run(RelaxedDensity::Concrete);
    assert_eq!(soft, conc);
    assert!(lq_soft.data().iter().all(|v| *v <= 0.0));
    assert_ne!(lq_soft, lq_conc);
}
