use std::sync::Arc;

use debunkd::approximator::{gradient_check, softmax, Head, Mlp};
use debunkd::env::{full_state, MitigationConfig, Observation};
use debunkd::netgen::{generate_scale_free, ScaleFreeParams};
use debunkd::propagation::{IntensityDist, PropagationParams};
use debunkd::rng::{stream_rng, SimRng};
use debunkd::trainer::{
    discriminator_input, discriminator_objective, negative_model_loss, policy_objective, PolicySample, TrainConfig,
    Trainer, Variant,
};
use rand::Rng;

const N: usize = 4;

fn random_net(dims: &[usize], head: Head, rng: &mut SimRng) -> Mlp {
    let mut net = Mlp::new(dims, head, rng);
    // Move away from the Xavier-zero biases so every unit is exercised.
    for p in net.params_mut() {
        *p += rng.gen_range(-0.1..0.1);
    }
    net
}

fn random_input(width: usize, rng: &mut SimRng) -> Vec<f64> {
    (0..width).map(|_| rng.gen_range(0.0..3.0)).collect()
}

fn random_samples(rng: &mut SimRng, advantage: bool, negative: bool) -> Vec<PolicySample> {
    (0..3)
        .map(|_| {
            let mut mask: Vec<bool> = (0..N).map(|_| rng.gen_bool(0.7)).collect();
            let action = rng.gen_range(0..N);
            mask[action] = true;
            PolicySample {
                input: random_input(11 * N, rng),
                mask,
                action,
                advantage: if advantage { rng.gen_range(-2.0..2.0) } else { 0.0 },
                negative_probs: negative.then(|| softmax(&random_input(N, rng))),
            }
        })
        .collect()
}

#[test]
fn every_training_loss_passes_the_gradient_check() {
    let mut rng = stream_rng(2024, 0);
    for trial in 0..5 {
        let phi = random_net(&[12 * N, 6, 1], Head::Sigmoid, &mut rng);
        let agent: Vec<Vec<f64>> = (0..3).map(|_| random_input(12 * N, &mut rng)).collect();
        let expert: Vec<Vec<f64>> = (0..2).map(|_| random_input(12 * N, &mut rng)).collect();
        let (_, g) = discriminator_objective(&phi, &agent, &expert).unwrap();
        let err = gradient_check(&phi, &g, |m| discriminator_objective(m, &agent, &expert).unwrap().0, 1e-6, trial);
        assert!(err <= 1e-4, "discriminator: {err}");

        let theta = random_net(&[11 * N, 6, N], Head::MaskedSoftmax, &mut rng);
        for (name, samples, lambda, lambda1) in [
            ("surrogate", random_samples(&mut rng, true, false), 0.0, 0.0),
            ("entropy", random_samples(&mut rng, false, false), 1.0, 0.0),
            ("regularizer", random_samples(&mut rng, false, true), 0.0, 1.0),
        ] {
            let (_, g) = policy_objective(&theta, &samples, lambda, lambda1).unwrap();
            let err = gradient_check(
                &theta,
                &g,
                |m| policy_objective(m, &samples, lambda, lambda1).unwrap().0,
                1e-6,
                trial,
            );
            assert!(err <= 1e-4, "{name}: {err}");
        }

        let m = random_net(&[11 * N, 6, N], Head::Softmax, &mut rng);
        let batch: Vec<(Vec<f64>, usize)> = (0..3).map(|_| (random_input(11 * N, &mut rng), rng.gen_range(0..N))).collect();
        let (_, g) = negative_model_loss(&m, &batch).unwrap();
        let err = gradient_check(&m, &g, |m| negative_model_loss(m, &batch).unwrap().0, 1e-6, trial);
        assert!(err <= 1e-4, "negative model: {err}");
    }
}

fn trainer(variant: Variant, iterations: usize) -> Trainer {
    let graph = Arc::new(generate_scale_free(&ScaleFreeParams::with_density(40, 0.8), 5).unwrap());
    let env = MitigationConfig {
        budget: 8.0,
        initial_spreaders: 4,
        scenario_seed: Some(3),
        ..Default::default()
    };
    let cfg = TrainConfig {
        iterations,
        hidden: vec![16],
        good_capacity: 5,
        bad_cap: 4,
        bad_fraction: 0.2,
        ..TrainConfig::for_variant(variant)
    };
    Trainer::new(graph, env, PropagationParams::default(), IntensityDist::default(), cfg, 11).unwrap()
}

#[test]
fn memories_stay_within_bounds_and_parameters_stay_finite() {
    let mut t = trainer(Variant::Nagasil, 60);
    for _ in 0..60 {
        t.step().unwrap();
        let s = t.state();
        assert!(s.good.len() <= 5);
        assert!(s.bad.len() <= 4);
        assert!(s.policy.net.is_finite() && s.discriminator.net.is_finite() && s.negative.net.is_finite());
    }
    assert!(t.state().negative_evals > 0);
    assert_eq!(t.state().bad.len(), 4);
}

#[test]
fn ablated_negative_samples_never_touch_the_negative_model() {
    for variant in [Variant::Gasil, Variant::Agasil] {
        let mut t = trainer(variant, 30);
        let untouched = t.state().negative.net.clone();
        for _ in 0..30 {
            t.step().unwrap();
        }
        assert_eq!(t.state().negative_evals, 0);
        assert_eq!(t.state().negative.net.params(), untouched.params());
        assert_eq!(t.state().lambda1, 0.0);
    }
}

#[test]
fn discriminator_sees_only_observable_features() {
    let mut t = trainer(Variant::Nagasil, 3);
    let report = t.step().unwrap();
    let step = &report.episode.steps[0];
    let x = discriminator_input(step);
    assert_eq!(x.len(), 12 * 40);
    assert_eq!(t.state().discriminator.net.input_dim(), 12 * 40);
    // The state block is exactly the masked observation: no infection or
    // recovery probabilities and no intensities.
    let obs: &Observation = &step.obs;
    assert_eq!(obs.as_slice().len(), 5 * 40);
    for (xi, oi) in x.iter().zip(obs.as_slice()) {
        assert_eq!(*xi, oi.ln_1p());
    }
    let full = full_state(t.env_mut().state(), &PropagationParams::default());
    assert_eq!(full.0.len(), 8 * 40);
}

#[test]
fn single_iteration_runs() {
    let mut t = trainer(Variant::Ngasil, 1);
    let report = t.step().unwrap();
    assert_eq!(report.iteration, 0);
    assert!(report.episode.reward.is_finite());
    assert_eq!(t.state().good.len(), 1);
}

#[test]
fn same_seed_same_rewards() {
    let run = || {
        let mut t = trainer(Variant::Nagasil, 15);
        (0..15).map(|_| t.step().unwrap().episode.reward).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
