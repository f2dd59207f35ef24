use std::sync::Arc;

use debunkd::netgen::{generate_scale_free, ScaleFreeParams, SocialGraph};
use debunkd::propagation::{
    intensity_at, transition_probs, write_event_log, EState, IntensityDist, PropagationParams, SimState, UserDynamics,
};
use proptest::prelude::*;

fn graph(n: usize, seed: u64) -> Arc<SocialGraph> {
    Arc::new(generate_scale_free(&ScaleFreeParams::with_density(n, 0.8), seed).unwrap())
}

fn snapshot(s: &SimState) -> (Vec<UserDynamics>, Vec<u32>, Vec<u32>, f64) {
    (s.users().to_vec(), s.posts_fake().to_vec(), s.posts_true().to_vec(), s.clock())
}

fn scenario(n: usize, seed: u64) -> SimState {
    let mut s = SimState::new(graph(n, seed), seed);
    s.seed_fake_spreaders(n.min(5)).unwrap();
    s.run_until(0.5, &PropagationParams { dt: 0.125, ..Default::default() });
    s.deploy_debunker(0).unwrap();
    s
}

#[test]
fn expected_post_count_follows_decaying_rate() {
    // Sum of per-tick post probabilities against the integral of the rate.
    for &(xi, omega, horizon) in &[(1.0, 1.0, 3.0), (1.4, 0.5, 5.0), (0.7, 2.0, 2.0)] {
        let user = UserDynamics {
            e_state: EState::Infected,
            xi,
            ..Default::default()
        };
        let dt = 0.01;
        let ticks = (horizon / dt) as usize;
        let riemann: f64 = (0..ticks)
            .map(|k| (intensity_at(&user, k as f64 * dt, omega).unwrap() * dt).min(1.0))
            .sum();
        let exact = xi * (1.0 - (-omega * horizon).exp()) / omega;
        assert!((riemann - exact).abs() / exact < 0.05, "{riemann} vs {exact}");
    }
}

#[test]
fn identical_seeds_give_identical_event_logs() {
    let params = PropagationParams::default();
    let logs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let mut s = SimState::new(graph(150, 9), 9);
            s.seed_fake_spreaders(10).unwrap();
            let events = s.run_until_logged(6.0, &params);
            let mut buf = Vec::new();
            write_event_log(&events, &mut buf).unwrap();
            buf
        })
        .collect();
    assert!(logs[0].len() > 100);
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn empirical_intensities_are_drawn_from_the_list() {
    let g = graph(60, 1);
    let mut s = SimState::with_intensity(g, 1, IntensityDist::Empirical(vec![0.25, 2.0]));
    s.seed_fake_spreaders(60).unwrap();
    assert!(s.users().iter().all(|u| u.xi == 0.25 || u.xi == 2.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Split points sit on the tick grid, where both schedules tick identically.
    #[test]
    fn split_run_equals_straight_run(n in 5usize..150, seed in any::<u64>(), split in 1usize..40, extra in 0usize..40) {
        let params = PropagationParams { dt: 0.125, ..Default::default() };
        let t1 = 0.5 + split as f64 * params.dt;
        let t2 = t1 + extra as f64 * params.dt;
        let mut a = scenario(n, seed);
        let mut b = a.clone();
        a.run_until(t1, &params);
        a.run_until(t2, &params);
        b.run_until(t2, &params);
        prop_assert_eq!(snapshot(&a), snapshot(&b));
    }

    #[test]
    fn counters_grow_and_intensity_decays(n in 5usize..200, seed in any::<u64>(), ticks in 1usize..60) {
        let params = PropagationParams::default();
        let mut s = scenario(n, seed);
        for _ in 0..ticks {
            let before = s.users().to_vec();
            let t0 = s.clock();
            s.tick(&params);
            for (u, prev) in s.users().iter().zip(&before) {
                prop_assert!(u.n_fake >= prev.n_fake && u.n_true >= prev.n_true);
                let active = |e| matches!(e, EState::Infected | EState::Recovered);
                if active(u.e_state) && active(prev.e_state) && u.t_c == prev.t_c {
                    let i0 = intensity_at(u, t0, params.omega).unwrap();
                    let i1 = intensity_at(u, s.clock(), params.omega).unwrap();
                    prop_assert!(i1 <= i0);
                }
                if prev.e_state != EState::Susceptible {
                    prop_assert!(u.e_state != EState::Susceptible);
                }
            }
        }
        let counted: usize = [EState::Susceptible, EState::Exposed, EState::Infected, EState::Recovered]
            .iter()
            .map(|&e| s.count(e))
            .sum();
        prop_assert_eq!(counted, n);
    }

    #[test]
    fn transitions_are_mutually_exclusive(n_fake in 0u32..50, n_true in 0u32..50, midpoint in 1.0f64..3.0, delta in 0.1f64..5.0) {
        let u = UserDynamics { n_fake, n_true, ..Default::default() };
        let (pi, pr) = transition_probs(&u, midpoint, delta);
        prop_assert!(pi * pr == 0.0);
        prop_assert_eq!(pi > 0.0, n_fake > n_true);
        prop_assert_eq!(pr > 0.0, n_true > n_fake);
    }
}
