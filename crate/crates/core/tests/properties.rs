use deeptemper::experiment::{checkpoint, Checkpoint, ExperimentConfig, Method, ModelState, RunState};
use deeptemper::numeric::{log_sum_exp, sigmoid, softplus};
use deeptemper::samplers::balance::swap_balance_violation;
use deeptemper::samplers::{dt_swap_log_ratio, pt_swap_log_ratio, GammaSchedule, SwapStats};
use deeptemper::{BinaryState, RbmParams, RngStream};
use proptest::prelude::*;

fn model(max_v: usize, max_h: usize) -> impl Strategy<Value = RbmParams> {
    (1..=max_v, 1..=max_h, any::<u64>(), 0.1f64..3.0)
        .prop_map(|(nv, nh, seed, scale)| RbmParams::random(nv, nh, scale, &mut RngStream::new(seed, 0)))
}

fn state(len: usize, seed: u64) -> BinaryState {
    BinaryState::random(len, &mut RngStream::new(seed, 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transpose_swaps_free_energy_sides(p in model(6, 6), seed in any::<u64>()) {
        let t = p.transpose();
        let v = state(p.n_visible(), seed);
        let h = state(p.n_hidden(), seed ^ 1);
        prop_assert!((p.free_energy_v(&v).unwrap() - t.free_energy_h(&v).unwrap()).abs() < 1e-12);
        prop_assert!((p.free_energy_h(&h).unwrap() - t.free_energy_v(&h).unwrap()).abs() < 1e-12);
        prop_assert!((p.energy(&v, &h).unwrap() - t.energy(&h, &v).unwrap()).abs() < 1e-12);
        prop_assert!((p.exact_log_z().unwrap() - t.exact_log_z().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn marginal_is_normalized(p in model(7, 7)) {
        let m = p.exact_marginal_v().unwrap();
        let total: f64 = m.iter().map(|(_, q)| q).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let log_z = p.exact_log_z().unwrap();
        for (v, q) in m.iter().take(8) {
            let lp = -p.free_energy_v(v).unwrap() - log_z;
            prop_assert!((lp - q.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn conditionals_match_free_energy_differences(p in model(5, 5), seed in any::<u64>(), i in 0usize..5) {
        // p(v_i = 1 | h) / p(v_i = 0 | h) from the conditional against the joint.
        let h = state(p.n_hidden(), seed);
        let mut v = state(p.n_visible(), seed ^ 2);
        let i = i % p.n_visible();
        let prob = p.cond_v_given_h(&h).unwrap().as_slice()[i];
        v.set(i, true);
        let e1 = p.energy(&v, &h).unwrap();
        v.set(i, false);
        let e0 = p.energy(&v, &h).unwrap();
        prop_assert!((prob - sigmoid(e0 - e1)).abs() < 1e-12);
    }

    #[test]
    fn pt_ratio_on_bias_only_model_is_closed_form(
        nv in 1usize..8,
        nh in 1usize..4,
        seed in any::<u64>(),
        beta_hi in 0.0f64..1.0,
        gap in 0.01f64..1.0,
    ) {
        let mut p = RbmParams::random(nv, nh, 2.0, &mut RngStream::new(seed, 0));
        p.weights_mut().iter_mut().for_each(|w| *w = 0.0);
        let beta_lo = (beta_hi + gap).min(1.0);
        let a = state(nv, seed ^ 3);
        let b = state(nv, seed ^ 4);
        let dot = |s: &BinaryState| s.bits().iter().zip(p.visible_bias()).map(|(&x, c)| x as f64 * c).sum::<f64>();
        let expected = -(beta_lo - beta_hi) * (dot(&a) - dot(&b));
        let got = pt_swap_log_ratio(&p, beta_lo, beta_hi, &a, &b).unwrap();
        prop_assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn swap_ratios_are_antisymmetric(lower in model(4, 4), seed in any::<u64>(), beta in 0.0f64..1.0) {
        let upper = RbmParams::random(lower.n_hidden(), 3, 1.5, &mut RngStream::new(seed, 5));
        let h = state(lower.n_hidden(), seed);
        let v = state(lower.n_hidden(), seed ^ 6);
        let fwd = dt_swap_log_ratio(&lower, &upper, &h, &v).unwrap();
        let back = dt_swap_log_ratio(&lower, &upper, &v, &h).unwrap();
        prop_assert!((fwd + back).abs() < 1e-12);

        let a = state(lower.n_visible(), seed ^ 7);
        let b = state(lower.n_visible(), seed ^ 8);
        let fwd = pt_swap_log_ratio(&lower, 1.0, beta, &a, &b).unwrap();
        let back = pt_swap_log_ratio(&lower, 1.0, beta, &b, &a).unwrap();
        prop_assert!((fwd + back).abs() < 1e-12);
    }

    #[test]
    fn dt_swap_kernel_balances_product_of_marginals(lower in model(3, 4), seed in any::<u64>()) {
        let upper = RbmParams::random(lower.n_hidden(), 2, 2.0, &mut RngStream::new(seed, 9));
        let h_marg = lower.exact_marginal_h().unwrap();
        let v_marg = upper.exact_marginal_v().unwrap();
        let states: Vec<BinaryState> = h_marg.iter().map(|(s, _)| s.clone()).collect();
        let p: Vec<f64> = h_marg.iter().map(|(_, q)| *q).collect();
        let q: Vec<f64> = v_marg.iter().map(|(_, q)| *q).collect();
        let worst = swap_balance_violation(&p, &q, &states, |x, y| dt_swap_log_ratio(&lower, &upper, x, y).unwrap());
        prop_assert!(worst < 1e-12);
    }

    #[test]
    fn swap_stats_accounting(
        events in prop::collection::vec((0usize..3, any::<bool>(), any::<bool>()), 0..200),
        window in 1u64..20,
    ) {
        let mut s = SwapStats::new(3, window);
        let mut expect = [(0u64, 0u64); 3];
        for (pair, accepted, end) in events {
            s.record(pair, accepted);
            expect[pair].0 += 1;
            expect[pair].1 += accepted as u64;
            if end {
                s.end_iteration();
            }
        }
        for (c, (p, a)) in s.cumulative().iter().zip(expect) {
            prop_assert_eq!((c.proposed, c.accepted), (p, a));
        }
        for (w, c) in s.window().iter().zip(s.cumulative()) {
            prop_assert!(w.accepted <= w.proposed && w.proposed <= c.proposed);
            if let Some(r) = w.rate() {
                prop_assert!((0.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn gamma_schedule_decreases(gamma0 in 0.01f64..10.0, t0 in 1.0f64..1e4, t in 0u64..1_000_000) {
        let g = GammaSchedule { gamma0, t0 };
        prop_assert!(g.at(t + 1) < g.at(t));
        prop_assert!(g.at(t) <= gamma0 && g.at(t) > 0.0);
    }

    #[test]
    fn numeric_identities(x in -700.0f64..700.0, xs in prop::collection::vec(-50.0f64..50.0, 1..20), shift in -100.0f64..100.0) {
        prop_assert!((softplus(x) - softplus(-x) - x).abs() < 1e-9 * x.abs().max(1.0));
        prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|v| v + shift).collect();
        prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&xs) - shift).abs() < 1e-9);
        prop_assert!(log_sum_exp(&xs) >= xs.iter().cloned().fold(f64::MIN, f64::max));
    }

    #[test]
    fn state_index_round_trip(len in 0usize..40, index in any::<u64>()) {
        let index = if len == 0 { 0 } else { index & (u64::MAX >> (64 - len)) };
        prop_assert_eq!(BinaryState::from_index(index, len).to_index(), index);
    }

    #[test]
    fn config_round_trips(
        method in prop::sample::select(vec![Method::Sml, Method::Pt, Method::Cast, Method::Dt]),
        seeds in prop::collection::vec(0u64..1000, 1..5),
        lrs in prop::collection::vec(1e-5f64..0.1, 1..4),
        total in 0u64..100_000,
    ) {
        let mut cfg = ExperimentConfig::desk(method);
        cfg.seeds = seeds;
        cfg.learning_rates = lrs;
        cfg.train.total_updates = total;
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), lr in 1e-5f64..1.0, iteration in any::<u64>()) {
        let cfg = ExperimentConfig::desk(Method::Dt);
        let cell = deeptemper::experiment::Cell { seed, learning_rate: lr };
        let spec = cfg.dataset.spec().unwrap();
        let mut state: RunState = deeptemper::experiment::run::init_state(&cfg, &cell, &spec).unwrap();
        state.iteration = iteration;
        prop_assert!(matches!(state.model, ModelState::Deep(_)));
        let ck = Checkpoint { method: Method::Dt, seed, learning_rate: lr, state };
        let bytes = checkpoint::encode(&ck);
        let back = checkpoint::decode(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back, ck);
    }
}
