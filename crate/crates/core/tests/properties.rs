use proptest::prelude::*;
use turing_core::analysis::{l2_norm, rel_norm_diff};
use turing_core::grid::GridSpec;
use turing_core::nn::{AdamState, Mlp, ParamMask, TrainableSet};
use turing_core::params::{params_for_pattern, reaction_rhs, ParamId, PatternId, RdParams};
use turing_core::pinn::{build_point_sets, loss_value, FullBatch, PointConfig};
use turing_core::solver::{laplacian, seed_fields, step_euler, Boundary};

fn arb_params() -> impl Strategy<Value = RdParams> {
    (0.0..2.0f64, 0.0..3.0f64, -1.5..1.5f64, prop_oneof![-2.0..-0.01f64, 0.01..2.0f64], 0.0..6.0f64, 0.0..0.5f64)
        .prop_map(|(d1, d2, a, b, r1, r2)| RdParams::new(d1, d2, a, b, r1, r2).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_state_is_an_equilibrium(p in arb_params()) {
        prop_assert_eq!(reaction_rhs(0.0, 0.0, 0.0, 0.0, &p), (0.0, 0.0));
        let zero = turing_core::Pattern::zeros(GridSpec::square(6, 3.0).unwrap());
        let (next, rate) = step_euler(&zero, &p, 0.01, Boundary::ZeroFlux, 0).unwrap();
        prop_assert_eq!(rate, 0.0);
        prop_assert_eq!(next.u(), zero.u());
    }

    #[test]
    fn periodic_laplacian_sums_to_zero(seed in any::<u64>(), n in 3usize..12) {
        let p = seed_fields(GridSpec::square(n, 5.0).unwrap(), 1.0, seed);
        let lap = laplacian(p.u(), p.grid(), Boundary::Periodic).unwrap();
        let s: f64 = lap.iter().sum();
        prop_assert!(s.abs() <= 1e-10 * l2_norm(p.u()) / (p.grid().dx() * p.grid().dx()));
    }

    #[test]
    fn rel_norm_diff_is_scale_covariant(seed in any::<u64>(), c in 0.01..10.0f64) {
        let p = seed_fields(GridSpec::square(5, 1.0).unwrap(), 1.0, seed);
        let scaled: Vec<f64> = p.u().iter().map(|x| c * x).collect();
        prop_assert!((rel_norm_diff(&scaled, p.u()).unwrap() - (c - 1.0).abs()).abs() < 1e-12 * c.max(1.0));
        prop_assert_eq!(rel_norm_diff(p.u(), p.u()).unwrap(), 0.0);
    }

    #[test]
    fn adam_keeps_masked_entries_and_gamma_tie(seed in any::<u64>(), which in 0usize..5, steps in 1usize..30) {
        let id = ParamId::TRAINABLE[which];
        let net = Mlp::new(&[2, 3, 2], 1.0, seed).unwrap();
        let mut ts = TrainableSet::new(net, params_for_pattern(PatternId::Q), ParamMask::only(&[id]));
        let before = ts.flat();
        let n_net = ts.net.n_params();
        let mut adam = AdamState::new(ts.n_flat(), 1e-2);
        let mut rng_state = seed;
        for _ in 0..steps {
            let g: Vec<f64> = (0..ts.n_flat()).map(|_| {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            }).collect();
            adam.step(&mut ts, &g).unwrap();
        }
        let after = ts.flat();
        for (k, &pid) in ParamId::TRAINABLE.iter().enumerate() {
            if pid != id {
                prop_assert_eq!(after[n_net + k].to_bits(), before[n_net + k].to_bits());
            }
        }
        prop_assert_eq!(ts.params().gamma(), -ts.params().alpha());
        prop_assert_eq!(ts.params().r2(), 0.0);
    }

    #[test]
    fn loss_total_recombines(seed in any::<u64>(), w_f in 0.0..20.0f64) {
        let pattern = seed_fields(GridSpec::square(5, 2.0).unwrap(), 0.2, seed);
        let sets = build_point_sets(&pattern, &PointConfig { n_bc: 10, ..Default::default() }, seed).unwrap();
        let ts = TrainableSet::new(Mlp::new(&[2, 4, 2], 2.0, seed).unwrap(), params_for_pattern(PatternId::P), ParamMask::default());
        let b = loss_value(&ts, &sets, &FullBatch::new(&sets).as_batch(), w_f).unwrap();
        prop_assert!(b.mse_h >= 0.0 && b.mse_f >= 0.0 && b.mse_bc >= 0.0);
        prop_assert!((b.total - (b.mse_h + w_f * b.mse_f + b.mse_bc)).abs() <= 1e-12 * b.total.max(f64::MIN_POSITIVE));
    }
}
