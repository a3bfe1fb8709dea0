//! Property tests for invariants that hold for all inputs.

use binflow::denoiser::{Denoiser, OracleDenoiser};
use binflow::diagnostics::w1_empirical;
use binflow::losses::{
    baseline_affine, bregman_entropic, bregman_quadratic, precond_coeffs, sigma_of_t, t_of_sigma,
    Preconditioner,
};
use binflow::model::checkpoint::{decode, encode};
use binflow::model::train::ema_update;
use binflow::model::{Arch, MlpDenoiser, Scaling};
use binflow::numeric::ln_choose;
use binflow::poisson_calculus::{binomial_thin, bridge_pmf, semigroup_apply};
use binflow::sampler::{run_sampler, SamplerConfig, Scheme};
use binflow::targets::{make_target, Family, TargetPmf};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bregman_divergences_are_nonnegative(
        pairs in prop::collection::vec((0.0f64..50.0, 1e-6f64..50.0), 1..8)
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(bregman_quadratic(&a, &b).unwrap() >= 0.0);
        prop_assert!(bregman_entropic(&a, &b).unwrap() >= -1e-12);
        prop_assert!(bregman_quadratic(&a, &a).unwrap().abs() < 1e-12);
        let a_pos: Vec<f64> = a.iter().map(|v| v + 1e-3).collect();
        prop_assert!(bregman_entropic(&a_pos, &a_pos).unwrap().abs() < 1e-9);
    }

    #[test]
    fn noise_level_round_trip(t in 0.0f64..0.999) {
        let s = sigma_of_t(t).unwrap();
        prop_assert!((t_of_sigma(s).unwrap() - t).abs() < 1e-12);
    }

    #[test]
    fn preconditioner_matches_linear_regression(
        t in 0.01f64..0.99, mu in 0.1f64..20.0, s2 in 0.1f64..50.0
    ) {
        // best linear predictor of X_T from X_t under thinning
        let var_xt = mu * t * (1.0 - t) + s2 * t * t;
        let cov = t * s2;
        let slope = cov / var_xt;
        let resid = s2 - cov * cov / var_xt;

        let c = precond_coeffs(t, mu, s2).unwrap();
        prop_assert!((c.c_skip - slope).abs() < 1e-10 * slope.max(1.0));
        prop_assert!((c.c_out * c.c_out - resid).abs() < 1e-9 * resid.max(1.0));
        let exact = Preconditioner::new(mu, s2).unwrap().with_eps_cin(0.0).coeffs(t);
        prop_assert!((exact.c_in * exact.c_in * var_xt - 1.0).abs() < 1e-10);

        let (b_skip, b_out) = baseline_affine(t, mu, s2).unwrap();
        prop_assert!((b_skip - c.c_skip).abs() < 1e-12);
        prop_assert!((b_out * mu - (mu - slope * mu * t)).abs() < 1e-9 * mu);
    }

    #[test]
    fn thinning_never_exceeds_the_source(
        xs in prop::collection::vec(0u32..200, 1..10), alpha in 0.0f64..=1.0, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = binomial_thin(&xs, alpha, &mut rng);
        prop_assert!(y.iter().zip(&xs).all(|(a, b)| a <= b));
        if alpha == 1.0 {
            prop_assert_eq!(&y, &xs);
        }
    }

    #[test]
    fn bridge_law_is_binomial(x in 0u32..60, t in 0.0f64..=1.0) {
        let p = bridge_pmf(x, t, 1.0).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        if t > 0.0 && t < 1.0 {
            for (k, pk) in p.iter().enumerate() {
                let direct = (ln_choose(x as u64, k as u64)
                    + k as f64 * t.ln()
                    + (x as f64 - k as f64) * (1.0 - t).ln())
                .exp();
                prop_assert!((pk - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn semigroup_preserves_constants(c in 0.1f64..10.0, t in 0.0f64..3.0, x in 0usize..20) {
        let g = vec![c; 200];
        prop_assert!((semigroup_apply(&g, t, x) - c).abs() < 1e-10 * c);
    }

    #[test]
    fn oracle_denoiser_never_goes_backwards(lambda in 0.5f64..10.0, t in 0.01f64..0.99) {
        let pmf = make_target(Family::Poisson, &[lambda], 80).unwrap();
        let d = OracleDenoiser::new(pmf, 1.0).unwrap();
        let row = d.denoise_row(t, 40).unwrap();
        for (x, m) in row.iter().enumerate() {
            prop_assert!(*m >= x as f64 - 1e-9);
        }
    }

    #[test]
    fn ema_stays_between_its_inputs(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20), decay in 0.0f64..=1.0
    ) {
        let (mut shadow, current): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let before = shadow.clone();
        ema_update(&mut shadow, &current, decay).unwrap();
        for ((s, b), c) in shadow.iter().zip(&before).zip(&current) {
            prop_assert!(*s >= b.min(*c) - 1e-12 && *s <= b.max(*c) + 1e-12);
        }
    }

    #[test]
    fn w1_of_point_masses_is_their_distance(k in 0u32..30, n in 1usize..50) {
        let mut w = vec![0.0; 31];
        w[0] = 1.0;
        let delta = TargetPmf::from_weights(&w).unwrap();
        let w1 = w1_empirical(&vec![k; n], &delta).unwrap();
        prop_assert!((w1 - k as f64).abs() < 1e-12);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), width in 1usize..12) {
        let arch = Arch { input_dim: 1, width, n_blocks: 2, emb_dim: 4 };
        let model = MlpDenoiser::<f32>::new(arch, Scaling::Standardize { mean: 2.0, std: 1.5 }, 1.0, seed).unwrap();
        let (back, meta) = decode::<f32>(&encode(&model, [7; 32]), Some(1)).unwrap();
        prop_assert_eq!(meta.config_digest, [7; 32]);
        prop_assert!(back.params.iter().zip(&model.params).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn trajectories_are_non_decreasing(seed in any::<u64>(), tau in any::<bool>()) {
        let pmf = make_target(Family::Poisson, &[5.0], 40).unwrap();
        let d = OracleDenoiser::new(pmf, 1.0).unwrap();
        let cfg = SamplerConfig {
            n_steps: 100,
            n_chains: 200,
            seed,
            scheme: if tau { Scheme::TauLeap } else { Scheme::Euler },
            capture_steps: vec![10, 50, 90],
            ..Default::default()
        };
        let out = run_sampler(&d, &cfg).unwrap();
        prop_assert_eq!(out.captures.len(), 3);
        for c in 0..200 {
            let path = [
                out.captures[0].2[c],
                out.captures[1].2[c],
                out.captures[2].2[c],
                out.finals[c],
            ];
            prop_assert!(path.windows(2).all(|w| w[0] <= w[1]), "chain {c}: {path:?}");
        }
    }
}
